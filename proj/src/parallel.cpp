#include "skdt/parallel.hpp"

#include <cstdlib>
#include <string>

namespace skdt {

std::size_t thread_budget() {
    if (const char* env = std::getenv("SKDT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        return 1;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

}  // namespace skdt
