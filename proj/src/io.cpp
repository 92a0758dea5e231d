#include "skdt/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace skdt::io {

void write_ppm_grid(std::ostream& os, const std::vector<Array>& images, int cols, double lo, double hi) {
    if (images.empty()) throw std::invalid_argument("ppm: no images");
    if (cols < 1) throw std::invalid_argument("ppm: cols must be >= 1");
    if (!(hi > lo)) throw std::invalid_argument("ppm: need hi > lo");
    const Shape& s = images.front().shape();
    if (s.size() != 3 || (s[0] != 1 && s[0] != 3)) throw ShapeError("ppm: images must be (1|3, H, W)");
    for (const auto& im : images)
        if (im.shape() != s) throw ShapeError("ppm: images differ in shape");
    const std::size_t C = s[0], H = s[1], W = s[2];
    const std::size_t n = images.size(), gc = static_cast<std::size_t>(cols);
    const std::size_t gr = (n + gc - 1) / gc;
    const std::size_t width = gc * W + (gc - 1), height = gr * H + (gr - 1);
    std::vector<unsigned char> pix(width * height * 3, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t oy = (k / gc) * (H + 1), ox = (k % gc) * (W + 1);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    const double v = images[k][((C == 1 ? 0 : c) * H + y) * W + x];
                    const double u = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
                    pix[((oy + y) * width + ox + x) * 3 + c] = static_cast<unsigned char>(std::lround(255.0 * u));
                }
            }
        }
    }
    os << "P6\n" << width << ' ' << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
}

void save_ppm_grid(const std::string& path, const std::vector<Array>& images, int cols, double lo, double hi) {
    std::ofstream os = open_output(path, true);
    write_ppm_grid(os, images, cols, lo, hi);
}

void write_loss_csv(std::ostream& os, const std::vector<double>& losses) {
    os << "step,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) os << i + 1 << ',' << losses[i] << '\n';
}

std::ofstream open_output(const std::string& path, bool binary) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    return os;
}

}  // namespace skdt::io
