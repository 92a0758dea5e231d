#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "skdt/model.hpp"

namespace skdt::cli {

/// One per run, written as `manifest.json` in the output directory.
struct RunManifest {
    std::string subcommand;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string version;
    double wall_clock_s = 0.0;
    model::EvalCounter counter;
    std::vector<std::string> outputs;  // relative to out_dir, manifest excluded
    nlohmann::json effective_config;

    nlohmann::json to_json() const;
};

std::string version_string();

const std::vector<std::string>& subcommands();

/// Parses argv, runs one subcommand and returns the exit status. Errors go to
/// `err` as a single line starting with "error: ".
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace skdt::cli
