#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sdectl/calibration.hpp"
#include "sdectl/errors.hpp"
#include "sdectl/rl.hpp"

namespace sdectl::cli {

/// Everything a CLI run needs, as flat key=value pairs. The manifest written
/// next to every run uses the same format, so it can be fed back with --config.
struct ExperimentConfig {
    std::string system = "linear";  // linear | nonlinear | from-checkpoint
    std::string child_checkpoint, mother_checkpoint;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<CriticMode> critic_modes{CriticMode::yorl, CriticMode::tsrl};
    std::string output_dir = "runs";
    int jobs = 0;  // 0: one worker per hardware thread

    RLConfig rl;

    // simulate
    int episodes = 10;
    std::string policy = "random";  // random | zero

    // calibrate
    std::string data;
    CalibrationConfig calibration;

    // verify-operators
    std::vector<std::string> zoo{"all"};
    double rel_tol = 1e-6;
    bool flip_last_term = false;  // inject_fault = flip-last-term

    /// Throws ConfigError for unknown keys or malformed values.
    void set(std::string_view key, std::string_view value);
    std::vector<std::string> keys() const;
    std::string get(std::string_view key) const;

    /// Cross-field checks (bounds, positivity, dt consistency).
    void validate() const;

    void write_manifest(std::ostream& out) const;
};

/// Reads `key = value` lines; '#' starts a comment. Errors carry the line number.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

/// Splits "key=value"; throws ConfigError if there is no '='.
std::pair<std::string, std::string> split_assignment(std::string_view text);

} // namespace sdectl::cli
