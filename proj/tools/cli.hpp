#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "sdectl/systems.hpp"

namespace sdectl::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

struct RunOptions {
    std::filesystem::path out_dir;
    bool force = false;
};

ChildMotherSystem make_system(const ExperimentConfig& config);

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

int cmd_verify_operators(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log);
int cmd_simulate(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log);
int cmd_calibrate(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log);
int cmd_train(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log);

/// Full command line handling; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace sdectl::cli
