#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "sdectl/calibration.hpp"
#include "sdectl/errors.hpp"
#include "sdectl/rl.hpp"
#include "sdectl/trajectory.hpp"
#include "sdectl/verify.hpp"

namespace fs = std::filesystem;

namespace sdectl::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path.string());
    os.precision(17);
    return os;
}

void write_manifest_file(const ExperimentConfig& config, const fs::path& dir, std::string_view command) {
    auto os = open_out(dir / "manifest.txt");
    os << "# sdectl " << command << '\n';
    config.write_manifest(os);
}

std::string file_stem(std::string_view name) {
    std::string out(name);
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-') c = '_';
    return out;
}

Policy scripted_policy(const ExperimentConfig& config, const EpisodeSpec& spec, int control_dim) {
    Vec lo = spec.u_lo.size() ? spec.u_lo : Vec::Constant(control_dim, -1.0);
    Vec hi = spec.u_hi.size() ? spec.u_hi : Vec::Constant(control_dim, 1.0);
    if (config.policy == "zero") {
        Vec u = Vec::Zero(control_dim).cwiseMax(lo).cwiseMin(hi);
        return [u](const Vec&, const Vec&, std::mt19937_64&) { return PolicyDraw{u, 0.0}; };
    }
    const double log_p = -(hi - lo).array().log().sum();
    return [lo, hi, log_p](const Vec&, const Vec&, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Vec u(lo.size());
        for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = lo(i) + (hi(i) - lo(i)) * unit(rng);
        return PolicyDraw{u, log_p};
    };
}

} // namespace

ChildMotherSystem make_system(const ExperimentConfig& config) {
    if (config.system == "linear") return linear_system();
    if (config.system == "nonlinear") return nonlinear_system();
    if (config.system == "from-checkpoint") {
        ModelPtr child = LearnedDiffusionModel::load(config.child_checkpoint);
        ModelPtr mother;
        if (!config.mother_checkpoint.empty()) mother = LearnedDiffusionModel::load(config.mother_checkpoint);
        return ChildMotherSystem(child, mother);
    }
    throw ConfigError("unknown system '" + config.system + "'");
}

void prepare_output_dir(const fs::path& dir, bool force) {
    if (dir.empty()) throw ConfigError("output directory is empty");
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw ConfigError(dir.string() + " is not empty; pass --force to reuse it");
    }
    fs::create_directories(dir);
}

int cmd_verify_operators(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log) {
    if (config.zoo.empty()) throw ConfigError("zoo is empty; list case names or 'all'");
    const auto all = operator_zoo();
    std::vector<ZooCase> cases;
    if (config.zoo.size() == 1 && config.zoo.front() == "all") {
        cases = all;
    } else {
        for (const auto& name : config.zoo) {
            auto it = std::find_if(all.begin(), all.end(), [&](const ZooCase& c) { return c.name == name; });
            if (it == all.end()) throw ConfigError("unknown zoo case '" + name + "'");
            cases.push_back(*it);
        }
    }

    prepare_output_dir(opts.out_dir, opts.force);
    write_manifest_file(config, opts.out_dir, "verify-operators");

    const auto t0 = Clock::now();
    const auto results = run_zoo(cases, config.rel_tol,
                                 config.flip_last_term ? YVariant::flipped_last_term : YVariant::standard);
    const double elapsed = seconds_since(t0);

    fs::create_directories(opts.out_dir / "operators");
    auto summary = open_out(opts.out_dir / "operator_summary.csv");
    summary << "case,lhs,rhs,abs_err,rel_err,passed\n";
    int failed = 0;
    for (const auto& r : results) {
        auto os = open_out(opts.out_dir / "operators" / (file_stem(r.name) + ".txt"));
        os << "case=" << r.name << '\n';
        write_report(os, r.report);
        summary << r.name << ',' << r.report.lhs << ',' << r.report.rhs << ',' << r.report.abs_err << ','
                << r.report.rel_err << ',' << (r.passed ? 1 : 0) << '\n';
        log << (r.passed ? "ok    " : "FAIL  ") << r.name << "  rel_err=" << r.report.rel_err << '\n';
        failed += r.passed ? 0 : 1;
    }
    log << results.size() - failed << '/' << results.size() << " cases within rel_tol " << config.rel_tol
        << " (" << elapsed << " s)\n";
    return failed ? kFailure : kOk;
}

int cmd_simulate(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log) {
    const auto system = make_system(config);
    const EpisodeSpec& spec = config.rl.episode;
    spec.validate(system);
    prepare_output_dir(opts.out_dir, opts.force);
    write_manifest_file(config, opts.out_dir, "simulate");

    const auto policy = scripted_policy(config, spec, system.control_dim());
    const std::uint64_t base = config.seeds.front();
    std::vector<Trajectory> episodes;
    for (int i = 0; i < config.episodes; ++i)
        episodes.push_back(rollout(system, policy, spec, base * 1'000'003ULL + static_cast<std::uint64_t>(i)));

    write_trajectory_csv_file((opts.out_dir / "trajectories.csv").string(), episodes, system.child_dim(),
                              system.mother_dim(), system.control_dim());
    std::size_t steps = 0;
    for (const auto& e : episodes) steps += e.size();
    log << episodes.size() << " episodes, " << steps << " steps -> " << (opts.out_dir / "trajectories.csv").string()
        << '\n';
    return kOk;
}

int cmd_calibrate(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log) {
    if (config.data.empty()) throw ConfigError("calibrate needs data=<trajectories.csv>");
    const auto data = read_trajectory_csv_file(config.data);
    prepare_output_dir(opts.out_dir, opts.force);
    write_manifest_file(config, opts.out_dir, "calibrate");

    const auto t0 = Clock::now();
    const auto result = calibrate(data, config.calibration, config.seeds.front(), &log);
    result.child->save((opts.out_dir / "child.ckpt").string());
    if (result.mother) result.mother->save((opts.out_dir / "mother.ckpt").string());
    auto hist = open_out(opts.out_dir / "calibration_history.csv");
    write_history_csv(hist, result.history());
    log << "calibration done in " << seconds_since(t0) << " s\n";
    return kOk;
}

int cmd_train(const ExperimentConfig& config, const RunOptions& opts, std::ostream& log) {
    const auto system = make_system(config);
    prepare_output_dir(opts.out_dir, opts.force);
    write_manifest_file(config, opts.out_dir, "train");

    struct Cell {
        std::uint64_t seed;
        CriticMode mode;
        fs::path dir;
        std::vector<EpochMetrics> metrics;
        std::exception_ptr error;
    };
    std::vector<Cell> cells;
    for (const auto mode : config.critic_modes)
        for (const auto seed : config.seeds)
            cells.push_back({seed, mode,
                             opts.out_dir / (std::string(to_string(mode)) + "-seed" + std::to_string(seed)),
                             {}, nullptr});

    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            Cell& cell = cells[i];
            try {
                RLConfig rl = config.rl;
                rl.seed = cell.seed;
                rl.critic_mode = cell.mode;
                const auto t0 = Clock::now();
                auto result = train(system, rl);
                fs::create_directories(cell.dir);
                result.policy.save((cell.dir / "policy.ckpt").string());
                save_critic((cell.dir / "critic.ckpt").string(), result.critic);
                auto os = open_out(cell.dir / "metrics.csv");
                write_metrics_header(os);
                write_metrics_rows(os, result.metrics, cell.seed, cell.mode);
                cell.metrics = std::move(result.metrics);
                std::lock_guard lock(log_mutex);
                log << to_string(cell.mode) << " seed " << cell.seed << ": first "
                    << cell.metrics.front().mean_reward << ", last " << cell.metrics.back().mean_reward << " ("
                    << seconds_since(t0) << " s)\n";
            } catch (...) {
                cell.error = std::current_exception();
            }
        }
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t n_workers =
        std::min<std::size_t>(cells.size(), config.jobs > 0 ? static_cast<std::size_t>(config.jobs) : hw);
    {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    }
    for (const auto& cell : cells)
        if (cell.error) std::rethrow_exception(cell.error);

    auto os = open_out(opts.out_dir / "training_metrics.csv");
    write_metrics_header(os);
    for (const auto& cell : cells) write_metrics_rows(os, cell.metrics, cell.seed, cell.mode);
    log << cells.size() << " runs -> " << (opts.out_dir / "training_metrics.csv").string() << '\n';
    return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Controlled SDE toolkit: operator checks, simulation, calibration, RL training"};
    app.name(args.empty() ? "sdectl" : args.front());
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path, out_dir, fault;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    bool force = false;
    app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "run a single seed");
    app.add_option("--out", out_dir, "output directory (overrides output_dir)");
    app.add_flag("--force", force, "reuse a non-empty output directory");
    app.add_option("--set", sets, "override a config key, key=value (repeatable)");
    app.add_option("--inject-fault", fault, "mutation for self-checks")->check(CLI::IsMember({"flip-last-term"}));

    auto* verify = app.add_subcommand("verify-operators", "check the operator identity over the test zoo");
    auto* simulate = app.add_subcommand("simulate", "write seeded trajectories");
    auto* calib = app.add_subcommand("calibrate", "fit drift and diffusion nets to trajectory data");
    auto* trainer = app.add_subcommand("train", "run the seed x critic-mode training grid");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    ExperimentConfig config;
    RunOptions opts;
    try {
        if (!config_path.empty()) config = load_config(config_path, config);
        for (const auto& s : sets) {
            const auto [key, value] = split_assignment(s);
            config.set(key, value);
        }
        if (seed) config.seeds = {*seed};
        if (!out_dir.empty()) config.output_dir = out_dir;
        if (!fault.empty()) config.flip_last_term = true;
        config.validate();
        opts.out_dir = config.output_dir;
        opts.force = force;

        if (verify->parsed()) return cmd_verify_operators(config, opts, out);
        if (simulate->parsed()) return cmd_simulate(config, opts, out);
        if (calib->parsed()) return cmd_calibrate(config, opts, out);
        if (trainer->parsed()) return cmd_train(config, opts, out);
        return kUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "failed: " << e.what() << '\n';
        return kFailure;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return run(std::vector<std::string>(argv, argv + argc), out, err);
}

} // namespace sdectl::cli
