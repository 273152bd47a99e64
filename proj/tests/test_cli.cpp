#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "sdectl/calibration.hpp"
#include "sdectl/errors.hpp"
#include "sdectl/rl.hpp"
#include "sdectl/trajectory.hpp"
#include "sdectl/verify.hpp"

using namespace sdectl;
using namespace sdectl::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("sdectl-cli-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Outcome {
    int code;
    std::string out, err;
};

Outcome sdectl_run(std::vector<std::string> args) {
    args.insert(args.begin(), "sdectl");
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("config: defaults, overrides and unknown keys") {
    ExperimentConfig c;
    CHECK(c.get("system") == "linear");
    CHECK(c.get("seeds") == "1,2,3,4,5");
    CHECK(c.get("critic_mode") == "YORL,TSRL");
    CHECK(c.get("hidden") == "32");
    CHECK(c.get("activation") == "sigmoid");
    CHECK(c.get("dt") == "0.1");
    CHECK(c.get("horizon") == "30");
    CHECK(c.get("gamma") == "0.9999");
    CHECK(c.get("c4") == "-0.2");

    c.set("dt", "0.05");
    CHECK(c.rl.episode.dt == 0.05);
    CHECK(c.calibration.dt == 0.05);
    c.set("critic_mode", "TSRL");
    REQUIRE(c.critic_modes.size() == 1);
    CHECK(c.critic_modes[0] == CriticMode::tsrl);

    CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
    CHECK_THROWS_AS(c.set("hidden", "3.5"), ConfigError);
    CHECK_THROWS_AS(c.set("gamma", "abc"), ConfigError);
    CHECK_THROWS_AS(c.set("system", "quadratic"), ConfigError);
    CHECK_THROWS_AS(split_assignment("novalue"), ConfigError);
}

TEST_CASE("config: parse errors carry the line number") {
    std::istringstream ok("# comment\nsystem = nonlinear\n\nseeds = 4, 9  # trailing\n");
    const auto c = parse_config(ok);
    CHECK(c.system == "nonlinear");
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 9});

    std::istringstream bad("system = linear\nhidden = 8\nbogus = 1\n");
    try {
        parse_config(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream noeq("system linear\n");
    CHECK_THROWS_AS(parse_config(noeq), ParseError);
}

TEST_CASE("config: manifest round-trips every key") {
    ExperimentConfig c;
    c.set("system", "nonlinear");
    c.set("seeds", "11,12");
    c.set("gamma", "0.123456789012345");
    c.set("cal_activation", "relu");
    c.set("zoo", "ou/square,affine/quartic");
    c.set("inject_fault", "flip-last-term");
    std::stringstream manifest;
    c.write_manifest(manifest);
    const auto back = parse_config(manifest);
    for (const auto& key : c.keys()) CHECK_MESSAGE(back.get(key) == c.get(key), key);
}

TEST_CASE("config: validation") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    c.seeds.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.set("system", "from-checkpoint");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.set("dt", "0");
    CHECK_THROWS(c.validate());
}

TEST_CASE("verify-operators: default zoo passes and reports per case") {
    TempDir tmp;
    const auto r = sdectl_run({"verify-operators", "--out", tmp / "v"});
    CHECK(r.code == kOk);
    CHECK(fs::exists(tmp / "v/manifest.txt"));
    const auto summary = lines_of(slurp(tmp / "v/operator_summary.csv"));
    CHECK(summary.size() >= 9);
    std::size_t reports = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "v/operators")) {
        std::ifstream in(e.path());
        std::string first;
        std::getline(in, first);
        CHECK(first.rfind("case=", 0) == 0);
        const auto rep = read_report(in);
        CHECK(rep.rel_err < 1e-6);
        ++reports;
    }
    CHECK(reports + 1 == summary.size());
}

TEST_CASE("verify-operators: flipped last term fails and names the case") {
    TempDir tmp;
    const auto r = sdectl_run({"verify-operators", "--out", tmp / "v", "--inject-fault", "flip-last-term"});
    CHECK(r.code == kFailure);
    CHECK(r.out.find("FAIL  nonlinear-child/cubic") != std::string::npos);
    CHECK(slurp(tmp / "v/manifest.txt").find("inject_fault = flip-last-term") != std::string::npos);
}

TEST_CASE("verify-operators: usage errors") {
    TempDir tmp;
    CHECK(sdectl_run({"verify-operators", "--out", tmp / "a", "--set", "zoo="}).code == kUsage);
    CHECK(sdectl_run({"verify-operators", "--out", tmp / "b", "--set", "zoo=missing-case"}).code == kUsage);
    CHECK(sdectl_run({"verify-operators", "--inject-fault", "other"}).code == kUsage);
    CHECK(sdectl_run({}).code == kUsage);
    CHECK(sdectl_run({"frobnicate"}).code == kUsage);
    CHECK(sdectl_run({"--help"}).code == kOk);
}

TEST_CASE("simulate: ten reproducible episodes for seed 7") {
    TempDir tmp;
    REQUIRE(sdectl_run({"simulate", "--out", tmp / "a", "--seed", "7", "--set", "episodes=10"}).code == kOk);
    REQUIRE(sdectl_run({"simulate", "--out", tmp / "b", "--seed", "7", "--set", "episodes=10"}).code == kOk);
    const auto a = slurp(tmp / "a/trajectories.csv");
    CHECK(a == slurp(tmp / "b/trajectories.csv"));
    CHECK(read_trajectory_csv_file(tmp / "a/trajectories.csv").size() == 10);

    REQUIRE(sdectl_run({"simulate", "--out", tmp / "c", "--seed", "8", "--set", "episodes=10"}).code == kOk);
    CHECK(a != slurp(tmp / "c/trajectories.csv"));
}

TEST_CASE("simulate: the manifest alone reproduces the run") {
    TempDir tmp;
    REQUIRE(sdectl_run({"simulate", "--out", tmp / "a", "--seed", "3", "--set", "episodes=2", "--set",
                        "system=nonlinear", "--set", "policy=zero"})
                .code == kOk);
    REQUIRE(sdectl_run({"simulate", "--config", tmp / "a/manifest.txt", "--out", tmp / "b"}).code == kOk);
    CHECK(slurp(tmp / "a/trajectories.csv") == slurp(tmp / "b/trajectories.csv"));
}

TEST_CASE("simulate: nonlinear system drift and bad settings") {
    ExperimentConfig c;
    c.set("system", "nonlinear");
    const auto sys = make_system(c);
    Vec z(2), u(1);
    z << 0.0, 2.0;
    u << 0.0;
    CHECK(sys.child->drift(z, u)(1) == doctest::Approx(-0.04).epsilon(1e-14));

    TempDir tmp;
    CHECK(sdectl_run({"simulate", "--out", tmp / "a", "--set", "dt=0"}).code == kUsage);
    CHECK(sdectl_run({"simulate", "--out", tmp / "b", "--set", "dt=-0.1"}).code == kUsage);
    CHECK(sdectl_run({"simulate", "--out", tmp / "c", "--set", "policy=greedy"}).code == kUsage);
}

TEST_CASE("calibrate: smoke run on 100 steps writes loadable checkpoints") {
    TempDir tmp;
    REQUIRE(sdectl_run({"simulate", "--out", tmp / "s", "--seed", "2", "--set", "episodes=1", "--set",
                        "horizon=10"})
                .code == kOk);
    REQUIRE(read_trajectory_csv_file(tmp / "s/trajectories.csv").front().size() == 100);
    const auto r = sdectl_run({"calibrate", "--out", tmp / "c", "--set", "data=" + tmp / "s/trajectories.csv",
                               "--set", "cal_epochs=2", "--set", "cal_batch_size=32"});
    CHECK(r.code == kOk);
    const auto child = LearnedDiffusionModel::load(tmp / "c/child.ckpt");
    const auto mother = LearnedDiffusionModel::load(tmp / "c/mother.ckpt");
    CHECK(child->state_dim() == 2);
    CHECK(mother->state_dim() == 2);
    CHECK(lines_of(slurp(tmp / "c/calibration_history.csv")).size() == 3);

    // the learned pair drives a simulation
    CHECK(sdectl_run({"simulate", "--out", tmp / "s2", "--set", "system=from-checkpoint", "--set",
                      "child_checkpoint=" + tmp / "c/child.ckpt", "--set",
                      "mother_checkpoint=" + tmp / "c/mother.ckpt", "--set", "episodes=1", "--set", "horizon=1"})
              .code == kOk);
}

TEST_CASE("calibrate: missing and malformed data") {
    TempDir tmp;
    const auto missing = sdectl_run({"calibrate", "--out", tmp / "c", "--set", "data=" + tmp / "nope.csv"});
    CHECK(missing.code == kUsage);
    CHECK(missing.err.find("nope.csv") != std::string::npos);

    {
        std::ofstream bad(tmp / "bad.csv");
        bad << "t,z1,z2,w1,w2,u1,reward,terminal\n0,0,2,8,4,0,1,0\n0.1,zz,2,8,4,0,1,0\n";
    }
    const auto malformed = sdectl_run({"calibrate", "--out", tmp / "d", "--set", "data=" + tmp / "bad.csv"});
    CHECK(malformed.code == kUsage);
    CHECK(malformed.err.find("line 3") != std::string::npos);
    CHECK(sdectl_run({"calibrate", "--out", tmp / "e"}).code == kUsage);
}

TEST_CASE("train: grid of 5 seeds x 2 modes gives 10 runs and one metrics file") {
    TempDir tmp;
    const auto r = sdectl_run({"train", "--out", tmp / "t", "--set", "epochs=1", "--set", "episodes_per_epoch=1",
                               "--set", "horizon=2", "--set", "jobs=4"});
    REQUIRE(r.code == kOk);
    const auto rows = lines_of(slurp(tmp / "t/training_metrics.csv"));
    CHECK(rows.size() == 11);
    int cells = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "t")) {
        if (!e.is_directory()) continue;
        ++cells;
        CHECK(fs::exists(e.path() / "metrics.csv"));
        CHECK_NOTHROW(GaussianPolicy::load((e.path() / "policy.ckpt").string()));
        CHECK_NOTHROW(load_critic((e.path() / "critic.ckpt").string()));
    }
    CHECK(cells == 10);
    CHECK(fs::exists(tmp.path / "t/YORL-seed5"));
    CHECK(fs::exists(tmp.path / "t/TSRL-seed1"));
}

TEST_CASE("train: results do not depend on the number of workers") {
    TempDir tmp;
    const std::vector<std::string> common = {"--set", "epochs=2", "--set", "episodes_per_epoch=1",
                                             "--set", "horizon=2", "--set", "seeds=1,2,3"};
    auto args_a = std::vector<std::string>{"train", "--out", tmp / "a", "--set", "jobs=1"};
    auto args_b = std::vector<std::string>{"train", "--out", tmp / "b", "--set", "jobs=3"};
    args_a.insert(args_a.end(), common.begin(), common.end());
    args_b.insert(args_b.end(), common.begin(), common.end());
    REQUIRE(sdectl_run(args_a).code == kOk);
    REQUIRE(sdectl_run(args_b).code == kOk);
    CHECK(slurp(tmp / "a/training_metrics.csv") == slurp(tmp / "b/training_metrics.csv"));
}

TEST_CASE("train: an occupied output directory is refused without --force") {
    TempDir tmp;
    const std::vector<std::string> args = {"train", "--out", tmp / "t", "--seed", "1", "--set", "epochs=1",
                                           "--set", "episodes_per_epoch=1", "--set", "horizon=1"};
    REQUIRE(sdectl_run(args).code == kOk);
    const auto again = sdectl_run(args);
    CHECK(again.code == kUsage);
    CHECK(again.err.find("--force") != std::string::npos);
    auto forced = args;
    forced.push_back("--force");
    CHECK(sdectl_run(forced).code == kOk);
}

} // TEST_SUITE
