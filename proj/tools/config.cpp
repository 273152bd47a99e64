#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

namespace sdectl::cli {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end || !std::isfinite(out))
        throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    return out;
}

template <class Int>
Int to_int(std::string_view key, std::string_view v) {
    Int out{};
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end)
        throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
    return out;
}

std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const auto piece = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
        if (!piece.empty()) out.push_back(piece);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <class T>
std::string join(const std::vector<T>& xs, auto&& show) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += show(xs[i]);
    }
    return out;
}

struct Field {
    const char* name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define REAL(key, member)                                                                     \
    Field {                                                                                   \
        key, [](ExperimentConfig& c, std::string_view v) { c.member = to_double(key, v); },   \
            [](const ExperimentConfig& c) { return fmt(c.member); }                           \
    }
#define INT(key, member)                                                                      \
    Field {                                                                                   \
        key, [](ExperimentConfig& c, std::string_view v) { c.member = to_int<int>(key, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                \
    }
#define TEXT(key, member)                                                                     \
    Field {                                                                                   \
        key, [](ExperimentConfig& c, std::string_view v) { c.member = std::string(v); },      \
            [](const ExperimentConfig& c) { return c.member; }                                \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"system",
              [](ExperimentConfig& c, std::string_view v) {
                  if (v != "linear" && v != "nonlinear" && v != "from-checkpoint")
                      throw ConfigError("system must be linear, nonlinear or from-checkpoint");
                  c.system = std::string(v);
              },
              [](const ExperimentConfig& c) { return c.system; }},
        TEXT("child_checkpoint", child_checkpoint),
        TEXT("mother_checkpoint", mother_checkpoint),
        Field{"seeds",
              [](ExperimentConfig& c, std::string_view v) {
                  c.seeds.clear();
                  for (const auto& s : split_list(v)) c.seeds.push_back(to_int<std::uint64_t>("seeds", s));
              },
              [](const ExperimentConfig& c) {
                  return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
              }},
        Field{"critic_mode",
              [](ExperimentConfig& c, std::string_view v) {
                  c.critic_modes.clear();
                  for (const auto& s : split_list(v)) c.critic_modes.push_back(parse_critic_mode(s));
              },
              [](const ExperimentConfig& c) {
                  return join(c.critic_modes, [](CriticMode m) { return std::string(to_string(m)); });
              }},
        TEXT("output_dir", output_dir),
        INT("jobs", jobs),
        REAL("c1", rl.episode.reward.c1),
        REAL("c2", rl.episode.reward.c2),
        REAL("c3", rl.episode.reward.c3),
        REAL("c4", rl.episode.reward.c4),
        REAL("gamma", rl.gamma),
        REAL("clip_eps", rl.clip_eps),
        INT("hidden", rl.hidden),
        Field{"activation",
              [](ExperimentConfig& c, std::string_view v) { c.rl.activation = parse_activation(v); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.rl.activation)); }},
        Field{"dt",
              [](ExperimentConfig& c, std::string_view v) {
                  c.rl.episode.dt = to_double("dt", v);
                  c.calibration.dt = c.rl.episode.dt;
              },
              [](const ExperimentConfig& c) { return fmt(c.rl.episode.dt); }},
        REAL("horizon", rl.episode.horizon),
        INT("epochs", rl.epochs),
        INT("episodes_per_epoch", rl.episodes_per_epoch),
        INT("minibatch", rl.minibatch),
        INT("update_passes", rl.update_passes),
        REAL("actor_lr", rl.actor_lr),
        REAL("critic_lr", rl.critic_lr),
        REAL("init_log_std", rl.init_log_std),
        REAL("obs_scale", rl.obs_scale),
        INT("episodes", episodes),
        Field{"policy",
              [](ExperimentConfig& c, std::string_view v) {
                  if (v != "random" && v != "zero") throw ConfigError("policy must be random or zero");
                  c.policy = std::string(v);
              },
              [](const ExperimentConfig& c) { return c.policy; }},
        TEXT("data", data),
        REAL("kappa1", calibration.kappa1),
        REAL("kappa2", calibration.kappa2),
        REAL("lipschitz_c1", calibration.C1),
        REAL("lipschitz_c2", calibration.C2),
        INT("cal_epochs", calibration.epochs),
        INT("cal_batch_size", calibration.batch_size),
        REAL("cal_holdout_fraction", calibration.holdout_fraction),
        INT("cal_hidden", calibration.hidden),
        Field{"cal_activation",
              [](ExperimentConfig& c, std::string_view v) { c.calibration.activation = parse_activation(v); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.calibration.activation)); }},
        REAL("cal_lr", calibration.lr),
        Field{"zoo", [](ExperimentConfig& c, std::string_view v) { c.zoo = split_list(v); },
              [](const ExperimentConfig& c) { return join(c.zoo, [](const std::string& s) { return s; }); }},
        REAL("rel_tol", rel_tol),
        Field{"inject_fault",
              [](ExperimentConfig& c, std::string_view v) {
                  if (v != "none" && v != "flip-last-term")
                      throw ConfigError("inject_fault must be none or flip-last-term");
                  c.flip_last_term = v == "flip-last-term";
              },
              [](const ExperimentConfig& c) { return std::string(c.flip_last_term ? "flip-last-term" : "none"); }},
    };
    return table;
}

#undef REAL
#undef INT
#undef TEXT

const Field& find(std::string_view key) {
    for (const auto& f : fields())
        if (key == f.name) return f;
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

} // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
    find(key).set(*this, trim(value));
}

std::string ExperimentConfig::get(std::string_view key) const { return find(key).get(*this); }

std::vector<std::string> ExperimentConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.name);
    return out;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
    if (critic_modes.empty()) throw ConfigError("critic_mode must list at least one mode");
    if (jobs < 0) throw ConfigError("jobs must be >= 0");
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (!(rel_tol > 0.0)) throw ConfigError("rel_tol must be > 0");
    if (system == "from-checkpoint" && child_checkpoint.empty())
        throw ConfigError("system=from-checkpoint needs child_checkpoint");
    rl.validate();
    calibration.validate();
}

void ExperimentConfig::write_manifest(std::ostream& out) const {
    for (const auto& f : fields()) out << f.name << " = " << f.get(*this) << '\n';
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        try {
            const auto [key, value] = split_assignment(line);
            base.set(key, value);
        } catch (const ParseError&) {
            throw;
        } catch (const ConfigError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config(in, std::move(base));
}

} // namespace sdectl::cli
