#include "sdectl/trajectory.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace sdectl {

int EpisodeSpec::horizon_steps() const {
    return static_cast<int>(std::llround(horizon / dt));
}

void EpisodeSpec::validate(const ChildMotherSystem& system) const {
    if (!(dt > 0.0)) throw ConfigError("episode: dt must be positive");
    if (!(horizon >= dt)) throw ConfigError("episode: horizon must cover at least one step");
    auto check = [](const Vec& v, int n, const char* what) {
        if (v.size() != n) throw ConfigError(std::string("episode: ") + what + " has wrong dimension");
    };
    check(z0, system.child_dim(), "z0");
    check(w0, system.mother_dim(), "w0");
    check(u_lo, system.control_dim(), "u_lo");
    check(u_hi, system.control_dim(), "u_hi");
    auto check_box = [&](const Vec& lo, const Vec& hi, int n, const char* what) {
        if (lo.size() == 0 && hi.size() == 0) return;
        check(lo, n, what);
        check(hi, n, what);
        if ((lo.array() > hi.array()).any())
            throw ConfigError(std::string("episode: inverted bounds for ") + what);
    };
    check_box(u_lo, u_hi, system.control_dim(), "u");
    check_box(z_lo, z_hi, system.child_dim(), "z");
    check_box(w_lo, w_hi, system.mother_dim(), "w");
}

EpisodeSpec benchmark_episode() {
    EpisodeSpec s;
    s.z0 = Vec{{0.0, 2.0}};
    s.w0 = Vec{{8.0, 4.0}};
    s.u_lo = Vec::Constant(1, -2.0);
    s.u_hi = Vec::Constant(1, 2.0);
    s.z_lo = Vec{{0.0, 0.0}};
    s.z_hi = Vec{{300.0, 10.0}};
    s.w_lo = Vec{{0.0, 0.0}};
    s.w_hi = Vec{{300.0, 10.0}};
    return s;
}

RolloutStreams::RolloutStreams(std::uint64_t seed) {
    auto derive = [seed](std::uint32_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          stream};
        return std::mt19937_64(seq);
    };
    child = derive(1);
    mother = derive(2);
    policy = derive(3);
}

namespace {

Vec clamp_box(Vec v, const Vec& lo, const Vec& hi) {
    if (lo.size() == 0) return v;
    return v.cwiseMax(lo).cwiseMin(hi);
}

} // namespace

Trajectory rollout(const ChildMotherSystem& system, const Policy& policy, const EpisodeSpec& spec,
                   std::uint64_t seed) {
    spec.validate(system);
    RolloutStreams streams(seed);
    const int steps = spec.horizon_steps();
    const bool ordering = spec.ordering_constraint && system.has_mother();

    Trajectory episode;
    episode.reserve(static_cast<std::size_t>(steps));
    Vec z = spec.z0;
    Vec w = spec.w0;
    for (int k = 0; k < steps; ++k) {
        PolicyDraw draw = policy(z, w, streams.policy);
        if (draw.u.size() != system.control_dim() || !all_finite(draw.u) ||
            !std::isfinite(draw.log_prob)) {
            std::ostringstream msg;
            msg << "rollout aborted at step " << k << ": non-finite policy output at z=["
                << z.transpose() << "] w=[" << w.transpose() << "]";
            throw NumericError(msg.str());
        }
        TransitionSample s;
        s.t = k * spec.dt;
        s.z = z;
        s.w = w;
        s.u_raw = draw.u;
        s.log_prob = draw.log_prob;
        s.u = clamp_box(draw.u, spec.u_lo, spec.u_hi);
        s.reward = reward(z, w, s.u, spec.reward);

        const Vec child_noise = standard_normal(streams.child, system.child_dim());
        s.z_next = clamp_box(euler_step(*system.child, z, s.u, spec.dt, child_noise), spec.z_lo,
                             spec.z_hi);
        if (system.has_mother()) {
            const Vec mother_noise = standard_normal(streams.mother, system.mother_dim());
            s.w_next = clamp_box(euler_step(*system.mother, w, z, spec.dt, mother_noise),
                                 spec.w_lo, spec.w_hi);
        } else {
            s.w_next = Vec(0);
        }
        if (!all_finite(s.z_next) || !all_finite(s.w_next))
            throw NumericError("rollout aborted at step " + std::to_string(k) +
                               ": state diverged");

        const bool violated = ordering && s.w_next[0] - s.z_next[0] < 0.0;
        s.terminal = violated || k + 1 == steps;
        z = s.z_next;
        w = s.w_next;
        episode.push_back(std::move(s));
        if (violated) break;
    }
    link_episode(episode);
    return episode;
}

void link_episode(Trajectory& episode) {
    for (std::size_t k = 0; k < episode.size(); ++k) {
        auto& s = episode[k];
        const auto& prev = episode[k == 0 ? 0 : k - 1];
        s.z_prev = prev.z;
        s.w_prev = prev.w;
        s.u_prev = prev.u;
        if (k + 1 < episode.size()) {
            s.z_next = episode[k + 1].z;
            s.w_next = episode[k + 1].w;
        } else if (s.z_next.size() == 0) {
            s.z_next = s.z;
            s.w_next = s.w;
        }
    }
}

void write_trajectory_csv(std::ostream& out, const std::vector<Trajectory>& episodes, int child_dim,
                          int mother_dim, int control_dim) {
    out << "t";
    for (int i = 1; i <= child_dim; ++i) out << ",z" << i;
    for (int i = 1; i <= mother_dim; ++i) out << ",w" << i;
    for (int i = 1; i <= control_dim; ++i) out << ",u" << i;
    out << ",reward,terminal\n";
    out << std::setprecision(17);
    for (const auto& ep : episodes) {
        for (std::size_t k = 0; k < ep.size(); ++k) {
            const auto& s = ep[k];
            require_dim(s.z, child_dim, "csv z");
            require_dim(s.w, mother_dim, "csv w");
            require_dim(s.u, control_dim, "csv u");
            out << s.t;
            for (auto v : s.z) out << ',' << v;
            for (auto v : s.w) out << ',' << v;
            for (auto v : s.u) out << ',' << v;
            const bool last = k + 1 == ep.size();
            out << ',' << s.reward << ',' << ((s.terminal || last) ? 1 : 0) << '\n';
        }
    }
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

double parse_double(std::string_view cell, std::size_t line) {
    double v = 0.0;
    const auto* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw ParseError("malformed number '" + std::string(cell) + "'", line);
    return v;
}

int count_prefixed(const std::vector<std::string_view>& header, std::size_t& pos, char prefix) {
    int n = 0;
    while (pos < header.size() && header[pos] == std::string(1, prefix) + std::to_string(n + 1)) {
        ++n;
        ++pos;
    }
    return n;
}

} // namespace

std::vector<Trajectory> read_trajectory_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError("empty trajectory file", line_no);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_commas(line);
    std::size_t pos = 0;
    if (header.empty() || header[pos++] != "t") throw ParseError("header must start with 't'", 1);
    const int nz = count_prefixed(header, pos, 'z');
    const int nw = count_prefixed(header, pos, 'w');
    const int nu = count_prefixed(header, pos, 'u');
    if (nz == 0 || pos + 2 != header.size() || header[pos] != "reward" ||
        header[pos + 1] != "terminal")
        throw ParseError("unexpected trajectory header", 1);
    const std::size_t ncols = header.size();

    std::vector<Trajectory> episodes;
    Trajectory current;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != ncols)
            throw ParseError("expected " + std::to_string(ncols) + " columns, got " +
                                 std::to_string(cells.size()),
                             line_no);
        TransitionSample s;
        std::size_t c = 0;
        s.t = parse_double(cells[c++], line_no);
        s.z.resize(nz);
        s.w.resize(nw);
        s.u.resize(nu);
        for (int i = 0; i < nz; ++i) s.z[i] = parse_double(cells[c++], line_no);
        for (int i = 0; i < nw; ++i) s.w[i] = parse_double(cells[c++], line_no);
        for (int i = 0; i < nu; ++i) s.u[i] = parse_double(cells[c++], line_no);
        s.reward = parse_double(cells[c++], line_no);
        const auto term = cells[c];
        if (term != "0" && term != "1") throw ParseError("terminal flag must be 0 or 1", line_no);
        s.terminal = term == "1";
        s.u_raw = s.u;
        if (!current.empty() && !(s.t > current.back().t))
            throw ParseError("timestamps must increase within an episode", line_no);
        current.push_back(std::move(s));
        if (current.back().terminal) {
            link_episode(current);
            episodes.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        link_episode(current);
        episodes.push_back(std::move(current));
    }
    return episodes;
}

void write_trajectory_csv_file(const std::string& path, const std::vector<Trajectory>& episodes,
                               int child_dim, int mother_dim, int control_dim) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    write_trajectory_csv(out, episodes, child_dim, mother_dim, control_dim);
}

std::vector<Trajectory> read_trajectory_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    return read_trajectory_csv(in);
}

} // namespace sdectl
