#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "sdectl/systems.hpp"

namespace sdectl {

struct TransitionSample {
    double t = 0.0;
    Vec z, w, u;
    double reward = 0.0;
    Vec z_next, w_next;
    Vec z_prev, w_prev, u_prev;
    bool terminal = false;
    /// Unclamped policy draw and its log density; not part of the CSV schema.
    Vec u_raw;
    double log_prob = 0.0;
};

using Trajectory = std::vector<TransitionSample>;

/// Everything a rollout needs besides the system, the policy and the seed.
struct EpisodeSpec {
    double dt = 0.1;
    double horizon = 30.0;
    Vec z0, w0;
    Vec u_lo, u_hi;
    Vec z_lo, z_hi, w_lo, w_hi;  // empty means unbounded
    bool ordering_constraint = true;  // w1 - z1 >= 0, violation ends the episode
    RewardConstants reward;

    int horizon_steps() const;
    void validate(const ChildMotherSystem& system) const;
};

/// Benchmark setup shared by both example systems.
EpisodeSpec benchmark_episode();

struct PolicyDraw {
    Vec u;
    double log_prob = 0.0;
};

using Policy = std::function<PolicyDraw(const Vec& z, const Vec& w, std::mt19937_64& rng)>;

/// Child noise, mother noise and policy sampling each get their own generator
/// derived from `seed`.
struct RolloutStreams {
    std::mt19937_64 child, mother, policy;
    explicit RolloutStreams(std::uint64_t seed);
};

Trajectory rollout(const ChildMotherSystem& system, const Policy& policy, const EpisodeSpec& spec,
                   std::uint64_t seed);

/// Rewrites prev/next fields so that they follow the episode ordering, with the
/// first sample serving as its own predecessor.
void link_episode(Trajectory& episode);

void write_trajectory_csv(std::ostream& out, const std::vector<Trajectory>& episodes, int child_dim,
                          int mother_dim, int control_dim);
std::vector<Trajectory> read_trajectory_csv(std::istream& in);

void write_trajectory_csv_file(const std::string& path, const std::vector<Trajectory>& episodes,
                               int child_dim, int mother_dim, int control_dim);
std::vector<Trajectory> read_trajectory_csv_file(const std::string& path);

} // namespace sdectl
