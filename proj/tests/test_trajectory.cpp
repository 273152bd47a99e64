#include <doctest.h>

#include <cstring>
#include <sstream>

#include "sdectl/trajectory.hpp"

using namespace sdectl;

namespace {

Policy zero_policy(int m) {
    return [m](const Vec&, const Vec&, std::mt19937_64&) { return PolicyDraw{Vec::Zero(m), 0.0}; };
}

Policy noisy_policy() {
    return [](const Vec&, const Vec&, std::mt19937_64& rng) {
        return PolicyDraw{standard_normal(rng, 1), -0.3};
    };
}

bool same(const Vec& a, const Vec& b) {
    return a.size() == b.size() && (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

bool bitwise_equal(const Trajectory& a, const Trajectory& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const auto &x = a[k], &y = b[k];
        if (x.t != y.t || x.reward != y.reward || x.terminal != y.terminal) return false;
        if (!same(x.z, y.z) || !same(x.w, y.w) || !same(x.u, y.u) || !same(x.z_next, y.z_next) ||
            !same(x.w_next, y.w_next) || !same(x.u_raw, y.u_raw))
            return false;
    }
    return true;
}

} // namespace

TEST_SUITE("trajectory") {

TEST_CASE("rollouts are reproducible for a seed") {
    const auto sys = linear_system();
    const auto spec = benchmark_episode();
    const auto a = rollout(sys, noisy_policy(), spec, 11);
    const auto b = rollout(sys, noisy_policy(), spec, 11);
    CHECK(bitwise_equal(a, b));
    const auto c = rollout(sys, noisy_policy(), spec, 12);
    CHECK_FALSE(bitwise_equal(a, c));
}

TEST_CASE("first sample carries the initial states") {
    const auto ep = rollout(linear_system(), zero_policy(1), benchmark_episode(), 3);
    REQUIRE(!ep.empty());
    CHECK(ep[0].z == Vec{{0.0, 2.0}});
    CHECK(ep[0].w == Vec{{8.0, 4.0}});
    CHECK(ep[0].t == 0.0);
}

TEST_CASE("horizon of ten steps gives ten samples") {
    auto spec = benchmark_episode();
    spec.horizon = 10 * spec.dt;
    spec.ordering_constraint = false;
    const auto ep = rollout(linear_system(), zero_policy(1), spec, 5);
    CHECK(ep.size() == 10);
    CHECK(ep.back().terminal);
    for (std::size_t k = 0; k + 1 < ep.size(); ++k) CHECK_FALSE(ep[k].terminal);
}

TEST_CASE("link and time invariants hold on random rollouts") {
    const auto sys = nonlinear_system();
    const auto spec = benchmark_episode();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto ep = rollout(sys, noisy_policy(), spec, seed);
        REQUIRE(!ep.empty());
        CHECK(ep.back().terminal);
        CHECK(ep[0].z_prev == ep[0].z);
        CHECK(ep[0].w_prev == ep[0].w);
        CHECK(ep[0].u_prev == ep[0].u);
        for (std::size_t k = 1; k < ep.size(); ++k) {
            CHECK(ep[k].t > ep[k - 1].t);
            CHECK(std::abs(ep[k].t - ep[k - 1].t - spec.dt) < 1e-12);
            CHECK(ep[k].z_prev == ep[k - 1].z);
            CHECK(ep[k].w_prev == ep[k - 1].w);
            CHECK(ep[k].u_prev == ep[k - 1].u);
            CHECK(ep[k].z == ep[k - 1].z_next);
            CHECK_FALSE(ep[k - 1].terminal);
        }
        for (const auto& s : ep) {
            CHECK((s.u.array() >= spec.u_lo.array()).all());
            CHECK((s.u.array() <= spec.u_hi.array()).all());
            CHECK(s.reward == doctest::Approx(reward(s.z, s.w, s.u, spec.reward)));
        }
    }
}

TEST_CASE("ordering violation ends the episode") {
    auto spec = benchmark_episode();
    spec.w0 = Vec{{0.5, 0.0}};
    spec.z0 = Vec{{0.0, 10.0}};
    const auto ep = rollout(linear_system(), zero_policy(1), spec, 9);
    REQUIRE(!ep.empty());
    CHECK(ep.size() < static_cast<std::size_t>(spec.horizon_steps()));
    CHECK(ep.back().terminal);
    CHECK(ep.back().w_next[0] - ep.back().z_next[0] < 0.0);
}

TEST_CASE("non-finite policy output aborts the rollout") {
    const Policy bad = [](const Vec&, const Vec&, std::mt19937_64&) {
        return PolicyDraw{Vec::Constant(1, std::nan("")), 0.0};
    };
    CHECK_THROWS_AS(rollout(linear_system(), bad, benchmark_episode(), 1), NumericError);
}

TEST_CASE("trajectory CSV round trip") {
    const auto sys = linear_system();
    std::vector<Trajectory> eps;
    for (std::uint64_t s = 1; s <= 3; ++s) eps.push_back(rollout(sys, noisy_policy(), benchmark_episode(), s));
    std::stringstream buf;
    write_trajectory_csv(buf, eps, 2, 2, 1);
    const std::string text = buf.str();
    CHECK(text.rfind("t,z1,z2,w1,w2,u1,reward,terminal\n", 0) == 0);
    CHECK(text.find('\r') == std::string::npos);

    const auto back = read_trajectory_csv(buf);
    REQUIRE(back.size() == eps.size());
    for (std::size_t e = 0; e < eps.size(); ++e) {
        REQUIRE(back[e].size() == eps[e].size());
        for (std::size_t k = 0; k < eps[e].size(); ++k) {
            CHECK(back[e][k].t == eps[e][k].t);
            CHECK(back[e][k].z == eps[e][k].z);
            CHECK(back[e][k].w == eps[e][k].w);
            CHECK(back[e][k].u == eps[e][k].u);
            CHECK(back[e][k].reward == eps[e][k].reward);
            CHECK(back[e][k].terminal == eps[e][k].terminal);
            CHECK(back[e][k].z_prev == eps[e][k].z_prev);
        }
    }
    std::stringstream again;
    write_trajectory_csv(again, back, 2, 2, 1);
    CHECK(again.str() == text);
}

TEST_CASE("malformed CSV reports the line") {
    std::stringstream in("t,z1,w1,u1,reward,terminal\n0,1,2,3,4,0\n0.1,1,2,oops,4,1\n");
    try {
        read_trajectory_csv(in);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::stringstream short_row("t,z1,w1,u1,reward,terminal\n0,1,2,3,4\n");
    CHECK_THROWS_AS(read_trajectory_csv(short_row), ParseError);
    CHECK_THROWS_AS(read_trajectory_csv_file("/nonexistent/none.csv"), ConfigError);
}

TEST_CASE("episode spec validation") {
    auto spec = benchmark_episode();
    spec.dt = 0.0;
    CHECK_THROWS_AS(spec.validate(linear_system()), ConfigError);
    spec = benchmark_episode();
    spec.z0 = Vec::Zero(3);
    CHECK_THROWS_AS(spec.validate(linear_system()), ConfigError);
}

} // TEST_SUITE
