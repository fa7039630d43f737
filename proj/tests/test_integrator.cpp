#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pincwell/integrator.hpp"
#include "pincwell/io.hpp"
#include "pincwell/well_model.hpp"
#include "test_util.hpp"

using namespace pincwell;

namespace {

WellParameters well1() { return load_well_parameters(config_path("well1.json")); }

Vec3 roll(const WellParameters& p, const WellState& x0, const ControlInput& u, double t_end,
          double h) {
    WellState x = x0;
    const int n = static_cast<int>(std::round(t_end / h));
    for (int k = 0; k < n; ++k) x = rk4_step(p, x, u, h);
    return x.as_vector();
}

}  // namespace

TEST_CASE("one RK4 step is first-order consistent with the vector field") {
    const WellParameters p = well1();
    const WellState x{3400.0, 250.0, 9000.0};
    const ControlInput u{0.5, 0.5};
    const Vec3 f = ode_rhs(p, x, u, EvalMode::exact);

    // || step(h) - (x + h f) || = O(h^2): the constant stabilizes under h -> 0
    double prev = -1.0;
    for (double h : {1e-2, 1e-3, 1e-4}) {
        const Vec3 stepped = rk4_step(p, x, u, h).as_vector();
        const double dev = (stepped - (x.as_vector() + h * f)).norm();
        CHECK(dev <= 10.0 * h * h * f.norm());
        if (prev > 0.0) CHECK(dev < prev);
        prev = dev;
    }
}

TEST_CASE("RK4 self-convergence is fourth order on three 600 s rollouts") {
    const WellParameters p = well1();
    struct Case {
        WellState x0;
        ControlInput u;
    };
    const Case cases[] = {
        {{3400.0, 250.0, 9000.0}, {0.5, 0.5}},
        {{3999.0, 165.0, 10880.0}, {0.7, 0.6}},
        {{3500.0, 200.0, 10000.0}, {1.0, 0.5}},
    };
    for (const Case& c : cases) {
        const Vec3 ref = roll(p, c.x0, c.u, 600.0, 0.01);
        const double e1 = (roll(p, c.x0, c.u, 600.0, 1.0) - ref).norm();
        const double e05 = (roll(p, c.x0, c.u, 600.0, 0.5) - ref).norm();
        REQUIRE(e1 > 0.0);
        const double order = std::log2(e1 / e05);
        INFO("order " << order << " (e1 " << e1 << ", e0.5 " << e05 << ")");
        CHECK(order >= 3.8);
    }
}

TEST_CASE("rollout from the steady state stays at the steady state") {
    const WellParameters p = well1();
    const ControlInput u{0.5, 0.5};
    const WellState ss = steady_state(p, u);
    const WellState end = step_60s(p, ss, u);
    CHECK(std::abs(end.m_G_an - ss.m_G_an) < 1e-6);
    CHECK(std::abs(end.m_G_tb - ss.m_G_tb) < 1e-6);
    CHECK(std::abs(end.m_L_tb - ss.m_L_tb) < 1e-6);
}

TEST_CASE("60 s endpoint matches the fine-step reference") {
    // frozen from an h=0.01 s integration in the reference script
    const WellParameters p = well1();
    const WellState end = step_60s(p, {4000.0, 8000.0, 11000.0}, {0.5, 0.5});
    CHECK(std::abs(end.m_G_an - 4047.8761911831311) <= 1e-5 * 4047.88);
    CHECK(std::abs(end.m_G_tb - 3282.8047257919393) <= 1e-5 * 3282.80);
    CHECK(std::abs(end.m_L_tb - 2626.6089360182318) <= 1e-5 * 2626.61);
}

TEST_CASE("step_60s equals simulate over 60 s and composes") {
    const WellParameters p = well1();
    const WellState x0{3400.0, 250.0, 9000.0};
    const ControlInput u{0.5, 0.5};

    const WellState a = step_60s(p, x0, u);
    const Trajectory t60 = simulate(p, x0, {{0.0, u}}, 60.0, 1.0);
    CHECK(a.as_vector() == t60.states.back().as_vector());

    const WellState b = step_60s(p, a, u);
    const Trajectory t120 = simulate(p, x0, {{0.0, u}}, 120.0, 1.0);
    CHECK(b.as_vector() == t120.states.back().as_vector());
}

TEST_CASE("constant control at the steady state gives a constant trajectory") {
    const WellParameters p = well1();
    const ControlInput u{0.5, 0.5};
    const WellState ss = steady_state(p, u);
    const Trajectory traj = simulate(p, ss, {{0.0, u}}, 600.0, 1.0);
    for (const WellState& s : traj.states) {
        CHECK(std::abs(s.m_G_an - ss.m_G_an) < 1e-5);
        CHECK(std::abs(s.m_G_tb - ss.m_G_tb) < 1e-5);
        CHECK(std::abs(s.m_L_tb - ss.m_L_tb) < 1e-5);
    }
}

TEST_CASE("3000 s rollout with 60 s control blocks sampled at 60 s spacing") {
    const WellParameters p = well1();
    const WellState ss = steady_state(p, {0.5, 0.5});

    ControlSchedule schedule;
    Rng rng(42);
    for (int k = 0; k < 50; ++k)
        schedule.push_back({60.0 * k, {rng.uniform(0.4, 0.6), rng.uniform(0.45, 0.7)}});

    const Trajectory traj = simulate(p, ss, schedule, 3000.0, 1.0, false, 60.0);
    REQUIRE(traj.size() == 51);
    for (size_t i = 0; i < traj.size(); ++i) CHECK(traj.times[i] == 60.0 * i);
    for (size_t i = 0; i + 1 < traj.size(); ++i)
        CHECK(traj.controls[i].u1 == schedule[i].second.u1);

    // determinism: identical call, bit-identical states
    const Trajectory again = simulate(p, ss, schedule, 3000.0, 1.0, false, 60.0);
    for (size_t i = 0; i < traj.size(); ++i)
        CHECK(traj.states[i].as_vector() == again.states[i].as_vector());
}

TEST_CASE("schedule lookup is right-continuous and validated") {
    const ControlSchedule s = {{0.0, {0.1, 0.2}}, {60.0, {0.3, 0.4}}};
    CHECK(schedule_at(s, 0.0).u1 == 0.1);
    CHECK(schedule_at(s, 59.999999).u1 == 0.1);
    CHECK(schedule_at(s, 60.0).u1 == 0.3);
    CHECK(schedule_at(s, 1e9).u1 == 0.3);

    const WellParameters p = well1();
    const WellState x{3400.0, 250.0, 9000.0};
    CHECK_THROWS_AS(simulate(p, x, {{5.0, {0.5, 0.5}}}, 60.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(simulate(p, x, {{0.0, {0.5, 0.5}}, {30.5, {0.6, 0.5}}}, 60.0, 2.0),
                    std::invalid_argument);
}

TEST_CASE("infeasible rollouts report the failing time") {
    const WellParameters p = well1();
    // strong gas-lift step from a heavily loaded state goes infeasible quickly
    const WellState x{3200.0, 180.0, 10500.0};
    try {
        simulate(p, x, {{0.0, {0.8, 0.6}}}, 600.0, 1.0);
        FAIL("expected InfeasibleState");
    } catch (const InfeasibleState& e) {
        CHECK(std::string(e.what()).find("t = ") != std::string::npos);
    }
}

TEST_CASE("trajectory CSV export round-trips through the CSV reader") {
    const WellParameters p = well1();
    const WellState ss = steady_state(p, {0.5, 0.5});
    const Trajectory traj = simulate(p, ss, {{0.0, {0.5, 0.5}}}, 120.0, 1.0, true, 60.0);

    const std::string path = "test_traj_out.csv";
    traj.to_csv(path);
    const CsvData data = read_csv(path);
    REQUIRE(data.columns.size() == 8);
    CHECK(data.columns[0] == "t");
    CHECK(data.columns[1] == "m_G_an");
    CHECK(data.columns[4] == "u1");
    CHECK(data.columns[6] == "P_bh");
    REQUIRE(data.rows.size() == traj.size());
    for (size_t i = 0; i < traj.size(); ++i) {
        CHECK(data.rows[i][0] == traj.times[i]);
        CHECK(data.rows[i][1] == traj.states[i].m_G_an);  // full round-trip precision
        CHECK(data.rows[i][6] == doctest::Approx(traj.algebraics[i].P_bh / 1e5).epsilon(1e-12));
    }
    std::remove(path.c_str());
}
