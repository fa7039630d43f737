#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "pincwell/control.hpp"
#include "pincwell/dataset.hpp"
#include "pincwell/integrator.hpp"
#include "pincwell/io.hpp"
#include "pincwell/training.hpp"
#include "pincwell/well_model.hpp"
#include "test_util.hpp"

using namespace pincwell;

namespace {

bool close_rel(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= rel * std::abs(b) + abs_floor;
}

WellParameters well1() { return load_well_parameters(config_path("well1.json")); }

// Equilibrium of well 1 at u = (0.5, 0.5) (cross-checked in the model tests).
const Vec3 kSteadyState(3344.83324073, 232.462768554, 8762.03947523);
const Vec2 kSteadyInput(0.5, 0.5);

double pbh_bar_at(const WellParameters& p, const Vec3& x, const Vec2& u) {
    return compute_algebraics(p, WellState::from_vector(x), ControlInput::from_vector(u),
                              EvalMode::exact)
               .P_bh /
           1e5;
}

// A small linear plant with made-up but well-conditioned coefficients.
LinModel toy_lin_model() {
    LinModel lin;
    lin.A << -0.10, 0.02, 0.00,  //
        0.01, -0.20, 0.03,       //
        0.00, 0.04, -0.05;
    lin.B << 0.5, 0.1,  //
        0.2, -0.3,      //
        -0.3, 0.4;
    lin.delta = Vec3(1.0, -2.0, 0.5);
    lin.C << 0.01, -0.02, 0.03;
    lin.D << -0.4, -0.1;
    lin.y0 = 97.0;
    return lin;
}

}  // namespace

// ===== Configuration =========================================================

TEST_CASE("mpc config validation and weight pattern") {
    MpcConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    const Vec q = cfg.q_weights();
    REQUIRE(q.size() == 50);
    for (long j = 0; j < 45; ++j) CHECK(q[j] == 1.0);
    for (long j = 45; j < 50; ++j) CHECK(q[j] == 100.0);

    cfg.ref_bar = Vec::Constant(1, 97.0);
    CHECK(cfg.ref_trajectory().size() == 50);
    CHECK(cfg.ref_trajectory().minCoeff() == 97.0);

    MpcConfig bad = cfg;
    bad.control_horizon = 51;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.r_du = Vec2(-1, 1);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.ref_bar = Vec::Zero(7);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.horizon = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

// ===== Linearization =========================================================

TEST_CASE("linearize at an equilibrium") {
    const WellParameters p = well1();
    const LinModel lin = linearize(p, kSteadyState, kSteadyInput, 60.0);

    // T*f vanishes at the equilibrium (up to the 12 digits the state is pinned to)
    CHECK(lin.delta.cwiseAbs().maxCoeff() < 1e-4);
    CHECK(close_rel(lin.y0, pbh_bar_at(p, kSteadyState, kSteadyInput), 1e-12));

    // independent central-difference oracle with a much coarser step
    const double a_scale = lin.A.cwiseAbs().maxCoeff();
    for (int i = 0; i < 3; ++i) {
        const double h = 2e-4 * kSteadyState[i];
        Vec3 xp = kSteadyState, xm = kSteadyState;
        xp[i] += h;
        xm[i] -= h;
        const Vec3 fp = ode_rhs(p, WellState::from_vector(xp),
                                ControlInput::from_vector(kSteadyInput), EvalMode::exact);
        const Vec3 fm = ode_rhs(p, WellState::from_vector(xm),
                                ControlInput::from_vector(kSteadyInput), EvalMode::exact);
        const Vec3 col = 60.0 * (fp - fm) / (2 * h);
        for (int r = 0; r < 3; ++r)
            CHECK(std::abs(lin.A(r, i) - col[r]) <= 1e-4 * std::abs(col[r]) + 1e-6 * a_scale);
    }

    // the production choke has no direct feed-through to the bottom-hole
    // pressure (it only moves the states); the gas-lift choke raises it
    // through tubing friction
    CHECK(lin.D(0, 0) == 0.0);
    CHECK(lin.D(0, 1) > 0.0);

    CHECK_THROWS_AS(linearize(p, Vec3(-1, 200, 8000), kSteadyInput, 60.0),
                    InfeasibleMeasurement);
}

// ===== SLMPC =================================================================

TEST_CASE("one-step condensed qp matches hand algebra") {
    const LinModel lin = toy_lin_model();
    MpcConfig cfg;
    cfg.horizon = 1;
    cfg.control_horizon = 1;
    cfg.ref_bar = Vec::Constant(1, 96.5);
    const Vec2 u_last(0.5, 0.5);

    const MpcSolution sol = slmpc_core(lin, Vec3(10, 20, 30), u_last, cfg);

    // closed form for N = N_u = 1 via the rank-one update:
    //   du* = -q e0 R^-1 g / (1 + q g' R^-1 g),  g = (C B + D)',  e0 = y0 + C delta - r
    const Vec2 g = (lin.C * lin.B + lin.D).transpose();
    const double e0 = lin.y0 + lin.C.dot(lin.delta) - 96.5;
    const Vec2 rinv_g = g.cwiseQuotient(cfg.r_du);
    const Vec2 du_hand = -e0 * rinv_g / (1.0 + g.dot(rinv_g));

    CHECK((Vec2(sol.du.col(0)) - du_hand).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((Vec2(sol.u.col(0)) - (u_last + du_hand)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(sol.status == MpcStatus::ok);

    // predicted output follows the linear model at the solution
    const double y1 = lin.y0 + lin.C.dot(Vec3(lin.B * du_hand + lin.delta)) + lin.D.dot(du_hand);
    CHECK(close_rel(sol.outputs[0], y1, 1e-10));
}

TEST_CASE("condensed qp equals the unconstrained least-squares solution") {
    const LinModel lin = toy_lin_model();
    MpcConfig cfg;
    cfg.horizon = 6;
    cfg.control_horizon = 4;
    cfg.q_near = 1.0;
    cfg.q_far = 100.0;
    cfg.r_du = Vec2(10.0, 10.0);
    cfg.u_lo = Vec2(-1e6, -1e6);  // bounds wide open: pure least squares
    cfg.u_hi = Vec2(1e6, 1e6);
    cfg.ref_bar = Vec::Constant(1, 96.0);
    const Vec2 u_last(0.4, 0.6);

    const long n = cfg.horizon, n_u = cfg.control_horizon, m = 2 * n_u;

    // Independent construction: simulate the deviation model per unit move to
    // get the output map column by column, then solve the normal equations.
    const Eigen::Matrix3d P = Eigen::Matrix3d::Identity() + lin.A;
    auto outputs_for = [&](const Vec& w, bool with_drift) {
        Vec y(n);
        Vec3 dx = Vec3::Zero();
        for (long j = 0; j < n; ++j) {
            const long mi = std::min(j, n_u - 1);
            const Vec2 duv = w.segment(2 * mi, 2);
            dx = P * dx + lin.B * duv + (with_drift ? lin.delta : Vec3::Zero());
            const long oi = std::min(j, n_u - 1);
            y[j] = lin.C.dot(dx) + lin.D.dot(Vec2(w.segment(2 * oi, 2))) +
                   (with_drift ? lin.y0 : 0.0);
        }
        return y;
    };
    const Vec y_base = outputs_for(Vec::Zero(m), true);
    Mat G(n, m);
    for (long k = 0; k < m; ++k) {
        Vec w = Vec::Zero(m);
        w[k] = 1.0;
        G.col(k) = outputs_for(w, false);
    }
    Mat L = Mat::Identity(m, m);
    for (long i = 2; i < m; ++i) L(i, i - 2) = -1.0;
    Vec r_diag(m);
    for (long i = 0; i < n_u; ++i) r_diag.segment(2 * i, 2) = cfg.r_du;
    const Vec q = cfg.q_weights();
    const Vec e0 = y_base - cfg.ref_trajectory();
    const Mat H = G.transpose() * q.asDiagonal() * G + L.transpose() * r_diag.asDiagonal() * L;
    const Vec w_lsq = H.ldlt().solve(-G.transpose() * (q.cwiseProduct(e0)));

    const MpcSolution sol = slmpc_core(lin, Vec3::Zero(), u_last, cfg);
    const Vec du_lsq = L * w_lsq;
    for (long i = 0; i < n_u; ++i)
        CHECK((Vec2(sol.du.col(i)) - Vec2(du_lsq.segment(2 * i, 2))).cwiseAbs().maxCoeff() <
              1e-8);

    // receding-horizon wiring holds exactly
    CHECK((Vec2(sol.u.col(0)) - (u_last + Vec2(sol.du.col(0)))).cwiseAbs().maxCoeff() < 1e-12);
    for (long i = 1; i < n_u; ++i)
        CHECK((Vec2(sol.u.col(i)) - Vec2(sol.u.col(i - 1)) - Vec2(sol.du.col(i)))
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    for (long j = n_u; j < n; ++j)
        CHECK((Vec2(sol.u.col(j)) - Vec2(sol.u.col(n_u - 1))).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("qp clamps the plan onto the input box") {
    const LinModel lin = toy_lin_model();
    MpcConfig cfg;
    cfg.horizon = 1;
    cfg.control_horizon = 1;
    cfg.r_du = Vec2(1e-2, 1e-2);  // cheap moves: the unconstrained plan flies far
    cfg.ref_bar = Vec::Constant(1, 147.0);
    const Vec2 u_last(0.1, 0.05);

    const MpcSolution sol = slmpc_core(lin, Vec3::Zero(), u_last, cfg);
    CHECK(sol.u(0, 0) == 0.0);
    CHECK(sol.u(1, 0) == 0.0);

    // objective at the clamped plan beats the do-nothing plan
    const double e_sol = sol.outputs[0] - 147.0;
    const double e_zero = lin.y0 + lin.C.dot(lin.delta) - 147.0;
    const Vec2 du = sol.du.col(0);
    CHECK(e_sol * e_sol + du.dot(cfg.r_du.cwiseProduct(du)) < e_zero * e_zero);
}

TEST_CASE("degenerate qp reports failure") {
    LinModel lin = toy_lin_model();
    lin.delta[0] = std::numeric_limits<double>::quiet_NaN();  // poisoned local model
    MpcConfig cfg;
    cfg.horizon = 2;
    cfg.control_horizon = 2;
    cfg.ref_bar = Vec::Constant(1, 96.0);
    CHECK_THROWS_AS(slmpc_core(lin, Vec3::Zero(), Vec2(0.5, 0.5), cfg), QpFail);
}

TEST_CASE("slmpc holds an equilibrium") {
    const WellParameters p = well1();
    MpcConfig cfg;
    cfg.ref_bar = Vec::Constant(1, pbh_bar_at(p, kSteadyState, kSteadyInput));
    const MpcSolution sol = slmpc_solve(p, kSteadyState, kSteadyInput, cfg);
    CHECK(sol.du.cwiseAbs().maxCoeff() < 1e-6);
    CHECK(sol.status == MpcStatus::ok);
}

// ===== NMPC objective and solver =============================================

namespace {

// Hand-assembled model pieces with arbitrary (untrained) weights: gradient
// checks only need consistency, not accuracy.
struct ToyPinc {
    std::unique_ptr<FeedforwardNetwork> net;
    AlgNetModel alg;
    DomainBox box;

    ToyPinc() {
        box.lo = Vec3(3073.6, 161.9, 6396.5);
        box.hi = Vec3(3999.8, 395.7, 10883.5);
        net = make_network("skip", 6, 3, 2, 8);
        net->init_glorot(5);
        alg.net = make_network("dense", 5, 4, 2, 8);
        alg.net->init_glorot(7);
        alg.box = box;
        alg.out_lo = Vec4(9.0e6, 0.0, 0.0, 0.0);
        alg.out_hi = Vec4(1.1e7, 5.0, 0.0, 30.0);
    }

    PincModel model() const { return PincModel{net.get(), &alg, Scaler(box)}; }
};

}  // namespace

TEST_CASE("nmpc objective gradient matches finite differences") {
    const ToyPinc toy;
    MpcConfig cfg;
    cfg.horizon = 5;
    cfg.control_horizon = 3;
    cfg.ref_bar = Vec::Constant(1, 97.0);
    const Vec3 x_meas = toy.box.mid();
    const Vec2 u_last(0.45, 0.55);

    const Objective obj = nmpc_objective(toy.model(), x_meas, u_last, cfg);
    Rng rng(31);
    Vec z(2 * cfg.control_horizon);
    for (long i = 0; i < z.size(); ++i) z[i] = rng.uniform(0.2, 0.8);

    Vec grad;
    obj(z, grad);
    const double h = 1e-6;
    Vec dummy;
    for (long i = 0; i < z.size(); ++i) {
        Vec zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        const double fd = (obj(zp, dummy) - obj(zm, dummy)) / (2 * h);
        CHECK(std::abs(grad[i] - fd) <= 1e-4 * std::abs(fd) + 1e-8);
    }
}

TEST_CASE("nmpc respects wiring, bounds and move penalties") {
    const ToyPinc toy;
    MpcConfig cfg;
    cfg.horizon = 12;
    cfg.control_horizon = 8;
    cfg.solver_iters = 120;
    cfg.ref_bar = Vec::Constant(1, 96.0);
    const Vec3 x_meas = toy.box.mid();
    const Vec2 u_last(0.5, 0.5);

    const MpcSolution sol = nmpc_solve(toy.model(), x_meas, u_last, cfg);

    CHECK((Vec2(sol.u.col(0)) - u_last - Vec2(sol.du.col(0))).cwiseAbs().maxCoeff() < 1e-12);
    for (long i = 1; i < cfg.control_horizon; ++i)
        CHECK((Vec2(sol.u.col(i)) - Vec2(sol.u.col(i - 1)) - Vec2(sol.du.col(i)))
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    for (long j = cfg.control_horizon; j < cfg.horizon; ++j)
        CHECK((Vec2(sol.u.col(j)) - Vec2(sol.u.col(cfg.control_horizon - 1)))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    CHECK(sol.u.minCoeff() >= 0.0);
    CHECK(sol.u.maxCoeff() <= 1.0);

    // accepted iterations never increase the objective
    for (size_t k = 0; k + 1 < sol.objective_history.size(); ++k)
        CHECK(sol.objective_history[k + 1] <= sol.objective_history[k] + 1e-12);

    // an overwhelming move penalty freezes the plan at the last input
    MpcConfig frozen = cfg;
    frozen.r_du = Vec2(1e12, 1e12);
    const MpcSolution still = nmpc_solve(toy.model(), x_meas, u_last, frozen);
    CHECK(still.du.cwiseAbs().maxCoeff() < 1e-5);

    CHECK_THROWS_AS(nmpc_solve(toy.model(), Vec3(-5, 200, 8000), u_last, cfg),
                    InfeasibleMeasurement);
}

// ===== Trained-network controller sanity =====================================

namespace {

// A deliberately narrow training box around the equilibrium: quick to learn
// in-test yet good enough for closed-loop sanity checks.
struct TrainedPinc {
    DomainBox box;
    TrainResult pinc;
    AlgTrainResult alg;
    WellParameters p;

    TrainedPinc() : p(well1()) {
        box.lo = kSteadyState * 0.90;
        box.hi = kSteadyState * 1.10;
        const PincDataset data = sample_dataset(p, box, 200, 500, 40, 21);
        TrainConfig cfg;
        cfg.arch = "skip";
        cfg.n_layers = 2;
        cfg.width = 16;
        cfg.adam.epochs = 600;
        cfg.lbfgs.max_iters = 1500;
        cfg.val_every = 50;
        cfg.seed = 4;
        pinc = train_pinc(p, data, cfg);

        AlgNetConfig acfg;
        acfg.n_layers = 2;
        acfg.width = 16;
        acfg.lbfgs_iters = 400;
        acfg.n_heldout = 100;
        acfg.seed = 3;
        alg = train_algnet(p, box, 500, acfg);
    }

    PincModel model() const { return PincModel{pinc.best.get(), &alg.model, Scaler(box)}; }
};

const TrainedPinc& trained() {
    static TrainedPinc t;
    return t;
}

}  // namespace

TEST_CASE("nmpc holds a learned equilibrium approximately") {
    const TrainedPinc& t = trained();
    REQUIRE(t.pinc.best_val < 5e-3);  // premise: the narrow-box fit worked

    MpcConfig cfg;
    cfg.horizon = 12;
    cfg.control_horizon = 8;
    cfg.solver_iters = 150;
    const Vec3 xs = t.model().scaler.scale_state(kSteadyState);
    cfg.ref_bar = Vec::Constant(1, t.alg.model.pbh_bar(xs, kSteadyInput));

    const MpcSolution sol = nmpc_solve(t.model(), kSteadyState, kSteadyInput, cfg);
    CHECK(sol.du.col(0).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("closed loop with the network controller runs and stays bounded") {
    const TrainedPinc& t = trained();
    MpcConfig cfg;
    cfg.horizon = 12;
    cfg.control_horizon = 8;
    cfg.solver_iters = 120;
    const double ref = pbh_bar_at(t.p, kSteadyState, kSteadyInput);

    const Controller ctrl = make_pinc_controller(t.model(), cfg);
    const std::vector<double> refs(6, ref);
    const ClosedLoopResult res =
        closed_loop(ctrl, t.p, t.model().scaler, kSteadyState, kSteadyInput, refs, 6);

    CHECK(res.n_steps() == 6);
    CHECK(res.iae_bar < 0.5);
    for (const Vec2& u : res.controls) {
        CHECK(u.minCoeff() >= 0.0);
        CHECK(u.maxCoeff() <= 1.0);
    }
}

// ===== Closed loop ===========================================================

TEST_CASE("perfect controller keeps the plant at the reference") {
    const WellParameters p = well1();
    const double ref = pbh_bar_at(p, kSteadyState, kSteadyInput);

    Controller hold = [&](const Vec3&, const Vec2&, double) {
        MpcSolution sol;
        sol.u = kSteadyInput.replicate(1, 50);
        sol.du = Mat::Zero(2, 45);
        return sol;
    };
    DomainBox box;
    box.lo = kSteadyState * 0.9;
    box.hi = kSteadyState * 1.1;
    const std::vector<double> refs(10, ref);
    const ClosedLoopResult res =
        closed_loop(hold, p, Scaler(box), kSteadyState, kSteadyInput, refs, 10);

    CHECK(res.iae_bar < 1e-6);
    // steady start, steady reference: per-step state change stays negligible
    for (long k = 1; k < res.n_steps(); ++k)
        CHECK((res.states[k] - res.states[k - 1]).cwiseAbs().maxCoeff() < 1e-3);

    res.to_csv("tmp_loop.csv");
    const CsvData csv = read_csv("tmp_loop.csv");
    CHECK(csv.columns.size() == 10);
    CHECK(csv.rows.size() == 10);
    std::remove("tmp_loop.csv");
}

TEST_CASE("slmpc closed loop holds and tracks") {
    const WellParameters p = well1();
    DomainBox box;
    box.lo = kSteadyState * 0.9;
    box.hi = kSteadyState * 1.1;
    const Scaler scaler(box);
    MpcConfig cfg;  // full 50/45 horizon as deployed

    // holding the current equilibrium: the plant must not move
    const double ref_hold = pbh_bar_at(p, kSteadyState, kSteadyInput);
    const Controller ctrl = make_slmpc_controller(p, cfg);
    const ClosedLoopResult hold = closed_loop(ctrl, p, scaler, kSteadyState, kSteadyInput,
                                              std::vector<double>(8, ref_hold), 8);
    for (long k = 1; k < hold.n_steps(); ++k)
        CHECK((hold.states[k] - hold.states[k - 1]).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(hold.iae_bar < 1e-4);

    // stepping to another reachable equilibrium pressure
    const WellState target = steady_state(p, ControlInput{0.55, 0.65});
    const double ref_step = pbh_bar_at(p, target.as_vector(), Vec2(0.55, 0.65));
    const ClosedLoopResult track = closed_loop(ctrl, p, scaler, kSteadyState, kSteadyInput,
                                               std::vector<double>(40, ref_step), 40);
    CHECK(std::abs(track.pbh_bar.back() - ref_step) < 0.1);
    CHECK(track.iae_bar < 2.0);
}

TEST_CASE("noisy closed loop is reproducible per seed") {
    const WellParameters p = well1();
    DomainBox box;
    box.lo = kSteadyState * 0.9;
    box.hi = kSteadyState * 1.1;
    const Scaler scaler(box);
    MpcConfig cfg;
    const double ref = pbh_bar_at(p, kSteadyState, kSteadyInput);
    const Controller ctrl = make_slmpc_controller(p, cfg);
    const std::vector<double> refs(10, ref);

    NoiseSpec noise;
    noise.rel_std = 0.05;
    noise.seed = 9;
    const ClosedLoopResult a =
        closed_loop(ctrl, p, scaler, kSteadyState, kSteadyInput, refs, 10, &noise);
    const ClosedLoopResult b =
        closed_loop(ctrl, p, scaler, kSteadyState, kSteadyInput, refs, 10, &noise);
    CHECK(a.iae_bar == b.iae_bar);
    CHECK(a.iae_bar > 0.0);

    noise.seed = 10;
    const ClosedLoopResult c =
        closed_loop(ctrl, p, scaler, kSteadyState, kSteadyInput, refs, 10, &noise);
    CHECK(c.iae_bar != a.iae_bar);
}

// ===== Prediction evaluation =================================================

TEST_CASE("prediction harness scores a perfect model at zero") {
    const WellParameters p = well1();
    DomainBox box;
    box.lo = Vec3(3073.6, 161.9, 6396.5);
    box.hi = Vec3(3999.8, 395.7, 10883.5);
    const Scaler scaler(box);
    const ExplorationRanges ranges = load_exploration_ranges(config_path("well1.json"));

    StepModel oracle;
    oracle.next = [&](const Vec3& xs, const Vec2& u) {
        const WellState nxt = step_60s(p, WellState::from_vector(scaler.unscale_state(xs)),
                                       ControlInput::from_vector(u));
        return scaler.scale_state(nxt.as_vector());
    };
    oracle.pbh_bar = [&](const Vec3& xs, const Vec2& u) {
        return pbh_bar_at(p, scaler.unscale_state(xs), u);
    };

    const PredictionStats stats = evaluate_prediction(oracle, p, scaler, ranges, 3, 10, 77);
    REQUIRE(stats.state_iae.size() == 3);
    CHECK(stats.mean_state_iae < 1e-12);
    CHECK(stats.mean_pbh_iae_bar < 1e-9);

    // determinism and a nonzero score for an untrained network
    const ToyPinc toy;
    PincModel m = toy.model();
    m.scaler = scaler;
    const PredictionStats s1 =
        evaluate_prediction(make_pinc_step_model(m), p, scaler, ranges, 2, 8, 5);
    const PredictionStats s2 =
        evaluate_prediction(make_pinc_step_model(m), p, scaler, ranges, 2, 8, 5);
    CHECK(s1.mean_state_iae == s2.mean_state_iae);
    CHECK(s1.mean_state_iae > 0.0);
}
