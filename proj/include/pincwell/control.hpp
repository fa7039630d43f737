#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pincwell/dataset.hpp"
#include "pincwell/neural.hpp"
#include "pincwell/training.hpp"
#include "pincwell/types.hpp"
#include "pincwell/well_model.hpp"

namespace pincwell {

// ===== Configuration =========================================================

/// Receding-horizon setup shared by both controllers. The tracked output is
/// the bottom-hole pressure in bar. Output deviations are weighted `q_near`
/// while the input may still move and `q_far` over the constant-input tail,
/// which pushes the solver toward plans that settle.
struct MpcConfig {
    long horizon = 50;          ///< prediction steps N (one step = step_seconds)
    long control_horizon = 45;  ///< steps with a free input move, N_u <= N
    double step_seconds = 60.0;

    double q_near = 1.0;
    double q_far = 100.0;
    Vec2 r_du = Vec2(1e3, 1e3);  ///< diagonal move penalty on each du step

    Vec2 u_lo = Vec2::Zero();
    Vec2 u_hi = Vec2::Ones();

    /// Reference per prediction step (bar). Size 1 broadcasts over the horizon.
    Vec ref_bar = Vec::Zero(1);

    long solver_iters = 200;

    void validate() const;      ///< throws std::invalid_argument
    Vec q_weights() const;      ///< per-step output weights, length `horizon`
    Vec ref_trajectory() const; ///< broadcast reference, length `horizon`
};

enum class MpcStatus {
    ok,
    stall,  ///< solver stopped making progress; solution is the best feasible plan
};

std::string to_string(MpcStatus s);

struct MpcSolution {
    Mat u;       ///< 2 x N planned inputs
    Mat du;      ///< 2 x N_u planned moves; u[j] = u[j-1] + du[j], constant after N_u
    Mat states;  ///< 3 x (N+1) predicted states, physical units
    Vec outputs; ///< N predicted outputs (bar); outputs[j-1] pairs state j with input j-1
    double objective = 0.0;
    long iterations = 0;
    MpcStatus status = MpcStatus::ok;
    std::vector<double> objective_history;  ///< objective after each accepted iteration

    Vec2 first_move() const { return u.col(0); }
};

// ===== Network-model NMPC ====================================================

/// The trained pieces the nonlinear controller runs on: the 60 s one-step
/// state map, the algebraic output map, and the scaling they were trained in.
struct PincModel {
    const FeedforwardNetwork* net = nullptr;
    const AlgNetModel* alg = nullptr;
    Scaler scaler;
};

/// The single-shooting objective over the stacked input plan z in [u_lo,u_hi]^N_u
/// (gradient via backpropagation chained through every prediction step).
/// Exposed for diagnostics and gradient tests.
Objective nmpc_objective(const PincModel& m, const Vec3& x_meas, const Vec2& u_last,
                         const MpcConfig& cfg);

/// Single-shooting NMPC step: minimizes the tracking objective over the input
/// plan with the projected bounded quasi-Newton solver. The measured state is
/// clamped into the training box first. Throws InfeasibleMeasurement on
/// non-finite or nonpositive masses; a stalled line search returns the best
/// plan found with status `stall`.
MpcSolution nmpc_solve(const PincModel& m, const Vec3& x_meas, const Vec2& u_last,
                       const MpcConfig& cfg, const Vec* warm_start = nullptr);

// ===== Successive linearization ==============================================

/// Euler-discretized local model around one operating point:
///   dx_{j+1} = (I + A) dx_j + B duv_j + delta,   y_j = y0 + C dx_j + D duv_{j-1},
/// with dx, duv deviations from the linearization point and y in bar.
struct LinModel {
    Eigen::Matrix3d A;
    Eigen::Matrix<double, 3, 2> B;
    Vec3 delta;
    Eigen::Matrix<double, 1, 3> C;
    Eigen::Matrix<double, 1, 2> D;
    double y0 = 0.0;
};

/// Central finite differences of the exact dynamics and the exact bottom-hole
/// pressure. Perturbations that leave the feasible domain are shrunk and
/// retried; the base point itself must be feasible.
LinModel linearize(const WellParameters& p, const Vec3& x, const Vec2& u, double T);

/// Condensed QP over the input plan for a given local model, solved with a
/// primal active-set iteration on the input box. Throws QpFail when the
/// reduced systems degenerate or the iteration cap is hit.
MpcSolution slmpc_core(const LinModel& lin, const Vec3& x_op, const Vec2& u_last,
                       const MpcConfig& cfg);

/// Linearize at the measurement + solve the condensed QP.
MpcSolution slmpc_solve(const WellParameters& p, const Vec3& x_meas, const Vec2& u_last,
                        const MpcConfig& cfg);

// ===== Closed loop ===========================================================

/// Gaussian measurement noise on scaled states: std = 2 * rel_std per
/// dimension (rel_std is relative to the scaled span of 2).
struct NoiseSpec {
    double rel_std = 0.05;
    uint64_t seed = 0;
};

/// One receding-horizon controller step: measured state, last applied input,
/// reference for the upcoming horizon (bar).
using Controller = std::function<MpcSolution(const Vec3& x_meas, const Vec2& u_last, double ref_bar)>;

/// Wraps nmpc_solve with warm starting (previous plan shifted one step).
Controller make_pinc_controller(const PincModel& m, MpcConfig cfg);

/// Wraps slmpc_solve (relinearized at every measurement).
Controller make_slmpc_controller(const WellParameters& p, MpcConfig cfg);

struct ClosedLoopResult {
    std::vector<double> times;    ///< end of each step [s]
    std::vector<Vec3> states;     ///< exact state after the step
    std::vector<Vec2> controls;   ///< input applied during the step
    std::vector<double> pbh_bar;  ///< exact output after the step
    std::vector<double> ref_bar;  ///< reference tracked during the step
    std::vector<long> solver_iters;
    std::vector<double> solve_ms;
    double iae_bar = 0.0;  ///< mean |pbh - ref| over the steps

    long n_steps() const { return static_cast<long>(times.size()); }

    /// CSV: t,m_G_an,m_G_tb,m_L_tb,u1,u2,P_bh,P_bh_ref,solver_iters,solve_ms
    void to_csv(const std::string& path) const;
};

/// Runs the plant (exact integrator, 60 s steps) under the controller.
/// Measurements are exact unless `noise` is given, in which case scaled-state
/// noise is added, the result clamped into the training box, and — should the
/// clamped point still be infeasible for the exact model — pulled toward the
/// true state until feasible. Controller exceptions propagate.
ClosedLoopResult closed_loop(const Controller& ctrl, const WellParameters& p,
                             const Scaler& scaler, const Vec3& x0, const Vec2& u_init,
                             const std::vector<double>& ref_schedule_bar, long n_steps,
                             const NoiseSpec* noise = nullptr);

// ===== Long-range prediction evaluation ======================================

/// An abstract 60 s predictor (scaled-state one-step map plus output map),
/// so the evaluation harness can also run oracle stand-ins.
struct StepModel {
    std::function<Vec3(const Vec3& xs, const Vec2& u)> next;
    std::function<double(const Vec3& xs, const Vec2& u)> pbh_bar;
};

StepModel make_pinc_step_model(const PincModel& m);

struct PredictionStats {
    std::vector<double> state_iae;    ///< per rollout, scaled units
    std::vector<double> pbh_iae_bar;  ///< per rollout
    double mean_state_iae = 0.0;
    double max_state_iae = 0.0;
    double mean_pbh_iae_bar = 0.0;
    double max_pbh_iae_bar = 0.0;
};

/// Self-loop rollouts against exact simulations under identical random
/// control schedules (feasible starts drawn uniformly from the training box;
/// controls change every step within `ranges`). Rollouts whose exact
/// simulation leaves the feasible domain are redrawn; deterministic in seed.
PredictionStats evaluate_prediction(const StepModel& model, const WellParameters& p,
                                    const Scaler& scaler, const ExplorationRanges& ranges,
                                    int n_sims, long n_steps, uint64_t seed);

}  // namespace pincwell
