#include "pincwell/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "pincwell/integrator.hpp"
#include "pincwell/io.hpp"

namespace pincwell {

namespace {

constexpr uint64_t kPredictionStream = 4;  // datasets use streams 0..3

long clamped_index(long j, long n_u) { return j < n_u ? j : n_u - 1; }

void check_measurement(const Vec3& x) {
    if (!x.allFinite() || (x.array() <= 0.0).any())
        throw InfeasibleMeasurement("measured state has non-finite or nonpositive masses");
}

Vec3 clamp_scaled(Vec3 s) {
    return s.cwiseMax(Vec3::Constant(-1.0)).cwiseMin(Vec3::Constant(1.0));
}

double exact_pbh_bar(const WellParameters& p, const Vec3& x, const Vec2& u) {
    return compute_algebraics(p, WellState::from_vector(x), ControlInput::from_vector(u),
                              EvalMode::exact)
               .P_bh /
           1e5;
}

}  // namespace

// ===== MpcConfig =============================================================

void MpcConfig::validate() const {
    if (horizon < 1) throw std::invalid_argument("mpc: horizon must be >= 1");
    if (control_horizon < 1 || control_horizon > horizon)
        throw std::invalid_argument("mpc: control horizon must lie in [1, horizon]");
    if (!(step_seconds > 0)) throw std::invalid_argument("mpc: step_seconds must be positive");
    if (q_near < 0 || q_far < 0 || (r_du.array() < 0).any())
        throw std::invalid_argument("mpc: weights must be nonnegative");
    if ((u_hi - u_lo).minCoeff() < 0) throw std::invalid_argument("mpc: u_lo above u_hi");
    if (ref_bar.size() != 1 && ref_bar.size() != horizon)
        throw std::invalid_argument("mpc: reference must have size 1 or horizon");
    if (!ref_bar.allFinite()) throw std::invalid_argument("mpc: reference must be finite");
    if (solver_iters < 1) throw std::invalid_argument("mpc: solver_iters must be >= 1");
}

Vec MpcConfig::q_weights() const {
    Vec q(horizon);
    for (long j = 0; j < horizon; ++j) q[j] = j < control_horizon ? q_near : q_far;
    return q;
}

Vec MpcConfig::ref_trajectory() const {
    if (ref_bar.size() == horizon) return ref_bar;
    return Vec::Constant(horizon, ref_bar[0]);
}

std::string to_string(MpcStatus s) { return s == MpcStatus::ok ? "ok" : "stall"; }

// ===== NMPC ==================================================================

namespace {

// Shared forward pass of the single-shooting rollout: scaled states, taped
// network steps, outputs in bar with their input gradients.
struct Rollout {
    std::vector<Vec3> xs;                                 // scaled states, 0..N
    std::vector<std::unique_ptr<ForwardTape>> tapes;      // step j: xs_j -> xs_{j+1}
    Vec y;                                                // outputs 1..N (bar)
    std::vector<Vec3> dy_dxs;                             // per output, wrt scaled state
    std::vector<Vec2> dy_du;                              // per output, wrt physical input
};

Vec2 plan_input(const Vec& z, long j, long n_u) { return z.segment(2 * clamped_index(j, n_u), 2); }

Rollout roll_plan(const PincModel& m, const Vec3& xs0, const Vec& z, const MpcConfig& cfg) {
    const long n = cfg.horizon, n_u = cfg.control_horizon;
    Rollout r;
    r.xs.resize(n + 1);
    r.tapes.resize(n);
    r.y.resize(n);
    r.dy_dxs.resize(n);
    r.dy_du.resize(n);
    r.xs[0] = xs0;
    Mat x(6, 1);
    for (long j = 0; j < n; ++j) {
        const Vec2 u = plan_input(z, j, n_u);
        x << 1.0, r.xs[j][0], r.xs[j][1], r.xs[j][2], 2.0 * u[0] - 1.0, 2.0 * u[1] - 1.0;
        r.tapes[j] = m.net->record(x);
        r.xs[j + 1] = r.tapes[j]->y().col(0);
        r.y[j] = m.alg->output_with_gradient(0, r.xs[j + 1], u, &r.dy_dxs[j], &r.dy_du[j]) / 1e5;
        r.dy_dxs[j] /= 1e5;
        r.dy_du[j] /= 1e5;
    }
    return r;
}

double plan_cost(const Rollout& r, const Vec& z, const Vec2& u_last, const MpcConfig& cfg) {
    const Vec q = cfg.q_weights();
    const Vec ref = cfg.ref_trajectory();
    double cost = 0.0;
    for (long j = 0; j < cfg.horizon; ++j) {
        const double e = r.y[j] - ref[j];
        cost += q[j] * e * e;
    }
    Vec2 prev = u_last;
    for (long i = 0; i < cfg.control_horizon; ++i) {
        const Vec2 du = Vec2(z.segment(2 * i, 2)) - prev;
        cost += du.dot(cfg.r_du.cwiseProduct(du));
        prev = z.segment(2 * i, 2);
    }
    return cost;
}

}  // namespace

Objective nmpc_objective(const PincModel& m, const Vec3& x_meas, const Vec2& u_last,
                         const MpcConfig& cfg) {
    cfg.validate();
    check_measurement(x_meas);
    const Vec3 xs0 = clamp_scaled(m.scaler.scale_state(x_meas));
    return [m, xs0, u_last, cfg](const Vec& z, Vec& grad) {
        const long n = cfg.horizon, n_u = cfg.control_horizon;
        const Vec q = cfg.q_weights();
        const Vec ref = cfg.ref_trajectory();
        const Rollout r = roll_plan(m, xs0, z, cfg);

        grad = Vec::Zero(2 * n_u);
        // move-penalty part
        Vec2 prev = u_last;
        for (long i = 0; i < n_u; ++i) {
            const Vec2 du = Vec2(z.segment(2 * i, 2)) - prev;
            const Vec2 t = 2.0 * cfg.r_du.cwiseProduct(du);
            grad.segment(2 * i, 2) += t;
            if (i > 0) grad.segment(2 * (i - 1), 2) -= t;
            prev = z.segment(2 * i, 2);
        }
        // tracking part, backpropagated through the chained steps
        Vec3 xbar = Vec3::Zero();
        Mat ybar_col(3, 1), xbar_in(6, 1);
        for (long j = n - 1; j >= 0; --j) {  // output j+1 pairs tape j with input j
            const double ybar = 2.0 * q[j] * (r.y[j] - ref[j]);
            xbar += ybar * r.dy_dxs[j];
            grad.segment(2 * clamped_index(j, n_u), 2) += ybar * r.dy_du[j];
            ybar_col.col(0) = xbar;
            xbar_in.setZero();
            m.net->backward(*r.tapes[j], ybar_col, nullptr, &xbar_in);
            xbar = xbar_in.block(1, 0, 3, 1);
            grad.segment(2 * clamped_index(j, n_u), 2) += 2.0 * xbar_in.block(4, 0, 2, 1);
        }
        return plan_cost(r, z, u_last, cfg);
    };
}

MpcSolution nmpc_solve(const PincModel& m, const Vec3& x_meas, const Vec2& u_last,
                       const MpcConfig& cfg, const Vec* warm_start) {
    if (m.net == nullptr || m.alg == nullptr)
        throw std::invalid_argument("nmpc_solve: model networks not set");
    const Objective obj = nmpc_objective(m, x_meas, u_last, cfg);
    const long n = cfg.horizon, n_u = cfg.control_horizon;

    Vec lo(2 * n_u), hi(2 * n_u);
    for (long i = 0; i < n_u; ++i) {
        lo.segment(2 * i, 2) = cfg.u_lo;
        hi.segment(2 * i, 2) = cfg.u_hi;
    }
    Vec z0(2 * n_u);
    if (warm_start != nullptr && warm_start->size() == 2 * n_u) {
        z0 = *warm_start;
    } else {
        for (long i = 0; i < n_u; ++i) z0.segment(2 * i, 2) = u_last;
    }
    z0 = z0.cwiseMax(lo).cwiseMin(hi);

    LbfgsConfig lcfg;
    lcfg.max_iters = cfg.solver_iters;
    lcfg.grad_tol = 1e-7;
    lcfg.rel_tol = 1e-10;
    std::vector<double> history;
    const LbfgsResult res = lbfgs_minimize_box(obj, z0, lo, hi, lcfg,
                                               [&](long, const Vec&, double f) { history.push_back(f); });

    MpcSolution sol;
    sol.iterations = res.iters;
    sol.status = res.status == SolveStatus::line_search_fail ? MpcStatus::stall : MpcStatus::ok;
    sol.objective = res.f;
    sol.objective_history = std::move(history);

    const Vec& z = res.x;
    const Vec3 xs0 = clamp_scaled(m.scaler.scale_state(x_meas));
    const Rollout r = roll_plan(m, xs0, z, cfg);
    sol.u.resize(2, n);
    for (long j = 0; j < n; ++j) sol.u.col(j) = plan_input(z, j, n_u);
    sol.du.resize(2, n_u);
    Vec2 prev = u_last;
    for (long i = 0; i < n_u; ++i) {
        sol.du.col(i) = Vec2(z.segment(2 * i, 2)) - prev;
        prev = z.segment(2 * i, 2);
    }
    sol.states.resize(3, n + 1);
    for (long j = 0; j <= n; ++j) sol.states.col(j) = m.scaler.unscale_state(r.xs[j]);
    sol.outputs = r.y;
    return sol;
}

// ===== Linearization =========================================================

namespace {

// Central difference with feasibility-aware shrinking: if a perturbed
// evaluation throws InfeasibleState, the step is reduced and retried.
template <class Fn>
void central_diff(Fn&& eval_at, double h0, Vec3& df, double& dy) {
    double h = h0;
    for (int attempt = 0;; ++attempt) {
        try {
            Vec3 fp, fm;
            double yp, ym;
            eval_at(h, fp, yp);
            eval_at(-h, fm, ym);
            df = (fp - fm) / (2.0 * h);
            dy = (yp - ym) / (2.0 * h);
            return;
        } catch (const InfeasibleState&) {
            if (attempt >= 3) throw;
            h /= 10.0;
        }
    }
}

}  // namespace

LinModel linearize(const WellParameters& p, const Vec3& x, const Vec2& u, double T) {
    check_measurement(x);
    LinModel lin;
    const Vec3 f0 = ode_rhs(p, WellState::from_vector(x), ControlInput::from_vector(u),
                            EvalMode::exact);
    lin.delta = T * f0;
    lin.y0 = exact_pbh_bar(p, x, u);

    for (int i = 0; i < 3; ++i) {
        const double h0 = std::max(1e-3, 1e-5 * std::abs(x[i]));
        Vec3 df;
        double dy = 0.0;
        central_diff(
            [&](double h, Vec3& f, double& y) {
                Vec3 xp = x;
                xp[i] += h;
                f = ode_rhs(p, WellState::from_vector(xp), ControlInput::from_vector(u),
                            EvalMode::exact);
                y = exact_pbh_bar(p, xp, u);
            },
            h0, df, dy);
        lin.A.col(i) = T * df;
        lin.C(0, i) = dy;
    }
    for (int i = 0; i < 2; ++i) {
        // keep both evaluation points inside the valid input range
        const double h0 = std::min({1e-5, 1.0 - u[i], u[i]});
        if (h0 <= 0) {  // input pinned at a bound: derivative of the clamped edge
            lin.B.col(i).setZero();
            lin.D(0, i) = 0.0;
            continue;
        }
        Vec3 df;
        double dy = 0.0;
        central_diff(
            [&](double h, Vec3& f, double& y) {
                Vec2 up = u;
                up[i] += h;
                f = ode_rhs(p, WellState::from_vector(x), ControlInput::from_vector(up),
                            EvalMode::exact);
                y = exact_pbh_bar(p, x, up);
            },
            h0, df, dy);
        lin.B.col(i) = T * df;
        lin.D(0, i) = dy;
    }
    return lin;
}

// ===== SLMPC =================================================================

namespace {

// Primal active-set iteration for  min 1/2 w'Hw + c'w  s.t. lo <= w <= hi
// with H symmetric positive definite. Throws QpFail on degeneracy.
Vec solve_box_qp(const Mat& H, const Vec& c, const Vec& lo, const Vec& hi, const Vec& w0,
                 long max_iters, long& iters_out, std::vector<double>* cost_history) {
    const long n = c.size();
    Vec w = w0.cwiseMax(lo).cwiseMin(hi);
    std::vector<int> bound(n, 0);  // -1 at lower, +1 at upper, 0 free

    auto cost = [&](const Vec& v) { return 0.5 * v.dot(H * v) + c.dot(v); };

    for (long it = 0; it < max_iters; ++it) {
        std::vector<long> free;
        for (long i = 0; i < n; ++i)
            if (bound[i] == 0) free.push_back(i);

        Vec w_eq = w;
        if (!free.empty()) {
            const long nf = static_cast<long>(free.size());
            Mat Hff(nf, nf);
            Vec rhs(nf);
            for (long a = 0; a < nf; ++a) {
                rhs[a] = -c[free[a]];
                for (long b = 0; b < nf; ++b) Hff(a, b) = H(free[a], free[b]);
            }
            for (long a = 0; a < nf; ++a)
                for (long i = 0; i < n; ++i)
                    if (bound[i] != 0) rhs[a] -= H(free[a], i) * w[i];
            const Eigen::LDLT<Mat> ldlt(Hff);
            if (ldlt.info() != Eigen::Success) throw QpFail("reduced system not decomposable");
            const Vec sol = ldlt.solve(rhs);
            if (!sol.allFinite()) throw QpFail("reduced system produced non-finite step");
            for (long a = 0; a < nf; ++a) w_eq[free[a]] = sol[a];
        }

        const Vec d = w_eq - w;
        if (d.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, w.cwiseAbs().maxCoeff())) {
            // at the equality-constrained optimum: check bound multipliers
            const Vec g = H * w + c;
            const double tol = 1e-8 * std::max(1.0, g.cwiseAbs().maxCoeff());
            long worst = -1;
            double worst_violation = tol;
            for (long i = 0; i < n; ++i) {
                const double v = bound[i] == -1 ? -g[i] : (bound[i] == 1 ? g[i] : 0.0);
                if (v > worst_violation) {
                    worst_violation = v;
                    worst = i;
                }
            }
            if (worst < 0) {
                iters_out = it;
                return w;
            }
            bound[worst] = 0;
            continue;
        }

        // step toward the candidate, stopping at the first blocking bound
        double alpha = 1.0;
        long blocking = -1;
        int block_side = 0;
        for (long i : free) {
            if (d[i] > 0 && w[i] + alpha * d[i] > hi[i]) {
                alpha = (hi[i] - w[i]) / d[i];
                blocking = i;
                block_side = 1;
            } else if (d[i] < 0 && w[i] + alpha * d[i] < lo[i]) {
                alpha = (lo[i] - w[i]) / d[i];
                blocking = i;
                block_side = -1;
            }
        }
        w += alpha * d;
        if (blocking >= 0) {
            w[blocking] = block_side == 1 ? hi[blocking] : lo[blocking];
            bound[blocking] = block_side;
        }
        if (cost_history != nullptr) cost_history->push_back(cost(w));
        if (!w.allFinite()) throw QpFail("iterate became non-finite");
    }
    throw QpFail("active-set iteration cap exceeded");
}

}  // namespace

MpcSolution slmpc_core(const LinModel& lin, const Vec3& x_op, const Vec2& u_last,
                       const MpcConfig& cfg) {
    cfg.validate();
    const long n = cfg.horizon, n_u = cfg.control_horizon, m = 2 * n_u;
    const Vec q = cfg.q_weights();
    const Vec ref = cfg.ref_trajectory();
    const Eigen::Matrix3d P = Eigen::Matrix3d::Identity() + lin.A;

    // Condensed prediction over the shifted plan w (w_i = u_i - u_last):
    // state sensitivities S_j = d(dx_j)/dw and drift Gamma_j.
    Mat G(n, m);
    Vec e0(n);
    std::vector<Mat> S(n + 1);
    std::vector<Vec3> gamma(n + 1);
    S[0] = Mat::Zero(3, m);
    gamma[0] = Vec3::Zero();
    for (long j = 0; j < n; ++j) {
        S[j + 1] = P * S[j];
        S[j + 1].block(0, 2 * clamped_index(j, n_u), 3, 2) += lin.B;
        gamma[j + 1] = P * gamma[j] + lin.delta;
        G.row(j) = lin.C * S[j + 1];
        G.row(j).segment(2 * clamped_index(j, n_u), 2) += lin.D;
        e0[j] = lin.y0 + lin.C.dot(gamma[j + 1]) - ref[j];
    }

    // difference map du = L w  (du_0 = w_0 since w is already u - u_last)
    Mat L = Mat::Identity(m, m);
    for (long i = 2; i < m; ++i) L(i, i - 2) = -1.0;
    Vec r_diag(m);
    for (long i = 0; i < n_u; ++i) r_diag.segment(2 * i, 2) = cfg.r_du;

    const Mat GtQ = G.transpose() * q.asDiagonal();
    const Mat H = 2.0 * (GtQ * G + L.transpose() * r_diag.asDiagonal() * L);
    const Vec c = 2.0 * (GtQ * e0);

    Vec lo(m), hi(m);
    for (long i = 0; i < n_u; ++i) {
        lo.segment(2 * i, 2) = cfg.u_lo - u_last;
        hi.segment(2 * i, 2) = cfg.u_hi - u_last;
    }

    MpcSolution sol;
    const long cap = std::max<long>(cfg.solver_iters, 4 * m);
    const Vec w = solve_box_qp(H, c, lo, hi, Vec::Zero(m), cap, sol.iterations,
                               &sol.objective_history);

    const Vec e = e0 + G * w;
    const Vec du_flat = L * w;
    sol.objective = e.dot(q.cwiseProduct(e)) + du_flat.dot(r_diag.cwiseProduct(du_flat));
    sol.status = MpcStatus::ok;
    sol.u.resize(2, n);
    for (long j = 0; j < n; ++j)
        sol.u.col(j) = u_last + Vec2(w.segment(2 * clamped_index(j, n_u), 2));
    sol.du.resize(2, n_u);
    for (long i = 0; i < n_u; ++i) sol.du.col(i) = du_flat.segment(2 * i, 2);
    sol.states.resize(3, n + 1);
    sol.outputs.resize(n);
    for (long j = 0; j <= n; ++j) sol.states.col(j) = x_op + gamma[j] + S[j] * w;
    for (long j = 0; j < n; ++j) sol.outputs[j] = e[j] + ref[j];
    return sol;
}

MpcSolution slmpc_solve(const WellParameters& p, const Vec3& x_meas, const Vec2& u_last,
                        const MpcConfig& cfg) {
    cfg.validate();
    const LinModel lin = linearize(p, x_meas, u_last, cfg.step_seconds);
    return slmpc_core(lin, x_meas, u_last, cfg);
}

// ===== Closed loop ===========================================================

Controller make_pinc_controller(const PincModel& m, MpcConfig cfg) {
    auto warm = std::make_shared<Vec>();
    return [m, cfg, warm](const Vec3& x_meas, const Vec2& u_last, double ref) {
        MpcConfig step_cfg = cfg;
        step_cfg.ref_bar = Vec::Constant(1, ref);
        const Vec* start = warm->size() > 0 ? warm.get() : nullptr;
        MpcSolution sol = nmpc_solve(m, x_meas, u_last, step_cfg, start);
        const long n_u = step_cfg.control_horizon;
        Vec next(2 * n_u);  // shift the accepted plan one step for the next solve
        for (long j = 0; j + 1 < n_u; ++j) next.segment(2 * j, 2) = sol.u.col(j + 1);
        next.segment(2 * (n_u - 1), 2) = sol.u.col(n_u - 1);
        *warm = next;
        return sol;
    };
}

Controller make_slmpc_controller(const WellParameters& p, MpcConfig cfg) {
    return [&p, cfg](const Vec3& x_meas, const Vec2& u_last, double ref) {
        MpcConfig step_cfg = cfg;
        step_cfg.ref_bar = Vec::Constant(1, ref);
        return slmpc_solve(p, x_meas, u_last, step_cfg);
    };
}

ClosedLoopResult closed_loop(const Controller& ctrl, const WellParameters& p,
                             const Scaler& scaler, const Vec3& x0, const Vec2& u_init,
                             const std::vector<double>& ref_schedule_bar, long n_steps,
                             const NoiseSpec* noise) {
    if (n_steps < 1) throw std::invalid_argument("closed_loop: n_steps must be >= 1");
    if (static_cast<long>(ref_schedule_bar.size()) < n_steps)
        throw std::invalid_argument("closed_loop: reference schedule shorter than the run");
    if (noise != nullptr && noise->rel_std < 0)
        throw std::invalid_argument("closed_loop: noise std must be nonnegative");

    ClosedLoopResult out;
    Rng rng(noise != nullptr ? noise->seed : 0);
    Vec3 x = x0;
    Vec2 u_last = u_init;
    double abs_err_sum = 0.0;

    for (long k = 0; k < n_steps; ++k) {
        Vec3 x_meas = x;
        if (noise != nullptr && noise->rel_std > 0) {
            Vec3 xs = scaler.scale_state(x);
            for (int i = 0; i < 3; ++i) xs[i] += 2.0 * noise->rel_std * rng.normal();
            x_meas = scaler.unscale_state(clamp_scaled(xs));
            // the true state is always feasible; pull the measurement toward it
            // until the exact model can be evaluated there
            for (int guard = 0; guard < 60; ++guard) {
                if (is_feasible(p, WellState::from_vector(x_meas),
                                ControlInput::from_vector(u_last)))
                    break;
                x_meas = 0.5 * (x_meas + x);
            }
        }

        const auto t0 = std::chrono::steady_clock::now();
        const MpcSolution sol = ctrl(x_meas, u_last, ref_schedule_bar[k]);
        const auto t1 = std::chrono::steady_clock::now();
        const Vec2 u = sol.first_move();

        const WellState next =
            step_60s(p, WellState::from_vector(x), ControlInput::from_vector(u));
        x = next.as_vector();
        u_last = u;

        const double pbh = exact_pbh_bar(p, x, u);
        abs_err_sum += std::abs(pbh - ref_schedule_bar[k]);

        out.times.push_back(kStepSeconds * (k + 1));
        out.states.push_back(x);
        out.controls.push_back(u);
        out.pbh_bar.push_back(pbh);
        out.ref_bar.push_back(ref_schedule_bar[k]);
        out.solver_iters.push_back(sol.iterations);
        out.solve_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    out.iae_bar = abs_err_sum / n_steps;
    return out;
}

void ClosedLoopResult::to_csv(const std::string& path) const {
    CsvWriter csv({"t", "m_G_an", "m_G_tb", "m_L_tb", "u1", "u2", "P_bh", "P_bh_ref",
                   "solver_iters", "solve_ms"});
    for (size_t k = 0; k < times.size(); ++k) {
        csv.row({times[k], states[k][0], states[k][1], states[k][2], controls[k][0],
                 controls[k][1], pbh_bar[k], ref_bar[k], static_cast<double>(solver_iters[k]),
                 solve_ms[k]});
    }
    csv.save(path);
}

// ===== Prediction evaluation =================================================

StepModel make_pinc_step_model(const PincModel& m) {
    if (m.net == nullptr || m.alg == nullptr)
        throw std::invalid_argument("make_pinc_step_model: model networks not set");
    StepModel s;
    s.next = [m](const Vec3& xs, const Vec2& u) {
        Vec x(6);
        x << 1.0, xs[0], xs[1], xs[2], 2.0 * u[0] - 1.0, 2.0 * u[1] - 1.0;
        return Vec3(m.net->forward(x));
    };
    s.pbh_bar = [m](const Vec3& xs, const Vec2& u) { return m.alg->predict(xs, u)[0] / 1e5; };
    return s;
}

PredictionStats evaluate_prediction(const StepModel& model, const WellParameters& p,
                                    const Scaler& scaler, const ExplorationRanges& ranges,
                                    int n_sims, long n_steps, uint64_t seed) {
    if (n_sims < 1 || n_steps < 1)
        throw std::invalid_argument("evaluate_prediction: need at least one rollout and step");
    const DomainBox& box = scaler.box();
    constexpr int kMaxAttempts = 200;

    PredictionStats stats;
    for (int sim = 0; sim < n_sims; ++sim) {
        Vec3 x0;
        std::vector<Vec2> us(n_steps);
        std::vector<Vec3> truth(n_steps + 1);
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
            Rng rng = stream_rng(seed, kPredictionStream,
                                 static_cast<uint64_t>(sim) * kMaxAttempts + attempt);
            for (int i = 0; i < 3; ++i) x0[i] = rng.uniform(box.lo[i], box.hi[i]);
            for (long j = 0; j < n_steps; ++j)
                us[j] = Vec2(rng.uniform(ranges.u1_min, ranges.u1_max),
                             rng.uniform(ranges.u2_min, ranges.u2_max));
            if (!is_feasible(p, WellState::from_vector(x0), ControlInput::from_vector(us[0])))
                continue;
            try {
                truth[0] = x0;
                for (long j = 0; j < n_steps; ++j)
                    truth[j + 1] = step_60s(p, WellState::from_vector(truth[j]),
                                            ControlInput::from_vector(us[j]))
                                       .as_vector();
                accepted = true;
            } catch (const InfeasibleState&) {
            }
        }
        if (!accepted)
            throw RejectionStall("evaluate_prediction: no surviving rollout in " +
                                 std::to_string(kMaxAttempts) + " draws");

        Vec3 xs = scaler.scale_state(x0);
        double state_err = 0.0, pbh_err = 0.0;
        for (long j = 0; j < n_steps; ++j) {
            xs = model.next(xs, us[j]);
            state_err += (xs - scaler.scale_state(truth[j + 1])).norm() / 3.0;
            pbh_err += std::abs(model.pbh_bar(xs, us[j]) - exact_pbh_bar(p, truth[j + 1], us[j]));
        }
        stats.state_iae.push_back(state_err / n_steps);
        stats.pbh_iae_bar.push_back(pbh_err / n_steps);
    }

    for (double v : stats.state_iae) {
        stats.mean_state_iae += v / n_sims;
        stats.max_state_iae = std::max(stats.max_state_iae, v);
    }
    for (double v : stats.pbh_iae_bar) {
        stats.mean_pbh_iae_bar += v / n_sims;
        stats.max_pbh_iae_bar = std::max(stats.max_pbh_iae_bar, v);
    }
    return stats;
}

}  // namespace pincwell
