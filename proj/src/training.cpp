#include "pincwell/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pincwell/integrator.hpp"
#include "pincwell/io.hpp"

namespace pincwell {

namespace {

constexpr long kChunk = 2048;

// Squared-error sum of the data term over all columns; with `grad` set, the
// weighted adjoint (coefficient `bar_coeff` per error entry) is accumulated.
double data_block(const FeedforwardNetwork& net, const Mat& X, const Mat& T, double bar_coeff,
                  Vec* grad) {
    double sq = 0.0;
    for (long c0 = 0; c0 < X.cols(); c0 += kChunk) {
        const long b = std::min(kChunk, X.cols() - c0);
        const Mat Xc = X.middleCols(c0, b);
        auto tape = net.record(Xc);
        const Mat e = tape->y() - T.middleCols(c0, b);
        sq += e.squaredNorm();
        if (grad) {
            const Mat Ybar = bar_coeff * e;
            *grad += net.backward(*tape, Ybar);
        }
    }
    return sq;
}

// Squared-residual sum of the physics term. The residual lives in scaled
// units: r = dy_s/dt_s - (T/half) .* f(unscale(y_s), u). With `grad` set,
// both the tangent adjoint and the state-Jacobian path (through the
// safeguarded RHS) are accumulated with per-entry coefficient `bar_coeff`.
double residual_block(const FeedforwardNetwork& net, const Mat& X, const Mat& U,
                      const WellParameters& p, const Scaler& scaler, double bar_coeff,
                      Vec* grad) {
    const Vec3 half = scaler.state_half();
    const Vec3 t_over_half = kStepSeconds * half.cwiseInverse();
    double sq = 0.0;
    for (long c0 = 0; c0 < X.cols(); c0 += kChunk) {
        const long b = std::min(kChunk, X.cols() - c0);
        const Mat Xc = X.middleCols(c0, b);
        Mat Xdot = Mat::Zero(6, b);
        Xdot.row(0).setOnes();
        auto tape = net.record(Xc, &Xdot);
        const Mat& Y = tape->y();
        const Mat& Yd = tape->ydot();

        Mat R(3, b), Ybar(3, b);
        for (long j = 0; j < b; ++j) {
            const Vec3 x_phys = scaler.unscale_state(Y.col(j));
            const Vec2 u = U.col(c0 + j);
            Vec3 f;
            Eigen::Matrix3d J;
            ode_rhs_jacobian(p, x_phys, u, EvalMode::safeguarded, f, J);
            const Vec3 r = Yd.col(j) - t_over_half.cwiseProduct(f);
            R.col(j) = r;
            sq += r.squaredNorm();
            if (grad) {
                const Vec3 rbar = bar_coeff * r;
                Ybar.col(j) = -half.cwiseProduct(J.transpose() * t_over_half.cwiseProduct(rbar));
            }
        }
        if (grad) {
            const Mat Ydotbar = bar_coeff * R;
            *grad += net.backward(*tape, Ybar, &Ydotbar);
        }
    }
    return sq;
}

}  // namespace

// ===== Loss ==================================================================

double mse_y(const FeedforwardNetwork& net, const Mat& inputs, const Mat& targets) {
    if (inputs.cols() == 0) throw std::invalid_argument("mse_y: empty point set");
    if (inputs.cols() != targets.cols()) throw std::invalid_argument("mse_y: size mismatch");
    return data_block(net, inputs, targets, 0.0, nullptr) /
           (static_cast<double>(targets.rows()) * inputs.cols());
}

double mse_f(const FeedforwardNetwork& net, const Mat& colloc_inputs, const Mat& colloc_controls,
             const WellParameters& p, const Scaler& scaler) {
    if (colloc_inputs.cols() == 0) throw std::invalid_argument("mse_f: empty point set");
    return residual_block(net, colloc_inputs, colloc_controls, p, scaler, 0.0, nullptr) /
           (3.0 * colloc_inputs.cols());
}

PincLoss::PincLoss(const WellParameters& p, const PincDataset& data, LossWeights weights)
    : p_(p), data_(data), weights_(weights) {
    if (weights.lambda_y < 0 || weights.lambda_F < 0)
        throw std::invalid_argument("loss weights must be nonnegative");
    if (data.n_init() == 0 || data.n_colloc() == 0)
        throw std::invalid_argument("dataset has an empty split");
}

LossTerms PincLoss::evaluate(const FeedforwardNetwork& net, Vec* grad) const {
    if (grad) *grad = Vec::Zero(net.n_params());
    const double nt = static_cast<double>(data_.n_init());
    const double nf = static_cast<double>(data_.n_colloc());
    LossTerms t;
    t.mse_y = data_block(net, data_.init_inputs, data_.init_targets,
                         2.0 * weights_.lambda_y / (3.0 * nt), grad) /
              (3.0 * nt);
    t.mse_f = residual_block(net, data_.colloc_inputs, data_.colloc_controls, p_, data_.scaler,
                             2.0 * weights_.lambda_F / (3.0 * nf), grad) /
              (3.0 * nf);
    t.total = weights_.lambda_y * t.mse_y + weights_.lambda_F * t.mse_f;
    return t;
}

LossTerms PincLoss::value(const FeedforwardNetwork& net) const { return evaluate(net, nullptr); }

LossTerms PincLoss::value_and_grad(const FeedforwardNetwork& net, Vec& grad) const {
    return evaluate(net, &grad);
}

double PincLoss::validation_mse(const FeedforwardNetwork& net) const {
    return mse_y(net, data_.val_inputs, data_.val_targets);
}

// ===== Adam ==================================================================

AdamOptimizer::AdamOptimizer(long dim, const AdamConfig& cfg) : cfg_(cfg) {
    if (cfg.lr <= 0) throw std::invalid_argument("adam lr must be positive");
    m_ = Vec::Zero(dim);
    v_ = Vec::Zero(dim);
}

void AdamOptimizer::step(Vec& theta, const Vec& grad) {
    if (grad.size() != m_.size()) throw std::invalid_argument("adam gradient size mismatch");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const Vec mhat = m_ / bc1;
    const Vec vhat = v_ / bc2;
    const Vec denom = vhat.cwiseSqrt() + Vec::Constant(theta.size(), cfg_.eps);
    theta -= cfg_.lr * mhat.cwiseQuotient(denom);
}

// ===== L-BFGS ================================================================

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::converged: return "converged";
        case SolveStatus::max_iters: return "max_iters";
        case SolveStatus::line_search_fail: return "line_search_fail";
        case SolveStatus::small_change: return "small_change";
    }
    return "unknown";
}

namespace {

// Strong-Wolfe line search (bracket + bisection zoom). On success the
// gradient at the accepted point is left in g_out so the caller reuses it.
// If the zoom budget runs out, the best sufficient-decrease point is
// accepted instead (the curvature pair is later filtered by the caller).
bool wolfe_line_search(const Objective& fg, const Vec& x, const Vec& d, double f0, double g0d,
                       double c1, double c2, double& a_out, double& f_out, Vec& g_out,
                       long& fevals, std::vector<double>& history) {
    const int kMaxExpand = 30, kMaxZoom = 50;
    Vec xtrial(x.size());
    auto eval = [&](double a, double& fv, Vec& gv) {
        xtrial = x + a * d;
        fv = fg(xtrial, gv);
        ++fevals;
        history.push_back(fv);
    };

    double a_prev = 0.0, f_prev = f0;
    double a = 1.0;
    double a_lo = 0, a_hi = 0, f_lo = f0;
    bool bracketed = false;
    double fa;
    Vec ga(x.size());
    for (int i = 0; i < kMaxExpand; ++i) {
        eval(a, fa, ga);
        const double gda = ga.dot(d);
        if (fa > f0 + c1 * a * g0d || (i > 0 && fa >= f_prev)) {
            a_lo = a_prev;
            f_lo = f_prev;
            a_hi = a;
            bracketed = true;
            break;
        }
        if (std::abs(gda) <= -c2 * g0d) {
            a_out = a;
            f_out = fa;
            g_out = ga;
            return true;
        }
        if (gda >= 0) {
            a_lo = a;
            f_lo = fa;
            a_hi = a_prev;
            bracketed = true;
            break;
        }
        a_prev = a;
        f_prev = fa;
        a *= 2.0;
    }
    if (!bracketed) return false;

    for (int i = 0; i < kMaxZoom; ++i) {
        const double am = 0.5 * (a_lo + a_hi);
        eval(am, fa, ga);
        const double gda = ga.dot(d);
        if (fa > f0 + c1 * am * g0d || fa >= f_lo) {
            a_hi = am;
        } else {
            if (std::abs(gda) <= -c2 * g0d) {
                a_out = am;
                f_out = fa;
                g_out = ga;
                return true;
            }
            if (gda * (a_hi - a_lo) >= 0) a_hi = a_lo;
            a_lo = am;
            f_lo = fa;
        }
        if (std::abs(a_hi - a_lo) <= 1e-14 * std::max(1.0, std::abs(a_lo))) break;
    }
    // Zoom exhausted: fall back to the best sufficient-decrease point.
    if (a_lo > 0.0 && f_lo <= f0 + c1 * a_lo * g0d) {
        eval(a_lo, fa, ga);
        a_out = a_lo;
        f_out = fa;
        g_out = ga;
        return true;
    }
    return false;
}

struct LbfgsMemory {
    std::vector<Vec> S, Y;
    std::vector<double> rho;

    void clear() {
        S.clear();
        Y.clear();
        rho.clear();
    }

    void push(const Vec& s, const Vec& y, int capacity) {
        const double sy = s.dot(y);
        if (!(sy > 1e-10 * s.norm() * y.norm())) return;  // curvature too weak
        S.push_back(s);
        Y.push_back(y);
        rho.push_back(1.0 / sy);
        if (static_cast<int>(S.size()) > capacity) {
            S.erase(S.begin());
            Y.erase(Y.begin());
            rho.erase(rho.begin());
        }
    }

    // Two-loop recursion: returns the quasi-Newton descent direction -H g.
    Vec direction(const Vec& g, bool scale_init) const {
        Vec q = g;
        const int m = static_cast<int>(S.size());
        std::vector<double> alpha(m);
        for (int i = m - 1; i >= 0; --i) {
            alpha[i] = rho[i] * S[i].dot(q);
            q -= alpha[i] * Y[i];
        }
        if (m > 0 && scale_init) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
        for (int i = 0; i < m; ++i) {
            const double beta = rho[i] * Y[i].dot(q);
            q += (alpha[i] - beta) * S[i];
        }
        return -q;
    }
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& fg, const Vec& x0, const LbfgsConfig& cfg,
                           const IterCallback& on_iter) {
    if (!(cfg.c1 > 0 && cfg.c1 < cfg.c2 && cfg.c2 < 1))
        throw std::invalid_argument("wolfe constants require 0 < c1 < c2 < 1");
    LbfgsResult res;
    Vec x = x0, g(x0.size());
    double f = fg(x, g);
    res.fevals = 1;
    res.history.push_back(f);

    auto finish = [&](SolveStatus st, long iters) {
        res.x = x;
        res.f = f;
        res.grad = g;
        res.iters = iters;
        res.status = st;
        return res;
    };

    if (g.cwiseAbs().maxCoeff() <= cfg.grad_tol) return finish(SolveStatus::converged, 0);

    LbfgsMemory mem;
    int stall = 0;  // consecutive iterations below rel_tol; superlinear steps
                    // can dip under it once right before grad_tol is reached
    for (long k = 0; k < cfg.max_iters; ++k) {
        Vec d = mem.direction(g, cfg.scale_init);
        double g0d = g.dot(d);
        if (!(g0d < 0)) {  // lost descent: restart from steepest descent
            mem.clear();
            d = -g;
            g0d = g.dot(d);
            if (!(g0d < 0)) return finish(SolveStatus::converged, k);
        }
        double a, fn;
        Vec gn(x.size());
        if (!wolfe_line_search(fg, x, d, f, g0d, cfg.c1, cfg.c2, a, fn, gn, res.fevals,
                               res.history))
            return finish(SolveStatus::line_search_fail, k);

        const Vec s = a * d;
        const Vec y = gn - g;
        x += s;
        const double f_prev = f;
        f = fn;
        g = gn;
        mem.push(s, y, cfg.memory);
        if (on_iter) on_iter(k + 1, x, f);
        if (g.cwiseAbs().maxCoeff() <= cfg.grad_tol) return finish(SolveStatus::converged, k + 1);
        if (cfg.rel_tol > 0 && std::abs(f_prev - f) <= cfg.rel_tol * std::max(1.0, std::abs(f))) {
            if (++stall >= 2) return finish(SolveStatus::small_change, k + 1);
        } else {
            stall = 0;
        }
    }
    return finish(SolveStatus::max_iters, cfg.max_iters);
}

LbfgsResult lbfgs_minimize_box(const Objective& fg, const Vec& x0, const Vec& lo, const Vec& hi,
                               const LbfgsConfig& cfg, const IterCallback& on_iter) {
    if (lo.size() != x0.size() || hi.size() != x0.size())
        throw std::invalid_argument("bound size mismatch");
    if (((hi - lo).array() < 0).any()) throw std::invalid_argument("lower bound above upper");
    auto proj = [&](const Vec& v) { return v.cwiseMax(lo).cwiseMin(hi); };

    LbfgsResult res;
    Vec x = proj(x0), g(x0.size());
    double f = fg(x, g);
    res.fevals = 1;
    res.history.push_back(f);

    auto finish = [&](SolveStatus st, long iters) {
        res.x = x;
        res.f = f;
        res.grad = g;
        res.iters = iters;
        res.status = st;
        return res;
    };

    LbfgsMemory mem;
    int stall = 0;
    for (long k = 0; k < cfg.max_iters; ++k) {
        const Vec pg = x - proj(x - g);
        if (pg.cwiseAbs().maxCoeff() <= cfg.grad_tol) return finish(SolveStatus::converged, k);

        bool accepted = false;
        double fn = f;
        Vec xn, gn(x.size());
        // Try the quasi-Newton direction, then plain steepest descent, with
        // Armijo backtracking along the projection arc.
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            Vec d = attempt == 0 ? mem.direction(g, cfg.scale_init) : -g;
            if (attempt == 1) mem.clear();
            double a = 1.0;
            for (int t = 0; t < 60; ++t) {
                xn = proj(x + a * d);
                const Vec step = xn - x;
                if (step.cwiseAbs().maxCoeff() == 0.0) break;
                fn = fg(xn, gn);
                ++res.fevals;
                res.history.push_back(fn);
                if (fn <= f + cfg.c1 * std::min(0.0, g.dot(step))) {
                    accepted = true;
                    break;
                }
                a *= 0.5;
            }
        }
        if (!accepted) return finish(SolveStatus::line_search_fail, k);

        const Vec s = xn - x;
        const Vec y = gn - g;
        x = xn;
        const double f_prev = f;
        f = fn;
        g = gn;
        mem.push(s, y, cfg.memory);
        if (on_iter) on_iter(k + 1, x, f);
        if (cfg.rel_tol > 0 && std::abs(f_prev - f) <= cfg.rel_tol * std::max(1.0, std::abs(f))) {
            if (++stall >= 2) return finish(SolveStatus::small_change, k + 1);
        } else {
            stall = 0;
        }
    }
    return finish(SolveStatus::max_iters, cfg.max_iters);
}

// ===== PINC training =========================================================

TrainResult train_pinc(const WellParameters& p, const PincDataset& data, const TrainConfig& cfg) {
    std::unique_ptr<FeedforwardNetwork> net;
    if (cfg.init_checkpoint.empty()) {
        net = make_network(cfg.arch, 6, 3, cfg.n_layers, cfg.width);
        net->init_glorot(cfg.seed);
    } else {
        net = load_network(cfg.init_checkpoint);
        if (net->input_dim() != 6 || net->output_dim() != 3)
            throw std::invalid_argument("init_checkpoint is not a 6-in/3-out state network");
    }
    const PincLoss loss(p, data, cfg.weights);

    TrainResult res;
    LossTerms cur;
    long fevals = 0;

    // Validates the parameters currently loaded into `net`, keeps the best
    // checkpoint, and appends a metrics row.
    auto validate = [&](long iter, const char* phase) {
        const double val = loss.validation_mse(*net);
        if (val < res.best_val) {
            res.best_val = val;
            res.best_iter = iter;
            res.best = net->clone();
        }
        res.metrics.push_back({iter, phase, cur.total, cur.mse_y, cur.mse_f, val, fevals});
    };

    // Phase 1: full-batch Adam.
    AdamOptimizer adam(net->n_params(), cfg.adam);
    Vec theta = net->get_parameters();
    Vec grad(theta.size());
    for (int e = 1; e <= cfg.adam.epochs; ++e) {
        net->set_parameters(theta);
        cur = loss.value_and_grad(*net, grad);
        ++fevals;
        if (!std::isfinite(cur.total))
            throw TrainingDiverged("non-finite loss in adam epoch " + std::to_string(e));
        adam.step(theta, grad);
        if (e % cfg.val_every == 0 || e == cfg.adam.epochs) {
            net->set_parameters(theta);
            validate(e, "adam");
        }
    }
    net->set_parameters(theta);

    // Phase 2: L-BFGS on the same objective.
    Objective obj = [&](const Vec& th, Vec& g) {
        net->set_parameters(th);
        cur = loss.value_and_grad(*net, g);
        ++fevals;
        if (!std::isfinite(cur.total)) throw TrainingDiverged("non-finite loss in lbfgs phase");
        return cur.total;
    };
    const LbfgsResult lr = lbfgs_minimize(obj, theta, cfg.lbfgs, [&](long k, const Vec& xk, double) {
        if (k % cfg.val_every == 0) {
            net->set_parameters(xk);
            validate(cfg.adam.epochs + k, "lbfgs");
        }
    });

    net->set_parameters(lr.x);
    res.final_loss = loss.value(*net);
    res.fevals = fevals;
    res.lbfgs_status = lr.status;
    cur = res.final_loss;
    validate(cfg.adam.epochs + lr.iters, "lbfgs");
    res.last = net->clone();

    if (!cfg.metrics_csv.empty()) {
        CsvWriter csv({"iter", "phase", "train_loss", "mse_y", "mse_f", "val_mse", "fevals"});
        for (const auto& row : res.metrics) {
            std::ostringstream line;
            line << row.iter << ',' << row.phase << ',' << format_double(row.train_loss) << ','
                 << format_double(row.mse_y) << ',' << format_double(row.mse_f) << ','
                 << format_double(row.val_mse) << ',' << row.fevals;
            csv.raw_row(line.str());
        }
        csv.save(cfg.metrics_csv);
    }
    if (!cfg.checkpoint.empty()) save_network(*res.best, cfg.checkpoint);
    return res;
}

// ===== Algebraic-output network =============================================

namespace {

constexpr uint64_t kAlgTrainStream = 20;
constexpr uint64_t kAlgHeldoutStream = 21;

// One feasible (state, control) draw with exact-mode algebraic targets.
void draw_alg_point(const WellParameters& p, const DomainBox& box, Rng& rng, Vec3& x, Vec2& u,
                    Vec4& target) {
    for (int attempt = 0; attempt < 200000; ++attempt) {
        for (int i = 0; i < 3; ++i) x[i] = rng.uniform(box.lo[i], box.hi[i]);
        u[0] = rng.uniform01();
        u[1] = rng.uniform01();
        try {
            const AlgebraicRecord r = compute_algebraics(p, WellState::from_vector(x),
                                                         ControlInput{u[0], u[1]}, EvalMode::exact);
            target << r.P_bh, r.w_G_in, r.w_G_res, r.w_L_res;
            return;
        } catch (const InfeasibleState&) {
        }
    }
    throw RejectionStall("algebraic-target sampling: acceptance rate collapsed");
}

}  // namespace

Vec4 AlgNetModel::predict(const Vec3& x_scaled, const Vec2& u_physical) const {
    Vec x5(5);
    x5 << x_scaled, Scaler::scale_control(u_physical);
    const Vec s = net->forward(x5);
    const Vec4 mid = 0.5 * (out_lo + out_hi), half = 0.5 * (out_hi - out_lo);
    return mid + half.cwiseProduct(Vec4(s));
}

double AlgNetModel::output_with_gradient(int k, const Vec3& x_scaled, const Vec2& u_physical,
                                         Vec3* d_dx_scaled, Vec2* d_du) const {
    if (k < 0 || k >= 4) throw std::invalid_argument("algebraic output index out of range");
    Mat X(5, 1);
    X << x_scaled, Scaler::scale_control(u_physical);
    auto tape = net->record(X);
    const double half = 0.5 * (out_hi[k] - out_lo[k]);
    const double value = 0.5 * (out_lo[k] + out_hi[k]) + half * tape->y()(k, 0);
    if (d_dx_scaled || d_du) {
        Mat Ybar = Mat::Zero(4, 1);
        Ybar(k, 0) = 1.0;
        Mat xbar = Mat::Zero(5, 1);
        net->backward(*tape, Ybar, nullptr, &xbar);
        if (d_dx_scaled) *d_dx_scaled = half * xbar.col(0).head<3>();
        if (d_du) *d_du = 2.0 * half * xbar.col(0).tail<2>();  // u_s = 2u - 1
    }
    return value;
}

AlgTrainResult train_algnet(const WellParameters& p, const DomainBox& box, int n_samples,
                            const AlgNetConfig& cfg) {
    if (n_samples < 10) throw std::invalid_argument("train_algnet: too few samples");
    box.validate();
    const Scaler scaler(box);

    Mat X(5, n_samples);
    Mat T_phys(4, n_samples);
    for (int i = 0; i < n_samples; ++i) {
        Rng rng = stream_rng(cfg.seed, kAlgTrainStream, static_cast<uint64_t>(i));
        Vec3 x;
        Vec2 u;
        Vec4 t;
        draw_alg_point(p, box, rng, x, u, t);
        X.col(i) << scaler.scale_state(x), Scaler::scale_control(u);
        T_phys.col(i) = t;
    }

    AlgTrainResult res;
    res.model.box = box;
    res.model.out_lo = T_phys.rowwise().minCoeff();
    res.model.out_hi = T_phys.rowwise().maxCoeff();

    // Min-max scale targets; constant outputs collapse to a zero target.
    Mat T_scaled(4, n_samples);
    for (int k = 0; k < 4; ++k) {
        const double lo = res.model.out_lo[k], hi = res.model.out_hi[k];
        if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
            const double mid = 0.5 * (lo + hi);
            res.model.out_lo[k] = mid;
            res.model.out_hi[k] = mid;
            T_scaled.row(k).setZero();
        } else {
            T_scaled.row(k) = (2.0 * (T_phys.row(k).array() - lo) / (hi - lo)) - 1.0;
        }
    }

    auto net = make_network("dense", 5, 4, cfg.n_layers, cfg.width);
    net->init_glorot(cfg.seed);
    const double n = static_cast<double>(n_samples);
    Objective obj = [&](const Vec& th, Vec& g) {
        net->set_parameters(th);
        g = Vec::Zero(net->n_params());
        const double sq = data_block(*net, X, T_scaled, 2.0 / (4.0 * n), &g);
        const double f = sq / (4.0 * n);
        if (!std::isfinite(f)) throw TrainingDiverged("non-finite algebraic-net loss");
        return f;
    };
    LbfgsConfig lcfg;
    lcfg.max_iters = cfg.lbfgs_iters;
    lcfg.grad_tol = 1e-13;
    const LbfgsResult lr = lbfgs_minimize(obj, net->get_parameters(), lcfg);
    net->set_parameters(lr.x);
    res.model.net = std::move(net);
    res.train_mse = lr.f;
    res.status = lr.status;
    res.fevals = lr.fevals;

    // Held-out audit in physical units.
    double mae = 0.0;
    for (int i = 0; i < cfg.n_heldout; ++i) {
        Rng rng = stream_rng(cfg.seed, kAlgHeldoutStream, static_cast<uint64_t>(i));
        Vec3 x;
        Vec2 u;
        Vec4 t;
        draw_alg_point(p, box, rng, x, u, t);
        const Vec4 pred = res.model.predict(scaler.scale_state(x), u);
        mae += std::abs(pred[0] - t[0]);
    }
    res.heldout_pbh_mae_bar = mae / cfg.n_heldout / 1e5;
    return res;
}

void save_algnet(const AlgNetModel& model, const std::string& prefix) {
    save_network(*model.net, prefix + "_net.txt");
    nlohmann::json j;
    for (int i = 0; i < 3; ++i) {
        j["state_lo"].push_back(model.box.lo[i]);
        j["state_hi"].push_back(model.box.hi[i]);
    }
    for (int k = 0; k < 4; ++k) {
        j["out_lo"].push_back(model.out_lo[k]);
        j["out_hi"].push_back(model.out_hi[k]);
    }
    atomic_write_file(prefix + "_scale.json", j.dump(2) + "\n");
}

AlgNetModel load_algnet(const std::string& prefix) {
    AlgNetModel m;
    m.net = load_network(prefix + "_net.txt");
    if (m.net->input_dim() != 5 || m.net->output_dim() != 4)
        throw std::runtime_error("algebraic-net checkpoint has wrong dimensions");
    std::ifstream in(prefix + "_scale.json");
    if (!in) throw std::runtime_error("missing scale sidecar: " + prefix + "_scale.json");
    const nlohmann::json j = nlohmann::json::parse(in);
    for (int i = 0; i < 3; ++i) {
        m.box.lo[i] = j.at("state_lo").at(i).get<double>();
        m.box.hi[i] = j.at("state_hi").at(i).get<double>();
    }
    for (int k = 0; k < 4; ++k) {
        m.out_lo[k] = j.at("out_lo").at(k).get<double>();
        m.out_hi[k] = j.at("out_hi").at(k).get<double>();
    }
    return m;
}

// ===== Sweep =================================================================

std::vector<SweepRow> sweep(const WellParameters& p, const PincDataset& data,
                            const SweepSpec& spec, const std::string& csv_path) {
    std::vector<SweepRow> rows;
    for (const auto& arch : spec.archs) {
        for (int layers : spec.layers) {
            for (int width : spec.widths) {
                for (int r = 0; r < spec.repeats; ++r) {
                    TrainConfig cfg = spec.base;
                    cfg.arch = arch;
                    cfg.n_layers = layers;
                    cfg.width = width;
                    cfg.seed = spec.base.seed + static_cast<uint64_t>(r);
                    cfg.metrics_csv.clear();
                    cfg.checkpoint.clear();
                    SweepRow row;
                    row.arch = arch;
                    row.layers = layers;
                    row.width = width;
                    row.seed = cfg.seed;
                    try {
                        const TrainResult tr = train_pinc(p, data, cfg);
                        row.best_val = tr.best_val;
                        row.final_train = tr.final_loss.total;
                        row.status = "ok";
                    } catch (const std::exception& e) {
                        row.status = e.what();
                    }
                    rows.push_back(std::move(row));
                }
            }
        }
    }
    if (!csv_path.empty()) {
        CsvWriter csv({"arch", "layers", "width", "seed", "best_val", "final_train", "status"});
        for (const auto& row : rows) {
            std::ostringstream line;
            std::string status = row.status;
            for (char& c : status)
                if (c == ',' || c == '\n') c = ';';
            line << row.arch << ',' << row.layers << ',' << row.width << ',' << row.seed << ','
                 << format_double(row.best_val) << ',' << format_double(row.final_train) << ','
                 << status;
            csv.raw_row(line.str());
        }
        csv.save(csv_path);
    }
    return rows;
}

}  // namespace pincwell
