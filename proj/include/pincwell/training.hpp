#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "pincwell/dataset.hpp"
#include "pincwell/neural.hpp"
#include "pincwell/types.hpp"
#include "pincwell/well_model.hpp"

namespace pincwell {

// ===== Loss ==================================================================

struct LossWeights {
    double lambda_y = 1.0;
    double lambda_F = 1.0;
};

struct LossTerms {
    double total = 0.0;
    double mse_y = 0.0;  ///< data term, unweighted
    double mse_f = 0.0;  ///< physics residual term, unweighted
};

/// Mean squared output error: (1/N) sum_j (1/n_y) |net(x_j) - t_j|^2.
double mse_y(const FeedforwardNetwork& net, const Mat& inputs, const Mat& targets);

/// Mean squared physics residual at collocation points, in scaled units:
/// the time tangent of the network against the safeguarded ODE right-hand
/// side mapped through the scaler and the 60 s step.
double mse_f(const FeedforwardNetwork& net, const Mat& colloc_inputs, const Mat& colloc_controls,
             const WellParameters& p, const Scaler& scaler);

/// Weighted loss over a dataset with an analytic parameter gradient. Points
/// are processed in fixed-size chunks and accumulated in a fixed order, so
/// results are bitwise reproducible.
class PincLoss {
public:
    PincLoss(const WellParameters& p, const PincDataset& data, LossWeights weights = {});

    LossTerms value(const FeedforwardNetwork& net) const;
    LossTerms value_and_grad(const FeedforwardNetwork& net, Vec& grad) const;

    /// Data-term MSE on the held-out 60 s prediction points.
    double validation_mse(const FeedforwardNetwork& net) const;

    const LossWeights& weights() const { return weights_; }

private:
    LossTerms evaluate(const FeedforwardNetwork& net, Vec* grad) const;

    const WellParameters& p_;
    const PincDataset& data_;
    LossWeights weights_;
};

// ===== Optimizers ============================================================

struct AdamConfig {
    double lr = 7e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int epochs = 1000;
};

/// Standard bias-corrected Adam; state lives with the instance.
class AdamOptimizer {
public:
    AdamOptimizer(long dim, const AdamConfig& cfg = {});
    void step(Vec& theta, const Vec& grad);
    long steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    Vec m_, v_;
    long t_ = 0;
};

struct LbfgsConfig {
    int memory = 10;
    long max_iters = 2000;
    double c1 = 1e-4;  ///< sufficient-decrease constant
    double c2 = 0.9;   ///< curvature constant
    double grad_tol = 1e-12;  ///< sup-norm convergence threshold
    double rel_tol = 1e-12;   ///< relative loss-change stop; 0 disables
    bool scale_init = true;   ///< gamma-scaled initial Hessian (standard);
                              ///< false keeps H0 = I, making memory >= n
                              ///< reproduce dense BFGS on quadratics
};

enum class SolveStatus { converged, max_iters, line_search_fail, small_change };

std::string to_string(SolveStatus s);

struct LbfgsResult {
    Vec x;
    double f = 0.0;
    Vec grad;
    long iters = 0;
    long fevals = 0;
    SolveStatus status = SolveStatus::max_iters;
    std::vector<double> history;  ///< objective at every function evaluation
};

/// Objective: returns f(x) and fills the gradient.
using Objective = std::function<double(const Vec&, Vec&)>;
/// Called after every accepted iterate.
using IterCallback = std::function<void(long iter, const Vec& x, double f)>;

/// Two-loop L-BFGS with a strong-Wolfe line search. On a line-search failure
/// the best iterate so far is returned with the corresponding status.
LbfgsResult lbfgs_minimize(const Objective& fg, const Vec& x0, const LbfgsConfig& cfg = {},
                           const IterCallback& on_iter = nullptr);

/// Box-constrained variant: projected search direction with Armijo
/// backtracking along the projection arc.
LbfgsResult lbfgs_minimize_box(const Objective& fg, const Vec& x0, const Vec& lo, const Vec& hi,
                               const LbfgsConfig& cfg = {}, const IterCallback& on_iter = nullptr);

// ===== PINC training =========================================================

struct TrainConfig {
    std::string arch = "skip";
    int n_layers = 6;
    int width = 30;
    LossWeights weights;
    AdamConfig adam;    // phase 1, full batch
    LbfgsConfig lbfgs;  // phase 2
    int val_every = 25;
    uint64_t seed = 1;
    std::string metrics_csv;  ///< per-validation metrics rows; empty = don't write
    std::string checkpoint;   ///< best-validation network; empty = don't write
    std::string init_checkpoint;  ///< resume: start from this saved network
                                  ///< instead of a fresh seeded init
};

struct MetricsRow {
    long iter = 0;
    std::string phase;  // "adam" or "lbfgs"
    double train_loss = 0, mse_y = 0, mse_f = 0, val_mse = 0;
    long fevals = 0;
};

struct TrainResult {
    std::unique_ptr<FeedforwardNetwork> best;  ///< lowest validation MSE seen
    std::unique_ptr<FeedforwardNetwork> last;  ///< end-of-run parameters
    double best_val = std::numeric_limits<double>::infinity();
    long best_iter = 0;
    LossTerms final_loss;
    long fevals = 0;
    SolveStatus lbfgs_status = SolveStatus::max_iters;
    std::vector<MetricsRow> metrics;
};

/// Full-batch Adam followed by L-BFGS; validation MSE every `val_every`
/// iterations with the best checkpoint retained. Throws TrainingDiverged if
/// the loss turns non-finite.
TrainResult train_pinc(const WellParameters& p, const PincDataset& data, const TrainConfig& cfg);

// ===== Algebraic-output network =============================================

struct AlgNetConfig {
    int n_layers = 4;
    int width = 30;
    long lbfgs_iters = 5000;
    uint64_t seed = 1;
    int n_heldout = 1000;  ///< audit points for the physical-unit error report
};

/// Dense net mapping [scaled state; scaled control] to four algebraic
/// outputs (P_bh, w_G_in, w_G_res, w_L_res), min-max scaled per output.
/// Constant outputs (e.g. w_G_res on GOR = 0 wells) collapse to a zero
/// target and decode back to the constant.
struct AlgNetModel {
    std::unique_ptr<FeedforwardNetwork> net;
    DomainBox box;       ///< state scaling used for the inputs
    Vec4 out_lo, out_hi; ///< physical output ranges over the training set

    Vec4 predict(const Vec3& x_scaled, const Vec2& u_physical) const;

    /// Physical output k plus its gradient with respect to the scaled state
    /// and the physical control.
    double output_with_gradient(int k, const Vec3& x_scaled, const Vec2& u_physical,
                                Vec3* d_dx_scaled = nullptr, Vec2* d_du = nullptr) const;

    double pbh_bar(const Vec3& x_scaled, const Vec2& u_physical) const {
        return predict(x_scaled, u_physical)[0] / 1e5;
    }
};

struct AlgTrainResult {
    AlgNetModel model;
    double train_mse = 0.0;            ///< scaled units
    double heldout_pbh_mae_bar = 0.0;  ///< physical-unit audit
    SolveStatus status = SolveStatus::max_iters;
    long fevals = 0;
};

/// Supervised regression against exact-mode algebraic outputs on uniformly
/// sampled feasible (state, control) pairs from `box` x [0,1]^2.
AlgTrainResult train_algnet(const WellParameters& p, const DomainBox& box, int n_samples,
                            const AlgNetConfig& cfg);

void save_algnet(const AlgNetModel& model, const std::string& prefix);
AlgNetModel load_algnet(const std::string& prefix);

// ===== Architecture sweep ====================================================

struct SweepSpec {
    std::vector<std::string> archs{"skip"};
    std::vector<int> layers{6};
    std::vector<int> widths{30};
    int repeats = 1;
    TrainConfig base;
};

struct SweepRow {
    std::string arch;
    int layers = 0, width = 0;
    uint64_t seed = 0;
    double best_val = std::numeric_limits<double>::infinity();
    double final_train = std::numeric_limits<double>::infinity();
    std::string status;  // "ok" or the failure message
};

/// Trains every (arch, layers, width) combination `repeats` times with
/// distinct seeds. Individual failures are recorded and the sweep continues.
std::vector<SweepRow> sweep(const WellParameters& p, const PincDataset& data,
                            const SweepSpec& spec, const std::string& csv_path = "");

}  // namespace pincwell
