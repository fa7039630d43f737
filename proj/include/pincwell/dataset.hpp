#pragma once

#include <cstdint>
#include <string>

#include "pincwell/types.hpp"
#include "pincwell/well_model.hpp"

namespace pincwell {

// ===== Domain box and scaling ================================================

/// Axis-aligned state box (kg per dimension) delimiting the training domain.
/// Controls are always [0,1]^2 and time [0, 60 s].
struct DomainBox {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();

    void validate() const;  ///< throws std::invalid_argument unless lo < hi
    Vec3 mid() const { return 0.5 * (lo + hi); }
    Vec3 half() const { return 0.5 * (hi - lo); }
};

/// Min-max affine scaling derived from a DomainBox: states map to [-1,1]
/// (box corners exactly), controls to 2u-1, time to t/60.
class Scaler {
public:
    Scaler() = default;
    explicit Scaler(const DomainBox& box);

    Vec3 scale_state(const Vec3& x) const;
    Vec3 unscale_state(const Vec3& s) const;
    static Vec2 scale_control(const Vec2& u) { return 2.0 * u - Vec2::Ones(); }
    static Vec2 unscale_control(const Vec2& s) { return 0.5 * (s + Vec2::Ones()); }
    static double scale_time(double t) { return t / 60.0; }

    /// Network input [t/60, scaled state, scaled control].
    Vec6 make_input(double t, const Vec3& x, const Vec2& u) const;

    const DomainBox& box() const { return box_; }
    /// Half-spans of the state box; d(scaled)/d(physical) = 1/half per dim.
    Vec3 state_half() const { return box_.half(); }

private:
    DomainBox box_;
};

// ===== Exploration ===========================================================

/// Control ranges used for domain-exploration rollouts (not for data
/// sampling, which always covers [0,1]^2). Low gas-lift openings drive some
/// wells into unbounded slugging, so each well's config carries floors.
struct ExplorationRanges {
    double u1_min = 0.05, u1_max = 1.0;
    double u2_min = 0.05, u2_max = 1.0;
};

/// Reads the optional "exploration" section of a well config.
ExplorationRanges load_exploration_ranges(const std::string& config_path);

/// Bounding box of states visited by `n_rollouts` random piecewise-constant
/// control rollouts (300 s blocks, controls from `ranges`), started at a
/// settled strongly-lifted state. Rollouts that leave the feasible domain are
/// truncated there. The box is inflated by 5% per side and a minimum span is
/// enforced per dimension. Deterministic in `seed`.
DomainBox explore_domain(const WellParameters& p, const ExplorationRanges& ranges,
                         int n_rollouts, uint64_t seed);

// ===== Dataset ===============================================================

/// Column-per-point storage, everything in scaled (network) units except
/// colloc_controls, which keeps the physical control for residual evaluation.
struct PincDataset {
    Mat init_inputs;      // 6 x N_t, t = 0
    Mat init_targets;     // 3 x N_t (= the scaled initial state)
    Mat colloc_inputs;    // 6 x N_f, t uniform in [0,1]
    Mat colloc_controls;  // 2 x N_f, physical u
    Mat val_inputs;       // 6 x N_val, t = 1
    Mat val_targets;      // 3 x N_val, scaled 60 s simulation endpoint
    Scaler scaler;

    long n_init() const { return init_inputs.cols(); }
    long n_colloc() const { return colloc_inputs.cols(); }
    long n_val() const { return val_inputs.cols(); }
};

/// Uniform sampling over box x [0,1]^2 with rejection of initial states that
/// fail exact-mode evaluation; validation targets are 60 s exact simulations
/// (candidates whose rollout dies are rejected too). Random streams are split
/// per (split, point index), so every point is reproducible in isolation.
/// Throws RejectionStall if the acceptance rate drops below 0.1%.
PincDataset sample_dataset(const WellParameters& p, const DomainBox& box, int n_init,
                           int n_colloc, int n_val, uint64_t seed);

/// Fraction of candidate draws rejected while producing `n` feasible states
/// (diagnostic; deterministic in seed).
double measure_rejection_rate(const WellParameters& p, const DomainBox& box, int n,
                              uint64_t seed);

// ===== Persistence ===========================================================

/// Writes <prefix>_init.csv, <prefix>_colloc.csv, <prefix>_val.csv and the
/// scaler sidecar <prefix>_scaler.json (atomically).
void save_dataset(const PincDataset& ds, const std::string& prefix);

PincDataset load_dataset(const std::string& prefix);

}  // namespace pincwell
