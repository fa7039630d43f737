#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "pincwell/types.hpp"
#include "pincwell/well_model.hpp"

namespace pincwell {

// ===== Control schedules =====================================================

/// Piecewise-constant control: (start time, value) pairs, sorted, first at 0.
/// The last segment extends to the end of the simulation.
using ControlSchedule = std::vector<std::pair<double, ControlInput>>;

/// The control active at time t (right-continuous).
ControlInput schedule_at(const ControlSchedule& schedule, double t);

// ===== Trajectory ============================================================

struct Trajectory {
    std::vector<double> times;
    std::vector<WellState> states;
    std::vector<ControlInput> controls;              ///< control applied on [t_i, t_{i+1})
    std::vector<AlgebraicRecord> algebraics;         ///< optional; filled on request

    size_t size() const { return times.size(); }

    /// CSV: t,m_G_an,m_G_tb,m_L_tb,u1,u2 plus P_bh [bar] and w_out [kg/s]
    /// when algebraics were recorded.
    void to_csv(const std::string& path) const;
};

// ===== Integration ===========================================================

/// One classical RK4 step of the exact model. Throws InfeasibleState if any
/// stage evaluation leaves the feasible domain.
WellState rk4_step(const WellParameters& p, const WellState& x, const ControlInput& u, double h);

/// Fixed-step rollout under a piecewise-constant schedule. Control switch
/// times must land on the h-grid. Samples are recorded every `output_every`
/// seconds (a multiple of h; 0 means every step) from 0 to t_end inclusive;
/// the stored control is the one active at the sample time.
/// Throws InfeasibleState with the failing time attached.
Trajectory simulate(const WellParameters& p, const WellState& x0, const ControlSchedule& schedule,
                    double t_end, double h, bool record_algebraics = false,
                    double output_every = 0.0);

/// The ground-truth one-step map of the controller: exactly 60 s at h = 1 s.
WellState step_60s(const WellParameters& p, const WellState& x, const ControlInput& u);

constexpr double kStepSeconds = 60.0;  ///< controller/PINC prediction horizon T

}  // namespace pincwell
