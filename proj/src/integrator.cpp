#include "pincwell/integrator.hpp"

#include <cmath>
#include <stdexcept>

#include "pincwell/io.hpp"

namespace pincwell {

ControlInput schedule_at(const ControlSchedule& schedule, double t) {
    if (schedule.empty()) throw std::invalid_argument("empty control schedule");
    size_t i = 0;
    while (i + 1 < schedule.size() && t >= schedule[i + 1].first - 1e-9) ++i;
    return schedule[i].second;
}

WellState rk4_step(const WellParameters& p, const WellState& x, const ControlInput& u, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("rk4_step: h must be positive");
    const Vec3 xv = x.as_vector();
    const Vec2 uv = u.as_vector();
    const Vec3 k1 = ode_rhs<double>(p, xv, uv, EvalMode::exact);
    const Vec3 k2 = ode_rhs<double>(p, Vec3(xv + 0.5 * h * k1), uv, EvalMode::exact);
    const Vec3 k3 = ode_rhs<double>(p, Vec3(xv + 0.5 * h * k2), uv, EvalMode::exact);
    const Vec3 k4 = ode_rhs<double>(p, Vec3(xv + h * k3), uv, EvalMode::exact);
    return WellState::from_vector(xv + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

Trajectory simulate(const WellParameters& p, const WellState& x0, const ControlSchedule& schedule,
                    double t_end, double h, bool record_algebraics, double output_every) {
    if (!(h > 0.0) || !(t_end > 0.0)) throw std::invalid_argument("simulate: h, t_end > 0");
    if (schedule.empty() || std::abs(schedule.front().first) > 1e-9)
        throw std::invalid_argument("simulate: schedule must start at t = 0");
    for (size_t i = 0; i < schedule.size(); ++i) {
        const double s = schedule[i].first;
        if (i && s <= schedule[i - 1].first)
            throw std::invalid_argument("simulate: schedule times must increase");
        if (std::abs(s / h - std::round(s / h)) > 1e-9)
            throw std::invalid_argument("simulate: control switch times must land on the h-grid");
    }
    int stride = 1;
    if (output_every > 0.0) {
        const double m = output_every / h;
        if (std::abs(m - std::round(m)) > 1e-9 || m < 1.0)
            throw std::invalid_argument("simulate: output_every must be a multiple of h");
        stride = static_cast<int>(std::round(m));
    }

    const int n = static_cast<int>(std::round(t_end / h));
    Trajectory traj;
    traj.times.reserve(n / stride + 1);
    traj.states.reserve(n / stride + 1);
    traj.controls.reserve(n / stride + 1);

    WellState x = x0;
    for (int k = 0; k <= n; ++k) {
        const double t = k * h;
        const ControlInput u = schedule_at(schedule, t);
        if (k % stride == 0 || k == n) {
            traj.times.push_back(t);
            traj.states.push_back(x);
            traj.controls.push_back(u);
            if (record_algebraics) {
                try {
                    traj.algebraics.push_back(compute_algebraics(p, x, u, EvalMode::exact));
                } catch (const InfeasibleState& e) {
                    throw InfeasibleState("simulate: infeasible at t = " + std::to_string(t) +
                                          ": " + e.what());
                }
            }
        }
        if (k == n) break;
        try {
            x = rk4_step(p, x, u, h);
        } catch (const InfeasibleState& e) {
            throw InfeasibleState("simulate: infeasible during step from t = " +
                                  std::to_string(t) + ": " + e.what());
        }
        if (!(x.m_G_an > 0.0 && x.m_G_tb > 0.0 && x.m_L_tb > 0.0))
            throw InfeasibleState("simulate: nonpositive mass at t = " +
                                  std::to_string(t + h));
    }
    return traj;
}

WellState step_60s(const WellParameters& p, const WellState& x, const ControlInput& u) {
    WellState s = x;
    for (int k = 0; k < 60; ++k) s = rk4_step(p, s, u, 1.0);
    return s;
}

void Trajectory::to_csv(const std::string& path) const {
    const bool alg = !algebraics.empty();
    std::vector<std::string> cols = {"t", "m_G_an", "m_G_tb", "m_L_tb", "u1", "u2"};
    if (alg) {
        cols.push_back("P_bh");  // bar
        cols.push_back("w_out");
    }
    CsvWriter csv(cols);
    for (size_t i = 0; i < times.size(); ++i) {
        std::vector<double> row = {times[i],       states[i].m_G_an, states[i].m_G_tb,
                                   states[i].m_L_tb, controls[i].u1,  controls[i].u2};
        if (alg) {
            row.push_back(algebraics[i].P_bh / 1e5);
            row.push_back(algebraics[i].w_out);
        }
        csv.row(row);
    }
    csv.save(path);
}

}  // namespace pincwell
