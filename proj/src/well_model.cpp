#include "pincwell/well_model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace pincwell {

namespace {

using nlohmann::json;

constexpr double kBar = 1e5;  // Pa per bar

double require(const json& j, const char* key) {
    if (!j.contains(key)) throw std::invalid_argument(std::string("well config: missing ") + key);
    return j.at(key).get<double>();
}

}  // namespace

void WellParameters::validate() const {
    auto pos = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument(std::string("well config: ") + what +
                                        " must be strictly positive");
    };
    pos(R, "R"); pos(g, "g"); pos(mu, "mu"); pos(rho_L, "rho_L"); pos(M_G, "M_G");
    pos(T_an, "T_an"); pos(V_an, "V_an"); pos(L_an, "L_an"); pos(P_gs, "P_gs");
    pos(S_bh, "S_bh"); pos(L_bh, "L_bh"); pos(T_tb, "T_tb"); pos(P_res, "P_res");
    pos(w_res_bar, "w_res_bar"); pos(D_tb, "D_tb"); pos(L_tb, "L_tb"); pos(V_tb, "V_tb");
    pos(eps, "eps"); pos(PI, "PI"); pos(K_gs, "K_gs"); pos(K_inj, "K_inj"); pos(K_pr, "K_pr");
    pos(P_out, "P_out"); pos(D_bh, "D_bh");
    if (GOR < 0.0 || !std::isfinite(GOR))
        throw std::invalid_argument("well config: GOR must be >= 0");
    if (!(friction_poly.re_min < friction_poly.re_max))
        throw std::invalid_argument("well config: Re_min must be < Re_max");
}

WellParameters load_well_parameters(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open well config: " + path);
    json j;
    in >> j;

    WellParameters p;
    p.name = j.value("name", std::string("well"));
    p.R = require(j, "R");
    p.g = require(j, "g");
    p.mu = require(j, "mu");
    p.rho_L = require(j, "rho_L");
    p.M_G = require(j, "M_G");
    p.T_an = require(j, "T_an");
    p.V_an = require(j, "V_an");
    p.L_an = require(j, "L_an");
    p.P_gs = require(j, "P_gs_bar") * kBar;
    p.S_bh = require(j, "S_bh");
    p.L_bh = require(j, "L_bh");
    p.T_tb = require(j, "T_tb");
    p.GOR = require(j, "GOR");
    p.P_res = require(j, "P_res_bar") * kBar;
    p.w_res_bar = require(j, "w_res_bar");
    p.D_tb = require(j, "D_tb");
    p.L_tb = require(j, "L_tb");
    p.V_tb = require(j, "V_tb");
    p.eps = require(j, "eps");
    p.PI = require(j, "PI");
    p.K_gs = require(j, "K_gs");
    p.K_inj = require(j, "K_inj");
    p.K_pr = require(j, "K_pr");
    p.P_out = j.contains("P_out_bar") ? j.at("P_out_bar").get<double>() * kBar : 20.0 * kBar;
    p.D_bh = std::sqrt(4.0 * p.S_bh / 3.14159265358979323846);

    const json& f = j.at("friction_poly");
    p.friction_poly.a = require(f, "a");
    p.friction_poly.b = require(f, "b");
    p.friction_poly.c = require(f, "c");
    p.friction_poly.d = require(f, "d");
    p.friction_poly.re_min = require(f, "Re_min");
    p.friction_poly.re_max = require(f, "Re_max");

    p.validate();
    return p;
}

AlgebraicRecord compute_algebraics(const WellParameters& p, const WellState& x,
                                   const ControlInput& u, EvalMode mode) {
    return compute_algebraics<double>(p, x.as_vector(), u.as_vector(), mode);
}

Vec3 ode_rhs(const WellParameters& p, const WellState& x, const ControlInput& u, EvalMode mode) {
    return ode_rhs<double>(p, x.as_vector(), u.as_vector(), mode);
}

void ode_rhs_jacobian(const WellParameters& p, const Vec3& x, const Vec2& u, EvalMode mode,
                      Vec3& f, Eigen::Matrix3d& jac) {
    using D3 = Dual<3>;
    Eigen::Matrix<D3, 3, 1> xd;
    for (int i = 0; i < 3; ++i) xd[i] = D3::seed(x[i], i);
    Eigen::Matrix<D3, 2, 1> ud;
    ud[0] = D3(u[0]);
    ud[1] = D3(u[1]);
    const Eigen::Matrix<D3, 3, 1> fd = ode_rhs<D3>(p, xd, ud, mode);
    for (int i = 0; i < 3; ++i) {
        f[i] = fd[i].v;
        jac.row(i) = fd[i].g.transpose();
    }
}

bool is_feasible(const WellParameters& p, const WellState& x, const ControlInput& u) {
    if (!(x.m_G_an > 0.0 && x.m_G_tb > 0.0 && x.m_L_tb > 0.0)) return false;
    try {
        (void)compute_algebraics(p, x, u, EvalMode::exact);
        return true;
    } catch (const InfeasibleState&) {
        return false;
    }
}

WellState heuristic_initial_state(const WellParameters& p) {
    WellState x;
    // annulus gas giving ~80% of source pressure at the top
    x.m_G_an = 0.8 * p.P_gs * p.M_G * p.V_an / (p.R * p.T_an);
    // tubing ~30% liquid-filled above a full bottom-hole column
    x.m_L_tb = p.rho_L * p.S_bh * p.L_bh + 0.3 * p.V_tb * p.rho_L;
    // tubing gas at ~40 bar top pressure in the remaining volume
    x.m_G_tb = 40.0 * 1e5 * p.M_G / (p.R * p.T_tb) * 0.7 * p.V_tb;
    return x;
}

namespace {

Vec3 rk4_step_mode(const WellParameters& p, const Vec3& x, const Vec2& u, double h,
                   EvalMode mode) {
    const Vec3 k1 = ode_rhs<double>(p, x, u, mode);
    const Vec3 k2 = ode_rhs<double>(p, Vec3(x + 0.5 * h * k1), u, mode);
    const Vec3 k3 = ode_rhs<double>(p, Vec3(x + 0.5 * h * k2), u, mode);
    const Vec3 k4 = ode_rhs<double>(p, Vec3(x + h * k3), u, mode);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::Matrix3d fd_state_jacobian(const WellParameters& p, const Vec3& x, const Vec2& u,
                                  EvalMode mode) {
    Eigen::Matrix3d jac;
    for (int i = 0; i < 3; ++i) {
        const double h = std::max(1e-6 * std::abs(x[i]), 1e-4);
        Vec3 xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        jac.col(i) = (ode_rhs<double>(p, xp, u, mode) - ode_rhs<double>(p, Vec3(xm), u, mode)) /
                     (2.0 * h);
    }
    return jac;
}

/// Damped Newton with Levenberg fallback; returns true iff max |rhs| < tol.
bool newton_equilibrium(const WellParameters& p, const Vec2& u, EvalMode mode, double tol,
                        int max_iters, Vec3& x) {
    double lm = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Vec3 f;
        try {
            f = ode_rhs<double>(p, x, u, mode);
        } catch (const InfeasibleState&) {
            return false;
        }
        if (f.cwiseAbs().maxCoeff() < tol) return true;
        const Eigen::Matrix3d jac = fd_state_jacobian(p, x, u, mode);
        Vec3 dx = Vec3::Zero();
        for (int t = 0; t < 12; ++t) {
            const Eigen::Matrix3d m = jac + lm * Eigen::Matrix3d::Identity();
            const Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
            if (lu.isInvertible()) {
                dx = lu.solve(-f);
                break;
            }
            lm = std::max(lm * 10.0, 1e-8);
        }
        double a = 1.0;
        bool moved = false;
        for (int t = 0; t < 60; ++t) {
            const Vec3 xn = x + a * dx;
            if ((xn.array() > 1e-6).all()) {
                try {
                    const Vec3 fn = ode_rhs<double>(p, xn, u, mode);
                    if (fn.cwiseAbs().maxCoeff() < f.cwiseAbs().maxCoeff() || a < 1e-4) {
                        x = xn;
                        moved = true;
                        lm *= 0.3;
                        break;
                    }
                } catch (const InfeasibleState&) {
                }
            }
            a *= 0.5;
        }
        if (!moved) lm = std::max(lm * 10.0, 1e-6);
    }
    return false;
}

}  // namespace

WellState steady_state(const WellParameters& p, const ControlInput& u,
                       const SteadyStateOptions& opts) {
    if (u.u1 < 0.0 || u.u1 > 1.0 || u.u2 < 0.0 || u.u2 > 1.0)
        throw InvalidControl("steady_state: control outside [0,1]^2");

    // At low gas-lift openings the wells slug, so a plain settling rollout
    // never converges there. Settle at a strongly lifted anchor control
    // (which is stable for every shipped well), then track the equilibrium
    // branch back to the requested control with Newton continuation —
    // root-finding does not care that the branch may be dynamically unstable.
    const Vec2 uv = u.as_vector();
    const Vec2 anchor{u.u1, std::max(u.u2, 0.9)};

    Vec3 x = heuristic_initial_state(p).as_vector();
    const int settle_steps = static_cast<int>(opts.settle_seconds);
    for (int i = 0; i < settle_steps; ++i)
        x = rk4_step_mode(p, x, anchor, 1.0, EvalMode::safeguarded);
    if (!newton_equilibrium(p, anchor, EvalMode::safeguarded, opts.tol, opts.max_iters, x))
        throw NoConvergence("steady_state: Newton at the anchor control did not converge");

    double s = 0.0, step = 0.25;
    while (s < 1.0) {
        const double trial = std::min(1.0, s + step);
        const Vec2 ut = anchor + trial * (uv - anchor);
        Vec3 xt = x;
        if (newton_equilibrium(p, ut, EvalMode::safeguarded, opts.tol, opts.max_iters, xt)) {
            x = xt;
            s = trial;
            step = std::min(0.5, step * 2.0);
        } else {
            step *= 0.5;
            if (step < 1.0 / 1024.0)
                throw NoConvergence("steady_state: equilibrium continuation stalled");
        }
    }

    if (!newton_equilibrium(p, uv, EvalMode::exact, opts.tol, opts.max_iters, x))
        throw NoConvergence("steady_state: exact-mode Newton did not converge");
    return WellState::from_vector(x);
}

}  // namespace pincwell
