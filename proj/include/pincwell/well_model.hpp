#pragma once

#include <cmath>
#include <string>

#include "pincwell/dual.hpp"
#include "pincwell/types.hpp"

namespace pincwell {

// ===== Parameters ============================================================

/// Cubic approximation of the tubing friction factor over a Reynolds-number
/// interval, evaluated as g(Re) = a Re^3 + b Re^2 + c Re + d with Re clamped
/// to [re_min, re_max].
struct FrictionPolynomial {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    double re_min = 0.0, re_max = 0.0;

    double eval_clamped(double re) const {
        const double r = re < re_min ? re_min : (re > re_max ? re_max : re);
        return ((a * r + b) * r + c) * r + d;
    }
};

/// All physical constants of one well. SI units throughout (pressures in Pa);
/// bar appears only in config files and CSV/console output.
struct WellParameters {
    std::string name;

    double R = 0.0;          ///< gas constant [J/(mol K)]
    double g = 0.0;          ///< gravity [m/s^2]
    double mu = 0.0;         ///< fluid viscosity [Pa s]
    double rho_L = 0.0;      ///< liquid density [kg/m^3]
    double M_G = 0.0;        ///< gas molar mass [kg/mol]
    double T_an = 0.0;       ///< annulus temperature [K]
    double V_an = 0.0;       ///< annulus volume [m^3]
    double L_an = 0.0;       ///< annulus length [m]
    double P_gs = 0.0;       ///< gas source pressure [Pa]
    double S_bh = 0.0;       ///< bottom-hole cross-section area [m^2]
    double L_bh = 0.0;       ///< bottom-hole length [m]
    double T_tb = 0.0;       ///< tubing temperature [K]
    double GOR = 0.0;        ///< mass gas-oil ratio [-]
    double P_res = 0.0;      ///< reservoir pressure [Pa]
    double w_res_bar = 0.0;  ///< average reservoir mass flow [kg/s]
    double D_tb = 0.0;       ///< tubing diameter [m]
    double L_tb = 0.0;       ///< tubing length [m]
    double V_tb = 0.0;       ///< tubing volume [m^3]
    double eps = 0.0;        ///< pipe roughness [m]
    double PI = 0.0;         ///< productivity index [kg/(s Pa)]
    double K_gs = 0.0;       ///< gas-lift choke constant
    double K_inj = 0.0;      ///< injection valve constant
    double K_pr = 0.0;       ///< production choke constant
    double P_out = 0.0;      ///< separator pressure downstream of the production choke [Pa]
    double D_bh = 0.0;       ///< bottom-hole diameter, derived as sqrt(4 S_bh / pi) [m]

    FrictionPolynomial friction_poly;

    /// Throws std::invalid_argument on nonpositive or inconsistent entries.
    void validate() const;
};

/// Loads one well's parameters from a JSON config (pressures given in bar).
WellParameters load_well_parameters(const std::string& path);

// ===== Evaluation modes ======================================================

/// `exact`: the model as simulated — undefined states throw InfeasibleState.
/// `safeguarded`: the training variant — square roots floored, the tubing
/// friction factor replaced by the clamped polynomial, the top liquid fraction
/// clamped to [0,1]; every input yields a finite value.
enum class EvalMode { exact, safeguarded };

// ===== Algebraic record ======================================================

/// Every intermediate quantity of the well model, in evaluation order.
/// Templated on the scalar so dual numbers can flow through for Jacobians.
template <class Scalar>
struct AlgebraicRecordT {
    // pressures [Pa]
    Scalar P_an_t{}, P_an_b{}, P_tb_t{}, P_tb_b{}, P_bh{};
    // densities [kg/m^3]
    Scalar rho_G_an_b{}, rho_G_in{}, rho_G_tb_t{}, rho_mix_bar{}, rho_G_tb_b{}, rho_mix_tb_t{};
    // phase fractions [-]
    Scalar alpha_L_tb_bar{}, alpha_m_G_bh{}, alpha_L_tb_b{}, alpha_L_tb_t{}, alpha_m_G_tb_t{};
    // velocities [m/s]
    Scalar U_L_tb{}, U_G_tb{}, U_mix_tb{}, U_L_bh{};
    // friction [-, Pa]
    Scalar Re_tb{}, Re_bh{}, lambda_tb{}, lambda_bh{}, F_tb{}, F_bh{};
    // mass flows [kg/s]
    Scalar w_G_in{}, w_G_inj{}, w_res{}, w_L_res{}, w_G_res{}, w_out{}, w_L_out{}, w_G_out{};
};

using AlgebraicRecord = AlgebraicRecordT<double>;

// ===== Scalar helpers ========================================================

/// sqrt(max(x, 1e-3)); the derivative is defined as 0 below the threshold.
inline double safeguarded_sqrt(double x) { return std::sqrt(x < 1e-3 ? 1e-3 : x); }

namespace detail {

constexpr double kSqrtFloor = 1e-3;
constexpr double kDenFloor = 1e-12;

template <class Scalar>
Scalar sg_sqrt(const Scalar& x) {
    if (value_of(x) < kSqrtFloor) return Scalar(std::sqrt(kSqrtFloor));
    using std::sqrt;
    return sqrt(x);
}

/// max(x, 0) with the taken branch differentiated.
template <class Scalar>
Scalar max0(const Scalar& x) {
    return value_of(x) > 0.0 ? x : Scalar(0.0);
}

template <class Scalar>
Scalar clamp01(const Scalar& x) {
    if (value_of(x) < 0.0) return Scalar(0.0);
    if (value_of(x) > 1.0) return Scalar(1.0);
    return x;
}

/// Keeps safeguarded-mode divisions finite at the (measure-zero) exact zero.
template <class Scalar>
Scalar nonzero(const Scalar& x) {
    return value_of(x) == 0.0 ? Scalar(kDenFloor) : x;
}

}  // namespace detail

// ===== Friction factor =======================================================

/// Tubing friction factor. Exact mode evaluates the Haaland correlation and
/// throws InfeasibleState when its log argument is nonpositive; safeguarded
/// mode evaluates the well's cubic fit at the clamped Reynolds number.
template <class Scalar>
Scalar friction_lambda_tb(const WellParameters& p, const Scalar& re, EvalMode mode) {
    if (mode == EvalMode::safeguarded) {
        const FrictionPolynomial& f = p.friction_poly;
        Scalar r = re;
        if (value_of(re) < f.re_min) r = Scalar(f.re_min);
        if (value_of(re) > f.re_max) r = Scalar(f.re_max);
        return ((Scalar(f.a) * r + f.b) * r + f.c) * r + f.d;
    }
    using std::log10;
    using std::pow;
    const double rel_rough = std::pow(p.eps / p.D_tb / 3.7, 1.11);
    const Scalar arg = rel_rough + 6.9 / re;
    if (!(value_of(arg) > 0.0))
        throw InfeasibleState("friction_lambda_tb: nonpositive Haaland log argument");
    const Scalar t = -1.8 * log10(arg);
    return 1.0 / (t * t);
}

// ===== Core model ============================================================

/// Evaluates every algebraic relation of the well model in dependency order.
/// In exact mode the state must be feasible (positive densities and sqrt/log
/// arguments); safeguarded mode always produces finite values.
template <class Scalar>
AlgebraicRecordT<Scalar> compute_algebraics(const WellParameters& p,
                                            const Eigen::Matrix<Scalar, 3, 1>& x,
                                            const Eigen::Matrix<Scalar, 2, 1>& u,
                                            EvalMode mode) {
    using detail::max0;
    using detail::nonzero;
    using detail::sg_sqrt;
    using std::sqrt;

    const bool exact = mode == EvalMode::exact;
    if (value_of(u[0]) < 0.0 || value_of(u[0]) > 1.0 || value_of(u[1]) < 0.0 ||
        value_of(u[1]) > 1.0)
        throw InvalidControl("control outside [0,1]^2");

    const Scalar& m_ga = x[0];
    const Scalar& m_gt = x[1];
    const Scalar& m_lt = x[2];
    constexpr double pi = 3.14159265358979323846;

    AlgebraicRecordT<Scalar> r;

    // --- annulus pressures and gas densities
    r.P_an_t = p.R * p.T_an * m_ga / (p.M_G * p.V_an);
    r.P_an_b = r.P_an_t + m_ga * p.g * p.L_an / p.V_an;
    r.rho_G_an_b = r.P_an_b * p.M_G / (p.R * p.T_an);
    r.rho_G_in = Scalar(p.P_gs * p.M_G / (p.R * p.T_an));

    // --- tubing-top gas density and pressure
    Scalar gas_vol = p.V_tb + p.S_bh * p.L_bh - m_lt / p.rho_L;
    if (exact) {
        if (!(value_of(gas_vol) > 0.0))
            throw InfeasibleState("tubing gas volume <= 0");
    } else {
        gas_vol = nonzero(gas_vol);
    }
    r.rho_G_tb_t = m_gt / gas_vol;
    if (exact && !(value_of(r.rho_G_tb_t) > 0.0))
        throw InfeasibleState("rho_G_tb_t <= 0");
    r.P_tb_t = r.rho_G_tb_t * p.R * p.T_tb / p.M_G;

    // --- mixture density and average liquid fraction in the tubing
    r.rho_mix_bar = (m_gt + m_lt - p.rho_L * p.S_bh * p.L_bh) / p.V_tb;
    if (exact && !(value_of(r.rho_mix_bar) > 0.0))
        throw InfeasibleState("rho_mix_bar <= 0");
    r.alpha_L_tb_bar = (m_lt - p.rho_L * p.S_bh * p.L_bh) / (p.V_tb * p.rho_L);
    r.alpha_m_G_bh = Scalar(p.GOR / (p.GOR + 1.0));

    // --- gas-lift choke flow into the annulus
    const Scalar in_arg = r.rho_G_in * max0(Scalar(p.P_gs) - r.P_an_t);
    r.w_G_in = exact ? Scalar(p.K_gs * u[1] * sqrt(in_arg)) : p.K_gs * u[1] * sg_sqrt(in_arg);

    // --- superficial velocities and tubing friction
    r.U_L_tb = Scalar(4.0 * (1.0 - value_of(r.alpha_m_G_bh)) * p.w_res_bar /
                      (p.rho_L * pi * p.D_tb * p.D_tb));
    r.U_G_tb = 4.0 * (r.w_G_in + r.alpha_m_G_bh * p.w_res_bar) /
               ((exact ? r.rho_G_tb_t : nonzero(r.rho_G_tb_t)) * pi * p.D_tb * p.D_tb);
    r.U_mix_tb = r.U_L_tb + r.U_G_tb;
    r.Re_tb = r.rho_mix_bar * r.U_mix_tb * p.D_tb / p.mu;
    if (exact && !(value_of(r.Re_tb) > 0.0)) throw InfeasibleState("Re_tb <= 0");
    r.lambda_tb = friction_lambda_tb(p, r.Re_tb, mode);
    r.F_tb = r.alpha_L_tb_bar * r.lambda_tb * r.rho_mix_bar * r.U_mix_tb * r.U_mix_tb * p.L_tb /
             (2.0 * p.D_tb);

    // --- tubing-bottom pressure and gas density
    r.P_tb_b = r.P_tb_t + r.rho_mix_bar * p.g * p.L_tb + r.F_tb;
    r.rho_G_tb_b = r.P_tb_b * p.M_G / (p.R * p.T_tb);

    // --- bottom-hole friction (constant per well) and pressure
    r.U_L_bh = Scalar(p.w_res_bar / (p.rho_L * p.S_bh));
    r.Re_bh = Scalar(p.rho_L * value_of(r.U_L_bh) * p.D_bh / p.mu);
    {
        const double arg = std::pow(p.eps / p.D_bh / 3.7, 1.11) + 6.9 / value_of(r.Re_bh);
        const double t = -1.8 * std::log10(arg);
        r.lambda_bh = Scalar(1.0 / (t * t));
    }
    r.F_bh = Scalar(value_of(r.lambda_bh) * p.rho_L * value_of(r.U_L_bh) * value_of(r.U_L_bh) *
                    p.L_bh / (2.0 * p.D_bh));
    r.P_bh = r.P_tb_b + r.F_bh + p.rho_L * p.g * p.L_bh;

    // --- injection and reservoir flows
    const Scalar inj_arg = r.rho_G_an_b * max0(r.P_an_b - r.P_tb_b);
    r.w_G_inj = exact ? Scalar(p.K_inj * sqrt(inj_arg)) : p.K_inj * sg_sqrt(inj_arg);
    r.w_res = p.PI * max0(Scalar(p.P_res) - r.P_bh);
    r.w_L_res = (1.0 - r.alpha_m_G_bh) * r.w_res;
    r.w_G_res = r.alpha_m_G_bh * r.w_res;

    // --- liquid fractions at the tubing boundaries
    const Scalar den_b = r.w_L_res * r.rho_G_tb_b + (r.w_G_inj + r.w_G_res) * p.rho_L;
    // 0/0 at states with no bottom flow at all; the liquid-fraction limit is 0.
    r.alpha_L_tb_b =
        value_of(den_b) == 0.0 ? Scalar(0.0) : Scalar(r.w_L_res * r.rho_G_tb_b / den_b);
    r.alpha_L_tb_t = 2.0 * r.alpha_L_tb_bar - r.alpha_L_tb_b;
    if (!exact) r.alpha_L_tb_t = detail::clamp01(r.alpha_L_tb_t);
    r.rho_mix_tb_t = r.alpha_L_tb_t * p.rho_L + (1.0 - r.alpha_L_tb_t) * r.rho_G_tb_t;
    if (exact && !(value_of(r.rho_mix_tb_t) > 0.0))
        throw InfeasibleState("rho_mix_tb_t <= 0");
    r.alpha_m_G_tb_t = (1.0 - r.alpha_L_tb_t) * r.rho_G_tb_t /
                       (exact ? r.rho_mix_tb_t : nonzero(r.rho_mix_tb_t));

    // --- production choke flow
    const Scalar out_arg = r.rho_mix_tb_t * max0(r.P_tb_t - p.P_out);
    r.w_out = exact ? Scalar(p.K_pr * u[0] * sqrt(out_arg)) : p.K_pr * u[0] * sg_sqrt(out_arg);
    r.w_L_out = (1.0 - r.alpha_m_G_tb_t) * r.w_out;
    r.w_G_out = r.alpha_m_G_tb_t * r.w_out;

    return r;
}

AlgebraicRecord compute_algebraics(const WellParameters& p, const WellState& x,
                                   const ControlInput& u, EvalMode mode);

// ===== ODE right-hand side ===================================================

template <class Scalar>
Eigen::Matrix<Scalar, 3, 1> ode_rhs(const WellParameters& p,
                                    const Eigen::Matrix<Scalar, 3, 1>& x,
                                    const Eigen::Matrix<Scalar, 2, 1>& u, EvalMode mode) {
    const AlgebraicRecordT<Scalar> r = compute_algebraics(p, x, u, mode);
    Eigen::Matrix<Scalar, 3, 1> f;
    f[0] = r.w_G_in - r.w_G_inj;
    f[1] = r.w_G_inj + r.w_G_res - r.w_G_out;
    f[2] = r.w_L_res - r.w_L_out;
    return f;
}

Vec3 ode_rhs(const WellParameters& p, const WellState& x, const ControlInput& u, EvalMode mode);

/// RHS value and its 3x3 state Jacobian in one dual-number sweep.
void ode_rhs_jacobian(const WellParameters& p, const Vec3& x, const Vec2& u, EvalMode mode,
                      Vec3& f, Eigen::Matrix3d& jac);

/// True iff exact-mode evaluation succeeds at (x, u).
bool is_feasible(const WellParameters& p, const WellState& x, const ControlInput& u);

// ===== Equilibria =============================================================

/// A physically plausible state assembled from parameters alone; used to seed
/// settling rollouts.
WellState heuristic_initial_state(const WellParameters& p);

struct SteadyStateOptions {
    int max_iters = 300;       ///< Newton iterations per mode
    double tol = 1e-10;        ///< max |rhs| at convergence [kg/s]
    double settle_seconds = 30000.0;  ///< safeguarded pre-rollout length
};

/// Equilibrium of the exact model at fixed control: damped Newton with a
/// Levenberg fallback, seeded by a safeguarded-mode settling rollout (direct
/// exact rollouts from generic states can die on slugging transients).
WellState steady_state(const WellParameters& p, const ControlInput& u,
                       const SteadyStateOptions& opts = {});

}  // namespace pincwell
