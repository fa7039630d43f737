#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace pincwell {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// ===== Domain state ==========================================================

/// The three dynamic states of a gas-lifted well: mass of gas in the annulus,
/// mass of gas in the tubing, mass of liquid in the tubing. All in kg.
struct WellState {
    double m_G_an = 0.0;
    double m_G_tb = 0.0;
    double m_L_tb = 0.0;

    Vec3 as_vector() const { return Vec3(m_G_an, m_G_tb, m_L_tb); }
    static WellState from_vector(const Vec3& v) { return {v[0], v[1], v[2]}; }
};

/// Choke openings, both dimensionless in [0,1].
struct ControlInput {
    double u1 = 0.0;  ///< production choke
    double u2 = 0.0;  ///< gas-lift choke

    Vec2 as_vector() const { return Vec2(u1, u2); }
    static ControlInput from_vector(const Vec2& v) { return {v[0], v[1]}; }
};

// ===== Error taxonomy ========================================================

/// Exact-mode evaluation hit a state where the model is undefined
/// (negative sqrt argument, nonpositive log argument or density denominator).
struct InfeasibleState : std::runtime_error {
    explicit InfeasibleState(const std::string& what) : std::runtime_error(what) {}
};

/// Control outside the [0,1]^2 box.
struct InvalidControl : std::runtime_error {
    explicit InvalidControl(const std::string& what) : std::runtime_error(what) {}
};

/// An iterative solver exhausted its iteration budget.
struct NoConvergence : std::runtime_error {
    explicit NoConvergence(const std::string& what) : std::runtime_error(what) {}
};

/// Rejection sampling accepted too small a fraction of proposals.
struct RejectionStall : std::runtime_error {
    explicit RejectionStall(const std::string& what) : std::runtime_error(what) {}
};

/// Training loss became non-finite (should not happen with safeguards on).
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

/// A (noisy) measurement could not be mapped into the model's feasible domain.
struct InfeasibleMeasurement : std::runtime_error {
    explicit InfeasibleMeasurement(const std::string& what) : std::runtime_error(what) {}
};

/// The quadratic-program solver failed (singular KKT system or cycling).
struct QpFail : std::runtime_error {
    explicit QpFail(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pincwell
