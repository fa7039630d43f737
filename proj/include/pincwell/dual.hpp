#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace pincwell {

// ===== Forward-mode dual number ==============================================
//
// Value plus an N-dimensional gradient, propagated through arithmetic. Used to
// obtain the 3x3 Jacobian of the well ODE right-hand side in one sweep: seed
// the three state components with unit tangents and read the gradients off the
// result. Branching functions (max, clamps) differentiate the taken branch.

template <int N>
struct Dual {
    double v = 0.0;
    Eigen::Matrix<double, N, 1> g = Eigen::Matrix<double, N, 1>::Zero();

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit by design
    Dual(double value, const Eigen::Matrix<double, N, 1>& grad) : v(value), g(grad) {}

    /// Independent variable with unit tangent in slot `slot`.
    static Dual seed(double value, int slot) {
        Dual d(value);
        d.g[slot] = 1.0;
        return d;
    }

    Dual operator-() const { return Dual(-v, -g); }

    Dual& operator+=(const Dual& o) { v += o.v; g += o.g; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; g -= o.g; return *this; }
};

template <int N> inline Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) { return {a.v + b.v, a.g + b.g}; }
template <int N> inline Dual<N> operator+(const Dual<N>& a, double b) { return {a.v + b, a.g}; }
template <int N> inline Dual<N> operator+(double a, const Dual<N>& b) { return {a + b.v, b.g}; }

template <int N> inline Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) { return {a.v - b.v, a.g - b.g}; }
template <int N> inline Dual<N> operator-(const Dual<N>& a, double b) { return {a.v - b, a.g}; }
template <int N> inline Dual<N> operator-(double a, const Dual<N>& b) { return {a - b.v, -b.g}; }

template <int N> inline Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
    return {a.v * b.v, a.v * b.g + b.v * a.g};
}
template <int N> inline Dual<N> operator*(const Dual<N>& a, double b) { return {a.v * b, a.g * b}; }
template <int N> inline Dual<N> operator*(double a, const Dual<N>& b) { return {a * b.v, a * b.g}; }

template <int N> inline Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
    const double inv = 1.0 / b.v;
    return {a.v * inv, (a.g - (a.v * inv) * b.g) * inv};
}
template <int N> inline Dual<N> operator/(const Dual<N>& a, double b) { return {a.v / b, a.g / b}; }
template <int N> inline Dual<N> operator/(double a, const Dual<N>& b) {
    const double inv = 1.0 / b.v;
    return {a * inv, (-a * inv * inv) * b.g};
}

template <int N> inline bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> inline bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N> inline bool operator<(double a, const Dual<N>& b) { return a < b.v; }
template <int N> inline bool operator>(const Dual<N>& a, double b) { return a.v > b; }
template <int N> inline bool operator<=(const Dual<N>& a, double b) { return a.v <= b; }
template <int N> inline bool operator>=(const Dual<N>& a, double b) { return a.v >= b; }

template <int N> inline Dual<N> sqrt(const Dual<N>& a) {
    const double s = std::sqrt(a.v);
    return {s, a.g / (2.0 * s)};
}
template <int N> inline Dual<N> log10(const Dual<N>& a) {
    return {std::log10(a.v), a.g / (a.v * std::log(10.0))};
}
template <int N> inline Dual<N> pow(const Dual<N>& a, double e) {
    const double p = std::pow(a.v, e);
    return {p, (e * std::pow(a.v, e - 1.0)) * a.g};
}

/// Scalar value of a double or Dual, for branch decisions in generic code.
inline double value_of(double x) { return x; }
template <int N> inline double value_of(const Dual<N>& x) { return x.v; }

using ::sqrt;  // make double overloads visible next to the dual ones
using ::log10;
using ::pow;

}  // namespace pincwell
