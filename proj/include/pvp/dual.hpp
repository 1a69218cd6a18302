#pragma once

// Forward-mode dual numbers with N derivative slots. Used by the toy
// renderer to differentiate per-pixel shading w.r.t. a handful of
// geometry parameters in a single pass.

#include <array>
#include <cmath>

namespace pvp {

template <int N>
struct Dual {
    double v = 0.0;
    std::array<double, N> d{};

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit constants
    static Dual variable(double value, int slot) {
        Dual x(value);
        x.d[slot] = 1.0;
        return x;
    }
};

template <int N>
Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) {
    Dual<N> r(a.v + b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) {
    Dual<N> r(a.v - b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}
template <int N>
Dual<N> operator-(const Dual<N>& a) {
    Dual<N> r(-a.v);
    for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
    return r;
}
template <int N>
Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
    Dual<N> r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}
template <int N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
    const double inv = 1.0 / b.v;
    Dual<N> r(a.v * inv);
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
    return r;
}
template <int N>
Dual<N> operator+(const Dual<N>& a, double b) { Dual<N> r = a; r.v += b; return r; }
template <int N>
Dual<N> operator+(double a, const Dual<N>& b) { return b + a; }
template <int N>
Dual<N> operator-(const Dual<N>& a, double b) { Dual<N> r = a; r.v -= b; return r; }
template <int N>
Dual<N> operator-(double a, const Dual<N>& b) { return -b + a; }
template <int N>
Dual<N> operator*(const Dual<N>& a, double b) {
    Dual<N> r(a.v * b);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b;
    return r;
}
template <int N>
Dual<N> operator*(double a, const Dual<N>& b) { return b * a; }

// Applies a scalar function with known derivative f'(v).
template <int N>
Dual<N> chain(const Dual<N>& a, double value, double slope) {
    Dual<N> r(value);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * slope;
    return r;
}

template <int N>
Dual<N> sin(const Dual<N>& a) { return chain(a, std::sin(a.v), std::cos(a.v)); }
template <int N>
Dual<N> cos(const Dual<N>& a) { return chain(a, std::cos(a.v), -std::sin(a.v)); }
template <int N>
Dual<N> tanh(const Dual<N>& a) {
    const double t = std::tanh(a.v);
    return chain(a, t, 1.0 - t * t);
}
template <int N>
Dual<N> sqrt(const Dual<N>& a) {
    const double s = std::sqrt(a.v);
    return chain(a, s, 0.5 / s);
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
template <int N>
Dual<N> sigmoid(const Dual<N>& a) {
    const double s = sigmoid(a.v);
    return chain(a, s, s * (1.0 - s));
}

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) { return x.v; }

}  // namespace pvp
