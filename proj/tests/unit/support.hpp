#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace pvp::testing {

// ||a - n|| / max(||a||, ||n||) over the sampled coordinates.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double d = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        d += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nn));
    return denom == 0.0 ? 0.0 : std::sqrt(d) / denom;
}

// Central differences of f at x on the given coordinates.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, const std::vector<std::size_t>& coords,
                                            double h = 1e-4) {
    std::vector<double> g;
    g.reserve(coords.size());
    for (auto i : coords) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g.push_back((fp - fm) / (2.0 * h));
    }
    return g;
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(n, count));
    return all;
}

inline std::vector<double> pick(const std::vector<double>& v, const std::vector<std::size_t>& coords) {
    std::vector<double> out;
    for (auto i : coords) out.push_back(v[i]);
    return out;
}

}  // namespace pvp::testing
