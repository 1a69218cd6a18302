#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "pvp/error.hpp"

namespace pvp {

// Layered style code: one D-vector per synthesis layer (L x D, row-major).
struct LatentCode {
    int layers = 0;
    int dims = 0;
    std::vector<double> values;

    LatentCode() = default;
    LatentCode(int l, int d, double fill = 0.0);

    double& at(int layer, int dim) { return values[static_cast<std::size_t>(layer) * dims + dim]; }
    double at(int layer, int dim) const { return values[static_cast<std::size_t>(layer) * dims + dim]; }
    std::span<double> layer(int l) { return {values.data() + static_cast<std::size_t>(l) * dims, static_cast<std::size_t>(dims)}; }
    std::span<const double> layer(int l) const {
        return {values.data() + static_cast<std::size_t>(l) * dims, static_cast<std::size_t>(dims)};
    }
    bool same_shape(const LatentCode& o) const { return layers == o.layers && dims == o.dims; }
    bool finite() const;
    double squared_norm() const;

    LatentCode& operator+=(const LatentCode& o);
    LatentCode& operator-=(const LatentCode& o);
    // this += s * o
    LatentCode& add_scaled(const LatentCode& o, double s);

    friend bool operator==(const LatentCode&, const LatentCode&) = default;
};

// Expression residual: same shape as a latent, zero outside the geometry layers.
using LatentResidual = LatentCode;

LatentCode operator+(LatentCode a, const LatentCode& b);
LatentCode operator-(LatentCode a, const LatentCode& b);

void require_same_shape(const LatentCode& a, const LatentCode& b);

// "PVPW" single latent record.
void write_latent(std::ostream& os, const LatentCode& w);
LatentCode read_latent(std::istream& is);
void save_latents(const std::filesystem::path& path, const std::vector<LatentCode>& codes);
std::vector<LatentCode> load_latents(const std::filesystem::path& path);

}  // namespace pvp
