#include "pvp/latent.hpp"

#include <cmath>
#include <fstream>

#include "pvp/binio.hpp"

namespace pvp {

namespace {
constexpr std::uint16_t kLatentVersion = 1;
}

LatentCode::LatentCode(int l, int d, double fill) : layers(l), dims(d) {
    if (l <= 0 || d <= 0) throw Error(ErrorKind::InvalidArgument, "latent shape must be positive");
    values.assign(static_cast<std::size_t>(l) * static_cast<std::size_t>(d), fill);
}

bool LatentCode::finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

double LatentCode::squared_norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
}

void require_same_shape(const LatentCode& a, const LatentCode& b) {
    if (!a.same_shape(b)) throw Error(ErrorKind::ShapeMismatch, "latent shape mismatch");
}

LatentCode& LatentCode::operator+=(const LatentCode& o) {
    require_same_shape(*this, o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
}

LatentCode& LatentCode::operator-=(const LatentCode& o) {
    require_same_shape(*this, o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
    return *this;
}

LatentCode& LatentCode::add_scaled(const LatentCode& o, double s) {
    require_same_shape(*this, o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * o.values[i];
    return *this;
}

LatentCode operator+(LatentCode a, const LatentCode& b) { return a += b; }
LatentCode operator-(LatentCode a, const LatentCode& b) { return a -= b; }

void write_latent(std::ostream& os, const LatentCode& w) {
    binio::put_magic(os, "PVPW");
    binio::put<std::uint16_t>(os, kLatentVersion);
    binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(w.layers));
    binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(w.dims));
    binio::put_f32(os, w.values);
}

LatentCode read_latent(std::istream& is) {
    binio::expect_magic(is, "PVPW");
    const auto version = binio::get<std::uint16_t>(is);
    if (version != kLatentVersion)
        throw Error(ErrorKind::Format, "PVPW version mismatch: expected " + std::to_string(kLatentVersion) + ", found " +
                                           std::to_string(version));
    const int l = binio::get<std::uint16_t>(is);
    const int d = binio::get<std::uint16_t>(is);
    LatentCode w(l, d);
    w.values = binio::get_f32(is, w.values.size());
    return w;
}

void save_latents(const std::filesystem::path& path, const std::vector<LatentCode>& codes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + path.string());
    for (const auto& w : codes) write_latent(os, w);
}

std::vector<LatentCode> load_latents(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path.string());
    std::vector<LatentCode> out;
    while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_latent(is));
    return out;
}

}  // namespace pvp
