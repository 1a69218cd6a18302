#include "pvp/perceptual.hpp"

#include <array>
#include <cmath>

namespace pvp {

double mean_squared_error(const Image& a, const Image& b) {
    require_same_dims(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.size());
}

void mean_squared_error_vjp(const Image& a, const Image& b, double scale, Image& grad_a) {
    require_same_dims(a, b);
    require_same_dims(a, grad_a);
    const double k = 2.0 * scale / static_cast<double>(a.pixels.size());
    for (std::size_t i = 0; i < a.pixels.size(); ++i) grad_a.pixels[i] += k * (a.pixels[i] - b.pixels[i]);
}

namespace {

void require_mask(const Image& a, const std::vector<unsigned char>& mask) {
    if (mask.size() != static_cast<std::size_t>(a.height) * a.width)
        throw Error(ErrorKind::ShapeMismatch, "mask dimension mismatch");
}

}  // namespace

double masked_mean_squared_error(const Image& a, const Image& b, const std::vector<unsigned char>& mask) {
    require_same_dims(a, b);
    require_mask(a, mask);
    double s = 0.0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (mask[p] == 0) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = a.pixels[p * 3 + c] - b.pixels[p * 3 + c];
            s += d * d;
        }
    }
    return s / static_cast<double>(a.pixels.size());
}

void masked_mean_squared_error_vjp(const Image& a, const Image& b, const std::vector<unsigned char>& mask,
                                   double scale, Image& grad_a) {
    require_same_dims(a, b);
    require_same_dims(a, grad_a);
    require_mask(a, mask);
    const double k = 2.0 * scale / static_cast<double>(a.pixels.size());
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (mask[p] == 0) continue;
        for (int c = 0; c < 3; ++c) grad_a.pixels[p * 3 + c] += k * (a.pixels[p * 3 + c] - b.pixels[p * 3 + c]);
    }
}

namespace {

constexpr std::array<double, 5> kBinomial{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

int mirror(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

// out[i] = sum_t k[t] * in[mirror(2i + t - 2)] along one axis, with decimation fused in.
// axis 0 = rows, 1 = columns.
Image blur_decimate(const Image& in, int axis) {
    const int oh = axis == 0 ? (in.height + 1) / 2 : in.height;
    const int ow = axis == 1 ? (in.width + 1) / 2 : in.width;
    Image out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int t = 0; t < 5; ++t) {
                    const int sy = axis == 0 ? mirror(2 * y + t - 2, in.height) : y;
                    const int sx = axis == 1 ? mirror(2 * x + t - 2, in.width) : x;
                    s += kBinomial[t] * in.at(sy, sx, c);
                }
                out.at(y, x, c) = s;
            }
    return out;
}

Image blur_decimate_adjoint(const Image& grad, int axis, int height, int width) {
    Image out(height, width);
    for (int y = 0; y < grad.height; ++y)
        for (int x = 0; x < grad.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double g = grad.at(y, x, c);
                for (int t = 0; t < 5; ++t) {
                    const int sy = axis == 0 ? mirror(2 * y + t - 2, height) : y;
                    const int sx = axis == 1 ? mirror(2 * x + t - 2, width) : x;
                    out.at(sy, sx, c) += kBinomial[t] * g;
                }
            }
    return out;
}

Image difference(const Image& a, const Image& b) {
    require_same_dims(a, b);
    Image d(a.height, a.width);
    for (std::size_t i = 0; i < a.pixels.size(); ++i) d.pixels[i] = a.pixels[i] - b.pixels[i];
    return d;
}

double mean_square(const Image& d) {
    double s = 0.0;
    for (double v : d.pixels) s += v * v;
    return s / static_cast<double>(d.pixels.size());
}

}  // namespace

Image pyramid_reduce(const Image& img) { return blur_decimate(blur_decimate(img, 0), 1); }

Image pyramid_reduce_adjoint(const Image& grad, int height, int width) {
    const int mid_h = (height + 1) / 2;
    return blur_decimate_adjoint(blur_decimate_adjoint(grad, 1, mid_h, width), 0, height, width);
}

double PyramidPerceptual::distance(const Image& a, const Image& b) const {
    // Every level is linear in the difference, so the pyramid of (a - b) suffices.
    Image d = difference(a, b);
    double total = 0.0;
    for (int level = 0; level < levels_; ++level) {
        if (level > 0) d = pyramid_reduce(d);
        total += mean_square(d);
    }
    return total;
}

void PyramidPerceptual::distance_vjp(const Image& a, const Image& b, double scale, Image& grad_a) const {
    require_same_dims(a, grad_a);
    std::vector<Image> pyr{difference(a, b)};
    for (int level = 1; level < levels_; ++level) pyr.push_back(pyramid_reduce(pyr.back()));
    Image back(pyr.back().height, pyr.back().width);
    for (int level = levels_ - 1; level >= 0; --level) {
        const Image& d = pyr[static_cast<std::size_t>(level)];
        const double k = 2.0 * scale / static_cast<double>(d.pixels.size());
        for (std::size_t i = 0; i < d.pixels.size(); ++i) back.pixels[i] += k * d.pixels[i];
        if (level > 0) {
            const Image& up = pyr[static_cast<std::size_t>(level - 1)];
            back = pyramid_reduce_adjoint(back, up.height, up.width);
        }
    }
    for (std::size_t i = 0; i < back.pixels.size(); ++i) grad_a.pixels[i] += back.pixels[i];
}

namespace {

// Row/column boundaries of the pooling grid.
std::vector<int> bounds(int begin, int end, int parts) {
    std::vector<int> b;
    for (int i = 0; i <= parts; ++i) b.push_back(begin + (end - begin) * i / parts);
    return b;
}

}  // namespace

std::vector<double> PooledSketchIdentity::embed(const Image& img) const {
    if (img.height - skip_rows_ < grid_ || img.width < grid_)
        throw Error(ErrorKind::InvalidArgument, "image too small for the identity grid");
    const auto rb = bounds(skip_rows_, img.height, grid_);
    const auto cb = bounds(0, img.width, grid_);
    std::vector<double> e;
    e.reserve(static_cast<std::size_t>(grid_) * grid_ * 3);
    for (int gy = 0; gy < grid_; ++gy)
        for (int gx = 0; gx < grid_; ++gx) {
            std::array<double, 3> s{};
            for (int y = rb[gy]; y < rb[gy + 1]; ++y)
                for (int x = cb[gx]; x < cb[gx + 1]; ++x)
                    for (int c = 0; c < 3; ++c) s[c] += img.at(y, x, c);
            const double n = static_cast<double>((rb[gy + 1] - rb[gy]) * (cb[gx + 1] - cb[gx]));
            for (int c = 0; c < 3; ++c) e.push_back(s[c] / n);
        }
    return e;
}

void PooledSketchIdentity::embed_vjp(const Image& img, const std::vector<double>& grad_embedding, Image& grad_img) const {
    require_same_dims(img, grad_img);
    if (grad_embedding.size() != static_cast<std::size_t>(grid_) * grid_ * 3)
        throw Error(ErrorKind::ShapeMismatch, "identity gradient size mismatch");
    const auto rb = bounds(skip_rows_, img.height, grid_);
    const auto cb = bounds(0, img.width, grid_);
    std::size_t k = 0;
    for (int gy = 0; gy < grid_; ++gy)
        for (int gx = 0; gx < grid_; ++gx, k += 3) {
            const double n = static_cast<double>((rb[gy + 1] - rb[gy]) * (cb[gx + 1] - cb[gx]));
            for (int y = rb[gy]; y < rb[gy + 1]; ++y)
                for (int x = cb[gx]; x < cb[gx + 1]; ++x)
                    for (int c = 0; c < 3; ++c) grad_img.at(y, x, c) += grad_embedding[k + c] / n;
        }
}

double identity_distance(const IdentityEmbedder& e, const Image& a, const Image& b) {
    require_same_dims(a, b);
    const auto ea = e.embed(a), eb = e.embed(b);
    double s = 0.0;
    for (std::size_t i = 0; i < ea.size(); ++i) s += (ea[i] - eb[i]) * (ea[i] - eb[i]);
    return s / static_cast<double>(ea.size());
}

void identity_distance_vjp(const IdentityEmbedder& e, const Image& a, const Image& b, double scale, Image& grad_a) {
    require_same_dims(a, b);
    const auto ea = e.embed(a), eb = e.embed(b);
    std::vector<double> g(ea.size());
    for (std::size_t i = 0; i < ea.size(); ++i) g[i] = 2.0 * scale * (ea[i] - eb[i]) / static_cast<double>(ea.size());
    e.embed_vjp(a, g, grad_a);
}

}  // namespace pvp
