#include "pvp/kernels.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pvp::kernels {

namespace {

using Dual7 = Dual<toy::kGeometrySlots>;

template <typename T>
inline T soft_ellipse(double u, double v, const T& cx, const T& cy, const T& rx, const T& ry, double sharpness) {
    const T dx = (u - cx) / rx;
    const T dy = (v - cy) / ry;
    return sigmoid(sharpness * (1.0 - dx * dx - dy * dy));
}

// Convex blend weights of (background, skin, feature) at a pixel center.
template <typename T>
inline std::array<T, 3> blend_weights(const toy::FaceGeometry<T>& g, double u, double v) {
    const T head = soft_ellipse(u, v, g.head_cx, g.head_cy, g.head_rx, g.head_ry, 8.0);
    const T eye_l = soft_ellipse(u, v, g.eye_lx, g.eye_y, g.eye_radx, g.eye_rady, 2.0);
    const T eye_r = soft_ellipse(u, v, g.eye_rx, g.eye_y, g.eye_radx, g.eye_rady, 2.0);
    const T brow_l = soft_ellipse(u, v, g.eye_lx, g.brow_ly, g.brow_radx, g.brow_rady, 2.0);
    const T brow_r = soft_ellipse(u, v, g.eye_rx, g.brow_ry, g.brow_radx, g.brow_rady, 2.0);
    const T mouth = soft_ellipse(u, v, g.mouth_x, g.mouth_y, g.mouth_radx, g.mouth_rady, 3.0);
    const T keep = (1.0 - eye_l) * (1.0 - eye_r) * (1.0 - brow_l) * (1.0 - brow_r) * (1.0 - mouth);
    return {1.0 - head, head * keep, head * (1.0 - keep)};
}

template <typename T>
toy::FaceGeometry<T> geometry_of(const std::array<T, toy::kGeometrySlots>& s) {
    return toy::face_geometry<T>(s[0], s[1], s[2], s[3], s[4], s[5], s[6]);
}

void render_row(const SketchInputs& in, const toy::FaceGeometry<double>& g, int row, double* out) {
    const double sx = toy::kReferenceSize / in.width;
    const double sy = toy::kReferenceSize / in.height;
    const double v = (row + 1 + 0.5) * sy;
    const bool textured = !in.texture.empty();
    for (int x = 0; x < in.width; ++x) {
        const double u = (x + 0.5) * sx;
        const auto a = blend_weights<double>(g, u, v);
        const std::size_t base_index = (static_cast<std::size_t>(row) * in.width + x) * 3;
        for (int c = 0; c < 3; ++c) {
            double base = a[0] * in.colors[c] + a[1] * in.colors[3 + c] + a[2] * in.colors[6 + c];
            if (textured) {
                const double tex = in.texture[base_index + c];
                if (tex != 0.0) base += std::tanh(tex) * base * (1.0 - base);
            }
            out[base_index + c] = base;
        }
    }
}

// Returns this row's contribution to the geometry/color gradient.
SketchGrad vjp_row(const SketchInputs& in, const toy::FaceGeometry<Dual7>& g, int row, const double* grad, double* grad_texture) {
    SketchGrad acc;
    const double sx = toy::kReferenceSize / in.width;
    const double sy = toy::kReferenceSize / in.height;
    const double v = (row + 1 + 0.5) * sy;
    const bool textured = !in.texture.empty();
    for (int x = 0; x < in.width; ++x) {
        const std::size_t base_index = (static_cast<std::size_t>(row) * in.width + x) * 3;
        const double g0 = grad[base_index], g1 = grad[base_index + 1], g2 = grad[base_index + 2];
        if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0) {
            if (grad_texture != nullptr)
                for (int c = 0; c < 3; ++c) grad_texture[base_index + c] = 0.0;
            continue;
        }
        const double u = (x + 0.5) * sx;
        const auto a = blend_weights<Dual7>(g, u, v);
        std::array<double, 3> da{};
        for (int c = 0; c < 3; ++c) {
            const double gout = grad[base_index + c];
            const double base = a[0].v * in.colors[c] + a[1].v * in.colors[3 + c] + a[2].v * in.colors[6 + c];
            double gbase = gout;
            double gtex = 0.0;
            if (textured) {
                const double t = std::tanh(in.texture[base_index + c]);
                gbase = gout * (1.0 + t * (1.0 - 2.0 * base));
                gtex = gout * (1.0 - t * t) * base * (1.0 - base);
            }
            if (grad_texture != nullptr) grad_texture[base_index + c] = gtex;
            for (int j = 0; j < 3; ++j) {
                acc.colors[j * 3 + c] += gbase * a[j].v;
                da[j] += gbase * in.colors[j * 3 + c];
            }
        }
        for (int k = 0; k < toy::kGeometrySlots; ++k)
            acc.geometry[k] += da[0] * a[0].d[k] + da[1] * a[1].d[k] + da[2] * a[2].d[k];
    }
    return acc;
}

toy::FaceGeometry<Dual7> dual_geometry(const SketchInputs& in) {
    std::array<Dual7, toy::kGeometrySlots> s;
    for (int k = 0; k < toy::kGeometrySlots; ++k) s[k] = Dual7::variable(in.geometry[k], k);
    return geometry_of(s);
}

void sum_rows(const std::vector<SketchGrad>& rows, SketchGrad& total) {
    for (const auto& r : rows) {
        for (int k = 0; k < toy::kGeometrySlots; ++k) total.geometry[k] += r.geometry[k];
        for (int k = 0; k < kColorSlots; ++k) total.colors[k] += r.colors[k];
    }
}

double* texture_out(std::span<double> grad_texture) { return grad_texture.empty() ? nullptr : grad_texture.data(); }

}  // namespace

void render_sketch_serial(const SketchInputs& in, std::span<double> sketch) {
    const auto g = geometry_of(in.geometry);
    for (int row = 0; row < in.height - 1; ++row) render_row(in, g, row, sketch.data());
}

void render_sketch_parallel(const SketchInputs& in, std::span<double> sketch) {
    const auto g = geometry_of(in.geometry);
    const int rows = in.height - 1;
#pragma omp parallel for schedule(static)
    for (int row = 0; row < rows; ++row) render_row(in, g, row, sketch.data());
}

SketchGrad sketch_vjp_serial(const SketchInputs& in, std::span<const double> grad_sketch, std::span<double> grad_texture) {
    const auto g = dual_geometry(in);
    std::vector<SketchGrad> rows(static_cast<std::size_t>(in.height - 1));
    for (int row = 0; row < in.height - 1; ++row)
        rows[static_cast<std::size_t>(row)] = vjp_row(in, g, row, grad_sketch.data(), texture_out(grad_texture));
    SketchGrad total;
    sum_rows(rows, total);
    return total;
}

SketchGrad sketch_vjp_parallel(const SketchInputs& in, std::span<const double> grad_sketch, std::span<double> grad_texture) {
    const auto g = dual_geometry(in);
    const int n = in.height - 1;
    std::vector<SketchGrad> rows(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (int row = 0; row < n; ++row)
        rows[static_cast<std::size_t>(row)] = vjp_row(in, g, row, grad_sketch.data(), texture_out(grad_texture));
    SketchGrad total;
    sum_rows(rows, total);
    return total;
}

namespace {

constexpr int kSsimWindow = 11;

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Sum of SSIM over one output row of the valid region.
double ssim_row(std::span<const double> a, std::span<const double> b, int width, int channel, int out_row,
                const std::array<double, kSsimWindow>& k) {
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int out_w = width - kSsimWindow + 1;
    // Vertical pass for this output row over all columns.
    std::vector<double> ma(width), mb(width), saa(width), sbb(width), sab(width);
    for (int x = 0; x < width; ++x) {
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const std::size_t idx = (static_cast<std::size_t>(out_row + i) * width + x) * 3 + channel;
            const double va = a[idx], vb = b[idx];
            s0 += k[i] * va;
            s1 += k[i] * vb;
            s2 += k[i] * va * va;
            s3 += k[i] * vb * vb;
            s4 += k[i] * va * vb;
        }
        ma[x] = s0;
        mb[x] = s1;
        saa[x] = s2;
        sbb[x] = s3;
        sab[x] = s4;
    }
    double row_sum = 0.0;
    for (int x = 0; x < out_w; ++x) {
        double mua = 0, mub = 0, eaa = 0, ebb = 0, eab = 0;
        for (int j = 0; j < kSsimWindow; ++j) {
            mua += k[j] * ma[x + j];
            mub += k[j] * mb[x + j];
            eaa += k[j] * saa[x + j];
            ebb += k[j] * sbb[x + j];
            eab += k[j] * sab[x + j];
        }
        const double va = eaa - mua * mua;
        const double vb = ebb - mub * mub;
        const double cov = eab - mua * mub;
        row_sum += ((2 * mua * mub + c1) * (2 * cov + c2)) / ((mua * mua + mub * mub + c1) * (va + vb + c2));
    }
    return row_sum;
}

}  // namespace

double ssim_channel_serial(std::span<const double> a, std::span<const double> b, int height, int width, int channel) {
    const auto k = ssim_kernel();
    const int out_h = height - kSsimWindow + 1;
    const int out_w = width - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(out_h));
    for (int r = 0; r < out_h; ++r) rows[static_cast<std::size_t>(r)] = ssim_row(a, b, width, channel, r, k);
    double total = 0.0;
    for (double v : rows) total += v;
    return total / (static_cast<double>(out_h) * out_w);
}

double ssim_channel_parallel(std::span<const double> a, std::span<const double> b, int height, int width, int channel) {
    const auto k = ssim_kernel();
    const int out_h = height - kSsimWindow + 1;
    const int out_w = width - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(out_h));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < out_h; ++r) rows[static_cast<std::size_t>(r)] = ssim_row(a, b, width, channel, r, k);
    double total = 0.0;
    for (double v : rows) total += v;
    return total / (static_cast<double>(out_h) * out_w);
}

namespace {

void assign_point(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, Eigen::Index i, std::vector<int>& labels,
                  std::vector<double>& dist2) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
        const double d = (points.row(i) - centroids.row(k)).squaredNorm();
        if (d < best) {
            best = d;
            best_k = static_cast<int>(k);
        }
    }
    labels[static_cast<std::size_t>(i)] = best_k;
    dist2[static_cast<std::size_t>(i)] = best;
}

}  // namespace

void assign_nearest_serial(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::vector<int>& labels,
                           std::vector<double>& dist2) {
    labels.assign(static_cast<std::size_t>(points.rows()), 0);
    dist2.assign(static_cast<std::size_t>(points.rows()), 0.0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) assign_point(points, centroids, i, labels, dist2);
}

void assign_nearest_parallel(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::vector<int>& labels,
                             std::vector<double>& dist2) {
    labels.assign(static_cast<std::size_t>(points.rows()), 0);
    dist2.assign(static_cast<std::size_t>(points.rows()), 0.0);
    const auto n = points.rows();
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) assign_point(points, centroids, i, labels, dist2);
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace pvp::kernels
