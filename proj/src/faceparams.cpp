#include "pvp/faceparams.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "pvp/binio.hpp"

namespace pvp {

std::array<double, kFaceParamDims> FaceParams::to_array() const {
    std::array<double, kFaceParamDims> v{};
    v[0] = yaw_deg;
    v[1] = pitch_deg;
    std::copy(neck.begin(), neck.end(), v.begin() + 2);
    std::copy(jaw.begin(), jaw.end(), v.begin() + 5);
    std::copy(expression.begin(), expression.end(), v.begin() + 8);
    return v;
}

FaceParams FaceParams::from_array(std::span<const double> v) {
    if (v.size() != kFaceParamDims) throw Error(ErrorKind::ShapeMismatch, "face params need 58 values");
    FaceParams p;
    p.yaw_deg = v[0];
    p.pitch_deg = v[1];
    std::copy(v.begin() + 2, v.begin() + 5, p.neck.begin());
    std::copy(v.begin() + 5, v.begin() + 8, p.jaw.begin());
    std::copy(v.begin() + 8, v.end(), p.expression.begin());
    return p;
}

std::array<double, kExprInputDims> FaceParams::jaw_expression() const {
    std::array<double, kExprInputDims> v{};
    std::copy(jaw.begin(), jaw.end(), v.begin());
    std::copy(expression.begin(), expression.end(), v.begin() + 3);
    return v;
}

void FaceParams::set_jaw_expression(std::span<const double> v) {
    if (v.size() != kExprInputDims) throw Error(ErrorKind::ShapeMismatch, "jaw/expression needs 53 values");
    std::copy(v.begin(), v.begin() + 3, jaw.begin());
    std::copy(v.begin() + 3, v.end(), expression.begin());
}

bool FaceParams::finite() const {
    auto v = to_array();
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

void FaceParamEstimator::estimate_vjp(const Image&, std::span<const double>, Image&) const {
    throw Error(ErrorKind::Unavailable, "estimator is not differentiable");
}

std::vector<std::vector<double>> smooth_trajectories(const std::vector<std::vector<double>>& series,
                                                     const SmoothingConfig& cfg) {
    if (series.empty()) throw Error(ErrorKind::InvalidArgument, "empty input");
    if (!(cfg.kernel_sigma_frames > 0.0) || cfg.window_radius_frames < 1)
        throw Error(ErrorKind::InvalidArgument, "smoothing kernel must have positive sigma and radius");
    const std::size_t dims = series.front().size();
    for (const auto& frame : series) {
        if (frame.size() != dims) throw Error(ErrorKind::ShapeMismatch, "ragged series");
        for (double v : frame)
            if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "non-finite sample");
    }

    const int radius = cfg.window_radius_frames;
    std::vector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k)
        kernel[k + radius] = std::exp(-0.5 * k * k / (cfg.kernel_sigma_frames * cfg.kernel_sigma_frames));

    const int n = static_cast<int>(series.size());
    std::vector<std::vector<double>> out(series.size(), std::vector<double>(dims, 0.0));
    for (int t = 0; t < n; ++t) {
        const int lo = std::max(0, t - radius);
        const int hi = std::min(n - 1, t + radius);
        double mass = 0.0;
        for (int j = lo; j <= hi; ++j) mass += kernel[j - t + radius];
        for (int j = lo; j <= hi; ++j) {
            const double w = kernel[j - t + radius] / mass;
            for (std::size_t d = 0; d < dims; ++d) out[t][d] += w * series[j][d];
        }
    }
    return out;
}

std::vector<FaceParams> smooth_face_params(const std::vector<FaceParams>& params, const SmoothingConfig& cfg) {
    std::vector<std::vector<double>> series;
    series.reserve(params.size());
    for (const auto& p : params) {
        auto a = p.to_array();
        series.emplace_back(a.begin(), a.end());
    }
    auto smoothed = smooth_trajectories(series, cfg);
    std::vector<FaceParams> out;
    out.reserve(smoothed.size());
    for (const auto& row : smoothed) out.push_back(FaceParams::from_array(row));
    return out;
}

Eigen::MatrixXd stack_features(const std::vector<FaceParams>& params) {
    if (params.empty()) throw Error(ErrorKind::InvalidArgument, "no frames to stack");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(params.size()), kClusterFeatureDims);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        m(row, 0) = params[i].yaw_deg;
        m(row, 1) = params[i].pitch_deg;
        for (int k = 0; k < kExpressionDims; ++k) m(row, 2 + k) = params[i].expression[k];
    }
    return m;
}

std::vector<FaceParams> unstack_features(const Eigen::MatrixXd& features) {
    if (features.cols() != kClusterFeatureDims) throw Error(ErrorKind::ShapeMismatch, "feature matrix must have 52 columns");
    std::vector<FaceParams> out(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        auto& p = out[static_cast<std::size_t>(i)];
        p.yaw_deg = features(i, 0);
        p.pitch_deg = features(i, 1);
        for (int k = 0; k < kExpressionDims; ++k) p.expression[k] = features(i, 2 + k);
    }
    return out;
}

Standardized standardize(const Eigen::MatrixXd& features) {
    if (features.rows() == 0) throw Error(ErrorKind::InvalidArgument, "cannot standardize zero rows");
    Standardized s;
    const double n = static_cast<double>(features.rows());
    s.mean = features.colwise().mean().transpose();
    s.values = features.rowwise() - s.mean.transpose();
    s.stddev = (s.values.array().square().colwise().sum() / n).sqrt().transpose();
    s.degenerate.assign(static_cast<std::size_t>(features.cols()), false);
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
        if (s.stddev(c) < 1e-12) {
            s.degenerate[static_cast<std::size_t>(c)] = true;
        } else {
            s.values.col(c) /= s.stddev(c);
        }
    }
    return s;
}

Image RegionMask::apply(const Image& image) const {
    if (image.height != height || image.width != width) throw Error(ErrorKind::ShapeMismatch, "mask dimension mismatch");
    Image out = image;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (!at(y, x))
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0;
    return out;
}

namespace {

// Even-odd rule on pixel centers.
bool inside_polygon(const std::vector<std::array<double, 2>>& poly, double px, double py) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a[1] > py) != (b[1] > py)) {
            const double xcross = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if (px < xcross) inside = !inside;
        }
    }
    return inside;
}

}  // namespace

RegionMask region_mask(const FaceParams& params, int height, int width, const FaceLayout* layout) {
    if (height <= 0 || width <= 0) throw Error(ErrorKind::InvalidArgument, "mask dimensions must be positive");
    if (layout == nullptr) throw Error(ErrorKind::Unavailable, "mask source unavailable");
    RegionMask m;
    m.height = height;
    m.width = width;
    m.mask.assign(static_cast<std::size_t>(height) * width, 1);
    for (const auto& region : layout->excluded_regions(params, height, width)) {
        if (region.polygon.size() < 3) continue;
        double minx = region.polygon[0][0], maxx = minx, miny = region.polygon[0][1], maxy = miny;
        for (const auto& v : region.polygon) {
            minx = std::min(minx, v[0]);
            maxx = std::max(maxx, v[0]);
            miny = std::min(miny, v[1]);
            maxy = std::max(maxy, v[1]);
        }
        const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(maxy)));
        const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(maxx)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (inside_polygon(region.polygon, x + 0.5, y + 0.5)) m.mask[static_cast<std::size_t>(y) * width + x] = 0;
        if (std::find(m.excluded_regions.begin(), m.excluded_regions.end(), region.label) == m.excluded_regions.end())
            m.excluded_regions.push_back(region.label);
    }
    return m;
}

namespace {
constexpr std::uint16_t kFaceParamsVersion = 1;
}

void write_face_params(std::ostream& os, const std::vector<FaceParams>& params) {
    binio::put_magic(os, "PVPF");
    binio::put<std::uint16_t>(os, kFaceParamsVersion);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        auto a = p.to_array();
        binio::put_f32(os, a);
    }
}

std::vector<FaceParams> read_face_params(std::istream& is) {
    binio::expect_magic(is, "PVPF");
    const auto version = binio::get<std::uint16_t>(is);
    if (version != kFaceParamsVersion)
        throw Error(ErrorKind::Format, "PVPF version mismatch: expected " + std::to_string(kFaceParamsVersion) +
                                           ", found " + std::to_string(version));
    const auto n = binio::get<std::uint32_t>(is);
    std::vector<FaceParams> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(FaceParams::from_array(binio::get_f32(is, kFaceParamDims)));
    return out;
}

void save_face_params(const std::filesystem::path& path, const std::vector<FaceParams>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + path.string());
    write_face_params(os, params);
}

std::vector<FaceParams> load_face_params(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path.string());
    return read_face_params(is);
}

NormStats compute_stats(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error(ErrorKind::InvalidArgument, "stats need at least one row");
    const std::size_t dims = rows.front().size();
    NormStats s;
    s.mean.assign(dims, 0.0);
    s.stddev.assign(dims, 0.0);
    for (const auto& r : rows)
        for (std::size_t d = 0; d < dims; ++d) s.mean[d] += r[d];
    for (auto& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (std::size_t d = 0; d < dims; ++d) s.stddev[d] += (r[d] - s.mean[d]) * (r[d] - s.mean[d]);
    for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(rows.size()));
    return s;
}

NormStats jaw_expression_stats(const std::vector<FaceParams>& params) {
    std::vector<std::vector<double>> rows;
    rows.reserve(params.size());
    for (const auto& p : params) {
        auto je = p.jaw_expression();
        rows.emplace_back(je.begin(), je.end());
    }
    return compute_stats(rows);
}

NormStats pose_stats(const std::vector<FaceParams>& params) {
    std::vector<std::vector<double>> rows;
    rows.reserve(params.size());
    for (const auto& p : params) rows.push_back({p.pitch_deg, p.yaw_deg});
    return compute_stats(rows);
}

}  // namespace pvp
