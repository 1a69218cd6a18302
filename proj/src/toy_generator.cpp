#include "pvp/toy_generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pvp/optim.hpp"

namespace pvp {

namespace toy {

double band_range(int k) {
    if (k < 2) return 180.0;   // yaw, pitch (degrees)
    if (k < 8) return 2.0;     // neck, jaw (radians)
    return 10.0;               // expression
}

double prior_param_scale(int k) {
    if (k == 0) return 25.0;
    if (k == 1) return 12.0;
    if (k < 8) return 0.1;
    return 1.0;
}

ToyFaceLayout::Rects ToyFaceLayout::rects(const FaceParams& params, int height, int width) {
    const auto g = face_geometry(params);
    const double sx = width / kReferenceSize;
    const double sy = height / kReferenceSize;
    auto rect = [&](double x0, double x1, double y0, double y1) {
        PixelRect r;
        r.x0 = std::clamp(static_cast<int>(std::floor(x0 * sx)), 0, width);
        r.x1 = std::clamp(static_cast<int>(std::ceil(x1 * sx)), 0, width);
        r.y0 = std::clamp(static_cast<int>(std::floor(y0 * sy)), 1, height);  // never the parameter band
        r.y1 = std::clamp(static_cast<int>(std::ceil(y1 * sy)), 1, height);
        return r;
    };
    Rects out;
    out.left_eye = rect(g.eye_lx - 4.0, g.eye_lx + 4.0, g.eye_y - 7.5, g.eye_y + 3.0);
    out.right_eye = rect(g.eye_rx - 4.0, g.eye_rx + 4.0, g.eye_y - 7.5, g.eye_y + 3.0);
    out.mouth = rect(g.mouth_x - 7.5, g.mouth_x + 7.5, g.mouth_y - 4.5, g.mouth_y + 5.0);
    return out;
}

std::vector<LabeledRegion> ToyFaceLayout::excluded_regions(const FaceParams& params, int height, int width) const {
    const auto r = rects(params, height, width);
    auto poly = [](const PixelRect& p) {
        return std::vector<std::array<double, 2>>{{double(p.x0), double(p.y0)},
                                                   {double(p.x1), double(p.y0)},
                                                   {double(p.x1), double(p.y1)},
                                                   {double(p.x0), double(p.y1)}};
    };
    return {{"eyes", poly(r.left_eye)}, {"eyes", poly(r.right_eye)}, {"mouth", poly(r.mouth)}};
}

}  // namespace toy

ToyGeneratorSpec ToyGeneratorSpec::from_profile(const GeneratorProfile& p) {
    if (p.height != p.width) throw Error(ErrorKind::InvalidArgument, "toy generator images are square");
    ToyGeneratorSpec s;
    s.image_size = p.height;
    s.layers = p.layers;
    s.dims = p.dims;
    s.geometry_layers = p.geometry_layers;
    return s;
}

ToyGenerator::ToyGenerator(const ToyGeneratorSpec& spec) : spec_(spec), profile_(spec.profile()) {
    if (spec.param_band_rows != 1) throw Error(ErrorKind::InvalidArgument, "toy generator supports a single band row");
    if (spec.geometry_layers <= 0 || spec.geometry_layers >= spec.layers)
        throw Error(ErrorKind::InvalidArgument, "geometry layers must split the latent");
    if (spec.image_size * 3 < kFaceParamDims || spec.image_size < 16)
        throw Error(ErrorKind::InvalidArgument, "toy image too small for the parameter band");
    if (geometry_width() < kFaceParamDims) throw Error(ErrorKind::InvalidArgument, "geometry layers too narrow for 58 parameters");
    theta_.assign(texture_offset() + texture_size(), 0.0);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double gscale = 1.0 / std::sqrt(static_cast<double>(geometry_width()));
    for (int k = 0; k < kFaceParamDims; ++k)
        for (int j = 0; j < geometry_width(); ++j)
            theta_[decode_offset() + static_cast<std::size_t>(k) * geometry_width() + j] =
                normal(rng) * toy::prior_param_scale(k) * gscale;
    const double cscale = 1.5 / std::sqrt(static_cast<double>(appearance_width()));
    for (int k = 0; k < kernels::kColorSlots; ++k)
        for (int j = 0; j < appearance_width(); ++j)
            theta_[color_offset() + static_cast<std::size_t>(k) * appearance_width() + j] = normal(rng) * cscale;
    constexpr std::array<double, kernels::kColorSlots> base_colors{0.25, 0.35, 0.55, 0.85, 0.66, 0.52, 0.22, 0.10, 0.10};
    for (int k = 0; k < kernels::kColorSlots; ++k)
        theta_[bias_offset() + k] = std::log(base_colors[k] / (1.0 - base_colors[k]));
}

std::size_t ToyGenerator::color_offset() const { return static_cast<std::size_t>(kFaceParamDims) * geometry_width(); }
std::size_t ToyGenerator::bias_offset() const {
    return color_offset() + static_cast<std::size_t>(kernels::kColorSlots) * appearance_width();
}
std::size_t ToyGenerator::texture_offset() const { return bias_offset() + kernels::kColorSlots; }
std::size_t ToyGenerator::texture_size() const {
    return static_cast<std::size_t>(profile_.height - 1) * profile_.width * 3;
}

std::span<const double> ToyGenerator::decode_matrix() const {
    return {theta_.data() + decode_offset(), static_cast<std::size_t>(kFaceParamDims) * geometry_width()};
}
std::span<const double> ToyGenerator::color_matrix() const {
    return {theta_.data() + color_offset(), static_cast<std::size_t>(kernels::kColorSlots) * appearance_width()};
}
std::span<const double> ToyGenerator::color_bias() const { return {theta_.data() + bias_offset(), kernels::kColorSlots}; }
std::span<const double> ToyGenerator::texture() const { return {theta_.data() + texture_offset(), texture_size()}; }
std::span<double> ToyGenerator::texture() { return {theta_.data() + texture_offset(), texture_size()}; }

std::array<double, kFaceParamDims> ToyGenerator::decode(const LatentCode& w) const {
    require_profile(w);
    std::array<double, kFaceParamDims> p{};
    const auto a = decode_matrix();
    const int n = geometry_width();
    for (int k = 0; k < kFaceParamDims; ++k) {
        const double* row = a.data() + static_cast<std::size_t>(k) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += row[j] * w.values[static_cast<std::size_t>(j)];
        p[k] = s;
    }
    return p;
}

std::array<double, kernels::kColorSlots> ToyGenerator::color_logits(const LatentCode& w) const {
    require_profile(w);
    std::array<double, kernels::kColorSlots> z{};
    const auto c = color_matrix();
    const auto bias = color_bias();
    const int n = appearance_width();
    const double* app = w.values.data() + geometry_width();
    for (int k = 0; k < kernels::kColorSlots; ++k) {
        const double* row = c.data() + static_cast<std::size_t>(k) * n;
        double s = bias[k];
        for (int j = 0; j < n; ++j) s += row[j] * app[j];
        z[k] = s;
    }
    return z;
}

kernels::SketchInputs ToyGenerator::sketch_inputs(const std::array<double, kFaceParamDims>& params,
                                                  const std::array<double, kernels::kColorSlots>& colors) const {
    kernels::SketchInputs in;
    in.height = profile_.height;
    in.width = profile_.width;
    for (int k = 0; k < toy::kGeometrySlots; ++k) in.geometry[k] = params[toy::kGeometryParamIndex[k]];
    in.colors = colors;
    in.texture = texture();
    return in;
}

Image ToyGenerator::render_factors(const std::array<double, kFaceParamDims>& params,
                                   const std::array<double, kernels::kColorSlots>& logits) const {
    Image img(profile_.height, profile_.width, 0.5);
    for (int k = 0; k < kFaceParamDims; ++k) img.pixels[static_cast<std::size_t>(k)] = toy::encode_band(k, params[k]);
    std::array<double, kernels::kColorSlots> colors{};
    for (int k = 0; k < kernels::kColorSlots; ++k) colors[k] = sigmoid(logits[k]);
    const std::size_t row_len = static_cast<std::size_t>(profile_.width) * 3;
    kernels::render_sketch_parallel(sketch_inputs(params, colors),
                                    std::span<double>(img.pixels.data() + row_len, img.pixels.size() - row_len));
    return img;
}

Image ToyGenerator::synthesize(const LatentCode& w) const {
    require_profile(w);
    return render_factors(decode(w), color_logits(w));
}

void ToyGenerator::synthesize_vjp(const LatentCode& w, const Image& grad_image, LatentCode* grad_latent,
                                  std::vector<double>* grad_params) const {
    require_profile(w);
    if (grad_image.height != profile_.height || grad_image.width != profile_.width)
        throw Error(ErrorKind::ShapeMismatch, "gradient image dimension mismatch");
    const auto params = decode(w);
    const auto logits = color_logits(w);
    std::array<double, kernels::kColorSlots> colors{};
    for (int k = 0; k < kernels::kColorSlots; ++k) colors[k] = sigmoid(logits[k]);

    std::array<double, kFaceParamDims> dp{};
    for (int k = 0; k < kFaceParamDims; ++k) dp[k] = grad_image.pixels[static_cast<std::size_t>(k)] / toy::band_range(k);

    const std::size_t row_len = static_cast<std::size_t>(profile_.width) * 3;
    std::vector<double> dtex;
    if (grad_params != nullptr) dtex.assign(texture_size(), 0.0);
    const auto sg = kernels::sketch_vjp_parallel(
        sketch_inputs(params, colors),
        std::span<const double>(grad_image.pixels.data() + row_len, grad_image.pixels.size() - row_len), dtex);
    for (int k = 0; k < toy::kGeometrySlots; ++k) dp[toy::kGeometryParamIndex[k]] += sg.geometry[k];
    std::array<double, kernels::kColorSlots> dz{};
    for (int k = 0; k < kernels::kColorSlots; ++k) dz[k] = sg.colors[k] * colors[k] * (1.0 - colors[k]);

    const int gw = geometry_width();
    const int aw = appearance_width();
    const auto a = decode_matrix();
    const auto c = color_matrix();
    if (grad_latent != nullptr) {
        if (!grad_latent->same_shape(w)) *grad_latent = zero_latent();
        for (int k = 0; k < kFaceParamDims; ++k) {
            const double* row = a.data() + static_cast<std::size_t>(k) * gw;
            for (int j = 0; j < gw; ++j) grad_latent->values[static_cast<std::size_t>(j)] += dp[k] * row[j];
        }
        for (int k = 0; k < kernels::kColorSlots; ++k) {
            const double* row = c.data() + static_cast<std::size_t>(k) * aw;
            for (int j = 0; j < aw; ++j) grad_latent->values[static_cast<std::size_t>(gw + j)] += dz[k] * row[j];
        }
    }
    if (grad_params != nullptr) {
        auto& g = *grad_params;
        if (g.size() != theta_.size()) g.assign(theta_.size(), 0.0);
        for (int k = 0; k < kFaceParamDims; ++k) {
            double* row = g.data() + decode_offset() + static_cast<std::size_t>(k) * gw;
            for (int j = 0; j < gw; ++j) row[j] += dp[k] * w.values[static_cast<std::size_t>(j)];
        }
        for (int k = 0; k < kernels::kColorSlots; ++k) {
            double* row = g.data() + color_offset() + static_cast<std::size_t>(k) * aw;
            for (int j = 0; j < aw; ++j) row[j] += dz[k] * w.values[static_cast<std::size_t>(gw + j)];
            g[bias_offset() + k] += dz[k];
        }
        double* tex = g.data() + texture_offset();
        for (std::size_t i = 0; i < dtex.size(); ++i) tex[i] += dtex[i];
    }
}

LatentCode ToyGenerator::sample_prior(std::mt19937_64& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    LatentCode w = zero_latent();
    for (auto& v : w.values) v = normal(rng);
    return w;
}

namespace {

// x = M^T (M M^T)^{-1} b for a wide, full-row-rank M (rows x cols, row-major).
std::vector<double> min_norm_solve(std::span<const double> m, int rows, int cols, std::span<const double> b) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(m.data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), rows);
    const Eigen::MatrixXd gram = mat * mat.transpose();
    const Eigen::VectorXd y = gram.ldlt().solve(rhs);
    const Eigen::VectorXd x = mat.transpose() * y;
    return {x.data(), x.data() + x.size()};
}

}  // namespace

std::vector<double> ToyGenerator::geometry_preimage(const std::array<double, kFaceParamDims>& params) const {
    return min_norm_solve(decode_matrix(), kFaceParamDims, geometry_width(), params);
}

std::vector<double> ToyGenerator::appearance_preimage(const std::array<double, kernels::kColorSlots>& logits) const {
    std::array<double, kernels::kColorSlots> rhs{};
    const auto bias = color_bias();
    for (int k = 0; k < kernels::kColorSlots; ++k) rhs[k] = logits[k] - bias[k];
    return min_norm_solve(color_matrix(), kernels::kColorSlots, appearance_width(), rhs);
}

FaceParams ToyEstimator::estimate(const Image& image) const {
    if (image.height != image_size_ || image.width != image_size_)
        throw Error(ErrorKind::ShapeMismatch, "toy estimator expects " + std::to_string(image_size_) + "x" +
                                                  std::to_string(image_size_) + " images");
    std::array<double, kFaceParamDims> p{};
    for (int k = 0; k < kFaceParamDims; ++k) p[k] = toy::decode_band(k, image.pixels[static_cast<std::size_t>(k)]);
    return FaceParams::from_array(p);
}

void ToyEstimator::estimate_vjp(const Image& image, std::span<const double> grad_params, Image& grad_image) const {
    if (image.height != image_size_ || image.width != image_size_ || !grad_image.same_dims(image))
        throw Error(ErrorKind::ShapeMismatch, "toy estimator gradient dimension mismatch");
    if (grad_params.size() != kFaceParamDims) throw Error(ErrorKind::ShapeMismatch, "estimator gradient needs 58 values");
    for (int k = 0; k < kFaceParamDims; ++k) grad_image.pixels[static_cast<std::size_t>(k)] += grad_params[k] * toy::band_range(k);
}

namespace {

double pixel_mse(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.size());
}

}  // namespace

InversionResult ToyInverter::invert(const Image& image) const {
    const auto& prof = gen_->profile();
    if (image.height != prof.height || image.width != prof.width)
        throw Error(ErrorKind::ShapeMismatch, "image dims do not match the generator profile");

    const ToyEstimator estimator(prof.height);
    const auto params = estimator.estimate(image).to_array();
    const auto geometry = gen_->geometry_preimage(params);

    // Gauss-Newton (Levenberg-Marquardt damped) on the nine color logits.
    const std::size_t row_len = static_cast<std::size_t>(prof.width) * 3;
    const std::size_t n = image.pixels.size() - row_len;
    auto residual = [&](const std::array<double, kernels::kColorSlots>& z) {
        const Image r = gen_->render_factors(params, z);
        Eigen::VectorXd res(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) res(static_cast<Eigen::Index>(i)) = r.pixels[row_len + i] - image.pixels[row_len + i];
        return res;
    };
    std::array<double, kernels::kColorSlots> z{};
    const auto bias = gen_->color_bias();
    std::copy(bias.begin(), bias.end(), z.begin());
    Eigen::VectorXd r = residual(z);
    double cost = r.squaredNorm();
    double damping = 1e-3;
    for (int it = 0; it < cfg_.gauss_newton_iterations; ++it) {
        Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), kernels::kColorSlots);
        constexpr double h = 1e-6;
        for (int k = 0; k < kernels::kColorSlots; ++k) {
            auto zk = z;
            zk[k] += h;
            jac.col(k) = (residual(zk) - r) / h;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * r;
        bool improved = false;
        for (int attempt = 0; attempt < 8 && !improved; ++attempt) {
            Eigen::MatrixXd lhs = jtj;
            lhs.diagonal().array() += damping * (1.0 + jtj.diagonal().array());
            const Eigen::VectorXd step = -lhs.ldlt().solve(jtr);
            auto candidate = z;
            for (int k = 0; k < kernels::kColorSlots; ++k) candidate[k] = std::clamp(z[k] + step(k), -12.0, 12.0);
            const Eigen::VectorXd rc = residual(candidate);
            const double cc = rc.squaredNorm();
            if (cc < cost) {
                improved = true;
                z = candidate;
                r = rc;
                damping = std::max(damping / 3.0, 1e-9);
                if (cost - cc < 1e-14 * (1.0 + cost)) it = cfg_.gauss_newton_iterations;
                cost = cc;
            } else {
                damping *= 4.0;
            }
        }
        if (!improved) break;
    }
    const auto appearance = gen_->appearance_preimage(z);

    LatentCode w = gen_->zero_latent();
    std::copy(geometry.begin(), geometry.end(), w.values.begin());
    std::copy(appearance.begin(), appearance.end(), w.values.begin() + static_cast<std::ptrdiff_t>(geometry.size()));

    InversionResult result;
    LatentCode best = w;
    double best_mse = pixel_mse(gen_->synthesize(w), image);
    Adam adam(w.values.size(), AdamConfig{cfg_.refine_step_size, 0.9, 0.999, 1e-8});
    const double tol_mse = cfg_.tolerance_rmse * cfg_.tolerance_rmse;
    int stale = 0;
    int steps = 0;
    while (best_mse > tol_mse && steps < cfg_.max_refine_steps) {
        const Image out = gen_->synthesize(w);
        Image grad(out.height, out.width);
        const double scale = 2.0 / static_cast<double>(out.pixels.size());
        for (std::size_t i = 0; i < out.pixels.size(); ++i) grad.pixels[i] = scale * (out.pixels[i] - image.pixels[i]);
        LatentCode gw = gen_->zero_latent();
        gen_->synthesize_vjp(w, grad, &gw, nullptr);
        if (!cfg_.refine_geometry) std::fill(gw.values.begin(), gw.values.begin() + gen_->geometry_width(), 0.0);
        adam.step(w.values, gw.values);
        ++steps;
        const double m = pixel_mse(gen_->synthesize(w), image);
        if (m < best_mse * (1.0 - 1e-6)) {
            best_mse = m;
            best = w;
            stale = 0;
        } else if (++stale >= 25) {
            break;
        }
    }
    result.latent = std::move(best);
    result.rmse = std::sqrt(best_mse);
    result.refine_steps = steps;
    if (result.rmse > cfg_.tolerance_rmse) {
        result.status = Status::Warning;
        result.message = "refinement did not reach tolerance; best latent returned";
    }
    return result;
}

}  // namespace pvp
