#include "pvp/mappers.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "pvp/binio.hpp"

namespace pvp {

using nlohmann::json;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double logistic(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw Error(ErrorKind::Numeric, std::string("non-finite ") + what);
}

}  // namespace

namespace {

// log softplus(v); for very negative v softplus(v) = exp(v) to double precision.
double log_softplus(double v) { return v < -30.0 ? v : std::log(softplus(v)); }

// sigmoid(v) / softplus(v), which tends to 1 as v -> -inf.
double slope_ratio(double v) { return v < -30.0 ? 1.0 : logistic(v) / softplus(v); }

// Normalized shares s_i / sum(s), computed in log space so the mass never underflows.
std::vector<double> softplus_shares(std::span<const double> raw, double beta) {
    const std::size_t k = raw.size();
    std::vector<double> ls(k);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) top = std::max(top, ls[i] = log_softplus(1.0 / k + raw[i] + beta));
    double total = 0.0;
    for (auto& v : ls) total += (v = std::exp(v - top));
    for (auto& v : ls) v /= total;
    return ls;
}

void check_projection_inputs(std::span<const double> raw, double beta) {
    if (raw.empty()) throw Error(ErrorKind::InvalidArgument, "no weights to project");
    if (beta < 0.0) throw Error(ErrorKind::InvalidArgument, "beta must be nonnegative");
    require_finite(raw, "raw weights");
}

}  // namespace

std::vector<double> project_raw_to_weights(std::span<const double> raw, double beta) {
    check_projection_inputs(raw, beta);
    const double mass = 1.0 + static_cast<double>(raw.size()) * beta;
    auto p = softplus_shares(raw, beta);
    for (auto& v : p) v = -beta + v * mass;
    return p;
}

// With p = s / S: d alpha_i / d v_j = mass (delta_ij - p_i) p_j sigmoid(v_j) / s_j.
std::vector<double> project_raw_to_weights_vjp(std::span<const double> raw, double beta, std::span<const double> grad_alpha) {
    check_projection_inputs(raw, beta);
    const std::size_t k = raw.size();
    if (grad_alpha.size() != k) throw Error(ErrorKind::ShapeMismatch, "weight gradient size mismatch");
    const double mass = 1.0 + static_cast<double>(k) * beta;
    const auto p = softplus_shares(raw, beta);
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += grad_alpha[i] * p[i];
    std::vector<double> g(k);
    for (std::size_t j = 0; j < k; ++j)
        g[j] = mass * (grad_alpha[j] - dot) * p[j] * slope_ratio(1.0 / k + raw[j] + beta);
    return g;
}

std::vector<double> InputNorm::apply(std::span<const double> x) const {
    if (x.size() != mean.size()) throw Error(ErrorKind::ShapeMismatch, "mapper input size mismatch");
    require_finite(x, "mapper input");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / scale[i];
    return out;
}

InputNorm InputNorm::fit(const NormStats& stats, std::span<const double> fallback_half_range) {
    if (stats.mean.size() != fallback_half_range.size()) throw Error(ErrorKind::ShapeMismatch, "normalization size mismatch");
    InputNorm n;
    n.mean = stats.mean;
    n.scale = stats.stddev;
    for (std::size_t i = 0; i < n.scale.size(); ++i)
        if (n.scale[i] < 1e-6) n.scale[i] = fallback_half_range[i];
    return n;
}

InputNorm InputNorm::identity(int dims) {
    return {std::vector<double>(static_cast<std::size_t>(dims), 0.0), std::vector<double>(static_cast<std::size_t>(dims), 1.0)};
}

std::vector<double> pose_half_range() { return {90.0, 90.0}; }

std::vector<double> jaw_expression_half_range() {
    std::vector<double> r(kExprInputDims, 5.0);
    r[0] = r[1] = r[2] = 1.0;
    return r;
}

PoseMapper::PoseMapper(int k, const MapperConfig& cfg) : net_(2, cfg.hidden, k), raw_scale_(cfg.raw_scale) {
    if (k < 2) throw Error(ErrorKind::InvalidArgument, "pose mapper needs at least 2 pivots");
    std::mt19937_64 rng(cfg.seed);
    net_.initialize(rng);
}

PoseMapper::Output PoseMapper::forward(double pitch_deg, double yaw_deg, double beta) const {
    const double in[2] = {pitch_deg, yaw_deg};
    const auto x = norm.apply(in);
    Output out;
    out.raw = net_.forward(x, &out.cache);
    for (auto& r : out.raw) r *= raw_scale_;
    out.alpha = project_raw_to_weights(out.raw, beta);
    return out;
}

void PoseMapper::backward(const Output& out, double beta, std::span<const double> grad_alpha,
                          std::span<double> grad_params) const {
    auto graw = project_raw_to_weights_vjp(out.raw, beta, grad_alpha);
    for (auto& g : graw) g *= raw_scale_;
    net_.backward(out.cache, graw, grad_params);
}

ExpressionMapper::ExpressionMapper(const GeneratorProfile& profile, const MapperConfig& cfg)
    : layers_(profile.layers), dims_(profile.dims) {
    if (profile.geometry_layers <= 0 || profile.geometry_layers > profile.layers)
        throw Error(ErrorKind::InvalidArgument, "invalid geometry layer count");
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int g = 0; g < profile.geometry_layers; ++g) {
        nets_.emplace_back(kExprInputDims, cfg.hidden, profile.dims);
        nets_.back().initialize(rng);
    }
}

std::size_t ExpressionMapper::param_count() const {
    std::size_t n = 0;
    for (const auto& m : nets_) n += m.param_count();
    return n;
}

ExpressionMapper::Output ExpressionMapper::forward(std::span<const double> jaw_expression) const {
    const auto x = norm.apply(jaw_expression);
    Output out;
    out.residual = LatentResidual(layers_, dims_);
    out.caches.resize(nets_.size());
    for (std::size_t g = 0; g < nets_.size(); ++g) {
        const auto y = nets_[g].forward(x, &out.caches[g]);
        std::copy(y.begin(), y.end(), out.residual.layer(static_cast<int>(g)).begin());
    }
    return out;
}

void ExpressionMapper::backward(const Output& out, const LatentResidual& grad_residual, std::span<double> grad_params) const {
    if (grad_params.size() != param_count()) throw Error(ErrorKind::ShapeMismatch, "expression gradient size mismatch");
    require_same_shape(out.residual, grad_residual);
    std::size_t offset = 0;
    for (std::size_t g = 0; g < nets_.size(); ++g) {
        nets_[g].backward(out.caches[g], grad_residual.layer(static_cast<int>(g)),
                          grad_params.subspan(offset, nets_[g].param_count()));
        offset += nets_[g].param_count();
    }
}

LatentCode compose(const LatentCode& w_rot, const LatentResidual& delta) {
    require_same_shape(w_rot, delta);
    return w_rot + delta;
}

MapperBundle::Forward MapperBundle::forward(const FaceParams& params) const {
    if (!manifold) throw Error(ErrorKind::InvalidArgument, "mapper bundle has no manifold");
    Forward f;
    f.pose = pose.forward(params.pitch_deg, params.yaw_deg, manifold->beta);
    f.w_rot = manifold->blend(f.pose.alpha);
    const auto je = params.jaw_expression();
    f.expr = expr.forward(je);
    f.w_final = compose(f.w_rot, f.expr.residual);
    return f;
}

std::size_t MapperBundle::param_count() const { return pose.net().param_count() + expr.param_count(); }

std::vector<double> MapperBundle::get_params() const {
    std::vector<double> v(pose.net().params().begin(), pose.net().params().end());
    for (const auto& m : expr.nets()) v.insert(v.end(), m.params().begin(), m.params().end());
    return v;
}

void MapperBundle::set_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw Error(ErrorKind::ShapeMismatch, "mapper parameter count mismatch");
    std::size_t off = 0;
    auto take = [&](std::span<double> dst) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
        off += dst.size();
    };
    take(pose.net().params());
    for (auto& m : expr.nets()) take(m.params());
}

MapperBundle make_bundle(std::shared_ptr<const PersonalizedManifold> manifold, const std::vector<FaceParams>& training_params,
                         const MapperConfig& cfg) {
    if (!manifold) throw Error(ErrorKind::InvalidArgument, "mapper bundle needs a manifold");
    if (training_params.empty()) throw Error(ErrorKind::InvalidArgument, "no training parameters");
    MapperBundle b;
    b.config = cfg;
    b.manifold = manifold;
    b.pose = PoseMapper(manifold->size(), cfg);
    b.expr = ExpressionMapper(manifold->backend->profile(), cfg);
    b.source_pose_stats = pose_stats(training_params);
    b.source_stats = jaw_expression_stats(training_params);
    b.pose.norm = InputNorm::fit(b.source_pose_stats, pose_half_range());
    NormStats widened = b.source_stats;
    for (auto& sd : widened.stddev) sd = std::hypot(sd, cfg.input_noise);
    b.expr.norm = InputNorm::fit(widened, jaw_expression_half_range());
    return b;
}

Image render(const MapperBundle& bundle, const FaceParams& params) {
    return bundle.manifold->backend->synthesize(bundle.latent(params));
}

namespace {

constexpr std::uint16_t kWeightsVersion = 1;
constexpr int kBundleVersion = 1;

void put_tensor(std::ostream& os, const std::string& name, std::vector<std::uint32_t> shape, std::span<const double> data) {
    binio::put_string(os, name);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) binio::put<std::uint32_t>(os, d);
    binio::put_f32(os, data);
}

json stats_json(const std::vector<double>& mean, const std::vector<double>& other, const char* other_name) {
    return {{"mean", mean}, {other_name, other}};
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const MapperBundle& b) {
    std::filesystem::create_directories(dir);
    const auto& prof = b.manifold->backend->profile();
    json j;
    j["format"] = "pvp-mappers";
    j["version"] = kBundleVersion;
    j["K"] = b.pose.k();
    j["hidden"] = b.config.hidden;
    j["raw_scale"] = b.config.raw_scale;
    j["seed"] = b.config.seed;
    j["input_noise"] = b.config.input_noise;
    j["layers"] = prof.layers;
    j["dims"] = prof.dims;
    j["geometry_layers"] = b.expr.geometry_layers();
    j["beta"] = b.manifold->beta;
    j["pose_norm"] = stats_json(b.pose.norm.mean, b.pose.norm.scale, "scale");
    j["expr_norm"] = stats_json(b.expr.norm.mean, b.expr.norm.scale, "scale");
    j["source_stats"] = stats_json(b.source_stats.mean, b.source_stats.stddev, "stddev");
    j["source_pose_stats"] = stats_json(b.source_pose_stats.mean, b.source_pose_stats.stddev, "stddev");
    j["manifold_path"] = b.manifold_path;
    j["provenance"] = b.provenance.empty() ? json::object() : json::parse(b.provenance);
    std::ofstream(dir / "manifest.json") << j.dump(2) << "\n";

    std::ofstream os(dir / "weights.pvpm", std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + (dir / "weights.pvpm").string());
    binio::put_magic(os, "PVPM");
    binio::put<std::uint16_t>(os, kWeightsVersion);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(1 + b.expr.nets().size()));
    auto put_mlp = [&](const std::string& name, const Mlp& m) {
        put_tensor(os, name, {static_cast<std::uint32_t>(m.inputs()), static_cast<std::uint32_t>(m.hidden()),
                              static_cast<std::uint32_t>(m.outputs())},
                   m.params());
    };
    put_mlp("pose", b.pose.net());
    for (std::size_t g = 0; g < b.expr.nets().size(); ++g) put_mlp("expr." + std::to_string(g), b.expr.nets()[g]);
}

MapperBundle load_bundle(const std::filesystem::path& dir, std::shared_ptr<const PersonalizedManifold> manifold) {
    if (!manifold) throw Error(ErrorKind::InvalidArgument, "mapper bundle needs a manifold");
    std::ifstream ms(dir / "manifest.json");
    if (!ms) throw Error(ErrorKind::NotFound, "mapper manifest missing in " + dir.string());
    json j;
    try {
        j = json::parse(ms);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Format, std::string("mapper manifest: ") + e.what());
    }
    if (j.value("format", "") != "pvp-mappers") throw Error(ErrorKind::Format, "not a mapper manifest");
    if (j.value("version", -1) != kBundleVersion) throw Error(ErrorKind::Format, "mapper manifest version mismatch");
    if (j.at("K").get<int>() != manifold->size()) throw Error(ErrorKind::ShapeMismatch, "mapper K differs from the manifold");

    MapperConfig cfg;
    cfg.hidden = j.at("hidden");
    cfg.raw_scale = j.at("raw_scale");
    cfg.seed = j.at("seed");
    cfg.input_noise = j.value("input_noise", cfg.input_noise);
    MapperBundle b = make_bundle(manifold, {FaceParams{}}, cfg);
    b.pose.norm = {j.at("pose_norm").at("mean"), j.at("pose_norm").at("scale")};
    b.expr.norm = {j.at("expr_norm").at("mean"), j.at("expr_norm").at("scale")};
    b.source_stats = {j.at("source_stats").at("mean"), j.at("source_stats").at("stddev")};
    b.source_pose_stats = {j.at("source_pose_stats").at("mean"), j.at("source_pose_stats").at("stddev")};
    b.manifold_path = j.value("manifold_path", "");
    b.provenance = j.at("provenance").dump();

    std::ifstream is(dir / "weights.pvpm", std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "mapper weights missing in " + dir.string());
    binio::expect_magic(is, "PVPM");
    if (binio::get<std::uint16_t>(is) != kWeightsVersion) throw Error(ErrorKind::Format, "PVPM version mismatch");
    const auto count = binio::get<std::uint32_t>(is);
    if (count != 1 + b.expr.nets().size()) throw Error(ErrorKind::Format, "PVPM tensor count mismatch");
    auto read_mlp = [&](const std::string& expected, Mlp& m) {
        if (binio::get_string(is, 256) != expected) throw Error(ErrorKind::Format, "PVPM tensor order mismatch");
        const auto nd = binio::get<std::uint32_t>(is);
        if (nd != 3) throw Error(ErrorKind::Format, "PVPM tensor rank mismatch");
        const std::uint32_t shape[3] = {binio::get<std::uint32_t>(is), binio::get<std::uint32_t>(is), binio::get<std::uint32_t>(is)};
        if (static_cast<int>(shape[0]) != m.inputs() || static_cast<int>(shape[1]) != m.hidden() ||
            static_cast<int>(shape[2]) != m.outputs())
            throw Error(ErrorKind::Format, "PVPM tensor shape mismatch for " + expected);
        const auto v = binio::get_f32(is, m.param_count());
        std::copy(v.begin(), v.end(), m.params().begin());
    };
    read_mlp("pose", b.pose.net());
    for (std::size_t g = 0; g < b.expr.nets().size(); ++g) read_mlp("expr." + std::to_string(g), b.expr.nets()[g]);
    return b;
}

}  // namespace pvp
