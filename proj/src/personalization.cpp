#include "pvp/personalization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "json.hpp"

#include "pvp/kernels.hpp"
#include "pvp/optim.hpp"

namespace pvp {

using nlohmann::json;

void PivotSet::validate(int frame_count, const GeneratorProfile& profile) const {
    if (latents.size() < 2) throw Error(ErrorKind::InvalidArgument, "a pivot set needs at least 2 pivots");
    if (frame_indices.size() != latents.size() || params.size() != latents.size())
        throw Error(ErrorKind::ShapeMismatch, "pivot indices, latents and params differ in length");
    std::set<int> seen;
    for (int i : frame_indices) {
        if (i < 0 || (frame_count >= 0 && i >= frame_count)) throw Error(ErrorKind::InvalidArgument, "pivot index out of range");
        if (!seen.insert(i).second) throw Error(ErrorKind::InvalidArgument, "duplicate pivot index");
    }
    for (const auto& w : latents)
        if (w.layers != profile.layers || w.dims != profile.dims) throw Error(ErrorKind::ShapeMismatch, "latent shape mismatch");
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng, const KMeansConfig& cfg) {
    const int n = static_cast<int>(points.rows());
    if (k < 1) throw Error(ErrorKind::InvalidArgument, "K must be positive");
    if (k > n) throw Error(ErrorKind::InvalidArgument, "K exceeds frame count");

    // k-means++ seeding.
    std::vector<int> chosen{std::uniform_int_distribution<int>(0, n - 1)(rng)};
    Eigen::VectorXd d2(n);
    for (int i = 0; i < n; ++i) d2(i) = (points.row(i) - points.row(chosen[0])).squaredNorm();
    while (static_cast<int>(chosen.size()) < k) {
        const double total = d2.sum();
        if (total <= 0.0) break;  // every remaining row duplicates a chosen one
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        int pick = -1;
        for (int i = 0; i < n; ++i) {
            if (d2(i) <= 0.0) continue;
            pick = i;
            r -= d2(i);
            if (r < 0.0) break;
        }
        chosen.push_back(pick);
        for (int i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - points.row(pick)).squaredNorm());
    }

    KMeansResult res;
    const int kk = static_cast<int>(chosen.size());
    res.centroids.resize(kk, points.cols());
    for (int j = 0; j < kk; ++j) res.centroids.row(j) = points.row(chosen[j]);
    std::vector<double> dist;
    for (res.iterations = 0; res.iterations < cfg.max_iterations;) {
        if (cfg.parallel)
            kernels::assign_nearest_parallel(points, res.centroids, res.labels, dist);
        else
            kernels::assign_nearest_serial(points, res.centroids, res.labels, dist);
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(kk, points.cols());
        std::vector<int> count(kk, 0);
        for (int i = 0; i < n; ++i) {
            next.row(res.labels[i]) += points.row(i);
            ++count[res.labels[i]];
        }
        double shift = 0.0;
        for (int j = 0; j < kk; ++j) {
            if (count[j] == 0) {
                next.row(j) = res.centroids.row(j);
                continue;
            }
            next.row(j) /= count[j];
            shift = std::max(shift, (next.row(j) - res.centroids.row(j)).norm());
        }
        res.centroids = std::move(next);
        ++res.iterations;
        if (shift < cfg.tolerance) break;
    }
    if (cfg.parallel)
        kernels::assign_nearest_parallel(points, res.centroids, res.labels, dist);
    else
        kernels::assign_nearest_serial(points, res.centroids, res.labels, dist);
    return res;
}

PivotSelection select_pivots(const std::vector<FaceParams>& video_params, int k, std::uint64_t seed,
                             const KMeansConfig& cfg) {
    const int n = static_cast<int>(video_params.size());
    if (n < 2) throw Error(ErrorKind::InvalidArgument, "pivot selection needs at least 2 frames");
    if (k > n) throw Error(ErrorKind::InvalidArgument, "K exceeds frame count");
    const auto z = standardize(stack_features(video_params)).values;
    std::mt19937_64 rng(seed);
    const auto km = kmeans(z, k, rng, cfg);

    PivotSelection sel;
    std::set<int> seen;
    for (int j = 0; j < km.centroids.rows(); ++j) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (km.labels[i] != j) continue;
            const double d = (z.row(i) - km.centroids.row(j)).squaredNorm();
            if (d < best_d) best_d = d, best = i;
        }
        if (best >= 0 && seen.insert(best).second) sel.indices.push_back(best);
    }
    if (static_cast<int>(sel.indices.size()) < k) {
        sel.status = Status::Warning;
        sel.message = "only " + std::to_string(sel.indices.size()) + " distinct pivots found for K=" + std::to_string(k);
    }
    return sel;
}

std::string to_string(PTIBudget b) { return b == PTIBudget::Global ? "global" : "per_pivot"; }

PTIBudget budget_from_string(const std::string& s) {
    if (s == "global") return PTIBudget::Global;
    if (s == "per_pivot") return PTIBudget::PerPivot;
    throw Error(ErrorKind::InvalidArgument, "unknown PTI budget mode: " + s);
}

LatentCode PersonalizedManifold::blend(const std::vector<double>& alpha) const {
    if (static_cast<int>(alpha.size()) != size()) throw Error(ErrorKind::ShapeMismatch, "weight count differs from pivot count");
    LatentCode w(pivots.latents.front().layers, pivots.latents.front().dims);
    for (std::size_t i = 0; i < alpha.size(); ++i) w.add_scaled(pivots.latents[i], alpha[i]);
    return w;
}

double pivot_perceptual(const GeneratorBackend& backend, const PivotSet& pivots, const std::vector<Image>& images,
                        const PerceptualMetric& metric, std::vector<double>* per_pivot) {
    if (images.size() != pivots.latents.size()) throw Error(ErrorKind::ShapeMismatch, "one image per pivot required");
    if (per_pivot != nullptr) per_pivot->assign(images.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const double d = metric.distance(backend.synthesize(pivots.latents[i]), images[i]);
        if (per_pivot != nullptr) (*per_pivot)[i] = d;
        total += d;
    }
    return total / static_cast<double>(images.size());
}

double locality_regularizer(const GeneratorBackend& original, const GeneratorBackend& tuned, const PivotSet& pivots,
                            const PTIConfig& cfg, const PerceptualMetric& metric, std::mt19937_64& rng,
                            std::vector<double>* grad_theta) {
    if (original.profile() != tuned.profile()) throw Error(ErrorKind::ShapeMismatch, "backends differ in profile");
    if (pivots.latents.empty()) throw Error(ErrorKind::InvalidArgument, "zero pivots");
    const int n = cfg.locality_samples_per_step;
    if (n <= 0) return 0.0;
    if (!(cfg.locality_interp_range > 0.0 && cfg.locality_interp_range <= 1.0))
        throw Error(ErrorKind::InvalidArgument, "locality interpolation range must lie in (0,1]");
    std::uniform_int_distribution<std::size_t> pick(0, pivots.latents.size() - 1);
    std::uniform_real_distribution<double> frac(0.0, cfg.locality_interp_range);
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        LatentCode w = tuned.sample_prior(rng);
        const LatentCode& pivot = pivots.latents[pick(rng)];
        const double t = cfg.locality_interp_range - frac(rng);  // (0, range]
        for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] = (1.0 - t) * w.values[i] + t * pivot.values[i];
        const Image a = tuned.synthesize(w);
        const Image b = original.synthesize(w);
        total += mean_squared_error(a, b) + metric.distance(a, b);
        if (grad_theta != nullptr) {
            Image g(a.height, a.width);
            mean_squared_error_vjp(a, b, 1.0 / n, g);
            metric.distance_vjp(a, b, 1.0 / n, g);
            tuned.synthesize_vjp(w, g, nullptr, grad_theta);
        }
    }
    return total / n;
}

namespace {

void require_finite(double v, const std::string& what, int step) {
    if (!std::isfinite(v))
        throw Error(ErrorKind::Numeric, "non-finite " + what + " at PTI step " + std::to_string(step));
}

// One optimizer step on the given pivots; returns the loss value.
double pti_step(const GeneratorBackend& original, GeneratorBackend& tuned, const PivotSet& pivots,
                const std::vector<Image>& images, const std::vector<std::size_t>& batch, const PTIConfig& cfg,
                const PerceptualMetric& metric, std::mt19937_64& rng, Adam& adam, int step) {
    std::vector<double> grad(tuned.parameters().size(), 0.0);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto i : batch) {
        const Image out = tuned.synthesize(pivots.latents[i]);
        loss += inv * (metric.distance(out, images[i]) + cfg.lambda_l2 * mean_squared_error(out, images[i]));
        Image g(out.height, out.width);
        metric.distance_vjp(out, images[i], inv, g);
        mean_squared_error_vjp(out, images[i], inv * cfg.lambda_l2, g);
        tuned.synthesize_vjp(pivots.latents[i], g, nullptr, &grad);
    }
    if (cfg.lambda_r > 0.0 && cfg.locality_samples_per_step > 0) {
        std::vector<double> rgrad(grad.size(), 0.0);
        loss += cfg.lambda_r * locality_regularizer(original, tuned, pivots, cfg, metric, rng, &rgrad);
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += cfg.lambda_r * rgrad[j];
    }
    require_finite(loss, "loss", step);
    adam.step(tuned.mutable_parameters(), grad);
    return loss;
}

}  // namespace

PersonalizedManifold personalize(const GeneratorBackend& backend, const PivotSet& pivots,
                                 const std::vector<Image>& pivot_images, const PTIConfig& cfg,
                                 const PerceptualMetric& metric, const JobControl& job) {
    if (pivots.latents.empty()) throw Error(ErrorKind::InvalidArgument, "zero pivots");
    if (pivot_images.size() != pivots.latents.size()) throw Error(ErrorKind::ShapeMismatch, "one image per pivot required");
    if (!backend.differentiable()) throw Error(ErrorKind::Unavailable, "backend is not differentiable");
    if (cfg.max_steps < 0 || cfg.lpips_threshold <= 0.0 || cfg.step_size <= 0.0 || cfg.beta < 0.0)
        throw Error(ErrorKind::InvalidArgument, "invalid PTI configuration");
    for (const auto& w : pivots.latents) backend.require_profile(w);

    PersonalizedManifold m;
    m.pivots = pivots;
    m.beta = cfg.beta;
    m.config = cfg;
    m.backend = clone_backend(backend);
    GeneratorBackend& tuned = *m.backend;
    PTIReport& rep = m.report;

    std::mt19937_64 rng(cfg.seed);
    Adam adam(tuned.parameters().size(), AdamConfig{cfg.step_size, 0.9, 0.999, 1e-8});
    const std::size_t k = pivots.latents.size();
    rep.initial_perceptual = pivot_perceptual(tuned, pivots, pivot_images, metric, &rep.pivot_perceptual);
    require_finite(rep.initial_perceptual, "perceptual loss", 0);
    double current = rep.initial_perceptual;

    if (cfg.budget == PTIBudget::Global) {
        std::vector<std::size_t> order(k);
        std::iota(order.begin(), order.end(), 0);
        const std::size_t per_step = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(cfg.pivots_per_step, 1)), 1, k);
        while (current >= cfg.lpips_threshold && rep.steps < cfg.max_steps) {
            job.check();
            std::shuffle(order.begin(), order.end(), rng);
            const std::vector<std::size_t> batch(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_step));
            pti_step(backend, tuned, pivots, pivot_images, batch, cfg, metric, rng, adam, rep.steps);
            ++rep.steps;
            current = pivot_perceptual(tuned, pivots, pivot_images, metric, &rep.pivot_perceptual);
            require_finite(current, "perceptual loss", rep.steps);
            job.report(static_cast<double>(rep.steps) / std::max(cfg.max_steps, 1), current);
        }
        rep.converged = current < cfg.lpips_threshold;
    } else {
        bool all_met = true;
        for (std::size_t i = 0; i < k; ++i) {
            int local = 0;
            double d = metric.distance(tuned.synthesize(pivots.latents[i]), pivot_images[i]);
            while (d >= cfg.lpips_threshold && local < cfg.max_steps) {
                job.check();
                pti_step(backend, tuned, pivots, pivot_images, {i}, cfg, metric, rng, adam, rep.steps);
                ++local;
                ++rep.steps;
                d = metric.distance(tuned.synthesize(pivots.latents[i]), pivot_images[i]);
                require_finite(d, "perceptual loss", rep.steps);
            }
            all_met = all_met && d < cfg.lpips_threshold;
            job.report(static_cast<double>(i + 1) / static_cast<double>(k), d);
        }
        current = pivot_perceptual(tuned, pivots, pivot_images, metric, &rep.pivot_perceptual);
        rep.converged = all_met;
    }
    rep.final_perceptual = current;
    if (!rep.converged) {
        rep.status = Status::Warning;
        rep.message = cfg.max_steps == 0 ? "step budget is zero; generator left untuned"
                                         : "step budget exhausted before the perceptual threshold was met";
    }
    return m;
}

std::vector<double> sample_dilated_simplex(int k, double beta, std::mt19937_64& rng) {
    if (k < 1) throw Error(ErrorKind::InvalidArgument, "K must be positive");
    std::exponential_distribution<double> e(1.0);
    std::vector<double> d(static_cast<std::size_t>(k));
    double s = 0.0;
    for (auto& v : d) s += (v = e(rng));
    for (auto& v : d) v = (1.0 + k * beta) * (v / s) - beta;
    return d;
}

PoseCoverage pose_coverage_report(const PersonalizedManifold& manifold, const FaceParamEstimator& estimator,
                                  int n_samples, std::uint64_t seed, const std::vector<FaceParams>& video_params,
                                  const CoverageConfig& cfg) {
    if (n_samples < 1) throw Error(ErrorKind::InvalidArgument, "empty histogram: n_samples must be at least 1");
    if (cfg.bins < 1) throw Error(ErrorKind::InvalidArgument, "histogram needs at least one bin");
    PoseCoverage out;
    out.config = cfg;
    out.counts.assign(static_cast<std::size_t>(cfg.bins), std::vector<int>(static_cast<std::size_t>(cfg.bins), 0));
    auto bin = [&](double v, double lo, double hi) {
        const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * cfg.bins));
        return std::clamp(b, 0, cfg.bins - 1);
    };
    std::mt19937_64 rng(seed);
    const int k = manifold.size();
    std::uniform_int_distribution<int> vertex(0, k - 1);
    for (int s = 0; s < n_samples; ++s) {
        std::vector<double> alpha;
        if (cfg.one_hot) {
            alpha.assign(static_cast<std::size_t>(k), 0.0);
            alpha[static_cast<std::size_t>(vertex(rng))] = 1.0;
        } else {
            alpha = sample_dilated_simplex(k, manifold.beta, rng);
        }
        const FaceParams p = estimator.estimate(manifold.backend->synthesize(manifold.blend(alpha)));
        out.samples.push_back({p.yaw_deg, p.pitch_deg});
        ++out.counts[static_cast<std::size_t>(bin(p.pitch_deg, cfg.pitch_min, cfg.pitch_max))]
                    [static_cast<std::size_t>(bin(p.yaw_deg, cfg.yaw_min, cfg.yaw_max))];
    }
    for (const auto& p : video_params) out.video.push_back({p.yaw_deg, p.pitch_deg});
    return out;
}

std::string coverage_to_json(const PoseCoverage& c) {
    json j;
    j["bins"] = c.config.bins;
    j["yaw_range"] = {c.config.yaw_min, c.config.yaw_max};
    j["pitch_range"] = {c.config.pitch_min, c.config.pitch_max};
    j["counts"] = c.counts;
    j["samples"] = c.samples;
    j["video"] = c.video;
    return j.dump();
}

namespace {

constexpr int kManifestVersion = 1;

json profile_json(const GeneratorProfile& p) {
    return {{"layers", p.layers}, {"dims", p.dims}, {"height", p.height}, {"width", p.width}, {"geometry_layers", p.geometry_layers}};
}

}  // namespace

void save_manifold(const std::filesystem::path& dir, const PersonalizedManifold& m) {
    std::filesystem::create_directories(dir);
    const auto& c = m.config;
    json j;
    j["format"] = "pvp-manifold";
    j["version"] = kManifestVersion;
    j["K"] = m.size();
    j["beta"] = m.beta;
    j["profile"] = profile_json(m.backend->profile());
    j["backend_kind"] = m.backend->kind();
    j["frame_indices"] = m.pivots.frame_indices;
    j["config"] = {{"lpips_threshold", c.lpips_threshold}, {"max_steps", c.max_steps}, {"lambda_l2", c.lambda_l2},
                   {"lambda_r", c.lambda_r}, {"locality_samples_per_step", c.locality_samples_per_step},
                   {"locality_interp_range", c.locality_interp_range}, {"step_size", c.step_size},
                   {"pivots_per_step", c.pivots_per_step}, {"budget", to_string(c.budget)}, {"seed", c.seed}};
    const auto& r = m.report;
    j["provenance"] = {{"steps", r.steps},
                       {"converged", r.converged},
                       {"budget_exhausted", !r.converged},
                       {"initial_perceptual", r.initial_perceptual},
                       {"final_perceptual", r.final_perceptual},
                       {"pivot_perceptual", r.pivot_perceptual},
                       {"pivot_latents", "pre-tuning inversions reused as hull vertices"},
                       {"message", r.message}};
    std::ofstream(dir / "manifest.json") << j.dump(2) << "\n";
    save_latents(dir / "pivots.pvpw", m.pivots.latents);
    save_checkpoint(dir / "generator.pvpg", *m.backend);
    save_face_params(dir / "pivot_params.pvpf", m.pivots.params);
}

PersonalizedManifold load_manifold(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw Error(ErrorKind::NotFound, "manifold manifest missing in " + dir.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Format, std::string("manifold manifest: ") + e.what());
    }
    if (j.value("format", "") != "pvp-manifold") throw Error(ErrorKind::Format, "not a manifold manifest");
    if (j.value("version", -1) != kManifestVersion)
        throw Error(ErrorKind::Format, "manifold manifest version mismatch: expected " + std::to_string(kManifestVersion));
    PersonalizedManifold m;
    m.beta = j.at("beta").get<double>();
    m.pivots.frame_indices = j.at("frame_indices").get<std::vector<int>>();
    m.pivots.latents = load_latents(dir / "pivots.pvpw");
    m.pivots.params = load_face_params(dir / "pivot_params.pvpf");
    m.backend = load_checkpoint(dir / "generator.pvpg");
    const auto& c = j.at("config");
    m.config.lpips_threshold = c.at("lpips_threshold");
    m.config.max_steps = c.at("max_steps");
    m.config.lambda_l2 = c.at("lambda_l2");
    m.config.lambda_r = c.at("lambda_r");
    m.config.locality_samples_per_step = c.at("locality_samples_per_step");
    m.config.locality_interp_range = c.at("locality_interp_range");
    m.config.step_size = c.at("step_size");
    m.config.pivots_per_step = c.at("pivots_per_step");
    m.config.budget = budget_from_string(c.at("budget"));
    m.config.seed = c.at("seed");
    m.config.beta = m.beta;
    const auto& p = j.at("provenance");
    m.report.steps = p.at("steps");
    m.report.converged = p.at("converged");
    m.report.initial_perceptual = p.at("initial_perceptual");
    m.report.final_perceptual = p.at("final_perceptual");
    m.report.pivot_perceptual = p.at("pivot_perceptual").get<std::vector<double>>();
    m.report.message = p.at("message");
    m.report.status = m.report.converged ? Status::Ok : Status::Warning;
    if (j.at("K").get<int>() != m.size()) throw Error(ErrorKind::Format, "manifold pivot count disagrees with manifest");
    m.pivots.validate(-1, m.backend->profile());
    return m;
}

}  // namespace pvp
