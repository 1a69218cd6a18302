#include "pvp/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace pvp {

double LossTerms::weighted(const LossWeights& w) const {
    return w.lpips * lpips + w.l2 * l2 + w.id * id + w.pose * pose + w.expr * expr + w.cons * cons + w.local * local;
}

LossTerms& LossTerms::operator+=(const LossTerms& o) {
    lpips += o.lpips, l2 += o.l2, id += o.id, pose += o.pose, expr += o.expr, cons += o.cons, local += o.local;
    return *this;
}

LossTerms LossTerms::scaled(double s) const {
    return {lpips * s, l2 * s, id * s, pose * s, expr * s, cons * s, local * s};
}

std::array<double, kExprInputDims> perturb_params(std::span<const double> jaw_expression, double sigma, std::mt19937_64& rng) {
    if (jaw_expression.size() != kExprInputDims) throw Error(ErrorKind::ShapeMismatch, "jaw/expression needs 53 values");
    if (sigma < 0.0) throw Error(ErrorKind::InvalidArgument, "sigma must be nonnegative");
    std::array<double, kExprInputDims> out{};
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < kExprInputDims; ++i) out[i] = jaw_expression[static_cast<std::size_t>(i)] + sigma * n(rng);
    return out;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b, std::size_t n, const char* what) {
    if (a.size() != n || b.size() != n) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

double loss_expression_match(std::span<const double> estimated, std::span<const double> target) {
    return squared_distance(estimated, target, kExprInputDims, "expression");
}

double loss_pose_consistency(std::span<const double> neck_estimated, std::span<const double> neck) {
    return squared_distance(neck_estimated, neck, 3, "neck pose");
}

double loss_rgb_consistency(const Image& perturbed, const Image& reconstructed, const RegionMask& mask) {
    if (mask.height != perturbed.height || mask.width != perturbed.width)
        throw Error(ErrorKind::ShapeMismatch, "mask dimension mismatch");
    return masked_mean_squared_error(perturbed, reconstructed, mask.mask);
}

double loss_local(const LatentResidual& residual) { return residual.squared_norm(); }

ObjectiveResult total_objective(const MapperBundle& bundle, const Image& frame, const FaceParams& params,
                                std::span<const double> perturbed, const LossWeights& weights,
                                const ObjectiveContext& ctx, bool want_grad) {
    if (ctx.perceptual == nullptr || ctx.identity == nullptr || ctx.estimator == nullptr)
        throw Error(ErrorKind::InvalidArgument, "objective needs perceptual, identity and estimator backends");
    if (perturbed.size() != kExprInputDims) throw Error(ErrorKind::ShapeMismatch, "perturbed jaw/expression needs 53 values");
    const auto& gen = *bundle.manifold->backend;

    // I' at the frame's own parameters, I^e with perturbed (jaw, expression).
    const auto fwd = bundle.forward(params);
    const auto expr_e = bundle.expr.forward(perturbed);
    const LatentCode w_e = compose(fwd.w_rot, expr_e.residual);
    const Image recon = gen.synthesize(fwd.w_final);
    const Image pert = gen.synthesize(w_e);
    require_same_dims(recon, frame);

    FaceParams est;
    try {
        est = ctx.estimator->estimate(pert);
    } catch (const Error& e) {
        throw Error(e.kind(), std::string("estimator failed for the expression/pose terms: ") + e.what());
    }
    const auto est_je = est.jaw_expression();
    const RegionMask mask = region_mask(params, frame.height, frame.width, ctx.layout);

    ObjectiveResult r;
    auto& t = r.terms;
    t.lpips = ctx.perceptual->distance(recon, frame);
    t.l2 = mean_squared_error(recon, frame);
    t.id = identity_distance(*ctx.identity, recon, frame);
    t.pose = loss_pose_consistency(est.neck, params.neck);
    t.expr = loss_expression_match(est_je, perturbed);
    t.cons = loss_rgb_consistency(pert, recon, mask);
    t.local = loss_local(fwd.expr.residual);
    r.total = t.weighted(weights);
    if (!want_grad) return r;

    Image g_recon(recon.height, recon.width);
    Image g_pert(pert.height, pert.width);
    if (weights.lpips != 0.0) ctx.perceptual->distance_vjp(recon, frame, weights.lpips, g_recon);
    if (weights.l2 != 0.0) mean_squared_error_vjp(recon, frame, weights.l2, g_recon);
    if (weights.id != 0.0) identity_distance_vjp(*ctx.identity, recon, frame, weights.id, g_recon);
    if (weights.cons != 0.0) {
        masked_mean_squared_error_vjp(pert, recon, mask.mask, weights.cons, g_pert);
        masked_mean_squared_error_vjp(recon, pert, mask.mask, weights.cons, g_recon);
    }
    if (weights.pose != 0.0 || weights.expr != 0.0) {
        std::array<double, kFaceParamDims> gp{};
        for (int i = 0; i < 3; ++i) gp[2 + i] = weights.pose * 2.0 * (est.neck[i] - params.neck[i]);
        for (int i = 0; i < kExprInputDims; ++i)
            gp[5 + i] = weights.expr * 2.0 * (est_je[static_cast<std::size_t>(i)] - perturbed[static_cast<std::size_t>(i)]);
        ctx.estimator->estimate_vjp(pert, gp, g_pert);
    }

    LatentCode gw_recon = gen.zero_latent();
    LatentCode gw_pert = gen.zero_latent();
    gen.synthesize_vjp(fwd.w_final, g_recon, &gw_recon, nullptr);
    gen.synthesize_vjp(w_e, g_pert, &gw_pert, nullptr);

    // w_rot feeds both renders.
    const LatentCode gw_rot = gw_recon + gw_pert;
    const auto& pivots = bundle.manifold->pivots.latents;
    std::vector<double> g_alpha(pivots.size());
    for (std::size_t i = 0; i < pivots.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < gw_rot.values.size(); ++j) s += gw_rot.values[j] * pivots[i].values[j];
        g_alpha[i] = s;
    }
    r.grad.assign(bundle.param_count(), 0.0);
    const std::size_t np = bundle.pose.net().param_count();
    bundle.pose.backward(fwd.pose, bundle.manifold->beta, g_alpha, std::span<double>(r.grad).first(np));

    LatentCode g_delta = gw_recon;
    if (weights.local != 0.0) g_delta.add_scaled(fwd.expr.residual, 2.0 * weights.local);
    const auto ge = std::span<double>(r.grad).subspan(np);
    bundle.expr.backward(fwd.expr, g_delta, ge);
    bundle.expr.backward(expr_e, gw_pert, ge);
    return r;
}

namespace {

void save_checkpoint_bundle(const TrainConfig& cfg, const MapperBundle& b, int step) {
    if (cfg.checkpoint_dir.empty()) return;
    const auto dir = cfg.checkpoint_dir / ("step_" + std::to_string(step));
    save_bundle(dir, b);
    std::ofstream(cfg.checkpoint_dir / "latest") << dir.filename().string() << "\n";
}

}  // namespace

TrainResult train(MapperBundle bundle, const std::vector<Image>& frames, const std::vector<FaceParams>& params,
                  const TrainConfig& cfg, const LossWeights& weights, const PerturbationConfig& pcfg,
                  const ObjectiveContext& ctx, const JobControl& job) {
    if (cfg.steps < 0 || cfg.learning_rate <= 0.0 || cfg.batch_size < 1)
        throw Error(ErrorKind::InvalidArgument, "invalid training configuration");
    if (frames.size() != params.size() || frames.empty())
        throw Error(ErrorKind::ShapeMismatch, "training needs one parameter set per frame");
    TrainResult res;
    res.bundle = std::move(bundle);
    if (cfg.steps == 0) return res;

    std::mt19937_64 rng(cfg.seed);
    std::mt19937_64 noise(pcfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
    std::vector<double> theta = res.bundle.get_params();
    std::vector<double> checkpoint = theta;
    Adam adam(theta.size(), AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon});
    res.history.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 1; step <= cfg.steps; ++step) {
        job.check();
        std::vector<double> grad(theta.size(), 0.0);
        TrainStep rec;
        rec.step = step;
        const double inv = 1.0 / cfg.batch_size;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = pick(rng);
            const auto pert = perturb_params(params[i].jaw_expression(), pcfg.sigma, noise);
            const auto o = total_objective(res.bundle, frames[i], params[i], pert, weights, ctx, true);
            rec.total += inv * o.total;
            rec.terms += o.terms.scaled(inv);
            for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += inv * o.grad[j];
        }
        bool finite = std::isfinite(rec.total);
        for (double g : grad) finite = finite && std::isfinite(g);
        if (!finite) {
            res.bundle.set_params(checkpoint);
            res.diverged = true;
            res.message = "loss diverged at step " + std::to_string(step) + "; restored checkpoint from step " +
                          std::to_string(res.checkpoint_step);
            return res;
        }
        res.history.push_back(rec);
        adam.step(theta, grad);
        res.bundle.set_params(theta);
        res.completed_steps = step;
        if (cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps)) {
            checkpoint = theta;
            res.checkpoint_step = step;
            save_checkpoint_bundle(cfg, res.bundle, step);
        }
        job.report(static_cast<double>(step) / cfg.steps, rec.total);
    }
    return res;
}

void write_history(std::ostream& os, const std::vector<TrainStep>& history) {
    char buf[32];
    auto f = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
        return std::string(buf);
    };
    for (const auto& h : history) {
        const auto& t = h.terms;
        os << h.step << ' ' << f(h.total) << ' ' << f(t.lpips) << ' ' << f(t.l2) << ' ' << f(t.id) << ' ' << f(t.pose)
           << ' ' << f(t.expr) << ' ' << f(t.cons) << ' ' << f(t.local) << '\n';
    }
}

std::vector<TrainStep> read_history(std::istream& is) {
    std::vector<TrainStep> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        TrainStep s;
        std::array<float, 8> v{};
        if (!(ls >> s.step)) throw Error(ErrorKind::Format, "malformed loss history line: " + line);
        for (auto& x : v)
            if (!(ls >> x)) throw Error(ErrorKind::Format, "malformed loss history line: " + line);
        auto& t = s.terms;
        s.total = v[0];
        t.lpips = v[1], t.l2 = v[2], t.id = v[3], t.pose = v[4], t.expr = v[5], t.cons = v[6], t.local = v[7];
        out.push_back(s);
    }
    return out;
}

double window_mean(const std::vector<TrainStep>& history, std::size_t begin, std::size_t end) {
    end = std::min(end, history.size());
    if (begin >= end) throw Error(ErrorKind::InvalidArgument, "empty history window");
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += history[i].total;
    return s / static_cast<double>(end - begin);
}

Image perturbation_debug_grid(const MapperBundle& bundle, const Image& frame, const FaceParams& params,
                              std::span<const double> perturbed, const FaceLayout& layout) {
    const auto& gen = *bundle.manifold->backend;
    const auto fwd = bundle.forward(params);
    const Image recon = gen.synthesize(fwd.w_final);
    const Image pert = gen.synthesize(compose(fwd.w_rot, bundle.expr.forward(perturbed).residual));
    const RegionMask mask = region_mask(params, frame.height, frame.width, &layout);
    const int h = frame.height, w = frame.width;
    Image grid(h, 4 * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                grid.at(y, x, c) = frame.at(y, x, c);
                grid.at(y, w + x, c) = recon.at(y, x, c);
                grid.at(y, 2 * w + x, c) = pert.at(y, x, c);
                grid.at(y, 3 * w + x, c) = mask.at(y, x);
            }
    return grid;
}

}  // namespace pvp
