#include "pvp/pipeline.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace pvp {

using nlohmann::json;

std::string to_string(AvatarState s) {
    switch (s) {
        case AvatarState::Ingesting: return "ingesting";
        case AvatarState::SelectingPivots: return "selecting_pivots";
        case AvatarState::Personalizing: return "personalizing";
        case AvatarState::TrainingMappers: return "training_mappers";
        case AvatarState::Ready: return "ready";
        case AvatarState::Failed: return "failed";
    }
    return "?";
}

AvatarState state_from_string(const std::string& s) {
    for (auto st : {AvatarState::Ingesting, AvatarState::SelectingPivots, AvatarState::Personalizing,
                    AvatarState::TrainingMappers, AvatarState::Ready, AvatarState::Failed})
        if (to_string(st) == s) return st;
    throw Error(ErrorKind::Format, "unknown avatar state: " + s);
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& out, std::set<std::string>& used) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
        used.insert(key);
    }
}

}  // namespace

void apply_overrides(PipelineConfig& cfg, const std::string& json_text) {
    if (json_text.empty()) return;
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("config overrides are not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "config overrides must be a JSON object");
    std::set<std::string> used;
    try {
        take(j, "k", cfg.k, used);
        take(j, "pivot_seed", cfg.pivot_seed, used);
        take(j, "smooth", cfg.smooth, used);
        take(j, "smoothing_sigma", cfg.smoothing.kernel_sigma_frames, used);
        take(j, "smoothing_radius", cfg.smoothing.window_radius_frames, used);
        take(j, "inverter_max_refine_steps", cfg.inverter.max_refine_steps, used);
        take(j, "inverter_refine_geometry", cfg.inverter.refine_geometry, used);
        take(j, "pti_threshold", cfg.pti.lpips_threshold, used);
        take(j, "pti_max_steps", cfg.pti.max_steps, used);
        take(j, "pti_lambda_l2", cfg.pti.lambda_l2, used);
        take(j, "pti_lambda_r", cfg.pti.lambda_r, used);
        take(j, "pti_step_size", cfg.pti.step_size, used);
        take(j, "pti_pivots_per_step", cfg.pti.pivots_per_step, used);
        take(j, "pti_locality_samples", cfg.pti.locality_samples_per_step, used);
        take(j, "pti_seed", cfg.pti.seed, used);
        take(j, "beta", cfg.pti.beta, used);
        if (j.contains("pti_budget")) {
            cfg.pti.budget = budget_from_string(j.at("pti_budget").get<std::string>());
            used.insert("pti_budget");
        }
        take(j, "train_steps", cfg.train.steps, used);
        take(j, "learning_rate", cfg.train.learning_rate, used);
        take(j, "batch_size", cfg.train.batch_size, used);
        take(j, "checkpoint_every", cfg.train.checkpoint_every, used);
        take(j, "train_seed", cfg.train.seed, used);
        take(j, "sigma", cfg.perturbation.sigma, used);
        take(j, "perturbation_seed", cfg.perturbation.seed, used);
        take(j, "raw_scale", cfg.mapper.raw_scale, used);
        take(j, "hidden", cfg.mapper.hidden, used);
        take(j, "mapper_seed", cfg.mapper.seed, used);
        take(j, "lambda_lpips", cfg.weights.lpips, used);
        take(j, "lambda_l2", cfg.weights.l2, used);
        take(j, "lambda_id", cfg.weights.id, used);
        take(j, "lambda_pose", cfg.weights.pose, used);
        take(j, "lambda_expr", cfg.weights.expr, used);
        take(j, "lambda_cons", cfg.weights.cons, used);
        take(j, "lambda_local", cfg.weights.local, used);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("config override has the wrong type: ") + e.what());
    }
    for (const auto& [key, value] : j.items())
        if (!used.count(key)) throw Error(ErrorKind::InvalidArgument, "unknown config override: " + key);
}

std::string config_to_json(const PipelineConfig& c) {
    json j = {{"k", c.k},
              {"pivot_seed", c.pivot_seed},
              {"smooth", c.smooth},
              {"smoothing_sigma", c.smoothing.kernel_sigma_frames},
              {"smoothing_radius", c.smoothing.window_radius_frames},
              {"inverter_max_refine_steps", c.inverter.max_refine_steps},
              {"inverter_refine_geometry", c.inverter.refine_geometry},
              {"pti_threshold", c.pti.lpips_threshold},
              {"pti_max_steps", c.pti.max_steps},
              {"pti_lambda_l2", c.pti.lambda_l2},
              {"pti_lambda_r", c.pti.lambda_r},
              {"pti_step_size", c.pti.step_size},
              {"pti_pivots_per_step", c.pti.pivots_per_step},
              {"pti_locality_samples", c.pti.locality_samples_per_step},
              {"pti_seed", c.pti.seed},
              {"pti_budget", to_string(c.pti.budget)},
              {"beta", c.pti.beta},
              {"train_steps", c.train.steps},
              {"learning_rate", c.train.learning_rate},
              {"batch_size", c.train.batch_size},
              {"checkpoint_every", c.train.checkpoint_every},
              {"train_seed", c.train.seed},
              {"sigma", c.perturbation.sigma},
              {"perturbation_seed", c.perturbation.seed},
              {"raw_scale", c.mapper.raw_scale},
              {"hidden", c.mapper.hidden},
              {"mapper_seed", c.mapper.seed},
              {"lambda_lpips", c.weights.lpips},
              {"lambda_l2", c.weights.l2},
              {"lambda_id", c.weights.id},
              {"lambda_pose", c.weights.pose},
              {"lambda_expr", c.weights.expr},
              {"lambda_cons", c.weights.cons},
              {"lambda_local", c.weights.local}};
    return j.dump();
}

PipelineOutput run_pipeline(const std::vector<Image>& frames, const GeneratorBackend& base,
                            const std::shared_ptr<const ToyGenerator>& inversion_backend, const PipelineConfig& cfg,
                            const std::filesystem::path& out_dir, const PipelineHooks& hooks,
                            const std::vector<FaceParams>* tracked) {
    if (frames.size() < 2) throw Error(ErrorKind::InvalidArgument, "pipeline needs at least 2 frames");
    PipelineOutput out;
    auto stage = [&](AvatarState s) {
        if (hooks.on_stage) hooks.on_stage(s);
    };
    auto progress = [&](AvatarState s, double f, int step, double loss) {
        if (hooks.on_progress) hooks.on_progress({s, f, step, loss});
    };
    JobControl job;
    job.cancel = hooks.cancel;

    // Parameters of every frame, temporally smoothed.
    const ToyEstimator estimator(base.profile().height);
    std::vector<FaceParams> params;
    if (tracked != nullptr) {
        if (tracked->size() != frames.size()) throw Error(ErrorKind::ShapeMismatch, "one parameter set per frame required");
        params = *tracked;
    } else {
        params.reserve(frames.size());
        for (const auto& f : frames) params.push_back(estimator.estimate(f));
    }
    if (cfg.smooth) params = smooth_face_params(params, cfg.smoothing);
    out.params = params;

    stage(AvatarState::SelectingPivots);
    job.check();
    const auto sel = select_pivots(params, cfg.k, cfg.pivot_seed);
    if (sel.status == Status::Warning) out.warnings.push_back(sel.message);
    if (sel.indices.size() < 2) throw Error(ErrorKind::InvalidArgument, "fewer than 2 distinct pivots");

    stage(AvatarState::Personalizing);
    const ToyInverter inverter(inversion_backend, cfg.inverter);
    PivotSet pivots;
    std::vector<Image> pivot_images;
    for (std::size_t i = 0; i < sel.indices.size(); ++i) {
        job.check();
        const int idx = sel.indices[i];
        const auto inv = inverter.invert(frames[static_cast<std::size_t>(idx)]);
        pivots.frame_indices.push_back(idx);
        pivots.latents.push_back(inv.latent);
        pivots.params.push_back(params[static_cast<std::size_t>(idx)]);
        pivot_images.push_back(frames[static_cast<std::size_t>(idx)]);
        progress(AvatarState::Personalizing, 0.1 * static_cast<double>(i + 1) / sel.indices.size(), 0, inv.rmse);
    }
    const PyramidPerceptual perceptual;
    JobControl pti_job = job;
    int pti_step = 0;
    pti_job.on_progress = [&](double f, double loss) { progress(AvatarState::Personalizing, 0.1 + 0.9 * f, ++pti_step, loss); };
    auto manifold = std::make_shared<PersonalizedManifold>(personalize(base, pivots, pivot_images, cfg.pti, perceptual, pti_job));
    if (manifold->report.status == Status::Warning) out.warnings.push_back(manifold->report.message);
    save_manifold(out_dir / "manifold", *manifold);
    out.manifold = manifold;

    stage(AvatarState::TrainingMappers);
    MapperConfig mcfg = cfg.mapper;
    mcfg.input_noise = cfg.perturbation.sigma;
    MapperBundle bundle = make_bundle(manifold, params, mcfg);
    bundle.manifold_path = "../manifold";
    const PooledSketchIdentity identity;
    const toy::ToyFaceLayout layout;
    ObjectiveContext ctx{&perceptual, &identity, &estimator, &layout};
    TrainConfig tcfg = cfg.train;
    tcfg.checkpoint_dir = out_dir / "checkpoints";
    std::filesystem::create_directories(tcfg.checkpoint_dir);
    JobControl train_job = job;
    int step = 0;
    train_job.on_progress = [&](double f, double loss) { progress(AvatarState::TrainingMappers, f, ++step, loss); };
    out.generator_checksum = parameter_checksum(*manifold->backend);
    auto res = train(std::move(bundle), frames, params, tcfg, cfg.weights, cfg.perturbation, ctx, train_job);
    {
        std::ofstream hs(out_dir / "history.txt");
        write_history(hs, res.history);
    }
    if (res.diverged) throw Error(ErrorKind::Numeric, res.message);
    json prov = {{"steps", res.completed_steps},
                 {"config", json::parse(config_to_json(cfg))},
                 {"pti_steps", manifold->report.steps},
                 {"pti_converged", manifold->report.converged},
                 {"renormalization_default", true},
                 {"generator_checksum", out.generator_checksum}};
    res.bundle.provenance = prov.dump();
    save_bundle(out_dir / "bundle", res.bundle);
    out.bundle = std::move(res.bundle);
    out.history = std::move(res.history);
    stage(AvatarState::Ready);
    return out;
}

}  // namespace pvp
