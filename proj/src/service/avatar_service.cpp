#include "pvp/service/avatar_service.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pvp/service/archive.hpp"

namespace pvp::service {

using nlohmann::json;
namespace fs = std::filesystem;

std::string JobProgress::to_json() const {
    return json{{"id", id},
                {"state", pvp::to_string(state)},
                {"active", active},
                {"stage", pvp::to_string(stage)},
                {"fraction", fraction},
                {"step", step},
                {"loss", loss},
                {"message", message}}
        .dump();
}

const EditDirection* LoadedAvatar::direction(const std::string& name) const {
    for (const auto& d : directions)
        if (d.name == name) return &d;
    return nullptr;
}

bool valid_driving_name(const std::string& name) {
    if (name.empty() || name.size() > 64) return false;
    for (char c : name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

AvatarService::AvatarService(ServiceConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.data_dir) {
    recovered_ = store_.recover();
}

AvatarService::~AvatarService() {
    {
        std::lock_guard lk(jobs_mu_);
        for (auto& [id, job] : jobs_) job->cancel = true;
    }
    // Jobs take jobs_mu_ to report progress, so join without holding it.
    for (auto& [id, job] : jobs_)
        if (job->thread.joinable()) job->thread.join();
}

AvatarRecord AvatarService::create(const std::vector<Image>& frames, const std::vector<FaceParams>& params,
                                   const std::string& source_json) {
    if (!frames.empty() && frames[0].height != frames[0].width)
        throw Error(ErrorKind::InvalidArgument, "frames: the toy backend needs square frames");
    if (!frames.empty()) {
        ToyGeneratorSpec gs;
        gs.image_size = frames[0].height;
        ToyGenerator probe(gs);  // rejects sizes the backend cannot represent
    }
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i].finite()) throw Error(ErrorKind::InvalidArgument, "params[" + std::to_string(i) + "]: non-finite value");
    return store_.create(frames, params, source_json);
}

AvatarRecord AvatarService::create_toy(const ToyVideoSpec& spec, int image_size) {
    ToyGeneratorSpec gs;
    gs.image_size = image_size;
    const ToyGenerator base(gs);
    const auto video = make_toy_video(base, spec);
    json src = {{"kind", "toy"},
                {"image_size", image_size},
                {"frames", spec.frames},
                {"seed", spec.seed},
                {"texture_amplitude", spec.texture_amplitude},
                {"expression_amplitude", spec.expression_amplitude},
                {"expression_tail_amplitude", spec.expression_tail_amplitude},
                {"yaw_amplitude", spec.yaw_amplitude},
                {"pitch_amplitude", spec.pitch_amplitude}};
    return create(video.frames, video.params, src.dump());
}

AvatarRecord AvatarService::create_from_upload(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    std::vector<Image> frames;
    std::vector<FaceParams> params;
    try {
        frames = read_frame_stack(is);
    } catch (const Error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("frames: ") + e.what());
    }
    try {
        params = read_face_params(is);
    } catch (const Error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("params: ") + e.what());
    }
    return create(frames, params, json{{"kind", "upload"}, {"bytes", bytes.size()}}.dump());
}

void AvatarService::reap_finished() {
    for (auto it = jobs_.begin(); it != jobs_.end(); ++it)
        if (it->second->done && it->second->thread.joinable()) it->second->thread.join();
}

void AvatarService::start_pipeline(const std::string& id, const std::string& overrides_json) {
    PipelineConfig cfg = cfg_.pipeline;
    apply_overrides(cfg, overrides_json);
    std::lock_guard lk(jobs_mu_);
    reap_finished();
    const auto rec = store_.get(id);
    if (auto it = jobs_.find(id); it != jobs_.end() && !it->second->done)
        throw Error(ErrorKind::Conflict, "a pipeline job is already running for " + id);
    if (rec.state != AvatarState::Ingesting)
        throw Error(ErrorKind::Conflict, "pipeline needs an ingesting avatar; " + id + " is " + pvp::to_string(rec.state));
    auto job = std::make_unique<Job>();
    job->progress.id = id;
    job->progress.active = true;
    Job* raw = job.get();
    jobs_[id] = std::move(job);
    raw->thread = std::thread([this, id, cfg, raw] { run_job(id, cfg, raw); });
}

void AvatarService::run_job(const std::string& id, PipelineConfig cfg, Job* job) {
    auto set_progress = [&](auto&& fn) {
        std::lock_guard lk(jobs_mu_);
        fn(job->progress);
    };
    try {
        const auto rec = store_.get(id);
        const auto frames = store_.load_frames(id);
        const auto params = store_.load_params(id);
        ToyGeneratorSpec gs;
        gs.image_size = rec.height;
        auto base = std::make_shared<ToyGenerator>(gs);

        PipelineHooks hooks;
        hooks.cancel = &job->cancel;
        hooks.on_stage = [&](AvatarState s) {
            if (s == AvatarState::Ready) {
                // ready promises loadable artifacts
                auto m = std::make_shared<PersonalizedManifold>(load_manifold(store_.dir(id) / "manifold"));
                load_bundle(store_.dir(id) / "bundle", m);
            }
            store_.transition(id, s);
            set_progress([&](JobProgress& p) {
                p.stage = s;
                p.fraction = s == AvatarState::Ready ? 1.0 : 0.0;
            });
        };
        hooks.on_progress = [&](const PipelineProgress& pp) {
            set_progress([&](JobProgress& p) {
                p.stage = pp.stage;
                p.fraction = pp.fraction;
                p.step = pp.step;
                p.loss = pp.loss;
            });
        };
        auto out = run_pipeline(frames, *base, base, cfg, store_.dir(id), hooks, &params);
        if (!out.warnings.empty()) store_.update(id, [&](AvatarRecord& r) { r.warnings = out.warnings; });
    } catch (const std::exception& e) {
        const bool cancelled = job->cancel.load() || [&] {
            const auto* err = dynamic_cast<const Error*>(&e);
            return err != nullptr && err->kind() == ErrorKind::Cancelled;
        }();
        std::string msg;
        {
            std::lock_guard lk(jobs_mu_);
            msg = cancelled ? "cancelled" : "stage " + pvp::to_string(job->progress.stage) + ": " + e.what();
        }
        try {
            if (store_.find(id)) store_.transition(id, AvatarState::Failed, msg);
        } catch (const std::exception&) {
            // record vanished or already failed; nothing more to record
        }
        set_progress([&](JobProgress& p) { p.message = msg; });
    }
    set_progress([&](JobProgress& p) { p.active = false; });
    job->done = true;
}

void AvatarService::cancel_pipeline(const std::string& id) {
    store_.get(id);
    std::lock_guard lk(jobs_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end() || it->second->done) throw Error(ErrorKind::Conflict, "no running pipeline job for " + id);
    it->second->cancel = true;
}

void AvatarService::wait(const std::string& id) {
    std::thread* t = nullptr;
    {
        std::lock_guard lk(jobs_mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return;
        t = &it->second->thread;
    }
    // Job entries are only replaced after their thread finished, so the pointer stays valid here.
    while (true) {
        {
            std::lock_guard lk(jobs_mu_);
            if (jobs_.at(id)->done) break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    std::lock_guard lk(jobs_mu_);
    if (t->joinable()) t->join();
}

JobProgress AvatarService::progress(const std::string& id) const {
    const auto rec = store_.get(id);
    JobProgress p;
    {
        std::lock_guard lk(jobs_mu_);
        if (auto it = jobs_.find(id); it != jobs_.end()) p = it->second->progress;
    }
    p.id = id;
    p.state = rec.state;
    if (!p.active) {
        p.stage = rec.state;
        if (rec.state == AvatarState::Ready) p.fraction = 1.0;
        if (!rec.message.empty()) p.message = rec.message;
    }
    return p;
}

AvatarRecord AvatarService::reset(const std::string& id) {
    {
        std::lock_guard lk(jobs_mu_);
        if (auto it = jobs_.find(id); it != jobs_.end() && !it->second->done)
            throw Error(ErrorKind::Conflict, "a pipeline job is still running for " + id);
    }
    invalidate(id);
    return store_.reset(id);
}

void AvatarService::remove(const std::string& id) {
    store_.get(id);
    std::unique_ptr<Job> job;
    {
        std::lock_guard lk(jobs_mu_);
        if (auto it = jobs_.find(id); it != jobs_.end()) {
            it->second->cancel = true;
            job = std::move(it->second);
            jobs_.erase(it);
        }
    }
    if (job && job->thread.joinable()) job->thread.join();
    invalidate(id);
    store_.remove(id);
}

void AvatarService::invalidate(const std::string& id) {
    {
        std::lock_guard lk(cache_mu_);
        cache_.erase(id);
    }
    std::lock_guard lk(driving_mu_);
    for (auto it = driving_cache_.begin(); it != driving_cache_.end();)
        it = it->first.rfind(id + "/", 0) == 0 ? driving_cache_.erase(it) : std::next(it);
}

std::shared_ptr<const LoadedAvatar> AvatarService::open(const std::string& id) {
    {
        std::lock_guard lk(cache_mu_);
        if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    }
    const auto rec = store_.get(id);
    if (rec.state != AvatarState::Ready)
        throw Error(ErrorKind::Conflict, "avatar " + id + " is " + pvp::to_string(rec.state) + ", not ready");
    auto a = std::make_shared<LoadedAvatar>();
    a->id = id;
    const auto dir = store_.dir(id);
    auto m = std::make_shared<PersonalizedManifold>(load_manifold(dir / rec.manifold_path));
    a->manifold = m;
    a->bundle = load_bundle(dir / rec.bundle_path, m);
    const auto& prof = m->backend->profile();
    if (fs::exists(dir / "directions.pvpd")) a->directions = load_directions(dir / "directions.pvpd", prof.layers, prof.dims);
    std::lock_guard lk(cache_mu_);
    return cache_.try_emplace(id, std::move(a)).first->second;
}

std::vector<EditDirection> AvatarService::directions(const std::string& id) const {
    const auto rec = store_.get(id);
    const auto p = store_.dir(id) / "directions.pvpd";
    if (!fs::exists(p)) return {};
    std::ifstream is(p, std::ios::binary);
    return read_directions(is);
}

void AvatarService::set_directions(const std::string& id, const std::string& pvpd_bytes) {
    const auto a = open(id);
    std::istringstream is(pvpd_bytes, std::ios::binary);
    std::vector<EditDirection> dirs;
    try {
        const auto& prof = a->manifold->backend->profile();
        dirs = validate_directions(read_directions(is), prof.layers, prof.dims);
    } catch (const Error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("directions: ") + e.what());
    }
    const auto lk = store_.lock_for(id);
    {
        std::lock_guard g(*lk);
        const auto tmp = store_.dir(id) / "directions.pvpd.tmp";
        save_directions(tmp, dirs);
        fs::rename(tmp, store_.dir(id) / "directions.pvpd");
    }
    invalidate(id);
}

void AvatarService::save_driving(const std::string& id, const std::string& name, const std::string& pvpf_bytes) {
    store_.get(id);
    if (!valid_driving_name(name)) throw Error(ErrorKind::InvalidArgument, "driving name must match [A-Za-z0-9_-]{1,64}");
    std::istringstream is(pvpf_bytes, std::ios::binary);
    std::vector<FaceParams> params;
    try {
        params = read_face_params(is);
    } catch (const Error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("driving: ") + e.what());
    }
    if (params.empty()) throw Error(ErrorKind::InvalidArgument, "driving: empty sequence");
    const auto lk = store_.lock_for(id);
    {
        std::lock_guard g(*lk);
        fs::create_directories(store_.dir(id) / "driving");
        save_face_params(store_.dir(id) / "driving" / (name + ".pvpf"), params);
    }
    invalidate(id);
}

std::vector<FaceParams> AvatarService::driving(const std::string& id, const std::string& name) const {
    if (!valid_driving_name(name)) throw Error(ErrorKind::InvalidArgument, "driving name must match [A-Za-z0-9_-]{1,64}");
    const auto p = store_.dir(id) / "driving" / (name + ".pvpf");
    if (!fs::exists(p)) throw Error(ErrorKind::NotFound, "driving file not found: " + name);
    return load_face_params(p);
}

Image AvatarService::render(const LoadedAvatar& avatar, const ControlState& state) {
    FaceParams p = state.params;
    if (state.playback) {
        const auto& pb = *state.playback;
        const std::string key = avatar.id + "/" + pb.driving + "/" + (pb.renormalize ? "1" : "0");
        std::shared_ptr<const std::vector<FaceParams>> fed;
        {
            std::lock_guard lk(driving_mu_);
            if (auto it = driving_cache_.find(key); it != driving_cache_.end()) fed = it->second;
        }
        if (!fed) {
            const auto seq = DrivingSequence::from_params(driving(avatar.id, pb.driving));
            fed = std::make_shared<const std::vector<FaceParams>>(
                reenactment_params(avatar.bundle, seq, ReenactConfig{pb.renormalize, pb.renormalize}));
            std::lock_guard lk(driving_mu_);
            driving_cache_[key] = fed;
        }
        if (pb.frame >= static_cast<int>(fed->size()))
            throw Error(ErrorKind::InvalidArgument, "playback.frame: " + std::to_string(pb.frame) + " past the end of " +
                                                        pb.driving + " (" + std::to_string(fed->size()) + " frames)");
        p = (*fed)[static_cast<std::size_t>(pb.frame)];
    }
    LatentCode w = avatar.bundle.latent(p);
    for (const auto& e : state.edits) {
        const auto* d = avatar.direction(e.name);
        if (d == nullptr) throw Error(ErrorKind::InvalidArgument, "edits: unknown direction " + e.name);
        w = apply_edit(w, *d, e.strength);
    }
    return avatar.manifold->backend->synthesize(w);
}

std::string AvatarService::export_archive(const std::string& id) {
    const auto rec = store_.get(id);
    if (rec.state != AvatarState::Ready)
        throw Error(ErrorKind::Conflict, "only ready avatars can be exported; " + id + " is " + pvp::to_string(rec.state));
    const auto lk = store_.lock_for(id);
    std::lock_guard g(*lk);
    return write_archive(collect_archive(store_.dir(id), rec.to_json()));
}

AvatarRecord AvatarService::import_archive(const std::string& bytes) {
    const auto a = read_archive(bytes);
    const auto src = AvatarRecord::from_json(a.record_json);
    bool has_manifold = false, has_bundle = false;
    for (const auto& e : a.entries) {
        has_manifold |= e.path.rfind("manifold/", 0) == 0;
        has_bundle |= e.path.rfind("bundle/", 0) == 0;
    }
    if (!has_manifold || !has_bundle) throw Error(ErrorKind::Format, "archive lacks manifold/ or bundle/");

    AvatarRecord rec;
    rec.id = new_avatar_id();
    while (fs::exists(store_.dir(rec.id))) rec.id = new_avatar_id();
    const auto staging = store_.root() / (".import-" + rec.id);
    fs::remove_all(staging);
    try {
        extract_archive(a, staging);
        // Loading validates every inner magic and version before the avatar becomes visible.
        auto m = std::make_shared<PersonalizedManifold>(load_manifold(staging / "manifold"));
        load_bundle(staging / "bundle", m);
        if (fs::exists(staging / "directions.pvpd"))
            load_directions(staging / "directions.pvpd", m->backend->profile().layers, m->backend->profile().dims);
    } catch (...) {
        fs::remove_all(staging);
        throw;
    }
    rec.state = AvatarState::Ready;
    rec.created = rec.updated = utc_now();
    json s = {{"kind", "import"}, {"imported_from", src.id}, {"source", json::parse(src.source.empty() ? "{}" : src.source)}};
    rec.source = s.dump();
    rec.frames = src.frames;
    rec.height = src.height;
    rec.width = src.width;
    rec.warnings = src.warnings;
    rec.transitions.push_back({AvatarState::Ready, rec.created});
    fs::rename(staging, store_.dir(rec.id));
    return store_.adopt(rec);
}

}  // namespace pvp::service
