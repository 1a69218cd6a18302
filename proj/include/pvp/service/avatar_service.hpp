#pragma once

// Transport-independent service core: avatar lifecycle, pipeline jobs,
// artifact loading, rendering and archive exchange. The HTTP/stream server is
// a thin layer over this class.

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "pvp/service/protocol.hpp"
#include "pvp/service/store.hpp"
#include "pvp/toy_video.hpp"

namespace pvp::service {

struct JobProgress {
    std::string id;
    AvatarState state = AvatarState::Ingesting;
    bool active = false;
    AvatarState stage = AvatarState::Ingesting;
    double fraction = 0.0;
    int step = 0;
    double loss = 0.0;
    std::string message;

    std::string to_json() const;
};

// Everything needed to render a ready avatar; immutable once loaded and
// shared by every session on that avatar.
struct LoadedAvatar {
    std::string id;
    std::shared_ptr<const PersonalizedManifold> manifold;
    MapperBundle bundle;
    std::vector<EditDirection> directions;

    const EditDirection* direction(const std::string& name) const;
};

struct ServiceConfig {
    std::filesystem::path data_dir;
    PipelineConfig pipeline;  // defaults before per-request overrides
};

class AvatarService {
public:
    explicit AvatarService(ServiceConfig cfg);
    ~AvatarService();  // cancels and joins running jobs
    AvatarService(const AvatarService&) = delete;
    AvatarService& operator=(const AvatarService&) = delete;

    AvatarStore& store() { return store_; }
    const ServiceConfig& config() const { return cfg_; }
    int recovered() const { return recovered_; }

    AvatarRecord create(const std::vector<Image>& frames, const std::vector<FaceParams>& params,
                        const std::string& source_json);
    // Renders a synthetic subject and stores its ground-truth parameters as the tracked params.
    AvatarRecord create_toy(const ToyVideoSpec& spec, int image_size = 64);
    // Body: PVPI frame stack immediately followed by a PVPF parameter file.
    AvatarRecord create_from_upload(const std::string& bytes);

    // Starts the pipeline asynchronously. Conflict unless the avatar is ingesting with no job running.
    void start_pipeline(const std::string& id, const std::string& overrides_json);
    // Requests cancellation; the job ends in failed with "cancelled".
    void cancel_pipeline(const std::string& id);
    // Blocks until the job of id (if any) has finished.
    void wait(const std::string& id);
    JobProgress progress(const std::string& id) const;

    AvatarRecord reset(const std::string& id);
    void remove(const std::string& id);

    std::shared_ptr<const LoadedAvatar> open(const std::string& id);  // Conflict unless ready

    std::vector<EditDirection> directions(const std::string& id) const;
    void set_directions(const std::string& id, const std::string& pvpd_bytes);

    void save_driving(const std::string& id, const std::string& name, const std::string& pvpf_bytes);
    std::vector<FaceParams> driving(const std::string& id, const std::string& name) const;

    // Pose/expression either from the state or, in playback mode, from the
    // renormalized driving sequence; then edits, then synthesis.
    Image render(const LoadedAvatar& avatar, const ControlState& state);

    std::string export_archive(const std::string& id);
    AvatarRecord import_archive(const std::string& bytes);

private:
    struct Job {
        std::thread thread;
        std::atomic<bool> cancel{false};
        std::atomic<bool> done{false};
        JobProgress progress;
    };

    void run_job(const std::string& id, PipelineConfig cfg, Job* job);
    void reap_finished();
    void invalidate(const std::string& id);

    ServiceConfig cfg_;
    AvatarStore store_;
    int recovered_ = 0;

    mutable std::mutex jobs_mu_;
    std::map<std::string, std::unique_ptr<Job>> jobs_;

    std::mutex cache_mu_;
    std::map<std::string, std::shared_ptr<const LoadedAvatar>> cache_;

    // Driving sequences renormalized against an avatar, keyed by "<id>/<name>/<renorm>".
    std::mutex driving_mu_;
    std::map<std::string, std::shared_ptr<const std::vector<FaceParams>>> driving_cache_;
};

// Driving-file names: 1-64 characters from [A-Za-z0-9_-].
bool valid_driving_name(const std::string& name);

}  // namespace pvp::service
