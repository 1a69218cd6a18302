#pragma once

// On-disk avatar store. Layout under the root data directory:
//   <id>/record.json          service record (state, transitions, timestamps)
//   <id>/input/frames.pvpi    float32 frame stack
//   <id>/input/params.pvpf    per-frame face parameters
//   <id>/manifold/ <id>/bundle/ <id>/checkpoints/ <id>/history.txt   pipeline outputs
//   <id>/directions.pvpd      edit directions (optional)
//   <id>/driving/<name>.pvpf  uploaded driving sequences (optional)

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pvp/faceparams.hpp"
#include "pvp/image.hpp"
#include "pvp/pipeline.hpp"

namespace pvp::service {

struct Transition {
    AvatarState state = AvatarState::Ingesting;
    std::string at;  // ISO 8601 UTC
};

struct AvatarRecord {
    std::string id;
    AvatarState state = AvatarState::Ingesting;
    std::string created;
    std::string updated;
    std::string source;  // JSON text describing where the frames came from
    int frames = 0;
    int height = 0;
    int width = 0;
    std::string message;  // diagnostic for failed, warnings otherwise
    std::vector<std::string> warnings;
    std::vector<Transition> transitions;
    std::string manifold_path = "manifold";
    std::string bundle_path = "bundle";

    std::string to_json() const;
    static AvatarRecord from_json(const std::string& text);
};

// Forward-only pipeline order; failed is reachable from anything except itself.
bool transition_allowed(AvatarState from, AvatarState to);

std::string utc_now();
std::string new_avatar_id();

// "PVPI": {magic, version u16, count u32, H u32, W u32} + float32 H*W*3 per frame.
void write_frame_stack(std::ostream& os, const std::vector<Image>& frames);
std::vector<Image> read_frame_stack(std::istream& is);
void save_frame_stack(const std::filesystem::path& path, const std::vector<Image>& frames);
std::vector<Image> load_frame_stack(const std::filesystem::path& path);

class AvatarStore {
public:
    explicit AvatarStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path dir(const std::string& id) const { return root_ / id; }

    // Validates the payload; frames need equal dims, at least 2 of them and one parameter set each.
    AvatarRecord create(const std::vector<Image>& frames, const std::vector<FaceParams>& params,
                        const std::string& source_json);
    // Registers an already populated directory (used by import); the record is written as given.
    AvatarRecord adopt(AvatarRecord rec);

    std::optional<AvatarRecord> find(const std::string& id) const;
    AvatarRecord get(const std::string& id) const;  // NotFound if missing
    std::vector<AvatarRecord> list() const;         // sorted by creation time, then id

    AvatarRecord transition(const std::string& id, AvatarState to, const std::string& message = "");
    // failed -> ingesting; clears pipeline outputs but keeps the input.
    AvatarRecord reset(const std::string& id);
    AvatarRecord update(const std::string& id, const std::function<void(AvatarRecord&)>& fn);
    void remove(const std::string& id);

    std::vector<Image> load_frames(const std::string& id) const;
    std::vector<FaceParams> load_params(const std::string& id) const;

    // Records left mid-pipeline by a previous process are marked failed.
    int recover();

    // Serializes mutations on one avatar.
    std::shared_ptr<std::mutex> lock_for(const std::string& id) const;

private:
    void write_record(const AvatarRecord& rec) const;
    AvatarRecord read_record(const std::string& id) const;

    std::filesystem::path root_;
    mutable std::mutex map_mu_;
    mutable std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

}  // namespace pvp::service
