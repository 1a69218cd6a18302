#include "pvp/service/store.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <random>

#include "json.hpp"
#include "pvp/binio.hpp"

namespace pvp::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kRecordVersion = 1;
constexpr std::uint16_t kFrameStackVersion = 1;

int order(AvatarState s) {
    switch (s) {
        case AvatarState::Ingesting: return 0;
        case AvatarState::SelectingPivots: return 1;
        case AvatarState::Personalizing: return 2;
        case AvatarState::TrainingMappers: return 3;
        case AvatarState::Ready: return 4;
        case AvatarState::Failed: return -1;
    }
    return -1;
}

}  // namespace

bool transition_allowed(AvatarState from, AvatarState to) {
    if (from == AvatarState::Failed) return false;
    if (to == AvatarState::Failed) return true;
    return order(to) == order(from) + 1;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::string new_avatar_id() {
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}() ^
                               static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count())};
    std::lock_guard lk(mu);
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
}

std::string AvatarRecord::to_json() const {
    json t = json::array();
    for (const auto& tr : transitions) t.push_back({{"state", pvp::to_string(tr.state)}, {"at", tr.at}});
    json j = {{"format", "pvp-avatar"},
              {"version", kRecordVersion},
              {"id", id},
              {"state", pvp::to_string(state)},
              {"created", created},
              {"updated", updated},
              {"source", source.empty() ? json::object() : json::parse(source)},
              {"frames", frames},
              {"height", height},
              {"width", width},
              {"message", message},
              {"warnings", warnings},
              {"transitions", t},
              {"manifold", manifold_path},
              {"bundle", bundle_path}};
    return j.dump(2);
}

AvatarRecord AvatarRecord::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Format, std::string("avatar record: ") + e.what());
    }
    if (j.value("format", "") != "pvp-avatar") throw Error(ErrorKind::Format, "not an avatar record");
    if (j.value("version", 0) != kRecordVersion)
        throw Error(ErrorKind::Format, "avatar record version mismatch: expected " + std::to_string(kRecordVersion) +
                                           ", found " + std::to_string(j.value("version", 0)));
    AvatarRecord r;
    try {
        r.id = j.at("id");
        r.state = state_from_string(j.at("state"));
        r.created = j.at("created");
        r.updated = j.at("updated");
        r.source = j.at("source").dump();
        r.frames = j.at("frames");
        r.height = j.at("height");
        r.width = j.at("width");
        r.message = j.value("message", "");
        r.warnings = j.value("warnings", std::vector<std::string>{});
        for (const auto& t : j.at("transitions")) r.transitions.push_back({state_from_string(t.at("state")), t.at("at")});
        r.manifold_path = j.value("manifold", "manifold");
        r.bundle_path = j.value("bundle", "bundle");
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Format, std::string("avatar record: ") + e.what());
    }
    return r;
}

void write_frame_stack(std::ostream& os, const std::vector<Image>& frames) {
    if (frames.empty()) throw Error(ErrorKind::InvalidArgument, "empty frame stack");
    binio::put_magic(os, "PVPI");
    binio::put<std::uint16_t>(os, kFrameStackVersion);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(frames.size()));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(frames[0].height));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(frames[0].width));
    for (const auto& f : frames) {
        require_same_dims(f, frames[0]);
        binio::put_f32(os, f.pixels);
    }
}

std::vector<Image> read_frame_stack(std::istream& is) {
    binio::expect_magic(is, "PVPI");
    const auto v = binio::get<std::uint16_t>(is);
    if (v != kFrameStackVersion)
        throw Error(ErrorKind::Format, "frame stack version mismatch: expected " + std::to_string(kFrameStackVersion) +
                                           ", found " + std::to_string(v));
    const auto n = binio::get<std::uint32_t>(is);
    const auto h = binio::get<std::uint32_t>(is);
    const auto w = binio::get<std::uint32_t>(is);
    if (h == 0 || w == 0 || h > 8192 || w > 8192) throw Error(ErrorKind::Format, "frame stack dims out of range");
    if (n > 1000000) throw Error(ErrorKind::Format, "frame stack count out of range");
    std::vector<Image> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Image img(static_cast<int>(h), static_cast<int>(w));
        img.pixels = binio::get_f32(is, img.size());
        out.push_back(std::move(img));
    }
    return out;
}

void save_frame_stack(const fs::path& path, const std::vector<Image>& frames) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Unavailable, "cannot write " + path.string());
    write_frame_stack(os, frames);
}

std::vector<Image> load_frame_stack(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "frame stack missing: " + path.string());
    return read_frame_stack(is);
}

AvatarStore::AvatarStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::shared_ptr<std::mutex> AvatarStore::lock_for(const std::string& id) const {
    std::lock_guard lk(map_mu_);
    auto& m = locks_[id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
}

void AvatarStore::write_record(const AvatarRecord& rec) const {
    const auto d = dir(rec.id);
    fs::create_directories(d);
    const auto tmp = d / "record.json.tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw Error(ErrorKind::Unavailable, "cannot write record for " + rec.id);
        os << rec.to_json() << "\n";
    }
    fs::rename(tmp, d / "record.json");
}

AvatarRecord AvatarStore::read_record(const std::string& id) const {
    std::ifstream is(dir(id) / "record.json");
    if (!is) throw Error(ErrorKind::NotFound, "avatar not found: " + id);
    std::string text((std::istreambuf_iterator<char>(is)), {});
    return AvatarRecord::from_json(text);
}

AvatarRecord AvatarStore::create(const std::vector<Image>& frames, const std::vector<FaceParams>& params,
                                 const std::string& source_json) {
    if (frames.size() < 2) throw Error(ErrorKind::InvalidArgument, "frames: at least 2 frames required");
    if (params.size() != frames.size())
        throw Error(ErrorKind::ShapeMismatch, "params: expected " + std::to_string(frames.size()) + " entries, got " +
                                                  std::to_string(params.size()));
    for (const auto& f : frames)
        if (!f.same_dims(frames[0])) throw Error(ErrorKind::ShapeMismatch, "frames: all frames must share one size");

    AvatarRecord rec;
    rec.id = new_avatar_id();
    while (fs::exists(dir(rec.id))) rec.id = new_avatar_id();
    rec.created = rec.updated = utc_now();
    rec.source = source_json.empty() ? "{}" : source_json;
    rec.frames = static_cast<int>(frames.size());
    rec.height = frames[0].height;
    rec.width = frames[0].width;
    rec.transitions.push_back({AvatarState::Ingesting, rec.created});

    const auto lk = lock_for(rec.id);
    std::lock_guard g(*lk);
    save_frame_stack(dir(rec.id) / "input" / "frames.pvpi", frames);
    save_face_params(dir(rec.id) / "input" / "params.pvpf", params);
    write_record(rec);
    return rec;
}

AvatarRecord AvatarStore::adopt(AvatarRecord rec) {
    const auto lk = lock_for(rec.id);
    std::lock_guard g(*lk);
    write_record(rec);
    return rec;
}

std::optional<AvatarRecord> AvatarStore::find(const std::string& id) const {
    if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos) return std::nullopt;
    if (!fs::exists(dir(id) / "record.json")) return std::nullopt;
    const auto lk = lock_for(id);
    std::lock_guard g(*lk);
    return read_record(id);
}

AvatarRecord AvatarStore::get(const std::string& id) const {
    auto r = find(id);
    if (!r) throw Error(ErrorKind::NotFound, "avatar not found: " + id);
    return *r;
}

std::vector<AvatarRecord> AvatarStore::list() const {
    std::vector<AvatarRecord> out;
    for (const auto& e : fs::directory_iterator(root_)) {
        if (!e.is_directory()) continue;
        if (auto r = find(e.path().filename().string())) out.push_back(std::move(*r));
    }
    std::sort(out.begin(), out.end(), [](const AvatarRecord& a, const AvatarRecord& b) {
        return a.created != b.created ? a.created < b.created : a.id < b.id;
    });
    return out;
}

AvatarRecord AvatarStore::update(const std::string& id, const std::function<void(AvatarRecord&)>& fn) {
    const auto lk = lock_for(id);
    std::lock_guard g(*lk);
    auto rec = read_record(id);
    fn(rec);
    rec.updated = utc_now();
    write_record(rec);
    return rec;
}

AvatarRecord AvatarStore::transition(const std::string& id, AvatarState to, const std::string& message) {
    return update(id, [&](AvatarRecord& r) {
        if (!transition_allowed(r.state, to))
            throw Error(ErrorKind::Conflict, "illegal transition " + pvp::to_string(r.state) + " -> " + pvp::to_string(to));
        r.state = to;
        if (!message.empty() || to == AvatarState::Failed) r.message = message;
        r.transitions.push_back({to, utc_now()});
    });
}

AvatarRecord AvatarStore::reset(const std::string& id) {
    return update(id, [&](AvatarRecord& r) {
        if (r.state != AvatarState::Failed)
            throw Error(ErrorKind::Conflict, "only failed avatars can be reset (state is " + pvp::to_string(r.state) + ")");
        for (const char* sub : {"manifold", "bundle", "checkpoints"}) fs::remove_all(dir(id) / sub);
        fs::remove(dir(id) / "history.txt");
        r.state = AvatarState::Ingesting;
        r.message.clear();
        r.warnings.clear();
        r.transitions.push_back({AvatarState::Ingesting, utc_now()});
    });
}

void AvatarStore::remove(const std::string& id) {
    if (!find(id)) throw Error(ErrorKind::NotFound, "avatar not found: " + id);
    const auto lk = lock_for(id);
    std::lock_guard g(*lk);
    fs::remove_all(dir(id));
}

std::vector<Image> AvatarStore::load_frames(const std::string& id) const {
    return load_frame_stack(dir(id) / "input" / "frames.pvpi");
}

std::vector<FaceParams> AvatarStore::load_params(const std::string& id) const {
    return load_face_params(dir(id) / "input" / "params.pvpf");
}

int AvatarStore::recover() {
    int n = 0;
    for (const auto& r : list()) {
        if (r.state == AvatarState::SelectingPivots || r.state == AvatarState::Personalizing ||
            r.state == AvatarState::TrainingMappers) {
            transition(r.id, AvatarState::Failed, "interrupted by service restart");
            ++n;
        }
    }
    return n;
}

}  // namespace pvp::service
