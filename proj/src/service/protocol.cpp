#include "pvp/service/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <zlib.h>

#include "json.hpp"
#include "pvp/evalkit.hpp"

namespace pvp::service {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& why) {
    throw Error(ErrorKind::InvalidArgument, field + ": " + why);
}

double number(const json& j, const std::string& field) {
    if (!j.is_number()) bad(field, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) bad(field, "must be finite");
    return v;
}

template <std::size_t N>
void fixed_array(const json& j, const char* key, std::array<double, N>& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != N) bad(key, "expected an array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) out[i] = number(a[i], std::string(key) + "[" + std::to_string(i) + "]");
}

}  // namespace

ControlState parse_control_state(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception&) {
        throw Error(ErrorKind::InvalidArgument, "message: not valid JSON");
    }
    if (!j.is_object()) bad("message", "expected a JSON object");
    static const char* known[] = {"seq", "yaw", "pitch", "jaw", "expr", "edits", "playback"};
    for (const auto& [k, v] : j.items())
        if (std::find(std::begin(known), std::end(known), k) == std::end(known)) bad(k, "unknown field");

    ControlState s;
    if (!j.contains("seq")) bad("seq", "required");
    const auto& seq = j.at("seq");
    if (!seq.is_number_integer() || seq.get<long long>() < 0) bad("seq", "expected a non-negative integer");
    s.seq = seq.get<std::uint64_t>();
    if (j.contains("yaw")) s.params.yaw_deg = number(j.at("yaw"), "yaw");
    if (j.contains("pitch")) s.params.pitch_deg = number(j.at("pitch"), "pitch");
    fixed_array(j, "jaw", s.params.jaw);
    fixed_array(j, "expr", s.params.expression);

    if (j.contains("edits")) {
        const auto& e = j.at("edits");
        if (!e.is_array()) bad("edits", "expected an array");
        for (std::size_t i = 0; i < e.size(); ++i) {
            const std::string f = "edits[" + std::to_string(i) + "]";
            if (!e[i].is_object() || !e[i].contains("name") || !e[i].at("name").is_string())
                bad(f, "expected {name, strength}");
            EditStrength es;
            es.name = e[i].at("name").get<std::string>();
            es.strength = e[i].contains("strength") ? number(e[i].at("strength"), f + ".strength") : 0.0;
            s.edits.push_back(std::move(es));
        }
    }
    if (j.contains("playback")) {
        const auto& p = j.at("playback");
        if (!p.is_object() || !p.contains("driving") || !p.at("driving").is_string())
            bad("playback", "expected {driving, frame}");
        Playback pb;
        pb.driving = p.at("driving").get<std::string>();
        if (p.contains("frame")) {
            if (!p.at("frame").is_number_integer() || p.at("frame").get<long long>() < 0)
                bad("playback.frame", "expected a non-negative integer");
            pb.frame = p.at("frame").get<int>();
        }
        if (p.contains("renormalize")) {
            if (!p.at("renormalize").is_boolean()) bad("playback.renormalize", "expected a boolean");
            pb.renormalize = p.at("renormalize").get<bool>();
        }
        s.playback = pb;
    }
    return s;
}

std::string control_state_to_json(const ControlState& s) {
    json j = {{"seq", s.seq},
              {"yaw", s.params.yaw_deg},
              {"pitch", s.params.pitch_deg},
              {"jaw", s.params.jaw},
              {"expr", s.params.expression}};
    json e = json::array();
    for (const auto& x : s.edits) e.push_back({{"name", x.name}, {"strength", x.strength}});
    j["edits"] = e;
    if (s.playback)
        j["playback"] = {{"driving", s.playback->driving}, {"frame", s.playback->frame}, {"renormalize", s.playback->renormalize}};
    return j.dump();
}

std::string error_message_json(const std::string& message, std::optional<std::uint64_t> seq) {
    json j = {{"error", message}};
    j["seq"] = seq ? json(*seq) : json(nullptr);
    return j.dump();
}

std::string zlib_compress(std::string_view data, int level) {
    uLongf cap = compressBound(static_cast<uLong>(data.size()));
    std::string out(cap, '\0');
    const int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &cap, reinterpret_cast<const Bytef*>(data.data()),
                             static_cast<uLong>(data.size()), level);
    if (rc != Z_OK) throw Error(ErrorKind::Internal, "zlib compression failed");
    out.resize(cap);
    return out;
}

std::string zlib_decompress(std::string_view data, std::size_t expected_size) {
    std::string out(expected_size, '\0');
    uLongf len = static_cast<uLongf>(expected_size);
    const int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &len, reinterpret_cast<const Bytef*>(data.data()),
                              static_cast<uLong>(data.size()));
    if (rc != Z_OK || len != expected_size) throw Error(ErrorKind::Format, "frame payload does not decompress to h*w*3 bytes");
    return out;
}

std::string encode_frame(std::uint64_t seq, const Image& img, bool lossy, int zlib_level) {
    auto rgb = to_rgb8(img);
    if (lossy)
        for (auto& b : rgb) b = static_cast<unsigned char>(b & 0xF8);
    const auto z = zlib_compress(std::string_view(reinterpret_cast<const char*>(rgb.data()), rgb.size()), zlib_level);
    std::string out(16, '\0');
    const auto h = static_cast<std::uint32_t>(img.height), w = static_cast<std::uint32_t>(img.width);
    std::memcpy(out.data(), &seq, 8);
    std::memcpy(out.data() + 8, &h, 4);
    std::memcpy(out.data() + 12, &w, 4);
    out += z;
    return out;
}

FrameMessage decode_frame(std::string_view bytes) {
    if (bytes.size() < 16) throw Error(ErrorKind::Format, "frame message shorter than its header");
    FrameMessage f;
    std::uint32_t h = 0, w = 0;
    std::memcpy(&f.seq, bytes.data(), 8);
    std::memcpy(&h, bytes.data() + 8, 4);
    std::memcpy(&w, bytes.data() + 12, 4);
    if (h == 0 || w == 0 || h > 8192 || w > 8192) throw Error(ErrorKind::Format, "frame dims out of range");
    f.height = static_cast<int>(h);
    f.width = static_cast<int>(w);
    const auto raw = zlib_decompress(bytes.substr(16), static_cast<std::size_t>(h) * w * 3);
    f.rgb.assign(raw.begin(), raw.end());
    return f;
}

}  // namespace pvp::service
