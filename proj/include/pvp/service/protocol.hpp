#pragma once

// Wire formats of the render stream.
//
// Text (client -> server), one JSON object per message:
//   {"seq": n, "yaw": deg, "pitch": deg, "jaw": [3], "expr": [50],
//    "edits": [{"name": s, "strength": x}, ...]}
// or in playback mode, with the pose/expression taken from an uploaded
// driving file:
//   {"seq": n, "playback": {"driving": name, "frame": k, "renormalize": true}, "edits": [...]}
// Missing pose/expression fields are zero. seq must strictly increase per session.
//
// Binary (server -> client): seq u64, h u32, w u32, then zlib-compressed RGB8 (h*w*3 bytes).
// Text (server -> client) is only used for errors: {"error": msg, "seq": n|null}.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pvp/animation.hpp"

namespace pvp::service {

struct EditStrength {
    std::string name;
    double strength = 0.0;
    friend bool operator==(const EditStrength&, const EditStrength&) = default;
};

struct Playback {
    std::string driving;
    int frame = 0;
    bool renormalize = true;
    friend bool operator==(const Playback&, const Playback&) = default;
};

struct ControlState {
    std::uint64_t seq = 0;
    FaceParams params;  // yaw, pitch, jaw, expression; neck unused
    std::vector<EditStrength> edits;
    std::optional<Playback> playback;
    friend bool operator==(const ControlState&, const ControlState&) = default;
};

// Throws InvalidArgument naming the offending field.
ControlState parse_control_state(std::string_view text);
std::string control_state_to_json(const ControlState& s);

std::string error_message_json(const std::string& message, std::optional<std::uint64_t> seq);

struct FrameMessage {
    std::uint64_t seq = 0;
    int height = 0;
    int width = 0;
    std::vector<unsigned char> rgb;  // decompressed
};

// lossy drops the low 3 bits of every channel before compression.
std::string encode_frame(std::uint64_t seq, const Image& img, bool lossy = false, int zlib_level = 6);
FrameMessage decode_frame(std::string_view bytes);

std::string zlib_compress(std::string_view data, int level = 6);
std::string zlib_decompress(std::string_view data, std::size_t expected_size);

}  // namespace pvp::service
