#pragma once

// Cross-subject reenactment and latent-direction edits.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pvp/mappers.hpp"

namespace pvp {

struct EditDirection {
    std::string name;
    LatentCode offset;
};

// x' = (x - mean_d) / max(std_d, 1e-6) * std_s + mean_s, per dimension.
std::vector<double> renormalize_driving(std::span<const double> x, const NormStats& driving, const NormStats& source);

struct DrivingSequence {
    std::vector<FaceParams> frames;
    NormStats driving_stats;       // (jaw, expression)
    NormStats driving_pose_stats;  // (pitch, yaw)

    // Stats computed over the full sequence.
    static DrivingSequence from_params(std::vector<FaceParams> frames);
};

struct ReenactConfig {
    bool renormalize_expression = true;
    bool renormalize_pose = true;
};

// Parameters that will actually be fed to the mappers for each driving frame.
std::vector<FaceParams> reenactment_params(const MapperBundle& bundle, const DrivingSequence& driving,
                                           const ReenactConfig& cfg = {});
std::vector<Image> reenact(const MapperBundle& bundle, const DrivingSequence& driving, const ReenactConfig& cfg = {});

LatentCode apply_edit(const LatentCode& w, const EditDirection& edit, double strength);

// "PVPD": {magic, count u32}, then per record {name (u32 length + UTF-8), L u16, D u16, float32 payload}.
void write_directions(std::ostream& os, const std::vector<EditDirection>& dirs);
std::vector<EditDirection> read_directions(std::istream& is);
void save_directions(const std::filesystem::path& path, const std::vector<EditDirection>& dirs);
// Profile check: every record must be layers x dims.
std::vector<EditDirection> load_directions(const std::filesystem::path& path, int layers, int dims);
std::vector<EditDirection> validate_directions(std::vector<EditDirection> dirs, int layers, int dims);

}  // namespace pvp
