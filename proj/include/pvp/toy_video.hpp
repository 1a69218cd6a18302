#pragma once

// Synthetic subject video for the toy profile: smooth pose/expression
// trajectories rendered by a subject generator whose texture residual no
// latent of the base generator can reproduce.

#include <cstdint>
#include <memory>
#include <vector>

#include "pvp/toy_generator.hpp"

namespace pvp {

struct ToyVideoSpec {
    int frames = 600;
    double texture_amplitude = 4.0;
    // leading ten expression coefficients, then the tail
    double expression_amplitude = 0.4;
    double expression_tail_amplitude = 0.12;
    double yaw_amplitude = 50.0;
    double pitch_amplitude = 15.0;
    std::uint64_t seed = 2024;
};

struct ToyVideo {
    std::vector<Image> frames;
    std::vector<FaceParams> params;  // ground truth
    std::shared_ptr<ToyGenerator> subject;
};

// Ground-truth parameter trajectory of frame t.
FaceParams toy_trajectory(const ToyVideoSpec& spec, int t);

ToyVideo make_toy_video(const ToyGenerator& base, const ToyVideoSpec& spec);

}  // namespace pvp
