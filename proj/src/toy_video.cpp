#include "pvp/toy_video.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace pvp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Wave {
    double amplitude, period, phase, offset;
    double at(int t) const { return offset + amplitude * std::sin(kTwoPi * t / period + phase); }
};

// Per-coordinate waves, fixed by the spec seed.
std::vector<Wave> trajectory_waves(const ToyVideoSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> phase(0.0, kTwoPi);
    std::uniform_real_distribution<double> period(60.0, 180.0);
    std::vector<Wave> w(kFaceParamDims);
    w[0] = {spec.yaw_amplitude, 200.0, 0.0, 0.0};
    w[1] = {spec.pitch_amplitude, 150.0, 0.7, 0.0};
    for (int k = 2; k < 5; ++k) w[static_cast<std::size_t>(k)] = {0.02, period(rng), phase(rng), 0.0};
    w[5] = {0.15, 70.0, phase(rng), 0.15};
    for (int k = 6; k < 8; ++k) w[static_cast<std::size_t>(k)] = {0.03, period(rng), phase(rng), 0.0};
    for (int k = 8; k < kFaceParamDims; ++k) {
        const double amp = k < 18 ? spec.expression_amplitude : spec.expression_tail_amplitude;
        w[static_cast<std::size_t>(k)] = {amp, period(rng), phase(rng), 0.0};
    }
    return w;
}

}  // namespace

FaceParams toy_trajectory(const ToyVideoSpec& spec, int t) {
    const auto waves = trajectory_waves(spec);
    std::array<double, kFaceParamDims> p{};
    for (int k = 0; k < kFaceParamDims; ++k) p[k] = waves[static_cast<std::size_t>(k)].at(t);
    return FaceParams::from_array(p);
}

ToyVideo make_toy_video(const ToyGenerator& base, const ToyVideoSpec& spec) {
    if (spec.frames < 2) throw Error(ErrorKind::InvalidArgument, "toy video needs at least 2 frames");
    ToyVideo v;
    v.subject = std::make_shared<ToyGenerator>(base);
    const auto& prof = base.profile();
    auto tex = v.subject->texture();
    for (int y = 0; y < prof.height - 1; ++y)
        for (int x = 0; x < prof.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double u = (x + 0.5) / prof.width, r = (y + 1.5) / prof.height;
                const double pattern = std::sin(kTwoPi * (4.0 * u + 0.25 * c)) * std::cos(kTwoPi * (3.2 * r - 0.15 * c));
                tex[(static_cast<std::size_t>(y) * prof.width + x) * 3 + c] = spec.texture_amplitude * pattern;
            }

    std::mt19937_64 rng(spec.seed ^ 0x5bd1e995ULL);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> appearance(static_cast<std::size_t>(base.appearance_width()));
    for (auto& a : appearance) a = n(rng);

    const auto waves = trajectory_waves(spec);
    for (int t = 0; t < spec.frames; ++t) {
        std::array<double, kFaceParamDims> p{};
        for (int k = 0; k < kFaceParamDims; ++k) p[k] = waves[static_cast<std::size_t>(k)].at(t);
        const auto geo = base.geometry_preimage(p);
        LatentCode w = base.zero_latent();
        std::copy(geo.begin(), geo.end(), w.values.begin());
        std::copy(appearance.begin(), appearance.end(), w.values.begin() + static_cast<std::ptrdiff_t>(geo.size()));
        v.frames.push_back(v.subject->synthesize(w));
        v.params.push_back(FaceParams::from_array(p));
    }
    return v;
}

}  // namespace pvp
