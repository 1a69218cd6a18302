#pragma once

// Mapper training: loss terms, the combined objective with its gradient
// with respect to the mapper weights, and the optimization loop.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include "pvp/faceparams.hpp"
#include "pvp/job.hpp"
#include "pvp/mappers.hpp"
#include "pvp/optim.hpp"
#include "pvp/perceptual.hpp"

namespace pvp {

struct LossWeights {
    double lpips = 10.0;
    double l2 = 10.0;
    double id = 0.5;
    double pose = 0.1;
    double expr = 0.1;
    double cons = 1.0;
    double local = 0.5;
};

// Unweighted term values, in the order they are logged.
struct LossTerms {
    double lpips = 0.0;
    double l2 = 0.0;
    double id = 0.0;
    double pose = 0.0;
    double expr = 0.0;
    double cons = 0.0;
    double local = 0.0;

    double weighted(const LossWeights& w) const;
    LossTerms& operator+=(const LossTerms& o);
    LossTerms scaled(double s) const;
};

struct PerturbationConfig {
    double sigma = 0.5;
    std::uint64_t seed = 17;
};

// (jaw, expression) + independent N(0, sigma) noise per entry.
std::array<double, kExprInputDims> perturb_params(std::span<const double> jaw_expression, double sigma, std::mt19937_64& rng);

double loss_expression_match(std::span<const double> estimated, std::span<const double> target);  // 53-vectors
double loss_pose_consistency(std::span<const double> neck_estimated, std::span<const double> neck);  // 3-vectors
double loss_rgb_consistency(const Image& perturbed, const Image& reconstructed, const RegionMask& mask);
double loss_local(const LatentResidual& residual);

// Pluggable pieces the objective needs beyond the bundle.
struct ObjectiveContext {
    const PerceptualMetric* perceptual = nullptr;
    const IdentityEmbedder* identity = nullptr;
    const FaceParamEstimator* estimator = nullptr;
    const FaceLayout* layout = nullptr;
};

struct ObjectiveResult {
    double total = 0.0;
    LossTerms terms;
    std::vector<double> grad;  // d total / d [theta_r | theta_e], empty unless requested
};

// Loss for one frame. perturbed holds (jaw', expression') for the perturbed render.
ObjectiveResult total_objective(const MapperBundle& bundle, const Image& frame, const FaceParams& params,
                                std::span<const double> perturbed, const LossWeights& weights,
                                const ObjectiveContext& ctx, bool want_grad);

struct TrainConfig {
    int steps = 50000;
    double learning_rate = 5e-4;
    int batch_size = 4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int checkpoint_every = 500;
    std::filesystem::path checkpoint_dir;  // empty: in-memory checkpoints only
    std::uint64_t seed = 5;
};

struct TrainStep {
    int step = 0;
    double total = 0.0;
    LossTerms terms;
};

struct TrainResult {
    MapperBundle bundle;
    std::vector<TrainStep> history;
    int completed_steps = 0;
    int checkpoint_step = 0;
    bool diverged = false;
    std::string message;
};

TrainResult train(MapperBundle bundle, const std::vector<Image>& frames, const std::vector<FaceParams>& params,
                  const TrainConfig& cfg, const LossWeights& weights, const PerturbationConfig& pcfg,
                  const ObjectiveContext& ctx, const JobControl& job = {});

// Line per step: step, total, then the seven terms, float32-precision decimals.
void write_history(std::ostream& os, const std::vector<TrainStep>& history);
std::vector<TrainStep> read_history(std::istream& is);

// Mean of totals over [begin, end) steps of the history (clamped).
double window_mean(const std::vector<TrainStep>& history, std::size_t begin, std::size_t end);

// Side-by-side grid: frame I, reconstruction I', perturbed render I^e, mask m.
Image perturbation_debug_grid(const MapperBundle& bundle, const Image& frame, const FaceParams& params,
                              std::span<const double> perturbed, const FaceLayout& layout);

}  // namespace pvp
