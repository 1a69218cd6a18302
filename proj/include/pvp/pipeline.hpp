#pragma once

// Avatar build pipeline: estimate + smooth parameters, select pivots, invert
// them, tune the generator around them, then train the mappers.

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pvp/mappers.hpp"
#include "pvp/personalization.hpp"
#include "pvp/toy_generator.hpp"
#include "pvp/training.hpp"

namespace pvp {

enum class AvatarState { Ingesting, SelectingPivots, Personalizing, TrainingMappers, Ready, Failed };
std::string to_string(AvatarState s);
AvatarState state_from_string(const std::string& s);

struct PipelineConfig {
    int k = 24;
    std::uint64_t pivot_seed = 3;
    bool smooth = true;
    SmoothingConfig smoothing;
    ToyInverterConfig inverter;
    PTIConfig pti;
    TrainConfig train;
    LossWeights weights;
    PerturbationConfig perturbation;
    MapperConfig mapper;

    PipelineConfig() { train.steps = 2000; }
};

// Overrides from a JSON object (unknown keys are rejected).
void apply_overrides(PipelineConfig& cfg, const std::string& json_text);
std::string config_to_json(const PipelineConfig& cfg);

struct PipelineProgress {
    AvatarState stage = AvatarState::Ingesting;
    double fraction = 0.0;
    int step = 0;
    double loss = 0.0;
};

struct PipelineHooks {
    std::function<void(AvatarState)> on_stage;
    std::function<void(const PipelineProgress&)> on_progress;
    const std::atomic<bool>* cancel = nullptr;
};

struct PipelineOutput {
    std::shared_ptr<PersonalizedManifold> manifold;
    MapperBundle bundle;
    std::vector<TrainStep> history;
    std::vector<FaceParams> params;  // smoothed estimates used for training
    std::vector<std::string> warnings;
    std::uint64_t generator_checksum = 0;  // tuned generator, taken right before mapper training
};

// Writes manifold/, bundle/, history.txt and checkpoints/ under out_dir.
// tracked, when given, replaces the estimator's per-frame parameters.
PipelineOutput run_pipeline(const std::vector<Image>& frames, const GeneratorBackend& base,
                            const std::shared_ptr<const ToyGenerator>& inversion_backend, const PipelineConfig& cfg,
                            const std::filesystem::path& out_dir, const PipelineHooks& hooks = {},
                            const std::vector<FaceParams>* tracked = nullptr);

}  // namespace pvp
