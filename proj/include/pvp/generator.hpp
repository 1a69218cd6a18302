#pragma once

// Generator and inverter capability interfaces. Concrete backends (the toy
// generator here; external full-profile adapters elsewhere) are registered
// by kind and instantiated from checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvp/image.hpp"
#include "pvp/latent.hpp"

namespace pvp {

struct GeneratorProfile {
    int layers = 0;
    int dims = 0;
    int height = 0;
    int width = 0;
    int geometry_layers = 0;  // leading layers that carry geometry (8 of 18 on the full profile)

    friend bool operator==(const GeneratorProfile&, const GeneratorProfile&) = default;
};

class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;

    virtual std::string kind() const = 0;
    virtual const GeneratorProfile& profile() const = 0;
    virtual bool differentiable() const = 0;

    virtual Image synthesize(const LatentCode& w) const = 0;

    // Accumulates dL/dw into grad_latent and dL/dtheta into grad_params
    // (either may be null) given dL/dImage.
    virtual void synthesize_vjp(const LatentCode& w, const Image& grad_image, LatentCode* grad_latent,
                                std::vector<double>* grad_params) const = 0;

    virtual std::span<const double> parameters() const = 0;
    virtual std::span<double> mutable_parameters() = 0;

    virtual std::unique_ptr<GeneratorBackend> clone() const = 0;

    // Native prior over latents (the locality regularizer samples from it).
    virtual LatentCode sample_prior(std::mt19937_64& rng) const = 0;

    LatentCode zero_latent() const { return LatentCode(profile().layers, profile().dims); }
    void require_profile(const LatentCode& w) const;
};

std::unique_ptr<GeneratorBackend> clone_backend(const GeneratorBackend& backend);

// FNV-1a over the raw parameter bytes; used to prove a generator stayed frozen.
std::uint64_t parameter_checksum(const GeneratorBackend& backend);

// "PVPG" checkpoint: {magic, version u16, kind, L, D, H, W, G (u16), param_count u64} + float32 params.
void save_checkpoint(const std::filesystem::path& path, const GeneratorBackend& backend);
std::unique_ptr<GeneratorBackend> load_checkpoint(const std::filesystem::path& path);

using BackendFactory = std::function<std::unique_ptr<GeneratorBackend>(const GeneratorProfile&)>;
// Adapters for external generators register here; the toy backend is built in.
void register_backend(const std::string& kind, BackendFactory factory);

struct InversionResult {
    LatentCode latent;
    Status status = Status::Ok;
    double rmse = 0.0;
    int refine_steps = 0;
    std::string message;
};

class Inverter {
public:
    virtual ~Inverter() = default;
    virtual InversionResult invert(const Image& image) const = 0;
};

}  // namespace pvp
