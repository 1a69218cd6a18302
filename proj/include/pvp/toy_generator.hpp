#pragma once

// Deterministic, differentiable desk-scale generator.
//
// Image layout: row 0 is a parameter band holding the 58 face parameters
// decoded from the geometry layers (affine map to intensity, slots filled
// channel-interleaved from the left; unused slots sit at 0.5). Rows 1..H-1
// hold a procedural face sketch driven by yaw/pitch/jaw/expression 0..3 and
// by three RGB colors decoded from the appearance layers, modulated by a
// per-pixel texture residual.
//
// Parameters theta (flat):
//   [decode matrix 58 x (G*D) | color matrix 9 x ((L-G)*D) | color bias 9 | texture (H-1) x W x 3]

#include <array>
#include <cstdint>
#include <memory>

#include "pvp/faceparams.hpp"
#include "pvp/generator.hpp"
#include "pvp/kernels.hpp"

namespace pvp {

struct ToyGeneratorSpec {
    int image_size = 64;
    int layers = 6;
    int dims = 32;
    int geometry_layers = 4;
    int param_band_rows = 1;
    std::uint64_t seed = 0x70767001;

    GeneratorProfile profile() const { return {layers, dims, image_size, image_size, geometry_layers}; }
    static ToyGeneratorSpec from_profile(const GeneratorProfile& p);
};

namespace toy {

// Intensity = 0.5 + value / range for each flattened parameter.
double band_range(int param_index);
inline double encode_band(int k, double value) { return 0.5 + value / band_range(k); }
inline double decode_band(int k, double intensity) { return (intensity - 0.5) * band_range(k); }

// Standard deviation of each decoded parameter under the N(0, I) latent prior.
double prior_param_scale(int param_index);

}  // namespace toy

class ToyGenerator final : public GeneratorBackend {
public:
    static constexpr const char* kKind = "toy";

    explicit ToyGenerator(const ToyGeneratorSpec& spec = {});

    std::string kind() const override { return kKind; }
    const GeneratorProfile& profile() const override { return profile_; }
    bool differentiable() const override { return true; }

    Image synthesize(const LatentCode& w) const override;
    void synthesize_vjp(const LatentCode& w, const Image& grad_image, LatentCode* grad_latent,
                        std::vector<double>* grad_params) const override;

    std::span<const double> parameters() const override { return theta_; }
    std::span<double> mutable_parameters() override { return theta_; }
    std::unique_ptr<GeneratorBackend> clone() const override { return std::make_unique<ToyGenerator>(*this); }
    LatentCode sample_prior(std::mt19937_64& rng) const override;

    const ToyGeneratorSpec& spec() const { return spec_; }

    // Face parameters carried by the geometry layers (linear in w).
    std::array<double, kFaceParamDims> decode(const LatentCode& w) const;
    // Color logits carried by the appearance layers (affine in w).
    std::array<double, kernels::kColorSlots> color_logits(const LatentCode& w) const;

    // Renders from already-decoded factors, bypassing the latent.
    Image render_factors(const std::array<double, kFaceParamDims>& params,
                         const std::array<double, kernels::kColorSlots>& logits) const;

    // Minimum-norm latent pieces reproducing given factors (least squares).
    std::vector<double> geometry_preimage(const std::array<double, kFaceParamDims>& params) const;
    std::vector<double> appearance_preimage(const std::array<double, kernels::kColorSlots>& logits) const;

    int geometry_width() const { return profile_.geometry_layers * profile_.dims; }
    int appearance_width() const { return (profile_.layers - profile_.geometry_layers) * profile_.dims; }

    std::span<const double> decode_matrix() const;
    std::span<const double> color_matrix() const;
    std::span<const double> color_bias() const;
    std::span<const double> texture() const;
    std::span<double> texture();

private:
    std::size_t decode_offset() const { return 0; }
    std::size_t color_offset() const;
    std::size_t bias_offset() const;
    std::size_t texture_offset() const;
    std::size_t texture_size() const;
    kernels::SketchInputs sketch_inputs(const std::array<double, kFaceParamDims>& params,
                                        const std::array<double, kernels::kColorSlots>& colors) const;

    ToyGeneratorSpec spec_;
    GeneratorProfile profile_;
    std::vector<double> theta_;
};

// Exact, differentiable reader of the toy parameter band.
class ToyEstimator final : public FaceParamEstimator {
public:
    explicit ToyEstimator(int image_size = 64) : image_size_(image_size) {}
    FaceParams estimate(const Image& image) const override;
    bool differentiable() const override { return true; }
    void estimate_vjp(const Image& image, std::span<const double> grad_params, Image& grad_image) const override;

private:
    int image_size_;
};

struct ToyInverterConfig {
    int max_refine_steps = 200;
    double tolerance_rmse = 1e-3;
    double refine_step_size = 0.01;
    int gauss_newton_iterations = 15;
    // The band fixes the decoded parameters exactly, so by default only the
    // appearance layers are refined; moving geometry would trade band
    // accuracy for sketch fit on images outside the generator's range.
    bool refine_geometry = false;
};

// Least-squares preimage of the decoded parameters and colors, then a short
// gradient refinement on pixel L2.
class ToyInverter final : public Inverter {
public:
    explicit ToyInverter(std::shared_ptr<const ToyGenerator> generator, ToyInverterConfig cfg = {})
        : gen_(std::move(generator)), cfg_(cfg) {}
    InversionResult invert(const Image& image) const override;

private:
    std::shared_ptr<const ToyGenerator> gen_;
    ToyInverterConfig cfg_;
};

}  // namespace pvp
