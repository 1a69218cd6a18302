#pragma once

// Pose mapper (blend weights over the pivots), expression mapper (residual on
// the geometry layers) and their composition into a final latent.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pvp/faceparams.hpp"
#include "pvp/mlp.hpp"
#include "pvp/personalization.hpp"

namespace pvp {

// v = 1/K + raw; s = softplus(v + beta); alpha = -beta + s (1 + K beta) / sum(s).
std::vector<double> project_raw_to_weights(std::span<const double> raw, double beta);
// dL/draw given dL/dalpha.
std::vector<double> project_raw_to_weights_vjp(std::span<const double> raw, double beta, std::span<const double> grad_alpha);

// Input normalization: (x - mean) / scale.
struct InputNorm {
    std::vector<double> mean;
    std::vector<double> scale;

    std::vector<double> apply(std::span<const double> x) const;
    // From training rows; columns with std < 1e-6 fall back to the given nominal half-ranges.
    static InputNorm fit(const NormStats& stats, std::span<const double> fallback_half_range);
    static InputNorm identity(int dims);
};

// Nominal half-range of each (pitch, yaw) and (jaw, expression) input, used when a column is constant.
std::vector<double> pose_half_range();
std::vector<double> jaw_expression_half_range();

struct MapperConfig {
    int hidden = 128;
    double raw_scale = 4.0;  // tanh output -> raw residual
    std::uint64_t seed = 31;
    // Spread of the training-time perturbation on (jaw, expression); widens
    // the expression input scale so perturbed inputs stay in range.
    double input_noise = 0.5;
};

class PoseMapper {
public:
    PoseMapper() = default;
    PoseMapper(int k, const MapperConfig& cfg);

    struct Output {
        std::vector<double> raw;
        std::vector<double> alpha;
        Mlp::Cache cache;
    };

    Output forward(double pitch_deg, double yaw_deg, double beta) const;
    // grad_params += dL/dtheta_r given dL/dalpha.
    void backward(const Output& out, double beta, std::span<const double> grad_alpha, std::span<double> grad_params) const;

    int k() const { return net_.outputs(); }
    double raw_scale() const { return raw_scale_; }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }
    InputNorm norm = InputNorm::identity(2);

private:
    Mlp net_;
    double raw_scale_ = 4.0;
};

class ExpressionMapper {
public:
    ExpressionMapper() = default;
    ExpressionMapper(const GeneratorProfile& profile, const MapperConfig& cfg);

    struct Output {
        LatentResidual residual;
        std::vector<Mlp::Cache> caches;
    };

    Output forward(std::span<const double> jaw_expression) const;
    // grad_params (flat over the G networks) += dL/dtheta_e given dL/dresidual.
    void backward(const Output& out, const LatentResidual& grad_residual, std::span<double> grad_params) const;

    int geometry_layers() const { return static_cast<int>(nets_.size()); }
    std::size_t param_count() const;
    std::vector<Mlp>& nets() { return nets_; }
    const std::vector<Mlp>& nets() const { return nets_; }
    InputNorm norm = InputNorm::identity(kExprInputDims);

private:
    std::vector<Mlp> nets_;
    int layers_ = 0;
    int dims_ = 0;
};

LatentCode compose(const LatentCode& w_rot, const LatentResidual& delta);

struct MapperBundle {
    PoseMapper pose;
    ExpressionMapper expr;
    NormStats source_stats;       // (jaw, expression) of the training video
    NormStats source_pose_stats;  // (pitch, yaw) of the training video
    MapperConfig config;
    std::shared_ptr<const PersonalizedManifold> manifold;
    std::string manifold_path;
    std::string provenance;  // JSON text

    struct Forward {
        PoseMapper::Output pose;
        ExpressionMapper::Output expr;
        LatentCode w_rot;
        LatentCode w_final;
    };

    Forward forward(const FaceParams& params) const;
    LatentCode latent(const FaceParams& params) const { return forward(params).w_final; }

    // Flat view helpers for optimization: [theta_r | theta_e].
    std::size_t param_count() const;
    std::vector<double> get_params() const;
    void set_params(std::span<const double> flat);
};

// Builds a freshly initialized bundle; input normalization is fitted to the training params.
MapperBundle make_bundle(std::shared_ptr<const PersonalizedManifold> manifold, const std::vector<FaceParams>& training_params,
                         const MapperConfig& cfg = {});

// pose_forward -> expr_forward -> compose -> synthesize on the tuned generator. Neck pose is ignored.
Image render(const MapperBundle& bundle, const FaceParams& params);

// Directory layout: manifest.json, weights.pvpm ("PVPM": tensors with shape headers, float32).
void save_bundle(const std::filesystem::path& dir, const MapperBundle& bundle);
MapperBundle load_bundle(const std::filesystem::path& dir, std::shared_ptr<const PersonalizedManifold> manifold);

}  // namespace pvp
