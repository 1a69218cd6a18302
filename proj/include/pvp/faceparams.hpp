#pragma once

// Face-parameter types, the estimator capability, temporal smoothing,
// clustering features and eye/mouth region masks.
//
// Units: yaw/pitch in degrees, neck/jaw axis-angle in radians, expression
// coefficients dimensionless. Flattened order everywhere (files, the toy
// parameter band, feature vectors) is
//   [yaw, pitch, neck0..2, jaw0..2, expr0..49]  (58 values).

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pvp/image.hpp"

namespace pvp {

inline constexpr int kExpressionDims = 50;
inline constexpr int kFaceParamDims = 58;
inline constexpr int kExprInputDims = 53;  // jaw(3) + expression(50)
inline constexpr int kClusterFeatureDims = 52;

struct FaceParams {
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
    std::array<double, 3> neck{};
    std::array<double, 3> jaw{};
    std::array<double, kExpressionDims> expression{};

    std::array<double, kFaceParamDims> to_array() const;
    static FaceParams from_array(std::span<const double> v);
    // (jaw, expression) as the 53-vector fed to the expression mapper.
    std::array<double, kExprInputDims> jaw_expression() const;
    void set_jaw_expression(std::span<const double> v);
    bool finite() const;

    friend bool operator==(const FaceParams&, const FaceParams&) = default;
};

double deg_to_rad(double deg);
double rad_to_deg(double rad);

class FaceParamEstimator {
public:
    virtual ~FaceParamEstimator() = default;
    virtual FaceParams estimate(const Image& image) const = 0;
    virtual bool differentiable() const = 0;
    // Vector-Jacobian product: given dLoss/dParams (58, flattened order),
    // accumulate dLoss/dPixels into grad_image. Only for differentiable estimators.
    virtual void estimate_vjp(const Image& image, std::span<const double> grad_params, Image& grad_image) const;
};

struct SmoothingConfig {
    double kernel_sigma_frames = 2.0;
    int window_radius_frames = 6;
};

// Gaussian smoothing of a frame x channel series. Endpoint windows are
// truncated and renormalized.
std::vector<std::vector<double>> smooth_trajectories(const std::vector<std::vector<double>>& series,
                                                     const SmoothingConfig& cfg);
std::vector<FaceParams> smooth_face_params(const std::vector<FaceParams>& params, const SmoothingConfig& cfg);

// Row i = [yaw_i, pitch_i, expr_i(0..49)].
Eigen::MatrixXd stack_features(const std::vector<FaceParams>& params);
// Inverse of stack_features on (yaw, pitch, expression); neck/jaw are zero.
std::vector<FaceParams> unstack_features(const Eigen::MatrixXd& features);

struct Standardized {
    Eigen::MatrixXd values;
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;  // population std
    std::vector<bool> degenerate;
};

// Per-column z-score. Columns with std < 1e-12 are centered only and flagged.
Standardized standardize(const Eigen::MatrixXd& features);

struct PixelRect {
    int x0, y0, x1, y1;  // inclusive-exclusive: [x0, x1) x [y0, y1)
};

struct LabeledRegion {
    std::string label;
    std::vector<std::array<double, 2>> polygon;  // (x, y) vertices in pixel coordinates
};

// Source of eye/mouth regions for a face. The toy backend publishes exact
// rectangles; landmark-driven backends publish polygons.
class FaceLayout {
public:
    virtual ~FaceLayout() = default;
    virtual std::vector<LabeledRegion> excluded_regions(const FaceParams& params, int height, int width) const = 0;
};

// Rasterizes caller-supplied landmark polygons (external estimators).
class PolygonLayout : public FaceLayout {
public:
    explicit PolygonLayout(std::vector<LabeledRegion> regions) : regions_(std::move(regions)) {}
    std::vector<LabeledRegion> excluded_regions(const FaceParams&, int, int) const override { return regions_; }

private:
    std::vector<LabeledRegion> regions_;
};

struct RegionMask {
    int height = 0;
    int width = 0;
    std::vector<unsigned char> mask;  // 1 keep, 0 excluded
    std::vector<std::string> excluded_regions;

    unsigned char at(int y, int x) const { return mask[static_cast<std::size_t>(y) * width + x]; }
    // Multiplies every channel of the image by the mask.
    Image apply(const Image& image) const;
};

// layout == nullptr raises "mask source unavailable".
RegionMask region_mask(const FaceParams& params, int height, int width, const FaceLayout* layout);

// Versioned columnar face-parameter file ("PVPF").
void save_face_params(const std::filesystem::path& path, const std::vector<FaceParams>& params);
std::vector<FaceParams> load_face_params(const std::filesystem::path& path);
void write_face_params(std::ostream& os, const std::vector<FaceParams>& params);
std::vector<FaceParams> read_face_params(std::istream& is);

// Per-dimension population mean/std of a set of vectors.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    bool empty() const { return mean.empty(); }
};
NormStats compute_stats(const std::vector<std::vector<double>>& rows);
NormStats jaw_expression_stats(const std::vector<FaceParams>& params);
NormStats pose_stats(const std::vector<FaceParams>& params);  // (pitch, yaw)

}  // namespace pvp
