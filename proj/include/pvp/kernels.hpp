#pragma once

// Data-parallel inner loops. Each kernel has a serial reference and an
// OpenMP version; reductions are accumulated per row (or per point) and
// summed serially in a fixed order so both paths agree bit-for-bit.

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pvp/toy_layout.hpp"

namespace pvp::kernels {

inline constexpr int kColorSlots = 9;  // background, skin, feature (RGB each)

struct SketchInputs {
    int height = 0;  // full image height; the sketch covers rows 1..height-1
    int width = 0;
    std::array<double, toy::kGeometrySlots> geometry{};  // yaw_deg, pitch_deg, jaw0, brow_l, brow_r, mouth_w, eye_open
    std::array<double, kColorSlots> colors{};
    std::span<const double> texture;  // (height-1)*width*3 texture logits, or empty
};

struct SketchGrad {
    std::array<double, toy::kGeometrySlots> geometry{};
    std::array<double, kColorSlots> colors{};
};

// sketch: (height-1)*width*3 output values.
void render_sketch_serial(const SketchInputs& in, std::span<double> sketch);
void render_sketch_parallel(const SketchInputs& in, std::span<double> sketch);

// grad_texture (may be empty) receives dL/dtexture; returns geometry/color gradients.
SketchGrad sketch_vjp_serial(const SketchInputs& in, std::span<const double> grad_sketch, std::span<double> grad_texture);
SketchGrad sketch_vjp_parallel(const SketchInputs& in, std::span<const double> grad_sketch, std::span<double> grad_texture);

// Mean SSIM of one channel of two interleaved RGB buffers, 11x11 Gaussian
// window (sigma 1.5), valid region only, dynamic range 1.
double ssim_channel_serial(std::span<const double> a, std::span<const double> b, int height, int width, int channel);
double ssim_channel_parallel(std::span<const double> a, std::span<const double> b, int height, int width, int channel);

// Nearest-centroid assignment (squared Euclidean; ties go to the lower index).
void assign_nearest_serial(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::vector<int>& labels,
                           std::vector<double>& dist2);
void assign_nearest_parallel(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::vector<int>& labels,
                             std::vector<double>& dist2);

int max_threads();

}  // namespace pvp::kernels
