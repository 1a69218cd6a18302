#pragma once

// Image-quality metrics, dataset split protocols and evaluation reports.

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pvp/image.hpp"
#include "pvp/perceptual.hpp"

namespace pvp {

// 10 log10(1 / MSE); identical images give +infinity.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);

// Gaussian-windowed SSIM (11x11, sigma 1.5, valid region, C1 = 0.01^2, C2 = 0.03^2), channel mean.
double ssim(const Image& a, const Image& b);

// Alpha mask, one weight in [0,1] per pixel.
struct AlphaMask {
    int height = 0;
    int width = 0;
    std::vector<double> alpha;
    static AlphaMask full(int h, int w) { return {h, w, std::vector<double>(static_cast<std::size_t>(h) * w, 1.0)}; }
};

struct MaskedMetrics {
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
};

// PSNR from the mask-weighted MSE; SSIM over the mask's bounding box; perceptual on masked images (black outside).
MaskedMetrics masked_metrics(const Image& a, const Image& b, const AlphaMask& mask, const PerceptualMetric& metric);

enum class SplitProtocol { Nha, Nbs, Custom };
std::string to_string(SplitProtocol p);
SplitProtocol protocol_from_string(const std::string& s);

struct IndexRange {
    int begin = 0;  // inclusive
    int end = 0;    // exclusive
    int size() const { return end - begin; }
};

struct SplitSpec {
    SplitProtocol protocol = SplitProtocol::Nha;
    IndexRange train;  // custom only
    IndexRange eval;   // custom only
};

struct Split {
    std::vector<int> train;
    std::vector<int> eval;
};

Split split_dataset(int n_frames, const SplitSpec& spec);

struct FrameMetrics {
    int frame = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
    std::optional<MaskedMetrics> masked;
};

struct EvalReport {
    std::string protocol;
    std::string perceptual_name = "perceptual-proxy";
    std::string resampler = "bilinear";
    std::string masked_ssim_region = "mask bounding box";
    int train_frames = 0;
    std::vector<FrameMetrics> frames;

    FrameMetrics aggregate() const;  // arithmetic means (frame = count)
    std::string to_text() const;
    std::string to_key_values() const;
};

EvalReport evaluate_frames(const std::vector<Image>& predictions, const std::vector<Image>& ground_truth,
                           const std::vector<int>& frame_ids, const std::vector<AlphaMask>* masks,
                           const PerceptualMetric& metric);

// Reads sorted *.ppm frames (and optional *.pgm masks), applies the split, resizes predictions
// bilinearly to the ground-truth size when they differ. The prediction directory may hold either the
// full sequence or only the evaluation frames.
EvalReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                const SplitSpec& spec, const std::optional<std::filesystem::path>& mask_dir,
                                const PerceptualMetric& metric);

Image resize_bilinear(const Image& img, int height, int width);

// Binary netpbm: P6 (RGB, maxval 255) and P5 (gray).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);
AlphaMask read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const AlphaMask& mask);
std::vector<unsigned char> to_rgb8(const Image& img);
Image from_rgb8(const std::vector<unsigned char>& rgb, int height, int width);

}  // namespace pvp
