#pragma once

// Pivot selection, multi-image pivotal tuning and the dilated pivot manifold.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pvp/faceparams.hpp"
#include "pvp/generator.hpp"
#include "pvp/job.hpp"
#include "pvp/perceptual.hpp"

namespace pvp {

struct PivotSet {
    std::vector<int> frame_indices;
    std::vector<LatentCode> latents;
    std::vector<FaceParams> params;

    int size() const { return static_cast<int>(latents.size()); }
    // Unique indices within [0, frame_count), matching lengths, K >= 2.
    void validate(int frame_count, const GeneratorProfile& profile) const;
};

struct KMeansConfig {
    int max_iterations = 300;
    double tolerance = 1e-6;  // max centroid shift
    bool parallel = true;
};

struct KMeansResult {
    Eigen::MatrixXd centroids;
    std::vector<int> labels;
    int iterations = 0;
};

// k-means++ seeding then Lloyd iterations. Fewer than k centroids come back
// when the data has fewer than k distinct rows.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng, const KMeansConfig& cfg = {});

struct PivotSelection {
    std::vector<int> indices;
    Status status = Status::Ok;
    std::string message;
};

PivotSelection select_pivots(const std::vector<FaceParams>& video_params, int k, std::uint64_t seed,
                             const KMeansConfig& cfg = {});

enum class PTIBudget { Global, PerPivot };

struct PTIConfig {
    double lpips_threshold = 0.03;
    int max_steps = 350;
    double lambda_l2 = 1.0;
    double lambda_r = 0.1;
    int locality_samples_per_step = 2;
    double locality_interp_range = 1.0;
    double step_size = 0.02;
    int pivots_per_step = 4;
    PTIBudget budget = PTIBudget::Global;
    double beta = 0.02;
    std::uint64_t seed = 7;
};

std::string to_string(PTIBudget b);
PTIBudget budget_from_string(const std::string& s);

struct PTIReport {
    int steps = 0;
    bool converged = false;  // threshold met (as opposed to budget exhausted)
    double initial_perceptual = 0.0;
    double final_perceptual = 0.0;
    std::vector<double> pivot_perceptual;  // per pivot, after tuning
    Status status = Status::Ok;
    std::string message;
};

struct PersonalizedManifold {
    PivotSet pivots;
    double beta = 0.02;
    std::shared_ptr<GeneratorBackend> backend;  // tuned generator
    PTIConfig config;
    PTIReport report;

    int size() const { return pivots.size(); }
    // sum_i alpha_i w_i
    LatentCode blend(const std::vector<double>& alpha) const;
};

// Mean over the pivots of the perceptual distance of the reconstruction.
double pivot_perceptual(const GeneratorBackend& backend, const PivotSet& pivots, const std::vector<Image>& images,
                        const PerceptualMetric& metric, std::vector<double>* per_pivot = nullptr);

// Mean over samples of L2 + perceptual distance between the original and tuned
// synthesis at prior latents pulled toward random pivots. grad_theta (if given)
// accumulates the gradient with respect to the tuned parameters.
double locality_regularizer(const GeneratorBackend& original, const GeneratorBackend& tuned, const PivotSet& pivots,
                            const PTIConfig& cfg, const PerceptualMetric& metric, std::mt19937_64& rng,
                            std::vector<double>* grad_theta = nullptr);

// Tunes a clone of the backend around the pivots. The input backend is never mutated.
PersonalizedManifold personalize(const GeneratorBackend& backend, const PivotSet& pivots,
                                 const std::vector<Image>& pivot_images, const PTIConfig& cfg,
                                 const PerceptualMetric& metric, const JobControl& job = {});

struct CoverageConfig {
    int bins = 36;
    double yaw_min = -90.0, yaw_max = 90.0;
    double pitch_min = -90.0, pitch_max = 90.0;
    bool one_hot = false;  // sample pivot vertices only
};

struct PoseCoverage {
    CoverageConfig config;
    std::vector<std::vector<int>> counts;  // [pitch bin][yaw bin]
    std::vector<std::array<double, 2>> samples;  // (yaw, pitch) per manifold sample
    std::vector<std::array<double, 2>> video;    // (yaw, pitch) per input frame
};

// Uniformly random weights on the dilated simplex: alpha = (1 + K beta) d - beta, d ~ Dirichlet(1).
std::vector<double> sample_dilated_simplex(int k, double beta, std::mt19937_64& rng);

PoseCoverage pose_coverage_report(const PersonalizedManifold& manifold, const FaceParamEstimator& estimator,
                                  int n_samples, std::uint64_t seed, const std::vector<FaceParams>& video_params = {},
                                  const CoverageConfig& cfg = {});
std::string coverage_to_json(const PoseCoverage& c);

// Directory layout: manifest.json, pivots.pvpw, generator.pvpg, pivot_params.pvpf.
void save_manifold(const std::filesystem::path& dir, const PersonalizedManifold& m);
PersonalizedManifold load_manifold(const std::filesystem::path& dir);

}  // namespace pvp
