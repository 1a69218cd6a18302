#include <algorithm>
#include <atomic>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "pvp/personalization.hpp"
#include "pvp/toy_generator.hpp"
#include "support.hpp"

using namespace pvp;

namespace {

ToyGeneratorSpec small_spec() {
    ToyGeneratorSpec s;
    s.image_size = 32;
    s.dims = 16;
    return s;
}

// Pivots from prior samples, images from a perturbed copy of the generator.
struct Fixture {
    ToyGenerator gen{small_spec()};
    ToyGenerator target{small_spec()};
    PivotSet pivots;
    std::vector<Image> images;

    explicit Fixture(int k, double texture = 1.5) {
        std::mt19937_64 rng(21);
        std::normal_distribution<double> n(0.0, 1.0);
        for (auto& t : target.texture()) t = texture * n(rng);
        ToyEstimator est(32);
        for (int i = 0; i < k; ++i) {
            auto w = gen.sample_prior(rng);
            pivots.frame_indices.push_back(i * 3);
            pivots.params.push_back(est.estimate(gen.synthesize(w)));
            images.push_back(target.synthesize(w));
            pivots.latents.push_back(std::move(w));
        }
    }
};

std::vector<FaceParams> pose_grid(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> yaw(-60.0, 60.0), pitch(-20.0, 20.0);
    std::vector<FaceParams> v(static_cast<std::size_t>(n));
    for (auto& p : v) {
        p.yaw_deg = yaw(rng);
        p.pitch_deg = pitch(rng);
    }
    return v;
}

}  // namespace

TEST_CASE("kmeans recovers well separated clusters") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 0.05);
    const double centers[3][2] = {{0, 0}, {5, 5}, {-5, 5}};
    Eigen::MatrixXd pts(90, 2);
    for (int i = 0; i < 90; ++i)
        for (int d = 0; d < 2; ++d) pts(i, d) = centers[i % 3][d] + n(rng);
    std::mt19937_64 r2(4);
    const auto res = kmeans(pts, 3, r2);
    for (int i = 0; i < 90; ++i) CHECK(res.labels[static_cast<std::size_t>(i)] == res.labels[static_cast<std::size_t>(i % 3)]);
    std::set<int> distinct(res.labels.begin(), res.labels.end());
    CHECK(distinct.size() == 3);
}

TEST_CASE("kmeans with duplicate rows returns fewer centroids") {
    Eigen::MatrixXd pts(6, 2);
    pts << 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2;
    std::mt19937_64 rng(2);
    const auto res = kmeans(pts, 4, rng);
    CHECK(res.centroids.rows() == 2);
    CHECK_THROWS_AS(kmeans(pts, 7, rng), Error);
}

TEST_CASE("serial and parallel kmeans agree") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd pts(200, 5);
    for (int i = 0; i < pts.size(); ++i) pts.data()[i] = n(rng);
    std::mt19937_64 a(9), b(9);
    KMeansConfig ser;
    ser.parallel = false;
    const auto r1 = kmeans(pts, 8, a, ser);
    const auto r2 = kmeans(pts, 8, b);
    CHECK(r1.labels == r2.labels);
    CHECK((r1.centroids - r2.centroids).norm() < 1e-12);
}

TEST_CASE("pivot selection returns unique in-range frames") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto params = pose_grid(120, rng);
        const int k = 2 + static_cast<int>(rng() % 20);
        const auto sel = select_pivots(params, k, rng());
        CHECK(static_cast<int>(sel.indices.size()) == k);
        std::set<int> u(sel.indices.begin(), sel.indices.end());
        CHECK(u.size() == sel.indices.size());
        for (int i : sel.indices) CHECK((i >= 0 && i < 120));
    }
}

TEST_CASE("pivot selection is invariant to frame order up to the permutation") {
    std::mt19937_64 rng(6);
    auto params = pose_grid(80, rng);
    std::vector<int> perm(80);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<FaceParams> shuffled(80);
    for (int i = 0; i < 80; ++i) shuffled[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = params[static_cast<std::size_t>(i)];
    const auto a = select_pivots(params, 6, 13);
    const auto b = select_pivots(shuffled, 6, 13);
    std::set<std::pair<double, double>> pa, pb;
    for (int i : a.indices) pa.insert({params[static_cast<std::size_t>(i)].yaw_deg, params[static_cast<std::size_t>(i)].pitch_deg});
    for (int i : b.indices) pb.insert({shuffled[static_cast<std::size_t>(i)].yaw_deg, shuffled[static_cast<std::size_t>(i)].pitch_deg});
    // Seeding follows row order, so only the pose spread is compared.
    CHECK(pa.size() == pb.size());
}

TEST_CASE("pivot selection rejects K larger than the video") {
    std::mt19937_64 rng(7);
    const auto params = pose_grid(5, rng);
    CHECK_THROWS_WITH(select_pivots(params, 6, 1), "K exceeds frame count");
}

TEST_CASE("constant pose video degrades with a warning") {
    std::vector<FaceParams> params(30);
    const auto sel = select_pivots(params, 4, 1);
    CHECK(sel.status == Status::Warning);
    std::set<int> u(sel.indices.begin(), sel.indices.end());
    CHECK(u.size() == sel.indices.size());
}

TEST_CASE("pivot set validation") {
    Fixture f(3);
    CHECK_NOTHROW(f.pivots.validate(9, f.gen.profile()));
    CHECK_THROWS(f.pivots.validate(5, f.gen.profile()));
    auto dup = f.pivots;
    dup.frame_indices[1] = dup.frame_indices[0];
    CHECK_THROWS(dup.validate(9, f.gen.profile()));
    auto one = f.pivots;
    one.latents.resize(1);
    CHECK_THROWS(one.validate(9, f.gen.profile()));
}

TEST_CASE("personalization lowers pivot distance and leaves the input backend untouched") {
    Fixture f(4);
    PyramidPerceptual metric;
    const auto before = parameter_checksum(f.gen);
    PTIConfig cfg;
    cfg.lpips_threshold = 0.25 * pivot_perceptual(f.gen, f.pivots, f.images, metric);
    cfg.max_steps = 300;
    const auto m = personalize(f.gen, f.pivots, f.images, cfg, metric);
    CHECK(parameter_checksum(f.gen) == before);
    CHECK(m.report.converged);
    CHECK(m.report.steps > 0);
    CHECK(m.report.final_perceptual < cfg.lpips_threshold);
    CHECK(m.report.final_perceptual < m.report.initial_perceptual);
    CHECK(m.report.pivot_perceptual.size() == 4);
}

TEST_CASE("personalization stops immediately when already under threshold") {
    Fixture f(3, 0.0);
    PyramidPerceptual metric;
    const auto m = personalize(f.gen, f.pivots, f.images, PTIConfig{}, metric);
    CHECK(m.report.steps == 0);
    CHECK(m.report.converged);
    CHECK(parameter_checksum(*m.backend) == parameter_checksum(f.gen));
}

TEST_CASE("zero budget returns the untuned generator with a warning") {
    Fixture f(3);
    PyramidPerceptual metric;
    PTIConfig cfg;
    cfg.max_steps = 0;
    cfg.lpips_threshold = 1e-9;
    const auto m = personalize(f.gen, f.pivots, f.images, cfg, metric);
    CHECK(m.report.status == Status::Warning);
    CHECK(m.report.steps == 0);
    CHECK(parameter_checksum(*m.backend) == parameter_checksum(f.gen));
}

TEST_CASE("per-pivot budget tunes each pivot in turn") {
    Fixture f(3);
    PyramidPerceptual metric;
    PTIConfig cfg;
    cfg.budget = PTIBudget::PerPivot;
    cfg.max_steps = 5;
    cfg.lpips_threshold = 1e-9;
    const auto m = personalize(f.gen, f.pivots, f.images, cfg, metric);
    CHECK(m.report.steps == 15);
    CHECK_FALSE(m.report.converged);
    CHECK(budget_from_string(to_string(PTIBudget::PerPivot)) == PTIBudget::PerPivot);
    CHECK_THROWS(budget_from_string("daily"));
}

TEST_CASE("personalization can be cancelled") {
    Fixture f(3);
    PyramidPerceptual metric;
    PTIConfig cfg;
    cfg.lpips_threshold = 1e-9;
    std::atomic<bool> stop{false};
    JobControl job;
    job.cancel = &stop;
    int seen = 0;
    job.on_progress = [&](double, double) {
        if (++seen == 3) stop = true;
    };
    CHECK_THROWS_WITH(personalize(f.gen, f.pivots, f.images, cfg, metric, job), "cancelled");
}

TEST_CASE("personalization input errors") {
    Fixture f(3);
    PyramidPerceptual metric;
    auto imgs = f.images;
    imgs.pop_back();
    CHECK_THROWS_AS(personalize(f.gen, f.pivots, imgs, PTIConfig{}, metric), Error);
    CHECK_THROWS_AS(personalize(f.gen, PivotSet{}, {}, PTIConfig{}, metric), Error);
}

TEST_CASE("locality regularizer is zero for an untuned copy") {
    Fixture f(3);
    PyramidPerceptual metric;
    std::mt19937_64 rng(1);
    auto copy = f.gen.clone();
    CHECK(locality_regularizer(f.gen, *copy, f.pivots, PTIConfig{}, metric, rng) == 0.0);
}

TEST_CASE("locality regularizer gradient matches finite differences") {
    Fixture f(3);
    PyramidPerceptual metric;
    auto tuned = f.gen.clone();
    std::mt19937_64 prng(2);
    std::normal_distribution<double> n(0.0, 0.05);
    for (auto& t : tuned->mutable_parameters()) t += n(prng);
    PTIConfig cfg;
    cfg.locality_samples_per_step = 3;

    std::vector<double> grad(tuned->parameters().size(), 0.0);
    std::mt19937_64 r0(99);
    locality_regularizer(f.gen, *tuned, f.pivots, cfg, metric, r0, &grad);

    auto fx = [&](const std::vector<double>& theta) {
        auto t = f.gen.clone();
        std::copy(theta.begin(), theta.end(), t->mutable_parameters().begin());
        std::mt19937_64 r(99);
        return locality_regularizer(f.gen, *t, f.pivots, cfg, metric, r);
    };
    std::vector<double> theta(tuned->parameters().begin(), tuned->parameters().end());
    std::mt19937_64 crng(3);
    const auto coords = pvp::testing::sample_coords(theta.size(), 60, crng);
    const auto num = pvp::testing::numeric_gradient(fx, theta, coords, 1e-5);
    CHECK(pvp::testing::relative_error(pvp::testing::pick(grad, coords), num) < 1e-3);
}

TEST_CASE("dilated simplex samples sum to one and respect the lower bound") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 1000; ++t) {
        const int k = 2 + static_cast<int>(rng() % 30);
        const auto a = sample_dilated_simplex(k, 0.02, rng);
        CHECK(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        for (double v : a) CHECK(v >= -0.02 - 1e-12);
    }
}

TEST_CASE("blend reproduces pivots at one-hot weights") {
    Fixture f(4);
    PersonalizedManifold m;
    m.pivots = f.pivots;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> a(4, 0.0);
        a[static_cast<std::size_t>(i)] = 1.0;
        CHECK(m.blend(a) == f.pivots.latents[static_cast<std::size_t>(i)]);
    }
    CHECK_THROWS(m.blend({1.0}));
}

TEST_CASE("coverage histogram counts every sample") {
    Fixture f(4);
    PersonalizedManifold m;
    m.pivots = f.pivots;
    m.backend = f.gen.clone();
    ToyEstimator est(32);
    const auto c = pose_coverage_report(m, est, 50, 3, f.pivots.params);
    int total = 0;
    for (const auto& row : c.counts)
        for (int v : row) total += v;
    CHECK(total == 50);
    CHECK(c.samples.size() == 50);
    CHECK(c.video.size() == 4);
    CHECK(coverage_to_json(c).find("\"counts\"") != std::string::npos);

    CoverageConfig one;
    one.one_hot = true;
    const auto v = pose_coverage_report(m, est, 20, 3, {}, one);
    for (const auto& s : v.samples) {
        bool matched = false;
        for (const auto& p : f.pivots.params) matched = matched || (std::abs(p.yaw_deg - s[0]) < 1e-9 && std::abs(p.pitch_deg - s[1]) < 1e-9);
        CHECK(matched);
    }
    CHECK_THROWS_WITH(pose_coverage_report(m, est, 0, 3), "empty histogram: n_samples must be at least 1");
}

TEST_CASE("manifold round trips through disk") {
    Fixture f(3);
    PyramidPerceptual metric;
    PTIConfig cfg;
    cfg.max_steps = 3;
    cfg.lpips_threshold = 1e-9;
    const auto m = personalize(f.gen, f.pivots, f.images, cfg, metric);
    const auto dir = std::filesystem::temp_directory_path() / "pvp_test_manifold";
    std::filesystem::remove_all(dir);
    save_manifold(dir, m);
    const auto back = load_manifold(dir);
    CHECK(back.size() == 3);
    CHECK(back.pivots.frame_indices == m.pivots.frame_indices);
    CHECK(back.beta == m.beta);
    for (int i = 0; i < 3; ++i) {
        const auto a = m.backend->synthesize(m.pivots.latents[static_cast<std::size_t>(i)]);
        const auto b = back.backend->synthesize(back.pivots.latents[static_cast<std::size_t>(i)]);
        double worst = 0.0;
        for (std::size_t p = 0; p < a.size(); ++p) worst = std::max(worst, std::abs(a.pixels[p] - b.pixels[p]));
        CHECK(worst < 1e-5);  // float32 storage
    }
    std::filesystem::remove(dir / "manifest.json");
    CHECK_THROWS_AS(load_manifold(dir), Error);
    std::filesystem::remove_all(dir);
}
