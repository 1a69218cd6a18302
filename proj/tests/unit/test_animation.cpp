#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pvp/animation.hpp"
#include "pvp/toy_generator.hpp"

using namespace pvp;

namespace {

NormStats stats1(double mean, double sd) {
    NormStats s;
    s.mean = {mean};
    s.stddev = {sd};
    return s;
}

std::shared_ptr<PersonalizedManifold> small_manifold(int k) {
    ToyGeneratorSpec s;
    s.image_size = 32;
    s.dims = 16;
    auto m = std::make_shared<PersonalizedManifold>();
    m->backend = std::make_shared<ToyGenerator>(s);
    std::mt19937_64 rng(4);
    for (int i = 0; i < k; ++i) {
        m->pivots.frame_indices.push_back(i);
        m->pivots.params.emplace_back();
        m->pivots.latents.push_back(m->backend->sample_prior(rng));
    }
    return m;
}

std::vector<FaceParams> gaussian_params(int n, double mean, double sd, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<FaceParams> v(static_cast<std::size_t>(n));
    for (auto& p : v) {
        p.yaw_deg = 10.0 * mean + 10.0 * sd * g(rng);
        p.pitch_deg = 3.0 * mean + 3.0 * sd * g(rng);
        std::array<double, kExprInputDims> je{};
        for (auto& x : je) x = mean + sd * g(rng);
        p.set_jaw_expression(je);
    }
    return v;
}

std::vector<EditDirection> sample_directions() {
    std::vector<EditDirection> d(2);
    d[0].name = "smile";
    d[0].offset = LatentCode(6, 16);
    d[0].offset.at(0, 3) = 0.25;
    d[1].name = "brow\xc3\xa9";  // non-ASCII name
    d[1].offset = LatentCode(6, 16, -0.5);
    return d;
}

}  // namespace

TEST_CASE("renormalization worked example") {
    const double x[1] = {0.7};
    const auto y = renormalize_driving(x, stats1(0.5, 0.2), stats1(0.2, 0.1));
    CHECK(y[0] == doctest::Approx(0.3));
    CHECK_THROWS(renormalize_driving(x, stats1(0.5, 0.2), NormStats{}));
}

TEST_CASE("renormalization of a constant driving column maps to the source mean") {
    const double x[1] = {4.0};
    const auto y = renormalize_driving(x, stats1(4.0, 0.0), stats1(-1.0, 2.0));
    CHECK(y[0] == doctest::Approx(-1.0));
}

TEST_CASE("renormalized driving sequence takes on the source distribution") {
    std::mt19937_64 rng(1);
    auto m = small_manifold(4);
    const auto source = gaussian_params(400, 0.0, 0.3, rng);
    const auto bundle = make_bundle(m, source);
    const auto driving = DrivingSequence::from_params(gaussian_params(300, 2.0, 1.5, rng));
    const auto fed = reenactment_params(bundle, driving);
    REQUIRE(fed.size() == 300);
    const auto s = jaw_expression_stats(fed);
    for (int i = 0; i < kExprInputDims; ++i) {
        CHECK(s.mean[static_cast<std::size_t>(i)] == doctest::Approx(bundle.source_stats.mean[static_cast<std::size_t>(i)]).scale(1.0).epsilon(1e-9));
        CHECK(s.stddev[static_cast<std::size_t>(i)] == doctest::Approx(bundle.source_stats.stddev[static_cast<std::size_t>(i)]).epsilon(1e-9));
    }
    const auto ps = pose_stats(fed);
    for (int i = 0; i < 2; ++i)
        CHECK(ps.stddev[static_cast<std::size_t>(i)] == doctest::Approx(bundle.source_pose_stats.stddev[static_cast<std::size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("renormalization can be switched off per group") {
    std::mt19937_64 rng(2);
    auto m = small_manifold(3);
    const auto bundle = make_bundle(m, gaussian_params(50, 0.0, 0.3, rng));
    const auto raw = gaussian_params(20, 1.0, 1.0, rng);
    const auto driving = DrivingSequence::from_params(raw);
    const auto fed = reenactment_params(bundle, driving, ReenactConfig{false, false});
    for (std::size_t i = 0; i < raw.size(); ++i) CHECK(fed[i] == raw[i]);

    DrivingSequence bare;
    bare.frames = raw;
    CHECK_THROWS_WITH(reenactment_params(bundle, bare), "stats required for cross-subject driving");
    CHECK(reenactment_params(bundle, DrivingSequence{}).empty());
}

TEST_CASE("reenactment renders one frame per driving frame") {
    std::mt19937_64 rng(3);
    auto m = small_manifold(3);
    const auto bundle = make_bundle(m, gaussian_params(30, 0.0, 0.3, rng));
    const auto driving = DrivingSequence::from_params(gaussian_params(7, 0.5, 0.5, rng));
    const auto frames = reenact(bundle, driving);
    REQUIRE(frames.size() == 7);
    const auto fed = reenactment_params(bundle, driving);
    for (std::size_t i = 0; i < frames.size(); ++i) CHECK(frames[i] == render(bundle, fed[i]));
}

TEST_CASE("edits are linear in strength") {
    std::mt19937_64 rng(4);
    auto m = small_manifold(2);
    const auto w = m->backend->sample_prior(rng);
    const auto d = sample_directions()[0];
    CHECK(apply_edit(w, d, 0.0) == w);
    const auto a = apply_edit(w, d, 2.0);
    CHECK(a.at(0, 3) == doctest::Approx(w.at(0, 3) + 0.5));
    const auto b = apply_edit(apply_edit(w, d, 1.0), d, 1.0);
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]));
    CHECK_THROWS(apply_edit(w, EditDirection{"bad", LatentCode(2, 2)}, 1.0));
}

TEST_CASE("directions round trip through PVPD") {
    const auto d = sample_directions();
    std::stringstream ss;
    write_directions(ss, d);
    const auto back = read_directions(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "smile");
    CHECK(back[1].name == d[1].name);
    CHECK(back[0].offset == d[0].offset);
    CHECK(back[1].offset == d[1].offset);

    std::stringstream empty;
    write_directions(empty, {});
    CHECK(read_directions(empty).empty());
}

TEST_CASE("direction files reject corruption and profile mismatch") {
    const auto path = std::filesystem::temp_directory_path() / "pvp_test.pvpd";
    save_directions(path, sample_directions());
    CHECK(load_directions(path, 6, 16).size() == 2);
    CHECK_THROWS_AS(load_directions(path, 18, 512), Error);

    std::string bytes;
    {
        std::ifstream is(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    std::stringstream bad_magic(std::string("XXXX") + bytes.substr(4));
    CHECK_THROWS_AS(read_directions(bad_magic), Error);
    std::stringstream truncated(bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_AS(read_directions(truncated), Error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_directions(path, 6, 16), Error);
}
