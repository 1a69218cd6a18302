#include <random>

#include "doctest.h"
#include "pvp/perceptual.hpp"
#include "support.hpp"

using namespace pvp;
using pvp::testing::numeric_gradient;
using pvp::testing::relative_error;

namespace {

Image random_image(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

double dot(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.pixels[i] * b.pixels[i];
    return s;
}

// Checks grad of f(a) against central differences on a handful of pixels.
void check_image_gradient(const std::function<double(const Image&)>& f, const Image& a, const Image& analytic,
                          std::mt19937_64& rng, double tol) {
    std::vector<double> x = a.pixels;
    const auto coords = pvp::testing::sample_coords(x.size(), 40, rng);
    auto fx = [&](const std::vector<double>& v) {
        Image t = a;
        t.pixels = v;
        return f(t);
    };
    const auto num = numeric_gradient(fx, x, coords, 1e-5);
    CHECK(relative_error(pvp::testing::pick(analytic.pixels, coords), num) < tol);
}

}  // namespace

TEST_CASE("mse of identical images is zero and of constant offset is the offset squared") {
    Image a(8, 8, 0.3), b(8, 8, 0.4);
    CHECK(mean_squared_error(a, a) == 0.0);
    CHECK(mean_squared_error(a, b) == doctest::Approx(0.01));
    CHECK_THROWS_AS(mean_squared_error(a, Image(4, 8)), Error);
}

TEST_CASE("masked mse divides by the full pixel count") {
    Image a(4, 4, 0.0), b(4, 4, 1.0);
    std::vector<unsigned char> mask(16, 0);
    mask[0] = mask[5] = 1;
    CHECK(masked_mean_squared_error(a, b, mask) == doctest::Approx(6.0 / 48.0));
    std::fill(mask.begin(), mask.end(), 0);
    CHECK(masked_mean_squared_error(a, b, mask) == 0.0);
}

TEST_CASE("pyramid reduce halves dimensions and keeps constants") {
    Image c(16, 12, 0.7);
    const auto r = pyramid_reduce(c);
    CHECK(r.height == 8);
    CHECK(r.width == 6);
    for (double p : r.pixels) CHECK(p == doctest::Approx(0.7));
}

TEST_CASE("pyramid adjoint satisfies the dot product identity") {
    std::mt19937_64 rng(11);
    for (auto [h, w] : {std::pair{16, 16}, std::pair{13, 9}, std::pair{64, 64}}) {
        const auto x = random_image(rng, h, w);
        const auto rx = pyramid_reduce(x);
        const auto y = random_image(rng, rx.height, rx.width);
        const auto aty = pyramid_reduce_adjoint(y, h, w);
        CHECK(dot(rx, y) == doctest::Approx(dot(x, aty)).epsilon(1e-12));
    }
}

TEST_CASE("perceptual proxy is a symmetric non-negative distance") {
    std::mt19937_64 rng(3);
    PyramidPerceptual p;
    for (int i = 0; i < 20; ++i) {
        const auto a = random_image(rng, 32, 32), b = random_image(rng, 32, 32);
        CHECK(p.distance(a, a) == 0.0);
        CHECK(p.distance(a, b) > 0.0);
        CHECK(p.distance(a, b) == doctest::Approx(p.distance(b, a)).epsilon(1e-14));
    }
}

TEST_CASE("perceptual proxy gradient matches finite differences") {
    std::mt19937_64 rng(5);
    PyramidPerceptual p;
    const auto a = random_image(rng, 32, 32), b = random_image(rng, 32, 32);
    Image g(32, 32);
    p.distance_vjp(a, b, 1.0, g);
    check_image_gradient([&](const Image& x) { return p.distance(x, b); }, a, g, rng, 1e-6);
}

TEST_CASE("vjps accumulate with scale") {
    std::mt19937_64 rng(6);
    PyramidPerceptual p;
    const auto a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
    Image g1(16, 16), g2(16, 16);
    p.distance_vjp(a, b, 1.0, g1);
    p.distance_vjp(a, b, 0.5, g2);
    p.distance_vjp(a, b, 1.5, g2);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2.pixels[i] == doctest::Approx(2.0 * g1.pixels[i]));
}

TEST_CASE("mse and masked mse gradients match finite differences") {
    std::mt19937_64 rng(7);
    const auto a = random_image(rng, 12, 12), b = random_image(rng, 12, 12);
    Image g(12, 12);
    mean_squared_error_vjp(a, b, 2.0, g);
    check_image_gradient([&](const Image& x) { return 2.0 * mean_squared_error(x, b); }, a, g, rng, 1e-6);

    std::vector<unsigned char> mask(144);
    for (auto& m : mask) m = static_cast<unsigned char>(rng() % 2);
    Image gm(12, 12);
    masked_mean_squared_error_vjp(a, b, mask, 1.0, gm);
    check_image_gradient([&](const Image& x) { return masked_mean_squared_error(x, b, mask); }, a, gm, rng, 1e-6);
}

TEST_CASE("pooled identity ignores the parameter band") {
    std::mt19937_64 rng(8);
    PooledSketchIdentity id;
    auto a = random_image(rng, 65, 64);
    auto b = a;
    for (int x = 0; x < 64; ++x)
        for (int c = 0; c < 3; ++c) b.at(0, x, c) = 1.0 - b.at(0, x, c);
    CHECK(id.embed(a).size() == 48);
    CHECK(identity_distance(id, a, b) == 0.0);
}

TEST_CASE("identity distance gradient matches finite differences") {
    std::mt19937_64 rng(9);
    PooledSketchIdentity id;
    const auto a = random_image(rng, 33, 32), b = random_image(rng, 33, 32);
    Image g(33, 32);
    identity_distance_vjp(id, a, b, 1.0, g);
    check_image_gradient([&](const Image& x) { return identity_distance(id, x, b); }, a, g, rng, 1e-6);
}
