#include <random>
#include <sstream>

#include "doctest.h"
#include "pvp/kernels.hpp"
#include "pvp/toy_generator.hpp"
#include "support.hpp"

using namespace pvp;

namespace {

std::shared_ptr<ToyGenerator> shared_gen() {
    static auto g = std::make_shared<ToyGenerator>();
    return g;
}

kernels::SketchInputs random_sketch(std::mt19937_64& rng, int size, std::vector<double>& tex) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    kernels::SketchInputs in;
    in.height = size;
    in.width = size;
    in.geometry = {40 * n(rng), 15 * n(rng), 0.1 * n(rng), n(rng), n(rng), n(rng), n(rng)};
    for (auto& c : in.colors) c = u(rng);
    tex.assign(static_cast<std::size_t>(size - 1) * size * 3, 0.0);
    for (auto& t : tex) t = 0.5 * n(rng);
    in.texture = tex;
    return in;
}

}  // namespace

TEST_CASE("zero latent decodes to zero params") {
    const auto& g = *shared_gen();
    const auto img = g.synthesize(g.zero_latent());
    const auto p = ToyEstimator().estimate(img);
    CHECK(p == FaceParams{});
    CHECK(g.synthesize(g.zero_latent()) == img);
}

TEST_CASE("estimator reads back the decoded parameters") {
    const auto& g = *shared_gen();
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10; ++i) {
        const auto w = g.sample_prior(rng);
        const auto p = ToyEstimator().estimate(g.synthesize(w)).to_array();
        const auto d = g.decode(w);
        for (int k = 0; k < kFaceParamDims; ++k) CHECK(p[k] == doctest::Approx(d[k]).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("mid-gray band decodes to the affine midpoint") {
    Image img(64, 64, 0.5);
    CHECK(ToyEstimator().estimate(img) == FaceParams{});
    CHECK_THROWS(ToyEstimator().estimate(Image(32, 32)));
}

TEST_CASE("estimator gradient is the affine slope") {
    Image img(64, 64, 0.5);
    const ToyEstimator est;
    for (int k : {0, 1, 4, 7, 20, 56}) {
        const double h = 1e-4;
        Image plus = img, minus = img;
        plus.pixels[k] += h;
        minus.pixels[k] -= h;
        const double numeric = (est.estimate(plus).to_array()[k] - est.estimate(minus).to_array()[k]) / (2 * h);
        std::vector<double> gp(kFaceParamDims, 0.0);
        gp[k] = 1.0;
        Image grad(64, 64);
        est.estimate_vjp(img, gp, grad);
        CHECK(grad.pixels[k] == doctest::Approx(numeric).epsilon(1e-6));
        CHECK(grad.pixels[k] == toy::band_range(k));
    }
}

TEST_CASE("geometry and appearance layers are separated") {
    const auto& g = *shared_gen();
    std::mt19937_64 rng(4);
    auto a = g.sample_prior(rng);
    auto b = a;
    for (int l = 4; l < 6; ++l)
        for (auto& v : b.layer(l)) v += 1.0;
    const auto ia = g.synthesize(a), ib = g.synthesize(b);
    for (int i = 0; i < 64 * 3; ++i) CHECK(ia.pixels[i] == ib.pixels[i]);
    double diff = 0.0;
    for (std::size_t i = 64 * 3; i < ia.pixels.size(); ++i) diff += std::abs(ia.pixels[i] - ib.pixels[i]);
    CHECK(diff > 1.0);
    CHECK(g.color_logits(a) != g.color_logits(b));
}

TEST_CASE("decode Jacobian equals the decode matrix") {
    const auto& g = *shared_gen();
    std::mt19937_64 rng(8);
    const auto w = g.sample_prior(rng);
    const auto a = g.decode_matrix();
    const int n = g.geometry_width();
    std::vector<double> analytic, numeric;
    for (int trial = 0; trial < 40; ++trial) {
        const int k = static_cast<int>(rng() % kFaceParamDims);
        const int j = static_cast<int>(rng() % n);
        auto wp = w, wm = w;
        wp.values[j] += 1e-3;
        wm.values[j] -= 1e-3;
        const ToyEstimator est;
        numeric.push_back((est.estimate(g.synthesize(wp)).to_array()[k] - est.estimate(g.synthesize(wm)).to_array()[k]) / 2e-3);
        analytic.push_back(a[static_cast<std::size_t>(k) * n + j]);
    }
    CHECK(testing::relative_error(analytic, numeric) <= 1e-6);
}

TEST_CASE("synthesize gradient matches finite differences") {
    const auto& g = *shared_gen();
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    auto gen = std::make_shared<ToyGenerator>(g);
    for (auto& t : gen->texture()) t = 0.3 * n(rng);
    for (int point = 0; point < 10; ++point) {
        const auto w = gen->sample_prior(rng);
        Image weights(64, 64);
        for (auto& v : weights.pixels) v = n(rng);
        auto loss_w = [&](const std::vector<double>& x) {
            LatentCode lw = w;
            lw.values = x;
            const auto img = gen->synthesize(lw);
            double s = 0.0;
            for (std::size_t i = 0; i < img.pixels.size(); ++i) s += weights.pixels[i] * img.pixels[i];
            return s;
        };
        LatentCode gw = gen->zero_latent();
        std::vector<double> gtheta;
        gen->synthesize_vjp(w, weights, &gw, &gtheta);
        const auto coords = testing::sample_coords(w.values.size(), 40, rng);
        const auto num = testing::numeric_gradient(loss_w, w.values, coords);
        CHECK(testing::relative_error(testing::pick(gw.values, coords), num) <= 1e-5);

        auto loss_theta = [&](const std::vector<double>& th) {
            ToyGenerator copy = *gen;
            std::copy(th.begin(), th.end(), copy.mutable_parameters().begin());
            const auto img = copy.synthesize(w);
            double s = 0.0;
            for (std::size_t i = 0; i < img.pixels.size(); ++i) s += weights.pixels[i] * img.pixels[i];
            return s;
        };
        const std::vector<double> theta(gen->parameters().begin(), gen->parameters().end());
        auto tc = testing::sample_coords(theta.size(), 30, rng);
        for (std::size_t i = 7424; i < 7424 + 585; i += 60) tc.push_back(i);  // color matrix and bias
        const auto numt = testing::numeric_gradient(loss_theta, theta, tc);
        CHECK(testing::relative_error(testing::pick(gtheta, tc), numt) <= 1e-5);
    }
}

TEST_CASE("latent shape mismatch") {
    const auto& g = *shared_gen();
    CHECK_THROWS_WITH(g.synthesize(LatentCode(5, 32)), "latent shape mismatch");
}

TEST_CASE("clones are independent") {
    ToyGenerator original;
    const auto before = original.synthesize(original.zero_latent());
    auto a = clone_backend(original);
    auto b = clone_backend(original);
    CHECK(std::equal(a->parameters().begin(), a->parameters().end(), original.parameters().begin()));
    for (auto& v : a->mutable_parameters()) v += 0.01;
    CHECK(original.synthesize(original.zero_latent()) == before);
    CHECK(b->synthesize(b->zero_latent()) == before);
    CHECK(parameter_checksum(*b) == parameter_checksum(original));
    CHECK(parameter_checksum(*a) != parameter_checksum(original));
}

TEST_CASE("decode matrix has full row rank") {
    const auto& g = *shared_gen();
    const auto a = g.decode_matrix();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(a.data(), kFaceParamDims, g.geometry_width());
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    CHECK(lu.rank() == kFaceParamDims);
}

TEST_CASE("checkpoint round trip") {
    ToyGenerator g;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (auto& t : g.texture()) t = n(rng);
    const auto path = std::filesystem::temp_directory_path() / "pvp_test_gen.pvpg";
    save_checkpoint(path, g);
    auto back = load_checkpoint(path);
    CHECK(back->kind() == "toy");
    CHECK(back->profile() == g.profile());
    for (std::size_t i = 0; i < g.parameters().size(); ++i)
        CHECK(back->parameters()[i] == static_cast<double>(static_cast<float>(g.parameters()[i])));
    // A second cycle is lossless.
    save_checkpoint(path, *back);
    auto again = load_checkpoint(path);
    CHECK(std::equal(again->parameters().begin(), again->parameters().end(), back->parameters().begin()));
    std::filesystem::remove(path);
}

TEST_CASE("inverter reconstructs toy renders") {
    auto g = shared_gen();
    const ToyInverter inv(g);
    std::mt19937_64 rng(13);
    for (int i = 0; i < 4; ++i) {
        const auto w = g->sample_prior(rng);
        const auto img = g->synthesize(w);
        const auto r = inv.invert(img);
        CHECK(r.rmse <= 1e-3);
        CHECK(r.status == Status::Ok);
        const auto again = inv.invert(g->synthesize(r.latent));
        double d = 0.0;
        const auto i1 = g->synthesize(r.latent), i2 = g->synthesize(again.latent);
        for (std::size_t k = 0; k < i1.pixels.size(); ++k) d = std::max(d, std::abs(i1.pixels[k] - i2.pixels[k]));
        CHECK(d <= 1e-2);
    }
}

TEST_CASE("inverting a black image") {
    auto g = shared_gen();
    const ToyInverter inv(g);
    const auto r = inv.invert(Image(64, 64, 0.0));
    const auto band = g->synthesize(r.latent);
    for (int k = 0; k < kFaceParamDims; ++k) CHECK(band.pixels[k] == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
}

TEST_CASE("serial and parallel sketch kernels agree bitwise") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 6; ++trial) {
        const int size = trial % 2 ? 32 : 64;
        std::vector<double> tex;
        const auto in = random_sketch(rng, size, tex);
        std::vector<double> a(tex.size()), b(tex.size());
        kernels::render_sketch_serial(in, a);
        kernels::render_sketch_parallel(in, b);
        CHECK(a == b);
        std::vector<double> grad(tex.size());
        std::normal_distribution<double> n;
        for (auto& v : grad) v = n(rng);
        std::vector<double> ta(tex.size()), tb(tex.size());
        const auto ga = kernels::sketch_vjp_serial(in, grad, ta);
        const auto gb = kernels::sketch_vjp_parallel(in, grad, tb);
        CHECK(ga.geometry == gb.geometry);
        CHECK(ga.colors == gb.colors);
        CHECK(ta == tb);
    }
}

TEST_CASE("sketch gradient matches finite differences") {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> n;
    for (int point = 0; point < 10; ++point) {
        std::vector<double> tex;
        auto in = random_sketch(rng, 32, tex);
        std::vector<double> weights(tex.size());
        for (auto& v : weights) v = n(rng);
        std::vector<double> x(in.geometry.begin(), in.geometry.end());
        x.insert(x.end(), in.colors.begin(), in.colors.end());
        auto f = [&](const std::vector<double>& v) {
            auto c = in;
            std::copy(v.begin(), v.begin() + 7, c.geometry.begin());
            std::copy(v.begin() + 7, v.end(), c.colors.begin());
            std::vector<double> out(tex.size());
            kernels::render_sketch_serial(c, out);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
            return s;
        };
        std::vector<double> gt(tex.size());
        const auto g = kernels::sketch_vjp_serial(in, weights, gt);
        std::vector<double> analytic(g.geometry.begin(), g.geometry.end());
        analytic.insert(analytic.end(), g.colors.begin(), g.colors.end());
        std::vector<std::size_t> coords(16);
        for (std::size_t i = 0; i < 16; ++i) coords[i] = i;
        CHECK(testing::relative_error(analytic, testing::numeric_gradient(f, x, coords)) <= 1e-6);
    }
}

TEST_CASE("ssim and nearest-centroid kernels agree") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u;
    std::vector<double> a(40 * 30 * 3), b(a.size());
    for (auto& v : a) v = u(rng);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.7 * a[i] + 0.3 * u(rng);
    for (int c = 0; c < 3; ++c) CHECK(kernels::ssim_channel_serial(a, b, 40, 30, c) == kernels::ssim_channel_parallel(a, b, 40, 30, c));
    CHECK(kernels::ssim_channel_serial(a, a, 40, 30, 0) == doctest::Approx(1.0));

    Eigen::MatrixXd pts = Eigen::MatrixXd::Random(200, 5), cents = Eigen::MatrixXd::Random(7, 5);
    std::vector<int> la, lb;
    std::vector<double> da, db;
    kernels::assign_nearest_serial(pts, cents, la, da);
    kernels::assign_nearest_parallel(pts, cents, lb, db);
    CHECK(la == lb);
    CHECK(da == db);
}
