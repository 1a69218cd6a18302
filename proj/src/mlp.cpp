#include "pvp/mlp.hpp"

#include <cmath>

#include "pvp/error.hpp"

namespace pvp {

Mlp::Mlp(int in, int hidden, int out) : in_(in), hidden_(hidden), out_(out) {
    if (in <= 0 || hidden <= 0 || out <= 0) throw Error(ErrorKind::InvalidArgument, "MLP dimensions must be positive");
    params_.assign(b2_offset() + static_cast<std::size_t>(out), 0.0);
}

void Mlp::initialize(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / in_));
    std::fill(params_.begin(), params_.end(), 0.0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(hidden_) * in_; ++i) params_[i] = n(rng);
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache* cache) const {
    if (static_cast<int>(x.size()) != in_) throw Error(ErrorKind::ShapeMismatch, "MLP input size mismatch");
    const double* w1 = params_.data();
    const double* b1 = w1 + static_cast<std::size_t>(hidden_) * in_;
    const double* w2 = params_.data() + w2_offset();
    const double* b2 = params_.data() + b2_offset();
    std::vector<double> pre(static_cast<std::size_t>(hidden_));
    std::vector<double> act(static_cast<std::size_t>(hidden_));
    for (int h = 0; h < hidden_; ++h) {
        double s = b1[h];
        const double* row = w1 + static_cast<std::size_t>(h) * in_;
        for (int i = 0; i < in_; ++i) s += row[i] * x[static_cast<std::size_t>(i)];
        pre[static_cast<std::size_t>(h)] = s;
        act[static_cast<std::size_t>(h)] = s > 0.0 ? s : kLeakySlope * s;
    }
    std::vector<double> y(static_cast<std::size_t>(out_));
    for (int o = 0; o < out_; ++o) {
        double s = b2[o];
        const double* row = w2 + static_cast<std::size_t>(o) * hidden_;
        for (int h = 0; h < hidden_; ++h) s += row[h] * act[static_cast<std::size_t>(h)];
        y[static_cast<std::size_t>(o)] = std::tanh(s);
    }
    if (cache != nullptr) {
        cache->input.assign(x.begin(), x.end());
        cache->pre = std::move(pre);
        cache->output = y;
    }
    return y;
}

void Mlp::backward(const Cache& cache, std::span<const double> grad_output, std::span<double> grad_params,
                   std::span<double> grad_input) const {
    if (static_cast<int>(grad_output.size()) != out_ || grad_params.size() != params_.size())
        throw Error(ErrorKind::ShapeMismatch, "MLP gradient size mismatch");
    const double* w1 = params_.data();
    const double* w2 = params_.data() + w2_offset();
    double* gw1 = grad_params.data();
    double* gb1 = gw1 + static_cast<std::size_t>(hidden_) * in_;
    double* gw2 = grad_params.data() + w2_offset();
    double* gb2 = grad_params.data() + b2_offset();

    std::vector<double> dact(static_cast<std::size_t>(hidden_), 0.0);
    for (int o = 0; o < out_; ++o) {
        const double y = cache.output[static_cast<std::size_t>(o)];
        const double dz = grad_output[static_cast<std::size_t>(o)] * (1.0 - y * y);
        if (dz == 0.0) continue;
        gb2[o] += dz;
        const double* row = w2 + static_cast<std::size_t>(o) * hidden_;
        double* grow = gw2 + static_cast<std::size_t>(o) * hidden_;
        for (int h = 0; h < hidden_; ++h) {
            const double p = cache.pre[static_cast<std::size_t>(h)];
            grow[h] += dz * (p > 0.0 ? p : kLeakySlope * p);
            dact[static_cast<std::size_t>(h)] += dz * row[h];
        }
    }
    for (int h = 0; h < hidden_; ++h) {
        const double dpre = dact[static_cast<std::size_t>(h)] * (cache.pre[static_cast<std::size_t>(h)] > 0.0 ? 1.0 : kLeakySlope);
        if (dpre == 0.0) continue;
        gb1[h] += dpre;
        double* grow = gw1 + static_cast<std::size_t>(h) * in_;
        for (int i = 0; i < in_; ++i) grow[i] += dpre * cache.input[static_cast<std::size_t>(i)];
        if (!grad_input.empty()) {
            const double* row = w1 + static_cast<std::size_t>(h) * in_;
            for (int i = 0; i < in_; ++i) grad_input[static_cast<std::size_t>(i)] += dpre * row[i];
        }
    }
}

}  // namespace pvp
