#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pvp {

// Two-layer perceptron: tanh(W2 leaky_relu(W1 x + b1) + b2).
// Parameters are stored flat as [W1 (hidden x in) | b1 | W2 (out x hidden) | b2], row-major.
class Mlp {
public:
    static constexpr double kLeakySlope = 0.2;

    Mlp() = default;
    Mlp(int in, int hidden, int out);

    // He-normal first layer, zero output layer (so the initial output is exactly 0).
    void initialize(std::mt19937_64& rng);

    struct Cache {
        std::vector<double> input;
        std::vector<double> pre;     // W1 x + b1
        std::vector<double> output;  // after tanh
    };

    std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const;
    // grad_params += dL/dtheta; grad_input (if non-null) += dL/dx.
    void backward(const Cache& cache, std::span<const double> grad_output, std::span<double> grad_params,
                  std::span<double> grad_input = {}) const;

    int inputs() const { return in_; }
    int hidden() const { return hidden_; }
    int outputs() const { return out_; }
    std::span<const double> params() const { return params_; }
    std::span<double> params() { return params_; }
    std::size_t param_count() const { return params_.size(); }

private:
    std::size_t w2_offset() const { return static_cast<std::size_t>(hidden_) * in_ + hidden_; }
    std::size_t b2_offset() const { return w2_offset() + static_cast<std::size_t>(out_) * hidden_; }

    int in_ = 0, hidden_ = 0, out_ = 0;
    std::vector<double> params_;
};

}  // namespace pvp
