#pragma once

// Image distances used as training and evaluation losses, with
// vector-Jacobian products so gradients can flow into a generator.

#include <memory>
#include <string>
#include <vector>

#include "pvp/image.hpp"

namespace pvp {

double mean_squared_error(const Image& a, const Image& b);
// grad_a += scale * d mse / d a
void mean_squared_error_vjp(const Image& a, const Image& b, double scale, Image& grad_a);

// Sum of squared mask-weighted differences over H*W*3. The mask is H*W, one weight per pixel.
double masked_mean_squared_error(const Image& a, const Image& b, const std::vector<unsigned char>& mask);
void masked_mean_squared_error_vjp(const Image& a, const Image& b, const std::vector<unsigned char>& mask,
                                   double scale, Image& grad_a);

class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual std::string name() const = 0;
    virtual double distance(const Image& a, const Image& b) const = 0;
    // grad_a += scale * d distance / d a. Symmetric metrics give the negated gradient for b.
    virtual void distance_vjp(const Image& a, const Image& b, double scale, Image& grad_a) const = 0;
};

// Sum over pyramid levels of the per-level mean squared difference. Each
// level is a [1 4 6 4 1]/16 blur (mirrored edges) followed by 2x decimation.
class PyramidPerceptual final : public PerceptualMetric {
public:
    explicit PyramidPerceptual(int levels = 3) : levels_(levels) {}
    std::string name() const override { return "perceptual-proxy"; }
    double distance(const Image& a, const Image& b) const override;
    void distance_vjp(const Image& a, const Image& b, double scale, Image& grad_a) const override;
    int levels() const { return levels_; }

private:
    int levels_;
};

// Single pyramid reduction step and its adjoint, exposed for testing.
Image pyramid_reduce(const Image& img);
Image pyramid_reduce_adjoint(const Image& grad, int height, int width);

class IdentityEmbedder {
public:
    virtual ~IdentityEmbedder() = default;
    virtual std::string name() const = 0;
    virtual std::vector<double> embed(const Image& img) const = 0;
    // grad_img += d<grad_embedding, embed(img)> / d img
    virtual void embed_vjp(const Image& img, const std::vector<double>& grad_embedding, Image& grad_img) const = 0;
};

// 4x4 grid of block-mean colors over the sketch rows (everything below the parameter band).
class PooledSketchIdentity final : public IdentityEmbedder {
public:
    explicit PooledSketchIdentity(int grid = 4, int skip_rows = 1) : grid_(grid), skip_rows_(skip_rows) {}
    std::string name() const override { return "pooled-identity-proxy"; }
    std::vector<double> embed(const Image& img) const override;
    void embed_vjp(const Image& img, const std::vector<double>& grad_embedding, Image& grad_img) const override;

private:
    int grid_;
    int skip_rows_;
};

// Mean squared difference of embeddings, and its gradient with respect to a.
double identity_distance(const IdentityEmbedder& e, const Image& a, const Image& b);
void identity_distance_vjp(const IdentityEmbedder& e, const Image& a, const Image& b, double scale, Image& grad_a);

}  // namespace pvp
