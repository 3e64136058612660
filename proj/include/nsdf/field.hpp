#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nsdf/common.hpp"

namespace nsdf {

/// Shape of one dense layer's input: [hidden | latent | coord] column blocks.
struct LayerLayout {
    int hidden_in = 0;
    int latent_in = 0;
    int coord_in = 0;
    int out = 0;
    bool activated = true;

    int in() const { return hidden_in + latent_in + coord_in; }
};

/// Topology of the latent-conditioned field f(z; x).
///
/// Layer 1 consumes (z | x). With skip_layer = s >= 1 the input of layer s+1
/// is (h_s | z | x). skip_layer = 0 turns the skip concatenation off (plain
/// MLP), which the tests use as a reference variant. The last layer is linear
/// with a scalar output; all others use softplus with sharpness beta.
struct Architecture {
    int layer_count = 8;
    int hidden_width = 512;
    int latent_dim = 256;
    int skip_layer = 4;
    double softplus_beta = 100.0;

    void validate() const;
    LayerLayout layout(int layer) const;  // 0-based layer index

    bool operator==(const Architecture&) const = default;
};

struct DenseLayer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct FieldParams {
    Architecture arch;
    std::vector<DenseLayer> layers;

    /// All-zero parameters with shapes dictated by `arch`. Does not call
    /// arch.validate(), so degenerate single-layer fields can be built.
    static FieldParams zeros(const Architecture& arch);

    std::size_t parameter_count() const;
    /// Shapes match arch.layout() and every entry is finite.
    void check_consistent() const;

    /// Visits each tensor's contiguous storage (weights then bias per layer).
    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        for (auto& l : layers) {
            fn(std::span<double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
            fn(std::span<double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
        }
    }
    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        for (const auto& l : layers) {
            fn(std::span<const double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
            fn(std::span<const double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
        }
    }
};

using LatentCode = Eigen::VectorXd;
/// Row k holds the code of training shape k.
using LatentCodebook = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class InitScheme { Geometric, Xavier };

/// Geometric init makes f(0; x) approximate |x| - 0.5 (negative inside).
FieldParams init_params(const Architecture& arch, std::uint64_t seed, InitScheme scheme);

/// softplus_beta(t) = log(1 + exp(beta t)) / beta, overflow-safe.
double softplus(double t, double beta);

/// Evaluates f(z; x) for each point. Each output depends only on its own
/// point and is bitwise independent of batch size and thread count.
std::vector<double> forward(const FieldParams& params, const LatentCode& z, std::span<const Vec3> xs,
                            unsigned threads = 1);

/// Exact grad_x f(z; x).
std::vector<Vec3> spatial_gradient(const FieldParams& params, const LatentCode& z, std::span<const Vec3> xs);

struct SurfaceBatch {
    std::span<const Vec3> points;
    std::span<const Vec3> normals;
};

struct LossWeights {
    double tau = 0.5;
    double lambda = 1e-4;
    bool squared_code_norm = false;
};

struct LossBreakdown {
    double surface = 0.0;   // mean |f| on surface points
    double normal = 0.0;    // mean |grad f - n|^2 on surface points
    double eikonal = 0.0;   // mean (|grad f| - 1)^2 on off-surface points
    double code_reg = 0.0;  // |z| (or |z|^2 in squared mode)
    double total = 0.0;     // surface + normal + tau * eikonal + lambda * code_reg
};

LossBreakdown shape_loss(const FieldParams& params, const LatentCode& z, const SurfaceBatch& surface,
                         std::span<const Vec3> offsurface, const LossWeights& weights);

struct LossGradients {
    FieldParams params;  // d total / d theta, same layout as the parameters
    LatentCode code;     // d total / d z
    LossBreakdown loss;
};

/// Exact gradients of shape_loss().total. Differentiates through grad_x f,
/// so second derivatives of softplus appear. Subgradients at kinks are 0.
/// Work is split into fixed-size point chunks reduced in order, so the
/// result does not depend on `threads`.
LossGradients loss_gradients(const FieldParams& params, const LatentCode& z, const SurfaceBatch& surface,
                             std::span<const Vec3> offsurface, const LossWeights& weights, unsigned threads = 1);

}  // namespace nsdf
