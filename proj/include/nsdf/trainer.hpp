#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsdf/field.hpp"
#include "nsdf/mesh.hpp"

namespace nsdf {

struct TrainConfig {
    Architecture arch;  // latent_dim is the code dimension d
    InitScheme init_scheme = InitScheme::Geometric;
    std::uint64_t epochs = 5000;
    double initial_lr = 1e-3;
    std::uint64_t lr_halving_period = 500;
    double tau = 0.5;
    double lambda = 1e-4;
    bool squared_code_norm = false;
    double code_init_std = 1e-2;
    std::uint64_t surface_batch_size = 16384;
    double offsurface_ratio = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t knn_k = 50;
    double uniform_halfwidth = 1.1;
    std::uint64_t seed = 0;

    void validate() const;
    LossWeights loss_weights() const { return {tau, lambda, squared_code_norm}; }
    std::size_t offsurface_count() const;

    bool operator==(const TrainConfig&) const = default;
};

/// Adam moments for the field parameters (one step counter) and for each
/// code row (its own counter, advanced only when that row is updated).
struct OptimizerState {
    FieldParams param_m;
    FieldParams param_v;
    std::uint64_t param_step = 0;
    LatentCodebook code_m;
    LatentCodebook code_v;
    std::vector<std::uint64_t> code_steps;

    static OptimizerState zeros(const Architecture& arch, std::size_t shape_count);
};

struct Checkpoint {
    FieldParams params;
    LatentCodebook codes;
    TrainConfig config;
    std::uint64_t epoch = 0;
    std::uint64_t seed = 0;
    std::optional<OptimizerState> optimizer;

    const Architecture& arch() const { return params.arch; }
    std::size_t shape_count() const { return static_cast<std::size_t>(codes.rows()); }
    LatentCode code(std::size_t k) const;
    void validate() const;
};

/// sigma_i = distance from point i to its k-th nearest other point, with k
/// capped at size - 1.
std::vector<double> local_sigmas(std::span<const Vec3> points, std::size_t k);

/// ceil(M/2) points from the Gaussian mixture around the surface points and
/// floor(M/2) uniform in [-halfwidth, halfwidth]^3.
std::vector<Vec3> sample_off_surface(std::span<const Vec3> surface_points, std::span<const double> sigmas,
                                     std::size_t count, double halfwidth, Rng& rng);
std::vector<Vec3> sample_off_surface(std::span<const Vec3> surface_points, std::span<const double> sigmas,
                                     std::size_t count, double halfwidth, std::uint64_t seed);

/// initial_lr * 0.5^floor(epoch / lr_halving_period)
double learning_rate_at(std::uint64_t epoch, const TrainConfig& config);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One textbook Adam update with bias correction at the incremented step.
void adam_step(std::span<double> values, std::span<const double> grads, std::span<double> m, std::span<double> v,
               std::uint64_t& step, double lr, const AdamHyper& hyper);

struct EpochMetrics {
    std::uint64_t epoch = 0;
    double mean_total = 0.0;
    double mean_surface = 0.0;
    double mean_normal = 0.0;
    double mean_eikonal = 0.0;
    double mean_codereg = 0.0;
    double lr = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

struct TrainOptions {
    unsigned threads = 1;
    std::function<void(const EpochMetrics&)> on_epoch;
};

/// Auto-decoder training: each epoch visits every shape once in a seeded
/// order and applies one Adam step to the field and to that shape's code.
/// Each epoch draws from its own (seed, epoch) stream, so resuming from a
/// checkpoint with optimizer state reproduces an uninterrupted run.
Checkpoint train(const TrainConfig& config, const SurfaceSampleSet& samples,
                 const std::optional<Checkpoint>& initial = std::nullopt, const TrainOptions& options = {});

}  // namespace nsdf
