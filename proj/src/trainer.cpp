#include "nsdf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "nsdf/kdtree.hpp"

namespace nsdf {

namespace {

enum Stream : std::uint64_t { kCodeInit = 1, kEpoch = 2 };

void require(bool ok, const char* what) {
    if (!ok) fail(ErrorCode::BadValue, what);
}

void adam_tensor(std::span<double> values, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::uint64_t step, double lr, const AdamHyper& h) {
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < values.size(); ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grads[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        values[i] -= lr * mhat / (std::sqrt(vhat) + h.epsilon);
    }
}

template <class T>
std::span<T> flat(T* data, Eigen::Index size) {
    return std::span<T>(data, static_cast<std::size_t>(size));
}

}  // namespace

void TrainConfig::validate() const {
    arch.validate();
    require(initial_lr > 0.0 && std::isfinite(initial_lr), "initial_lr must be positive");
    require(lr_halving_period > 0, "lr_halving_period must be positive");
    require(tau >= 0.0 && std::isfinite(tau), "tau must be non-negative");
    require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be non-negative");
    require(code_init_std > 0.0 && std::isfinite(code_init_std), "code_init_std must be positive");
    require(surface_batch_size > 0, "surface_batch_size must be positive");
    require(offsurface_ratio > 0.0 && std::isfinite(offsurface_ratio), "offsurface_ratio must be positive");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
    require(adam_epsilon > 0.0, "adam_epsilon must be positive");
    require(knn_k > 0, "knn_k must be positive");
    require(uniform_halfwidth > 0.0 && std::isfinite(uniform_halfwidth), "uniform_halfwidth must be positive");
}

std::size_t TrainConfig::offsurface_count() const {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(offsurface_ratio * static_cast<double>(surface_batch_size))));
}

OptimizerState OptimizerState::zeros(const Architecture& arch, std::size_t shape_count) {
    OptimizerState s;
    s.param_m = FieldParams::zeros(arch);
    s.param_v = FieldParams::zeros(arch);
    const auto n = static_cast<Eigen::Index>(shape_count);
    s.code_m = LatentCodebook::Zero(n, arch.latent_dim);
    s.code_v = LatentCodebook::Zero(n, arch.latent_dim);
    s.code_steps.assign(shape_count, 0);
    return s;
}

LatentCode Checkpoint::code(std::size_t k) const {
    if (k >= shape_count())
        fail(ErrorCode::IndexOutOfRange, fmt::format("shape index {} out of range (n = {})", k, shape_count()));
    return codes.row(static_cast<Eigen::Index>(k)).transpose();
}

void Checkpoint::validate() const {
    params.arch.validate();
    params.check_consistent();
    if (codes.cols() != params.arch.latent_dim)
        fail(ErrorCode::ShapeInconsistency, "codebook dimension does not match architecture");
    if (!codes.allFinite()) fail(ErrorCode::ShapeInconsistency, "codebook has non-finite entries");
    if (!(config.arch == params.arch)) fail(ErrorCode::ShapeInconsistency, "config architecture differs from parameters");
    if (optimizer) {
        const auto& o = *optimizer;
        o.param_m.check_consistent();
        o.param_v.check_consistent();
        if (o.code_m.rows() != codes.rows() || o.code_m.cols() != codes.cols() || o.code_v.rows() != codes.rows() ||
            o.code_v.cols() != codes.cols() || o.code_steps.size() != shape_count())
            fail(ErrorCode::ShapeInconsistency, "optimizer state does not match codebook");
    }
}

std::vector<double> local_sigmas(std::span<const Vec3> points, std::size_t k) {
    if (points.size() < 2) fail(ErrorCode::TooFewPoints, "need at least 2 points for local sigmas");
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be at least 1");
    k = std::min(k, points.size() - 1);
    KdTree tree(points);
    std::vector<double> sigmas(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        // the query point itself is among its neighbors at distance 0
        auto nn = tree.knn(points[i], k + 1);
        sigmas[i] = std::sqrt(nn.back().dist2);
    }
    return sigmas;
}

std::vector<Vec3> sample_off_surface(std::span<const Vec3> surface_points, std::span<const double> sigmas,
                                     std::size_t count, double halfwidth, Rng& rng) {
    if (surface_points.empty()) fail(ErrorCode::EmptySurfaceSet, "no surface points to sample around");
    if (sigmas.size() != surface_points.size())
        fail(ErrorCode::DimensionMismatch, "sigmas must align with surface points");
    if (count == 0) fail(ErrorCode::InvalidCount, "off-surface sample count must be positive");
    std::vector<Vec3> out;
    out.reserve(count);
    const std::size_t gaussian = (count + 1) / 2;
    std::uniform_int_distribution<std::size_t> pick(0, surface_points.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < gaussian; ++i) {
        const std::size_t j = pick(rng);
        Vec3 noise;
        for (int c = 0; c < 3; ++c) noise[c] = normal(rng);
        out.push_back(surface_points[j] + sigmas[j] * noise);
    }
    std::uniform_real_distribution<double> uni(-halfwidth, halfwidth);
    for (std::size_t i = gaussian; i < count; ++i) {
        Vec3 p;
        for (int c = 0; c < 3; ++c) p[c] = halfwidth > 0.0 ? uni(rng) : 0.0;
        out.push_back(p);
    }
    return out;
}

std::vector<Vec3> sample_off_surface(std::span<const Vec3> surface_points, std::span<const double> sigmas,
                                     std::size_t count, double halfwidth, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x0ff5});
    return sample_off_surface(surface_points, sigmas, count, halfwidth, rng);
}

double learning_rate_at(std::uint64_t epoch, const TrainConfig& config) {
    const auto halvings = static_cast<int>(std::min<std::uint64_t>(epoch / config.lr_halving_period, 2000));
    return std::ldexp(config.initial_lr, -halvings);
}

void adam_step(std::span<double> values, std::span<const double> grads, std::span<double> m, std::span<double> v,
               std::uint64_t& step, double lr, const AdamHyper& hyper) {
    if (grads.size() != values.size() || m.size() != values.size() || v.size() != values.size())
        fail(ErrorCode::ShapeMismatch, "adam_step operands differ in size");
    ++step;
    adam_tensor(values, grads, m, v, step, lr, hyper);
}

std::string metrics_csv_header() { return "epoch,mean_total,mean_surface,mean_normal,mean_eikonal,mean_codereg,lr\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
    return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", m.epoch, m.mean_total, m.mean_surface,
                       m.mean_normal, m.mean_eikonal, m.mean_codereg, m.lr);
}

Checkpoint train(const TrainConfig& config, const SurfaceSampleSet& samples, const std::optional<Checkpoint>& initial,
                 const TrainOptions& options) {
    config.validate();
    const std::size_t n = samples.shape_count();
    if (n == 0) fail(ErrorCode::EmptySurfaceSet, "sample set has no shapes");
    for (std::size_t k = 0; k < n; ++k) {
        const auto& s = samples.shapes[k];
        if (s.points.size() < 2) fail(ErrorCode::EmptySurfaceSet, fmt::format("shape {} has fewer than 2 samples", k));
        if (s.points.size() != s.normals.size())
            fail(ErrorCode::ShapeMismatch, fmt::format("shape {} points and normals differ in length", k));
    }

    Checkpoint ckpt;
    if (initial) {
        if (!(initial->params.arch == config.arch))
            fail(ErrorCode::ConfigMismatch, "resume checkpoint architecture differs from config");
        if (initial->shape_count() != n)
            fail(ErrorCode::ConfigMismatch, "resume checkpoint has a different number of shapes");
        ckpt = *initial;
    } else {
        ckpt.params = init_params(config.arch, config.seed, config.init_scheme);
        ckpt.codes.resize(static_cast<Eigen::Index>(n), config.arch.latent_dim);
        Rng rng = make_rng(config.seed, {kCodeInit});
        std::normal_distribution<double> dist(0.0, config.code_init_std);
        for (Eigen::Index r = 0; r < ckpt.codes.rows(); ++r)
            for (Eigen::Index c = 0; c < ckpt.codes.cols(); ++c) ckpt.codes(r, c) = dist(rng);
        ckpt.epoch = 0;
    }
    ckpt.config = config;
    ckpt.seed = config.seed;
    if (!ckpt.optimizer) ckpt.optimizer = OptimizerState::zeros(config.arch, n);
    OptimizerState& opt = *ckpt.optimizer;

    std::vector<std::vector<double>> sigmas(n);
    if (ckpt.epoch < config.epochs)
        for (std::size_t k = 0; k < n; ++k) sigmas[k] = local_sigmas(samples.shapes[k].points, config.knn_k);

    const AdamHyper hyper{config.adam_beta1, config.adam_beta2, config.adam_epsilon};
    const LossWeights weights = config.loss_weights();
    const std::size_t batch = config.surface_batch_size;
    const std::size_t off_count = config.offsurface_count();
    std::vector<Vec3> batch_points(batch), batch_normals(batch);

    for (std::uint64_t epoch = ckpt.epoch; epoch < config.epochs; ++epoch) {
        Rng rng = make_rng(config.seed, {kEpoch, epoch});
        const double lr = learning_rate_at(epoch, config);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.lr = lr;
        for (std::size_t k : order) {
            const ShapeSamples& shape = samples.shapes[k];
            std::uniform_int_distribution<std::size_t> pick(0, shape.points.size() - 1);
            for (std::size_t i = 0; i < batch; ++i) {
                const std::size_t j = pick(rng);
                batch_points[i] = shape.points[j];
                batch_normals[i] = shape.normals[j];
            }
            std::vector<Vec3> off = sample_off_surface(shape.points, sigmas[k], off_count, config.uniform_halfwidth, rng);

            const auto row = static_cast<Eigen::Index>(k);
            const LatentCode z = ckpt.codes.row(row).transpose();
            LossGradients grads =
                loss_gradients(ckpt.params, z, SurfaceBatch{batch_points, batch_normals}, off, weights, options.threads);
            if (!std::isfinite(grads.loss.total))
                fail(ErrorCode::NonFiniteLoss,
                     fmt::format("epoch {} shape {}: loss is {} (surface {}, normal {}, eikonal {}, code {})", epoch, k,
                                 grads.loss.total, grads.loss.surface, grads.loss.normal, grads.loss.eikonal,
                                 grads.loss.code_reg));

            ++opt.param_step;
            for (std::size_t l = 0; l < ckpt.params.layers.size(); ++l) {
                DenseLayer& p = ckpt.params.layers[l];
                const DenseLayer& g = grads.params.layers[l];
                adam_tensor(flat(p.weight.data(), p.weight.size()), flat(g.weight.data(), g.weight.size()),
                            flat(opt.param_m.layers[l].weight.data(), p.weight.size()),
                            flat(opt.param_v.layers[l].weight.data(), p.weight.size()), opt.param_step, lr, hyper);
                adam_tensor(flat(p.bias.data(), p.bias.size()), flat(g.bias.data(), g.bias.size()),
                            flat(opt.param_m.layers[l].bias.data(), p.bias.size()),
                            flat(opt.param_v.layers[l].bias.data(), p.bias.size()), opt.param_step, lr, hyper);
            }
            const Eigen::Index d = ckpt.codes.cols();
            adam_step(flat(ckpt.codes.row(row).data(), d), flat(grads.code.data(), d), flat(opt.code_m.row(row).data(), d),
                      flat(opt.code_v.row(row).data(), d), opt.code_steps[k], lr, hyper);

            metrics.mean_total += grads.loss.total;
            metrics.mean_surface += grads.loss.surface;
            metrics.mean_normal += grads.loss.normal;
            metrics.mean_eikonal += grads.loss.eikonal;
            metrics.mean_codereg += grads.loss.code_reg;
        }
        const double inv = 1.0 / static_cast<double>(n);
        metrics.mean_total *= inv;
        metrics.mean_surface *= inv;
        metrics.mean_normal *= inv;
        metrics.mean_eikonal *= inv;
        metrics.mean_codereg *= inv;
        ckpt.epoch = epoch + 1;
        if (options.on_epoch) options.on_epoch(metrics);
    }
    return ckpt;
}

}  // namespace nsdf
