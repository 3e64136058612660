#include "nsdf/field.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include <fmt/format.h>

namespace nsdf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Points per evaluation chunk; fixed so chunked reductions are reproducible.
constexpr Index kChunk = 256;

Index padded(Index n) { return (n + 7) & ~Index(7); }

// out(r, q) += sum_k w(r, k) * in(k, q). Every output element accumulates k in
// ascending order with a separate multiply and add, so its value does not
// depend on which block path (vector block or scalar remainder) produced it
// nor on how many columns are processed together.
using Packet = double __attribute__((vector_size(64)));
constexpr int kLanes = 8;

inline Packet load_packet(const double* p) {
    Packet v;
    std::memcpy(&v, p, sizeof v);
    return v;
}
inline void store_packet(double* p, Packet v) { std::memcpy(p, &v, sizeof v); }

template <int CB, int NP>
inline Index product_block(const double* w, Index ldw, Index r, Index rows, Index depth, const double* in, Index ldi,
                           double* out, Index ldo) {
    constexpr int RB = NP * kLanes;
    for (; r + RB <= rows; r += RB) {
        Packet acc[CB][NP];
        for (int q = 0; q < CB; ++q)
            for (int v = 0; v < NP; ++v) acc[q][v] = load_packet(out + r + v * kLanes + q * ldo);
        for (Index k = 0; k < depth; ++k) {
            const double* wk = w + r + k * ldw;
            Packet wv[NP];
            for (int v = 0; v < NP; ++v) wv[v] = load_packet(wk + v * kLanes);
            for (int q = 0; q < CB; ++q) {
                const double x = in[k + q * ldi];
                for (int v = 0; v < NP; ++v) acc[q][v] += wv[v] * x;
            }
        }
        for (int q = 0; q < CB; ++q)
            for (int v = 0; v < NP; ++v) store_packet(out + r + v * kLanes + q * ldo, acc[q][v]);
    }
    return r;
}

template <int CB>
inline void product_cols(const double* w, Index ldw, Index rows, Index depth, const double* in, Index ldi,
                         double* out, Index ldo) {
    Index r = product_block<CB, 2>(w, ldw, 0, rows, depth, in, ldi, out, ldo);
    r = product_block<CB, 1>(w, ldw, r, rows, depth, in, ldi, out, ldo);
    for (; r < rows; ++r) {
        double acc[CB];
        for (int q = 0; q < CB; ++q) acc[q] = out[r + q * ldo];
        for (Index k = 0; k < depth; ++k) {
            const double wk = w[r + k * ldw];
            for (int q = 0; q < CB; ++q) acc[q] += wk * in[k + q * ldi];
        }
        for (int q = 0; q < CB; ++q) out[r + q * ldo] = acc[q];
    }
}

void accumulate_product(const double* w, Index ldw, Index rows, Index depth, const double* in, Index ldi,
                        Index cols, double* out, Index ldo) {
    Index p = 0;
    for (; p + 4 <= cols; p += 4) product_cols<4>(w, ldw, rows, depth, in + p * ldi, ldi, out + p * ldo, ldo);
    for (; p < cols; ++p) product_cols<1>(w, ldw, rows, depth, in + p * ldi, ldi, out + p * ldo, ldo);
}

// Buffers are ld x cols with ld a multiple of 8 and storage aligned by Eigen,
// so the whole buffer is processed in full SIMD packets with no scalar tail.
using AlignedArrayMap = Eigen::Map<Eigen::ArrayXd, Eigen::AlignedMax>;

void softplus_inplace(double* data, Index n, double beta) {
    AlignedArrayMap a(data, n);
    // log(1 + e) rather than log1p(e): Eigen vectorizes log but not log1p, and
    // the absolute error for e in (0, 1] stays below one ulp of 1/beta.
    a = a.max(0.0) + (1.0 + (-beta * a.abs()).exp()).log() / beta;
}

struct LayerTape {
    MatrixXd pre;  // ld x 4B: [a | da/dx | da/dy | da/dz]
    MatrixXd act;  // ld x 4B: [h | dh/dx | dh/dy | dh/dz]
    MatrixXd s;    // softplus'(a), ld x B
    MatrixXd s2;   // softplus''(a), ld x B
};

struct Tape {
    Index count = 0;
    const double* coords = nullptr;  // 3 x count
    std::vector<LayerTape> layers;
    std::vector<double> f;
    std::vector<Vec3> g;
};

const double* coord_data(std::span<const Vec3> xs) {
    static_assert(sizeof(Vec3) == 3 * sizeof(double));
    return xs.empty() ? nullptr : xs.data()->data();
}

// Per-call constants: bias + W_z z for every layer.
class Evaluator {
public:
    Evaluator(const FieldParams& params, const LatentCode& z) : params_(params), z_(z) {
        const Architecture& arch = params.arch;
        if (params.layers.size() != static_cast<std::size_t>(arch.layer_count) || arch.layer_count < 1)
            fail(ErrorCode::DimensionMismatch, "parameter layer count does not match architecture");
        if (z.size() != arch.latent_dim)
            fail(ErrorCode::DimensionMismatch,
                 fmt::format("latent code has dimension {}, expected {}", z.size(), arch.latent_dim));
        offsets_.reserve(params.layers.size());
        for (int l = 0; l < arch.layer_count; ++l) {
            LayerLayout lay = arch.layout(l);
            const DenseLayer& layer = params.layers[static_cast<std::size_t>(l)];
            if (layer.weight.rows() != lay.out || layer.weight.cols() != lay.in() || layer.bias.size() != lay.out)
                fail(ErrorCode::DimensionMismatch, fmt::format("layer {} tensor shapes do not match architecture", l + 1));
            VectorXd c = layer.bias;
            if (lay.latent_in > 0)
                accumulate_product(layer.weight.data() + lay.hidden_in * layer.weight.rows(), layer.weight.rows(),
                                   lay.out, lay.latent_in, z.data(), lay.latent_in, 1, c.data(), lay.out);
            offsets_.push_back(std::move(c));
        }
    }

    const FieldParams& params() const { return params_; }
    const LatentCode& code() const { return z_; }

    void values(const double* coords, Index count, double* out, std::array<MatrixXd, 2>& ws) const {
        const Architecture& arch = params_.arch;
        const double* prev = nullptr;
        Index prev_ld = 0;
        for (int l = 0; l < arch.layer_count; ++l) {
            LayerLayout lay = arch.layout(l);
            const MatrixXd& w = params_.layers[static_cast<std::size_t>(l)].weight;
            Index ld = padded(lay.out);
            MatrixXd& buf = ws[static_cast<std::size_t>(l % 2)];
            buf.resize(ld, count);
            init_columns(buf, lay.out, 0, count, offsets_[static_cast<std::size_t>(l)].data());
            if (lay.hidden_in > 0)
                accumulate_product(w.data(), w.rows(), lay.out, lay.hidden_in, prev, prev_ld, count, buf.data(), ld);
            if (lay.coord_in > 0)
                accumulate_product(w.data() + (lay.hidden_in + lay.latent_in) * w.rows(), w.rows(), lay.out, 3,
                                   coords, 3, count, buf.data(), ld);
            if (lay.activated) {
                softplus_inplace(buf.data(), buf.size(), arch.softplus_beta);
            } else {
                for (Index p = 0; p < count; ++p) out[p] = buf(0, p);
            }
            prev = buf.data();
            prev_ld = ld;
        }
    }

    void tangents(const double* coords, Index count, Tape& tape) const {
        const Architecture& arch = params_.arch;
        const double beta = arch.softplus_beta;
        tape.count = count;
        tape.coords = coords;
        tape.layers.resize(static_cast<std::size_t>(arch.layer_count));
        tape.f.resize(static_cast<std::size_t>(count));
        tape.g.resize(static_cast<std::size_t>(count));
        const Index cols = 4 * count;
        for (int l = 0; l < arch.layer_count; ++l) {
            LayerLayout lay = arch.layout(l);
            const MatrixXd& w = params_.layers[static_cast<std::size_t>(l)].weight;
            const Index ld = padded(lay.out);
            LayerTape& lt = tape.layers[static_cast<std::size_t>(l)];
            lt.pre.resize(ld, cols);
            init_columns(lt.pre, lay.out, 0, count, offsets_[static_cast<std::size_t>(l)].data());
            const double* wx = w.data() + (lay.hidden_in + lay.latent_in) * w.rows();
            for (int c = 0; c < 3; ++c)
                init_columns(lt.pre, lay.out, (c + 1) * count, count, lay.coord_in > 0 ? wx + c * w.rows() : nullptr);
            if (lay.hidden_in > 0) {
                const LayerTape& prev = tape.layers[static_cast<std::size_t>(l - 1)];
                accumulate_product(w.data(), w.rows(), lay.out, lay.hidden_in, prev.act.data(), prev.act.rows(), cols,
                                   lt.pre.data(), ld);
            }
            if (lay.coord_in > 0)
                accumulate_product(wx, w.rows(), lay.out, 3, coords, 3, count, lt.pre.data(), ld);

            if (!lay.activated) {
                for (Index p = 0; p < count; ++p) {
                    tape.f[static_cast<std::size_t>(p)] = lt.pre(0, p);
                    for (int c = 0; c < 3; ++c) tape.g[static_cast<std::size_t>(p)][c] = lt.pre(0, (c + 1) * count + p);
                }
                continue;
            }
            lt.act = lt.pre;
            softplus_inplace(lt.act.data(), ld * count, beta);
            auto a = lt.pre.leftCols(count).array();
            Eigen::ArrayXXd e = (-beta * a.abs()).exp();
            Eigen::ArrayXXd inv = 1.0 / (1.0 + e);
            lt.s = (a >= 0.0).select(inv, e * inv).matrix();
            lt.s2 = (beta * e * inv * inv).matrix();
            for (int c = 0; c < 3; ++c)
                lt.act.middleCols((c + 1) * count, count).array() =
                    lt.s.array() * lt.pre.middleCols((c + 1) * count, count).array();
        }
    }

    // Accumulates d(sum_p fbar_p f_p + gbar_p . g_p) into grads / gz.
    void backward(const Tape& tape, const MatrixXd& seed, FieldParams& grads, VectorXd& gz) const {
        const Architecture& arch = params_.arch;
        const Index count = tape.count;
        MatrixXd abar = seed;  // out x 4B
        Eigen::Map<const Eigen::Matrix<double, 3, Eigen::Dynamic>> coords(tape.coords, 3, count);
        for (int l = arch.layer_count - 1; l >= 0; --l) {
            LayerLayout lay = arch.layout(l);
            const MatrixXd& w = params_.layers[static_cast<std::size_t>(l)].weight;
            DenseLayer& g = grads.layers[static_cast<std::size_t>(l)];
            const VectorXd value_sum = abar.leftCols(count).rowwise().sum();
            g.bias += value_sum;
            if (lay.latent_in > 0) {
                g.weight.middleCols(lay.hidden_in, lay.latent_in).noalias() += value_sum * z_.transpose();
                gz.noalias() += w.middleCols(lay.hidden_in, lay.latent_in).transpose() * value_sum;
            }
            if (lay.coord_in > 0) {
                const Index xc = lay.hidden_in + lay.latent_in;
                g.weight.middleCols(xc, 3).noalias() += abar.leftCols(count) * coords.transpose();
                for (int c = 0; c < 3; ++c)
                    g.weight.col(xc + c) += abar.middleCols((c + 1) * count, count).rowwise().sum();
            }
            if (lay.hidden_in == 0) break;

            const LayerTape& prev = tape.layers[static_cast<std::size_t>(l - 1)];
            const Index h = lay.hidden_in;
            g.weight.leftCols(h).noalias() += abar * prev.act.topRows(h).transpose();
            MatrixXd hbar = w.leftCols(h).transpose() * abar;  // h x 4B

            auto s = prev.s.topRows(h).array();
            auto s2 = prev.s2.topRows(h).array();
            MatrixXd next(h, 4 * count);
            Eigen::ArrayXXd curvature = Eigen::ArrayXXd::Zero(h, count);
            for (int c = 0; c < 3; ++c) {
                auto tbar = hbar.middleCols((c + 1) * count, count).array();
                curvature += tbar * prev.pre.block(0, (c + 1) * count, h, count).array();
                next.middleCols((c + 1) * count, count).array() = s * tbar;
            }
            next.leftCols(count).array() = hbar.leftCols(count).array() * s + s2 * curvature;
            abar = std::move(next);
        }
    }

private:
    static void init_columns(MatrixXd& buf, Index rows, Index first, Index count, const double* column) {
        const Index ld = buf.rows();
        for (Index p = first; p < first + count; ++p) {
            double* dst = buf.data() + p * ld;
            for (Index r = 0; r < rows; ++r) dst[r] = column ? column[r] : 0.0;
            for (Index r = rows; r < ld; ++r) dst[r] = 0.0;
        }
    }

    const FieldParams& params_;
    const LatentCode& z_;
    std::vector<VectorXd> offsets_;
};

Index chunk_count(Index n) { return (n + kChunk - 1) / kChunk; }

struct LossInputs {
    std::vector<Vec3> coords;  // surface points then off-surface points
    Index surface = 0;
    Index offsurface = 0;
};

LossInputs gather_inputs(const FieldParams& params, const LatentCode& z, const SurfaceBatch& surface,
                         std::span<const Vec3> offsurface) {
    if (surface.points.size() != surface.normals.size())
        fail(ErrorCode::DimensionMismatch, "surface points and normals differ in length");
    if (surface.points.empty()) fail(ErrorCode::InvalidArgument, "surface batch is empty");
    if (z.size() != params.arch.latent_dim)
        fail(ErrorCode::DimensionMismatch,
             fmt::format("latent code has dimension {}, expected {}", z.size(), params.arch.latent_dim));
    LossInputs in;
    in.surface = static_cast<Index>(surface.points.size());
    in.offsurface = static_cast<Index>(offsurface.size());
    in.coords.reserve(surface.points.size() + offsurface.size());
    in.coords.insert(in.coords.end(), surface.points.begin(), surface.points.end());
    in.coords.insert(in.coords.end(), offsurface.begin(), offsurface.end());
    return in;
}

// Loss terms plus the adjoint seed (df, dg) of the total for every point.
struct LossSeed {
    LossBreakdown loss;
    std::vector<double> fbar;
    std::vector<Vec3> gbar;
};

LossSeed evaluate_loss(const std::vector<double>& f, const std::vector<Vec3>& g, const LossInputs& in,
                       const SurfaceBatch& surface, const LatentCode& z, const LossWeights& weights) {
    LossSeed out;
    const std::size_t total = in.coords.size();
    out.fbar.assign(total, 0.0);
    out.gbar.assign(total, Vec3::Zero());
    const double inv_s = 1.0 / static_cast<double>(in.surface);
    double abs_sum = 0.0, normal_sum = 0.0, eik_sum = 0.0;
    for (Index i = 0; i < in.surface; ++i) {
        const auto k = static_cast<std::size_t>(i);
        abs_sum += std::abs(f[k]);
        const Vec3 diff = g[k] - surface.normals[k];
        normal_sum += diff.squaredNorm();
        out.fbar[k] = (f[k] > 0.0 ? 1.0 : (f[k] < 0.0 ? -1.0 : 0.0)) * inv_s;
        out.gbar[k] = 2.0 * inv_s * diff;
    }
    if (in.offsurface > 0) {
        const double inv_o = 1.0 / static_cast<double>(in.offsurface);
        for (Index i = 0; i < in.offsurface; ++i) {
            const auto k = static_cast<std::size_t>(in.surface + i);
            const double gn = g[k].norm();
            eik_sum += (gn - 1.0) * (gn - 1.0);
            if (gn > 0.0) out.gbar[k] = (weights.tau * 2.0 * (gn - 1.0) / gn * inv_o) * g[k];
        }
        out.loss.eikonal = eik_sum * inv_o;
    }
    out.loss.surface = abs_sum * inv_s;
    out.loss.normal = normal_sum * inv_s;
    const double zn = z.norm();
    out.loss.code_reg = weights.squared_code_norm ? zn * zn : zn;
    out.loss.total = out.loss.surface + out.loss.normal + weights.tau * out.loss.eikonal +
                     weights.lambda * out.loss.code_reg;
    return out;
}

}  // namespace

void Architecture::validate() const {
    if (layer_count < 2) fail(ErrorCode::InvalidArchitecture, "layer_count must be at least 2");
    if (hidden_width < 1) fail(ErrorCode::InvalidArchitecture, "hidden_width must be positive");
    if (latent_dim < 1) fail(ErrorCode::InvalidArchitecture, "latent_dim must be positive");
    if (skip_layer < 0 || skip_layer >= layer_count)
        fail(ErrorCode::InvalidArchitecture, "skip_layer must lie in [0, layer_count)");
    if (!(softplus_beta > 0.0) || !std::isfinite(softplus_beta))
        fail(ErrorCode::InvalidArchitecture, "softplus_beta must be positive");
}

LayerLayout Architecture::layout(int layer) const {
    LayerLayout lay;
    const bool first = layer == 0;
    const bool skip = skip_layer > 0 && layer == skip_layer;
    lay.hidden_in = first ? 0 : hidden_width;
    if (first || skip) {
        lay.latent_in = latent_dim;
        lay.coord_in = 3;
    }
    const bool last = layer == layer_count - 1;
    lay.out = last ? 1 : hidden_width;
    lay.activated = !last;
    return lay;
}

FieldParams FieldParams::zeros(const Architecture& arch) {
    FieldParams p;
    p.arch = arch;
    for (int l = 0; l < arch.layer_count; ++l) {
        LayerLayout lay = arch.layout(l);
        p.layers.push_back({MatrixXd::Zero(lay.out, lay.in()), VectorXd::Zero(lay.out)});
    }
    return p;
}

std::size_t FieldParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void FieldParams::check_consistent() const {
    if (layers.size() != static_cast<std::size_t>(arch.layer_count))
        fail(ErrorCode::ShapeInconsistency, "layer count does not match architecture");
    for (int l = 0; l < arch.layer_count; ++l) {
        LayerLayout lay = arch.layout(l);
        const DenseLayer& layer = layers[static_cast<std::size_t>(l)];
        if (layer.weight.rows() != lay.out || layer.weight.cols() != lay.in() || layer.bias.size() != lay.out)
            fail(ErrorCode::ShapeInconsistency, fmt::format("layer {} tensor shapes do not match architecture", l + 1));
        if (!layer.weight.allFinite() || !layer.bias.allFinite())
            fail(ErrorCode::ShapeInconsistency, fmt::format("layer {} has non-finite entries", l + 1));
    }
}

FieldParams init_params(const Architecture& arch, std::uint64_t seed, InitScheme scheme) {
    arch.validate();
    FieldParams p = FieldParams::zeros(arch);
    Rng rng = make_rng(seed, {0x1417});
    auto fill = [&](MatrixXd& m, double mean, double stddev) {
        std::normal_distribution<double> dist(mean, stddev);
        for (Index c = 0; c < m.cols(); ++c)
            for (Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
    };
    for (int l = 0; l < arch.layer_count; ++l) {
        LayerLayout lay = arch.layout(l);
        DenseLayer& layer = p.layers[static_cast<std::size_t>(l)];
        if (scheme == InitScheme::Xavier) {
            fill(layer.weight, 0.0, std::sqrt(2.0 / static_cast<double>(lay.in() + lay.out)));
        } else if (lay.activated) {
            double stddev = std::sqrt(2.0) / std::sqrt(static_cast<double>(lay.out));
            // the concatenated input carries two unit-variance signals
            if (arch.skip_layer > 0 && l == arch.skip_layer) stddev /= std::sqrt(2.0);
            fill(layer.weight, 0.0, stddev);
        } else {
            fill(layer.weight, std::sqrt(std::numbers::pi) / std::sqrt(static_cast<double>(lay.in())), 1e-6);
            layer.bias.setConstant(-0.5);
        }
    }
    return p;
}

double softplus(double t, double beta) {
    const double bt = beta * t;
    return bt > 0.0 ? t + std::log1p(std::exp(-bt)) / beta : std::log1p(std::exp(bt)) / beta;
}

std::vector<double> forward(const FieldParams& params, const LatentCode& z, std::span<const Vec3> xs,
                            unsigned threads) {
    Evaluator ev(params, z);
    const Index n = static_cast<Index>(xs.size());
    std::vector<double> out(xs.size());
    const double* coords = coord_data(xs);
    const Index chunks = chunk_count(n);
    const unsigned workers = static_cast<unsigned>(std::min<Index>(resolve_threads(threads), std::max<Index>(chunks, 1)));
    // one scratch pair per worker, reused across that worker's chunks
    const Index per_worker = (chunks + workers - 1) / std::max(1u, workers);
    parallel_for(workers, workers, [&](std::size_t wk) {
        std::array<MatrixXd, 2> ws;
        const Index begin = static_cast<Index>(wk) * per_worker;
        const Index end = std::min(chunks, begin + per_worker);
        for (Index c = begin; c < end; ++c) {
            const Index first = c * kChunk;
            const Index count = std::min(kChunk, n - first);
            ev.values(coords + 3 * first, count, out.data() + first, ws);
        }
    });
    return out;
}

std::vector<Vec3> spatial_gradient(const FieldParams& params, const LatentCode& z, std::span<const Vec3> xs) {
    Evaluator ev(params, z);
    const Index n = static_cast<Index>(xs.size());
    std::vector<Vec3> out(xs.size());
    Tape tape;
    for (Index first = 0; first < n; first += kChunk) {
        const Index count = std::min(kChunk, n - first);
        ev.tangents(coord_data(xs) + 3 * first, count, tape);
        std::copy(tape.g.begin(), tape.g.end(), out.begin() + first);
    }
    return out;
}

LossBreakdown shape_loss(const FieldParams& params, const LatentCode& z, const SurfaceBatch& surface,
                         std::span<const Vec3> offsurface, const LossWeights& weights) {
    LossInputs in = gather_inputs(params, z, surface, offsurface);
    Evaluator ev(params, z);
    const Index n = static_cast<Index>(in.coords.size());
    std::vector<double> f(in.coords.size());
    std::vector<Vec3> g(in.coords.size());
    Tape tape;
    for (Index first = 0; first < n; first += kChunk) {
        const Index count = std::min(kChunk, n - first);
        ev.tangents(in.coords.data()->data() + 3 * first, count, tape);
        std::copy(tape.f.begin(), tape.f.end(), f.begin() + first);
        std::copy(tape.g.begin(), tape.g.end(), g.begin() + first);
    }
    return evaluate_loss(f, g, in, surface, z, weights).loss;
}

LossGradients loss_gradients(const FieldParams& params, const LatentCode& z, const SurfaceBatch& surface,
                             std::span<const Vec3> offsurface, const LossWeights& weights, unsigned threads) {
    LossInputs in = gather_inputs(params, z, surface, offsurface);
    Evaluator ev(params, z);
    const Index n = static_cast<Index>(in.coords.size());
    const Index chunks = chunk_count(n);
    const double* coords = in.coords.data()->data();

    // Pass 1: values and spatial gradients for the loss and its adjoint seed.
    std::vector<Tape> tapes(static_cast<std::size_t>(chunks));
    const bool keep_tapes = chunks <= 4;
    std::vector<double> f(in.coords.size());
    std::vector<Vec3> g(in.coords.size());
    parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
        const Index first = static_cast<Index>(c) * kChunk;
        const Index count = std::min(kChunk, n - first);
        Tape local;
        Tape& tape = keep_tapes ? tapes[c] : local;
        ev.tangents(coords + 3 * first, count, tape);
        std::copy(tape.f.begin(), tape.f.end(), f.begin() + first);
        std::copy(tape.g.begin(), tape.g.end(), g.begin() + first);
    });
    LossSeed seed = evaluate_loss(f, g, in, surface, z, weights);

    // Pass 2: reverse sweep per chunk, then an in-order reduction.
    std::vector<FieldParams> partial(static_cast<std::size_t>(chunks));
    std::vector<VectorXd> partial_z(static_cast<std::size_t>(chunks));
    parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
        const Index first = static_cast<Index>(c) * kChunk;
        const Index count = std::min(kChunk, n - first);
        Tape local;
        if (!keep_tapes) ev.tangents(coords + 3 * first, count, local);
        const Tape& tape = keep_tapes ? tapes[c] : local;
        MatrixXd adjoint(1, 4 * count);
        for (Index p = 0; p < count; ++p) {
            const auto k = static_cast<std::size_t>(first + p);
            adjoint(0, p) = seed.fbar[k];
            for (int d = 0; d < 3; ++d) adjoint(0, (d + 1) * count + p) = seed.gbar[k][d];
        }
        partial[c] = FieldParams::zeros(params.arch);
        partial_z[c] = VectorXd::Zero(z.size());
        ev.backward(tape, adjoint, partial[c], partial_z[c]);
    });

    LossGradients out;
    out.params = FieldParams::zeros(params.arch);
    out.code = VectorXd::Zero(z.size());
    for (Index c = 0; c < chunks; ++c) {
        const auto k = static_cast<std::size_t>(c);
        for (std::size_t l = 0; l < out.params.layers.size(); ++l) {
            out.params.layers[l].weight += partial[k].layers[l].weight;
            out.params.layers[l].bias += partial[k].layers[l].bias;
        }
        out.code += partial_z[k];
    }
    const double zn = z.norm();
    if (weights.squared_code_norm)
        out.code += (2.0 * weights.lambda) * z;
    else if (zn > 0.0)
        out.code += (weights.lambda / zn) * z;
    out.loss = seed.loss;
    return out;
}

}  // namespace nsdf
