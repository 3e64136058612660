#include "nsdf/checkpoint.hpp"

#include <fmt/format.h>

#include "nsdf/binary_io.hpp"

namespace nsdf {

namespace {

void write_matrix_rowmajor(ByteWriter& w, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

void read_matrix_rowmajor(ByteReader& in, Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.f64();
}

void write_params(ByteWriter& w, const FieldParams& p) {
    for (const DenseLayer& l : p.layers) {
        write_matrix_rowmajor(w, l.weight);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias[i]);
    }
}

FieldParams read_params(ByteReader& in, const Architecture& arch) {
    FieldParams p = FieldParams::zeros(arch);
    for (DenseLayer& l : p.layers) {
        read_matrix_rowmajor(in, l.weight);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = in.f64();
    }
    return p;
}

void write_codebook(ByteWriter& w, const LatentCodebook& c) {
    for (Eigen::Index r = 0; r < c.rows(); ++r)
        for (Eigen::Index k = 0; k < c.cols(); ++k) w.f64(c(r, k));
}

LatentCodebook read_codebook(ByteReader& in, std::size_t rows, int cols) {
    LatentCodebook c(static_cast<Eigen::Index>(rows), cols);
    for (Eigen::Index r = 0; r < c.rows(); ++r)
        for (Eigen::Index k = 0; k < c.cols(); ++k) c(r, k) = in.f64();
    return c;
}

void write_config(ByteWriter& w, const TrainConfig& c) {
    w.u8(c.init_scheme == InitScheme::Geometric ? 0 : 1);
    w.u64(c.epochs);
    w.f64(c.initial_lr);
    w.u64(c.lr_halving_period);
    w.f64(c.tau);
    w.f64(c.lambda);
    w.u8(c.squared_code_norm ? 1 : 0);
    w.f64(c.code_init_std);
    w.u64(c.surface_batch_size);
    w.f64(c.offsurface_ratio);
    w.f64(c.adam_beta1);
    w.f64(c.adam_beta2);
    w.f64(c.adam_epsilon);
    w.u64(c.knn_k);
    w.f64(c.uniform_halfwidth);
    w.u64(c.seed);
}

TrainConfig read_config(ByteReader& in, const Architecture& arch) {
    TrainConfig c;
    c.arch = arch;
    const std::uint8_t scheme = in.u8();
    if (scheme > 1) fail(ErrorCode::ShapeInconsistency, fmt::format("unknown init scheme tag {}", scheme));
    c.init_scheme = scheme == 0 ? InitScheme::Geometric : InitScheme::Xavier;
    c.epochs = in.u64();
    c.initial_lr = in.f64();
    c.lr_halving_period = in.u64();
    c.tau = in.f64();
    c.lambda = in.f64();
    const std::uint8_t squared = in.u8();
    if (squared > 1) fail(ErrorCode::ShapeInconsistency, "bad squared_code_norm flag");
    c.squared_code_norm = squared == 1;
    c.code_init_std = in.f64();
    c.surface_batch_size = in.u64();
    c.offsurface_ratio = in.f64();
    c.adam_beta1 = in.f64();
    c.adam_beta2 = in.f64();
    c.adam_epsilon = in.f64();
    c.knn_k = in.u64();
    c.uniform_halfwidth = in.f64();
    c.seed = in.u64();
    return c;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
    ck.validate();
    const Architecture& a = ck.params.arch;
    ByteWriter w;
    w.magic("NSDF");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(a.layer_count));
    w.u32(static_cast<std::uint32_t>(a.hidden_width));
    w.u32(static_cast<std::uint32_t>(a.latent_dim));
    w.u32(static_cast<std::uint32_t>(a.skip_layer));
    w.f64(a.softplus_beta);
    w.u64(ck.shape_count());
    write_params(w, ck.params);
    write_codebook(w, ck.codes);
    write_config(w, ck.config);
    w.u64(ck.epoch);
    w.u64(ck.seed);
    w.u8(ck.optimizer ? 1 : 0);
    if (ck.optimizer) {
        const OptimizerState& o = *ck.optimizer;
        write_params(w, o.param_m);
        write_params(w, o.param_v);
        w.u64(o.param_step);
        write_codebook(w, o.code_m);
        write_codebook(w, o.code_v);
        for (std::uint64_t s : o.code_steps) w.u64(s);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    ByteReader in(bytes);
    if (bytes.size() < 4) fail(ErrorCode::TruncatedFile, "file is shorter than the magic tag");
    if (!in.has_magic("NSDF")) fail(ErrorCode::BadMagic, "not a checkpoint (magic is not NSDF)");
    in.skip(4);
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion)
        fail(ErrorCode::UnsupportedVersion, fmt::format("checkpoint version {} (supported: {})", version,
                                                        kCheckpointVersion));
    Architecture a;
    a.layer_count = static_cast<int>(in.u32());
    a.hidden_width = static_cast<int>(in.u32());
    a.latent_dim = static_cast<int>(in.u32());
    a.skip_layer = static_cast<int>(in.u32());
    a.softplus_beta = in.f64();
    try {
        a.validate();
    } catch (const Error& e) {
        fail(ErrorCode::ShapeInconsistency, fmt::format("architecture block: {}", e.detail()));
    }
    const std::uint64_t n = in.u64();

    // reject impossible sizes before allocating
    const std::size_t code_count = static_cast<std::size_t>(a.latent_dim);
    const std::size_t needed = (FieldParams::zeros(a).parameter_count() + code_count * n) * 8;
    if (n > in.remaining() || needed > in.remaining())
        fail(ErrorCode::TruncatedFile, "file ends inside the tensor block");

    Checkpoint ck;
    ck.params = read_params(in, a);
    ck.codes = read_codebook(in, n, a.latent_dim);
    ck.config = read_config(in, a);
    ck.epoch = in.u64();
    ck.seed = in.u64();
    const std::uint8_t has_opt = in.u8();
    if (has_opt > 1) fail(ErrorCode::ShapeInconsistency, "bad optimizer flag");
    if (has_opt) {
        OptimizerState o;
        o.param_m = read_params(in, a);
        o.param_v = read_params(in, a);
        o.param_step = in.u64();
        o.code_m = read_codebook(in, n, a.latent_dim);
        o.code_v = read_codebook(in, n, a.latent_dim);
        o.code_steps.resize(n);
        for (auto& s : o.code_steps) s = in.u64();
        ck.optimizer = std::move(o);
    }
    if (!in.at_end()) fail(ErrorCode::ShapeInconsistency, fmt::format("{} trailing bytes", in.remaining()));
    ck.validate();
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        fail(e.code(), fmt::format("{}: {}", path, e.detail()));
    }
}

std::uint64_t checkpoint_fingerprint(const Checkpoint& checkpoint) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : encode_checkpoint(checkpoint)) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace nsdf
