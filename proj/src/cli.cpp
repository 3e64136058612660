#include "nsdf/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "nsdf/checkpoint.hpp"
#include "nsdf/cohort.hpp"
#include "nsdf/config.hpp"
#include "nsdf/isosurface.hpp"
#include "nsdf/mesh.hpp"
#include "nsdf/trainer.hpp"

namespace nsdf {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSynopsis = R"(usage:
  nsdf sample --input-dir D --out F --points N --seed S
  nsdf train --samples F --config C --out F2 [--resume F3] [--deterministic] [--metrics M.csv]
  nsdf reconstruct --checkpoint F --shape-index K --resolution R --out M.obj
  nsdf interpolate --checkpoint F --indices i,j,... --alphas a,b,... --resolution R --out M.obj
  nsdf generate --checkpoint F --num Q --interp-count M --seed S --resolution R --out-dir D
  nsdf evaluate recon --checkpoint F --samples F2 --out report.csv [--resolution R] [--eval-points N] [--seed S]
  nsdf evaluate pairwise --mesh-dir D --out report.csv [--eval-points N] [--seed S]
)";

std::vector<fs::path> mesh_files(const std::string& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::FileNotFound, fmt::format("{}: not a directory", dir));
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".obj" || ext == ".ply") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) fail(ErrorCode::FileNotFound, fmt::format("{}: no .obj or .ply files", dir));
    return files;
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

struct SampleArgs {
    std::string input_dir, out;
    std::uint64_t points = 500000, seed = 0;
};

struct TrainArgs {
    std::string samples, config, out, resume, metrics;
    bool deterministic = false;
    unsigned threads = 0;
};

struct ReconstructArgs {
    std::string checkpoint, out;
    std::size_t shape_index = 0;
    int resolution = 256;
    unsigned threads = 0;
};

struct InterpolateArgs {
    std::string checkpoint, out;
    std::vector<std::size_t> indices;
    std::vector<double> alphas;
    int resolution = 256;
    unsigned threads = 0;
};

struct GenerateArgs {
    std::string checkpoint, out_dir;
    std::size_t num = 100, interp_count = 2;
    std::uint64_t seed = 0;
    int resolution = 256;
    unsigned threads = 0;
};

struct ReconReportArgs {
    std::string checkpoint, samples, out;
    int resolution = 256;
    std::size_t eval_points = kDefaultEvalPoints;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

struct PairwiseArgs {
    std::string mesh_dir, out;
    std::size_t eval_points = kDefaultEvalPoints;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

void cmd_sample(const SampleArgs& a, std::ostream& out) {
    SurfaceSampleSet set;
    set.seed = a.seed;
    const auto files = mesh_files(a.input_dir);
    for (std::size_t k = 0; k < files.size(); ++k) {
        const NormalizedMesh nm = normalize_unit_ball(load_mesh(files[k].string()));
        Rng rng = make_rng(a.seed, {0x5a, k});
        set.shapes.push_back(sample_surface(nm.mesh, a.points, rng()));
    }
    ensure_parent(a.out);
    save_samples(set, a.out);
    out << fmt::format("sampled {} shapes x {} points -> {}\n", set.shape_count(), a.points, a.out);
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
    const RunConfig config = load_config(a.config);
    const SurfaceSampleSet samples = load_samples(a.samples);
    std::optional<Checkpoint> initial;
    if (!a.resume.empty()) initial = load_checkpoint(a.resume);

    TrainOptions options;
    options.threads = a.deterministic ? 1 : resolve_threads(a.threads);
    std::string metrics = metrics_csv_header();
    options.on_epoch = [&](const EpochMetrics& m) {
        metrics += metrics_csv_row(m);
        if (!a.metrics.empty()) write_file_atomic(a.metrics, metrics);
    };
    if (!a.metrics.empty()) {
        ensure_parent(a.metrics);
        if (initial && fs::exists(a.metrics)) metrics = read_file(a.metrics);  // append on resume
        write_file_atomic(a.metrics, metrics);
    }
    const Checkpoint ck = train(config.train, samples, initial, options);
    ensure_parent(a.out);
    save_checkpoint(ck, a.out);
    out << fmt::format("trained {} shapes for {} epochs -> {}\n", ck.shape_count(), ck.epoch, a.out);
}

void write_mesh(const TriangleMesh& mesh, const std::string& path, std::ostream& out) {
    ensure_parent(path);
    save_mesh(mesh, path);
    out << fmt::format("{} vertices, {} faces -> {}\n", mesh.vertices.size(), mesh.faces.size(), path);
}

void cmd_reconstruct(const ReconstructArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const TriangleMesh mesh =
        reconstruct_shape(ck, ck.code(a.shape_index), a.resolution, {resolve_threads(a.threads)});
    write_mesh(mesh, a.out, out);
}

void cmd_interpolate(const InterpolateArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const LatentCode z = combine_codes(ck.codes, CombinationWeights{a.indices, a.alphas});
    write_mesh(reconstruct_shape(ck, z, a.resolution, {resolve_threads(a.threads)}), a.out, out);
}

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    Cohort cohort = generate_cohort(ck, a.num, a.interp_count, a.seed, a.resolution, {resolve_threads(a.threads)});
    fs::create_directories(a.out_dir);
    for (std::size_t s = 0; s < cohort.meshes.size(); ++s) {
        const std::string name = fmt::format("shape_{:04d}.obj", s);
        save_mesh(cohort.meshes[s], (fs::path(a.out_dir) / name).string());
        cohort.manifest.entries[s].mesh_path = name;
    }
    write_file_atomic((fs::path(a.out_dir) / "manifest.csv").string(), render_manifest(cohort.manifest));
    out << fmt::format("generated {} shapes (m = {}) -> {}\n", cohort.meshes.size(), a.interp_count, a.out_dir);
}

void print_summary(const DistanceReport& r, const std::string& path, std::ostream& out) {
    out << fmt::format("{} distances: mean {:.6g}, std {:.6g}, min {:.6g}, max {:.6g} -> {}\n", r.summary.count,
                       r.summary.mean, r.summary.stddev, r.summary.min, r.summary.max, path);
}

void cmd_recon_report(const ReconReportArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const SurfaceSampleSet samples = load_samples(a.samples);
    const DistanceReport r =
        reconstruction_report(ck, samples, a.resolution, a.eval_points, a.seed, {resolve_threads(a.threads)});
    ensure_parent(a.out);
    save_report(r, a.out);
    print_summary(r, a.out, out);
}

void cmd_pairwise_report(const PairwiseArgs& a, std::ostream& out) {
    const auto files = mesh_files(a.mesh_dir);
    std::vector<TriangleMesh> meshes;
    for (const auto& f : files) meshes.push_back(load_mesh(f.string()));
    DistanceReport r = pairwise_report(meshes, a.eval_points, a.seed, resolve_threads(a.threads));
    std::size_t p = 0;
    for (std::size_t i = 0; i < files.size(); ++i)
        for (std::size_t j = i + 1; j < files.size(); ++j)
            r.labels[p++] = files[i].stem().string() + "|" + files[j].stem().string();
    ensure_parent(a.out);
    save_report(r, a.out);
    print_summary(r, a.out, out);
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Latent-conditioned neural signed distance fields", "nsdf"};
    app.require_subcommand(1);

    SampleArgs sample;
    auto* c_sample = app.add_subcommand("sample", "Normalize meshes and sample surface points with normals");
    c_sample->add_option("--input-dir", sample.input_dir, "Directory of .obj/.ply meshes")->required();
    c_sample->add_option("--out", sample.out, "Output sample-set file")->required();
    c_sample->add_option("--points", sample.points, "Samples per mesh")->capture_default_str();
    c_sample->add_option("--seed", sample.seed, "Random seed")->capture_default_str();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the field and latent codes");
    c_train->add_option("--samples", tr.samples, "Sample-set file")->required();
    c_train->add_option("--config", tr.config, "Run configuration file")->required();
    c_train->add_option("--out", tr.out, "Output checkpoint")->required();
    c_train->add_option("--resume", tr.resume, "Checkpoint to continue from");
    c_train->add_flag("--deterministic", tr.deterministic, "Single-threaded evaluation");
    c_train->add_option("--metrics", tr.metrics, "Per-epoch metrics CSV");
    c_train->add_option("--threads", tr.threads, "Worker threads (0 = all cores)")->capture_default_str();

    ReconstructArgs rec;
    auto* c_rec = app.add_subcommand("reconstruct", "Extract the mesh of a training shape");
    c_rec->add_option("--checkpoint", rec.checkpoint)->required();
    c_rec->add_option("--shape-index", rec.shape_index)->required();
    c_rec->add_option("--resolution", rec.resolution)->capture_default_str();
    c_rec->add_option("--out", rec.out)->required();
    c_rec->add_option("--threads", rec.threads)->capture_default_str();

    InterpolateArgs interp;
    auto* c_interp = app.add_subcommand("interpolate", "Extract the mesh of a convex combination of codes");
    c_interp->add_option("--checkpoint", interp.checkpoint)->required();
    c_interp->add_option("--indices", interp.indices)->delimiter(',')->required();
    c_interp->add_option("--alphas", interp.alphas)->delimiter(',')->required();
    c_interp->add_option("--resolution", interp.resolution)->capture_default_str();
    c_interp->add_option("--out", interp.out)->required();
    c_interp->add_option("--threads", interp.threads)->capture_default_str();

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "Generate a cohort of novel shapes");
    c_gen->add_option("--checkpoint", gen.checkpoint)->required();
    c_gen->add_option("--num", gen.num)->capture_default_str();
    c_gen->add_option("--interp-count", gen.interp_count)->capture_default_str();
    c_gen->add_option("--seed", gen.seed)->capture_default_str();
    c_gen->add_option("--resolution", gen.resolution)->capture_default_str();
    c_gen->add_option("--out-dir", gen.out_dir)->required();
    c_gen->add_option("--threads", gen.threads)->capture_default_str();

    auto* c_eval = app.add_subcommand("evaluate", "Chamfer-distance reports");
    c_eval->require_subcommand(1);
    ReconReportArgs rr;
    auto* c_recon = c_eval->add_subcommand("recon", "Reconstruction distance per training shape");
    c_recon->add_option("--checkpoint", rr.checkpoint)->required();
    c_recon->add_option("--samples", rr.samples)->required();
    c_recon->add_option("--out", rr.out)->required();
    c_recon->add_option("--resolution", rr.resolution)->capture_default_str();
    c_recon->add_option("--eval-points", rr.eval_points)->capture_default_str();
    c_recon->add_option("--seed", rr.seed)->capture_default_str();
    c_recon->add_option("--threads", rr.threads)->capture_default_str();
    PairwiseArgs pw;
    auto* c_pair = c_eval->add_subcommand("pairwise", "Distance for every pair of meshes in a directory");
    c_pair->add_option("--mesh-dir", pw.mesh_dir)->required();
    c_pair->add_option("--out", pw.out)->required();
    c_pair->add_option("--eval-points", pw.eval_points)->capture_default_str();
    c_pair->add_option("--seed", pw.seed)->capture_default_str();
    c_pair->add_option("--threads", pw.threads)->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << one_line(e.what()) << "\n" << kSynopsis;
        return 2;
    }

    try {
        if (c_sample->parsed()) cmd_sample(sample, out);
        else if (c_train->parsed()) cmd_train(tr, out);
        else if (c_rec->parsed()) cmd_reconstruct(rec, out);
        else if (c_interp->parsed()) cmd_interpolate(interp, out);
        else if (c_gen->parsed()) cmd_generate(gen, out);
        else if (c_recon->parsed()) cmd_recon_report(rr, out);
        else if (c_pair->parsed()) cmd_pairwise_report(pw, out);
    } catch (const Error& e) {
        err << "error: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}

}  // namespace nsdf
