// Acceptance gate: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "fixtures.hpp"
#include "nsdf/checkpoint.hpp"
#include "nsdf/cli.hpp"
#include "nsdf/cohort.hpp"
#include "nsdf/isosurface.hpp"
#include "nsdf/kdtree.hpp"
#include "nsdf/trainer.hpp"

using namespace nsdf;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [x]");
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------- criterion 1

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    const double h = 1e-5;
    std::size_t loss_bad = 0, loss_total = 0, grad_bad = 0, grad_total = 0;
    double worst_loss = 0.0, worst_grad = 0.0;
    const int draws = 20;
    int accepted = 0, flat = 0;
    for (std::uint64_t seed = 0; accepted < draws; ++seed) {
        const Architecture arch = fixtures::tiny_arch();
        FieldParams p = fixtures::random_params(arch, 7000 + seed);
        LatentCode z = fixtures::random_code(arch.latent_dim, 8000 + seed, 0.5);
        const auto s = fixtures::sphere_samples(0.5, 16, 9000 + seed);
        const auto off = fixtures::uniform_cube(16, 1.1, 10000 + seed);
        std::vector<Vec3> pts = s.points;
        pts.insert(pts.end(), off.begin(), off.end());
        const auto grads = spatial_gradient(p, z, pts);

        // With beta = 100 a draw can saturate every unit, leaving |grad f| far
        // below what a central difference resolves (eps |f| / h ~ 1e-12).
        double steepest = 0.0;
        for (const Vec3& g : grads) steepest = std::max(steepest, g.cwiseAbs().maxCoeff());
        if (steepest < 1e-3) {
            ++flat;
            continue;
        }
        ++accepted;
        const SurfaceBatch batch{s.points, s.normals};
        const LossWeights w{0.5, 1e-4, false};
        const LossGradients g = loss_gradients(p, z, batch, off, w);

        auto check_block = [&](std::span<double> values, std::span<const double> analytic) {
            std::vector<double> fd(values.size());
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                values[i] = saved + h;
                const double up = shape_loss(p, z, batch, off, w).total;
                values[i] = saved - h;
                const double down = shape_loss(p, z, batch, off, w).total;
                values[i] = saved;
                fd[i] = (up - down) / (2 * h);
            }
            double scale = 0.0;
            for (double v : fd) scale = std::max(scale, std::abs(v));
            for (std::size_t i = 0; i < values.size(); ++i) {
                ++loss_total;
                const double denom = std::max(std::abs(fd[i]), scale);
                if (denom > 0) worst_loss = std::max(worst_loss, std::abs(analytic[i] - fd[i]) / denom);
                if (!fixtures::close_in_block(analytic[i], fd[i], scale, 1e-4)) ++loss_bad;
            }
        };
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            auto& pl = p.layers[l];
            const auto& gl = g.params.layers[l];
            check_block({pl.weight.data(), static_cast<std::size_t>(pl.weight.size())},
                        {gl.weight.data(), static_cast<std::size_t>(gl.weight.size())});
            check_block({pl.bias.data(), static_cast<std::size_t>(pl.bias.size())},
                        {gl.bias.data(), static_cast<std::size_t>(gl.bias.size())});
        }
        check_block({z.data(), static_cast<std::size_t>(z.size())},
                    {g.code.data(), static_cast<std::size_t>(g.code.size())});

        // spatial gradient at every point; the instance is one block
        std::vector<Vec3> fd(pts.size());
        double scale = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            for (int c = 0; c < 3; ++c) {
                std::array<Vec3, 2> xs{pts[i], pts[i]};
                xs[0][c] += h;
                xs[1][c] -= h;
                const auto f = forward(p, z, xs);
                fd[i][c] = (f[0] - f[1]) / (2 * h);
            }
            scale = std::max(scale, fd[i].cwiseAbs().maxCoeff());
        }
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (int c = 0; c < 3; ++c) {
                ++grad_total;
                worst_grad = std::max(worst_grad, std::abs(grads[i][c] - fd[i][c]) / std::max(std::abs(fd[i][c]), scale));
                if (!fixtures::close_in_block(grads[i][c], fd[i][c], scale, 1e-6)) ++grad_bad;
            }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.require(loss_bad == 0, fmt::format("loss gradients {}/{} within rtol 1e-4 over {} instances (worst {:.2e}, {} flat draws skipped)",
                                         loss_total - loss_bad, loss_total, draws, worst_loss, flat));
    o.require(grad_bad == 0, fmt::format("spatial gradients {}/{} within rtol 1e-6 (worst {:.2e})",
                                         grad_total - grad_bad, grad_total, worst_grad));
    o.require(secs < 60.0, fmt::format("{:.1f}s < 60s", secs));
    return o;
}

// ---------------------------------------------------------------- criterion 2

long euler_characteristic(const TriangleMesh& m, bool& closed) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
    for (const Face& f : m.faces)
        for (std::size_t e = 0; e < 3; ++e) ++edges[std::minmax(f[e], f[(e + 1) % 3])];
    closed = true;
    for (const auto& [key, n] : edges) closed = closed && n == 2;
    return static_cast<long>(m.vertices.size()) - static_cast<long>(edges.size()) + static_cast<long>(m.faces.size());
}

Outcome marching_cubes_oracle() {
    const auto t0 = Clock::now();
    Outcome o;
    ScalarGrid g;
    g.resolution = 64;
    g.lo = -1.0;
    g.hi = 1.0;
    g.values.resize(64 * 64 * 64);
    for (int k = 0; k < 64; ++k)
        for (int j = 0; j < 64; ++j)
            for (int i = 0; i < 64; ++i) g.values[g.index(i, j, k)] = g.point(i, j, k).norm() - 0.6;
    const TriangleMesh m = marching_cubes(g);
    bool closed = false;
    const long chi = euler_characteristic(m, closed);
    const double diag = std::sqrt(3.0) * g.spacing();
    double worst = 0.0;
    for (const Vec3& v : m.vertices) worst = std::max(worst, std::abs(v.norm() - 0.6));
    o.require(closed && chi == 2, fmt::format("sphere: closed={} V-E+F={}", closed, chi));
    o.require(worst <= 2 * diag, fmt::format("max |r-0.6| = {:.2e} <= {:.2e}", worst, 2 * diag));

    ScalarGrid cell;
    cell.resolution = 2;
    cell.lo = 0.0;
    cell.hi = 1.0;
    cell.values.assign(8, 1.0);
    cell.values[0] = -1.0;
    const TriangleMesh one = marching_cubes(cell);
    bool midpoints = one.vertices.size() == 3;
    for (const Vec3& v : one.vertices) {
        const std::array<double, 3> c{v.x(), v.y(), v.z()};
        midpoints = midpoints && std::count(c.begin(), c.end(), 0.5) == 1 && std::count(c.begin(), c.end(), 0.0) == 2;
    }
    o.require(one.faces.size() == 1 && midpoints,
              fmt::format("one-negative-corner cell: {} triangle(s) at edge midpoints={}", one.faces.size(), midpoints));
    const double secs = seconds_since(t0);
    o.require(secs < 30.0, fmt::format("{:.1f}s < 30s", secs));
    return o;
}

// ---------------------------------------------------------------- criterion 3

double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto side = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        double sum = 0.0;
        for (const Vec3& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    return side(a, b) + side(b, a);
}

Outcome chamfer_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<std::size_t> size(1, 500);
    double worst = 0.0;
    bool symmetric = true;
    for (int pair = 0; pair < 50; ++pair) {
        const auto a = fixtures::uniform_cube(size(rng), 1.0, rng());
        const auto b = fixtures::uniform_cube(size(rng), 0.7, rng());
        const double cd = chamfer_distance(a, b);
        worst = std::max(worst, std::abs(cd - brute_chamfer(a, b)));
        symmetric = symmetric && cd == chamfer_distance(b, a);
    }
    Outcome o;
    o.require(worst <= 1e-12, fmt::format("50 pairs: max |indexed - brute| = {:.1e} <= 1e-12", worst));
    o.require(symmetric, "symmetry exact");
    const double secs = seconds_since(t0);
    o.require(secs < 30.0, fmt::format("{:.1f}s < 30s", secs));
    return o;
}

// ---------------------------------------------------------------- criterion 4

double mean_vertex_radius(const TriangleMesh& m) {
    double sum = 0.0;
    for (const Vec3& v : m.vertices) sum += v.norm();
    return m.vertices.empty() ? 0.0 : sum / static_cast<double>(m.vertices.size());
}

TrainConfig desk_config() {
    TrainConfig c;
    c.arch.hidden_width = 64;
    c.arch.latent_dim = 8;
    c.surface_batch_size = 128;
    c.tau = 0.5;
    c.lambda = 1e-4;
    return c;
}

Outcome single_shape_overfit() {
    const auto t0 = Clock::now();
    TrainConfig c = desk_config();
    c.epochs = 2000;  // one shape: one step per epoch
    c.seed = 4;
    SurfaceSampleSet set;
    set.shapes.push_back(fixtures::sphere_samples(0.75, 2000, 40));
    const Checkpoint ck = train(c, set);
    const LatentCode z = ck.code(0);

    const auto held = fixtures::sphere_samples(0.75, 1000, 41);
    double mean_abs = 0.0;
    for (double v : forward(ck.params, z, held.points)) mean_abs += std::abs(v);
    mean_abs /= 1000.0;

    const auto ball = fixtures::uniform_ball(10000, 1.0, 42);
    double eik = 0.0;
    for (const Vec3& g : spatial_gradient(ck.params, z, ball)) eik += std::abs(g.norm() - 1.0);
    eik /= 10000.0;

    const double radius = mean_vertex_radius(reconstruct_shape(ck, z, 64));
    const double secs = seconds_since(t0);
    Outcome o;
    o.require(mean_abs < 0.01, fmt::format("mean |f| on held-out surface {:.2e} < 0.01", mean_abs));
    o.require(eik < 0.1, fmt::format("mean ||grad f|-1| in unit ball {:.3f} < 0.1", eik));
    o.require(std::abs(radius - 0.75) <= 0.02, fmt::format("mesh radius {:.4f} in 0.75 +- 0.02", radius));
    o.require(secs <= 600.0, fmt::format("{:.0f}s <= 600s", secs));
    return o;
}

// ---------------------------------------------------------- criteria 5 and 6

constexpr std::array<double, 8> kRadii{0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65};

struct SphereModel {
    Checkpoint checkpoint;
    SurfaceSampleSet samples;
    double train_seconds = 0.0;
};

const SphereModel& sphere_model() {
    static const SphereModel model = [] {
        const auto t0 = Clock::now();
        SphereModel m;
        for (std::size_t k = 0; k < kRadii.size(); ++k)
            m.samples.shapes.push_back(fixtures::sphere_samples(kRadii[k], 30000, 500 + k));
        TrainConfig c = desk_config();
        c.epochs = 1500;
        c.lr_halving_period = 500;
        c.seed = 5;
        m.checkpoint = train(c, m.samples);
        m.train_seconds = seconds_since(t0);
        return m;
    }();
    return model;
}

Outcome multi_shape_autodecoder() {
    const auto t0 = Clock::now();
    const SphereModel& m = sphere_model();
    const DistanceReport r = reconstruction_report(m.checkpoint, m.samples, 64, kDefaultEvalPoints, 6);
    double worst = 0.0;
    for (double d : r.distances) worst = std::max(worst, d);

    const LatentCode mid = combine_codes(m.checkpoint.codes, {{0, 7}, {0.5, 0.5}});
    const double radius = mean_vertex_radius(reconstruct_shape(m.checkpoint, mid, 64));
    const double secs = seconds_since(t0);
    Outcome o;
    o.require(worst < 1e-3, fmt::format("max reconstruction chamfer {:.2e} < 1e-3 (mean {:.2e})", worst, r.summary.mean));
    o.require(radius > 0.32 && radius < 0.63, fmt::format("alpha=0.5 of r=0.30,0.65 -> radius {:.4f} in (0.32, 0.63)", radius));
    o.require(secs <= 1800.0, fmt::format("{:.0f}s incl. {:.0f}s training <= 1800s", secs, m.train_seconds));
    return o;
}

Outcome variance_ordering() {
    const auto t0 = Clock::now();
    const SphereModel& m = sphere_model();
    const double model_secs = m.train_seconds;
    int wins = 0;
    std::string vars;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        double var[2];
        int idx = 0;
        for (std::size_t interp : {2u, 8u}) {
            const Cohort c = generate_cohort(m.checkpoint, 50, interp, 100 * seed + interp, 64);
            const DistanceReport r = pairwise_report(c.meshes, 5000, seed);
            var[idx++] = r.summary.stddev * r.summary.stddev;
        }
        wins += var[1] < var[0];
        vars += fmt::format(" {:.1e}/{:.1e}", var[0], var[1]);
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.require(wins >= 4, fmt::format("var(m=8) < var(m=2) in {}/5 seeds (m=2/m=8:{})", wins, vars));
    o.require(secs <= 1200.0, fmt::format("{:.0f}s <= 1200s (model shared with criterion 5, trained in {:.0f}s)", secs, model_secs));
    return o;
}

// ---------------------------------------------------------------- criterion 7

Outcome determinism() {
    fixtures::TempDir dir("acceptance");
    const std::string meshes = dir.file("meshes");
    std::filesystem::create_directories(meshes);
    for (int i = 0; i < 3; ++i)
        save_mesh(fixtures::icosphere(0.4 + 0.2 * i, 3), fmt::format("{}/sphere_{}.obj", meshes, i));
    write_file_atomic(dir.file("run.cfg"),
                      "hidden_width = 64\nlatent_dim = 8\nepochs = 5\nsurface_batch_size = 128\nseed = 12\n");
    std::ostringstream sink;
    auto cli = [&](std::vector<std::string> args) {
        const int status = run_cli(args, sink, sink);
        if (status != 0) throw std::runtime_error(fmt::format("nsdf {} failed: {}", args[0], sink.str()));
    };
    auto dir_bytes = [](const std::string& d) {
        std::map<std::string, std::string> files;
        for (const auto& e : std::filesystem::directory_iterator(d))
            files[e.path().filename().string()] = read_file(e.path().string());
        return files;
    };

    Outcome o;
    cli({"sample", "--input-dir", meshes, "--out", dir.file("s1.nsds"), "--points", "20000", "--seed", "3"});
    cli({"sample", "--input-dir", meshes, "--out", dir.file("s2.nsds"), "--points", "20000", "--seed", "3"});
    o.require(read_file(dir.file("s1.nsds")) == read_file(dir.file("s2.nsds")), "sample byte-identical");

    cli({"train", "--samples", dir.file("s1.nsds"), "--config", dir.file("run.cfg"), "--out", dir.file("a.nsdf"),
         "--deterministic"});
    cli({"train", "--samples", dir.file("s1.nsds"), "--config", dir.file("run.cfg"), "--out", dir.file("b.nsdf"),
         "--deterministic"});
    o.require(read_file(dir.file("a.nsdf")) == read_file(dir.file("b.nsdf")), "train checkpoints byte-identical");

    for (const char* out : {"g1", "g2"})
        cli({"generate", "--checkpoint", dir.file("a.nsdf"), "--num", "6", "--interp-count", "2", "--seed", "21",
             "--resolution", "32", "--out-dir", dir.file(out)});
    const auto g1 = dir_bytes(dir.file("g1")), g2 = dir_bytes(dir.file("g2"));
    o.require(g1 == g2 && g1.size() == 7, fmt::format("generate byte-identical ({} files)", g1.size()));
    return o;
}

// ---------------------------------------------------------------- criterion 8

Outcome grid_throughput() {
    Architecture a;
    a.hidden_width = 64;
    a.latent_dim = 8;
    const FieldParams p = init_params(a, 8, InitScheme::Geometric);
    const LatentCode z = fixtures::random_code(8, 9, 0.01);
    const unsigned threads = resolve_threads(0);

    auto t0 = Clock::now();
    const ScalarGrid parallel = eval_grid(p, z, 256, -kDefaultGridHalfwidth, kDefaultGridHalfwidth, {threads});
    const double par_secs = seconds_since(t0);
    t0 = Clock::now();
    const ScalarGrid serial = eval_grid(p, z, 256, -kDefaultGridHalfwidth, kDefaultGridHalfwidth, {1});
    const double ser_secs = seconds_since(t0);

    Outcome o;
    o.require(par_secs <= 120.0, fmt::format("R=256 grid in {:.1f}s on {} thread(s) <= 120s", par_secs, threads));
    o.require(parallel.values == serial.values, fmt::format("bitwise equal to single-threaded run ({:.1f}s)", ser_secs));
    return o;
}

}  // namespace

// Optional arguments select criteria by number; default is all of them.
int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"marching-cubes oracle", marching_cubes_oracle},
        {"chamfer oracle", chamfer_oracle},
        {"single-shape overfit", single_shape_overfit},
        {"multi-shape auto-decoder", multi_shape_autodecoder},
        {"variance ordering", variance_ordering},
        {"determinism", determinism},
        {"grid throughput", grid_throughput},
    };
    std::vector<std::size_t> selected;
    for (int a = 1; a < argc; ++a) selected.push_back(std::stoul(argv[a]) - 1);
    if (selected.empty())
        for (std::size_t i = 0; i < criteria.size(); ++i) selected.push_back(i);
    int failed = 0;
    for (std::size_t i : selected) {
        if (i >= criteria.size()) {
            std::cerr << "no criterion " << i + 1 << "\n";
            return 2;
        }
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = fmt::format("threw: {}", e.what());
        }
        failed += !o.pass;
        std::cout << fmt::format("{} {}. {}: {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail)
                  << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", selected.size() - static_cast<std::size_t>(failed),
                             selected.size())
              << std::endl;
    return failed == 0 ? 0 : 1;
}
