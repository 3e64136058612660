#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "nsdf/checkpoint.hpp"
#include "nsdf/kdtree.hpp"
#include "nsdf/trainer.hpp"

using namespace nsdf;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidArgument;
}

TrainConfig desk_config() {
    TrainConfig c;
    c.arch.hidden_width = 32;
    c.arch.latent_dim = 4;
    c.arch.layer_count = 4;
    c.arch.skip_layer = 2;
    c.surface_batch_size = 64;
    c.epochs = 3;
    c.knn_k = 10;
    c.seed = 17;
    return c;
}

SurfaceSampleSet spheres(std::initializer_list<double> radii, std::size_t count) {
    SurfaceSampleSet set;
    std::uint64_t seed = 1;
    for (double r : radii) set.shapes.push_back(fixtures::sphere_samples(r, count, seed++));
    return set;
}

}  // namespace

TEST_CASE("local sigmas: hand examples") {
    const std::vector<Vec3> two{{0, 0, 0}, {1, 0, 0}};
    CHECK(local_sigmas(two, 1) == std::vector<double>{1.0, 1.0});

    std::vector<Vec3> lattice;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) lattice.emplace_back(i, j, k);
    for (double s : local_sigmas(lattice, 1)) CHECK(s == 1.0);

    // k capped at size - 1: the farthest other point
    const std::vector<Vec3> three{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
    CHECK(local_sigmas(three, 10) == std::vector<double>{3.0, 2.0, 3.0});

    CHECK(code_of([] { local_sigmas(std::vector<Vec3>{Vec3::Zero()}, 1); }) == ErrorCode::TooFewPoints);
}

TEST_CASE("local sigmas equal brute-force k-NN exactly") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto pts = fixtures::uniform_cube(500 * (seed + 1), 1.0, seed);
        const std::size_t k = 1 + 13 * seed;
        const auto sig = local_sigmas(pts, k);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            std::vector<double> d;
            for (std::size_t j = 0; j < pts.size(); ++j)
                if (j != i) d.push_back(squared_distance(pts[i], pts[j]));
            std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
            CHECK(sig[i] == std::sqrt(d[k - 1]));
        }
    }
}

TEST_CASE("off-surface sampling") {
    const auto s = fixtures::sphere_samples(1.0, 500, 3);
    SUBCASE("degenerate distributions") {
        const std::vector<double> zero(s.points.size(), 0.0);
        const auto out = sample_off_surface(s.points, zero, 101, 0.0, 9);
        REQUIRE(out.size() == 101);
        std::size_t on_surface = 0, origin = 0;
        for (const Vec3& p : out) {
            const bool surf = std::find(s.points.begin(), s.points.end(), p) != s.points.end();
            on_surface += surf;
            origin += p == Vec3::Zero();
            CHECK((surf || p == Vec3::Zero()));
        }
        CHECK(on_surface == 51);
        CHECK(origin == 50);
    }
    SUBCASE("symmetric mixture has mean near zero") {
        const auto sig = local_sigmas(s.points, 50);
        const auto out = sample_off_surface(s.points, sig, 10000, 1.1, 4);
        Vec3 mean = Vec3::Zero();
        for (const Vec3& p : out) mean += p;
        mean /= 10000.0;
        for (int c = 0; c < 3; ++c) CHECK(std::abs(mean[c]) <= 0.05);
    }
    SUBCASE("deterministic and validated") {
        const std::vector<double> sig(s.points.size(), 0.1);
        CHECK(sample_off_surface(s.points, sig, 50, 1.1, 5) == sample_off_surface(s.points, sig, 50, 1.1, 5));
        CHECK(code_of([&] { sample_off_surface({}, {}, 10, 1.1, std::uint64_t{1}); }) == ErrorCode::EmptySurfaceSet);
    }
}

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    CHECK(learning_rate_at(0, c) == 1e-3);
    CHECK(learning_rate_at(499, c) == 1e-3);
    CHECK(learning_rate_at(500, c) == 5e-4);
    CHECK(learning_rate_at(4999, c) == doctest::Approx(1.953125e-6).epsilon(1e-15));
    CHECK(learning_rate_at(4999, c) == 1e-3 * std::pow(0.5, 9));
    double prev = learning_rate_at(0, c);
    for (std::uint64_t e = 1; e < 5000; ++e) {
        const double lr = learning_rate_at(e, c);
        CHECK(lr <= prev);
        if (e % 500 != 0) CHECK(lr == prev);
        prev = lr;
    }
}

TEST_CASE("adam: first step, zero gradient, mismatch") {
    std::vector<double> x{2.0}, m{0.0}, v{0.0};
    std::vector<double> g{0.5};
    std::uint64_t step = 0;
    adam_step(x, g, m, v, step, 0.1, {});
    CHECK(step == 1);
    CHECK(std::abs((2.0 - x[0]) - 0.1 * 0.5 / (0.5 + 1e-8)) <= 1e-15);
    CHECK(std::abs((2.0 - x[0]) - 0.1) <= 1e-7);

    std::vector<double> y{1.5, -2.0}, my{0.0, 0.0}, vy{0.3, 0.7}, zero{0.0, 0.0};
    std::uint64_t sy = 7;
    adam_step(y, zero, my, vy, sy, 0.1, {});
    CHECK(y == std::vector<double>{1.5, -2.0});
    CHECK(sy == 8);

    std::vector<double> bad{1.0};
    CHECK(code_of([&] { adam_step(y, bad, my, vy, sy, 0.1, {}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("adam: three steps on theta^2 match a hand trace") {
    // textbook Adam on f(t) = t^2 from t = 1, lr 0.1, defaults
    double t = 1.0, m = 0.0, v = 0.0;
    std::vector<double> expected;
    for (int k = 1; k <= 3; ++k) {
        const double g = 2 * t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, k));
        const double vh = v / (1 - std::pow(0.999, k));
        t -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        expected.push_back(t);
    }
    std::vector<double> x{1.0}, mm{0.0}, vv{0.0};
    std::uint64_t step = 0;
    for (int k = 0; k < 3; ++k) {
        const std::vector<double> g{2 * x[0]};
        adam_step(x, g, mm, vv, step, 0.1, {});
        CHECK(std::abs(x[0] - expected[static_cast<std::size_t>(k)]) <= 1e-12);
    }
    CHECK(vv[0] >= 0.0);
}

TEST_CASE("train: zero epochs returns the initialization") {
    TrainConfig c = desk_config();
    c.epochs = 0;
    c.arch.latent_dim = 64;
    const SurfaceSampleSet set = spheres({0.3, 0.5, 0.7, 0.4}, 50);
    const Checkpoint ck = train(c, set);
    CHECK(ck.epoch == 0);
    CHECK(ck.shape_count() == 4);
    const FieldParams init = init_params(c.arch, c.seed, c.init_scheme);
    for (std::size_t l = 0; l < init.layers.size(); ++l) CHECK(ck.params.layers[l].weight == init.layers[l].weight);
    // codes ~ N(0, 0.01^2): 256 draws
    const double n = static_cast<double>(ck.codes.size());
    const double mean = ck.codes.sum() / n;
    const double sd = std::sqrt((ck.codes.array() - mean).square().sum() / n);
    CHECK(std::abs(mean) <= 5 * 0.01 / std::sqrt(n));
    CHECK(sd == doctest::Approx(0.01).epsilon(0.15));
}

TEST_CASE("train: every shape visited once per epoch") {
    TrainConfig c = desk_config();
    c.epochs = 4;
    const SurfaceSampleSet set = spheres({0.3, 0.5, 0.7}, 60);
    const Checkpoint ck = train(c, set);
    REQUIRE(ck.optimizer);
    CHECK(ck.optimizer->param_step == 12);
    for (std::uint64_t s : ck.optimizer->code_steps) CHECK(s == 4);
}

TEST_CASE("train: bitwise reproducible, resume equals uninterrupted") {
    TrainConfig c = desk_config();
    const SurfaceSampleSet set = spheres({0.4, 0.6}, 80);
    const Checkpoint a = train(c, set);
    const Checkpoint b = train(c, set);
    CHECK(encode_checkpoint(a) == encode_checkpoint(b));

    TrainConfig first = c;
    first.epochs = 1;
    const Checkpoint half = train(first, set);
    const Checkpoint resumed = train(c, set, half);
    CHECK(encode_checkpoint(resumed) == encode_checkpoint(a));

    TrainOptions threaded;
    threaded.threads = 3;
    CHECK(encode_checkpoint(train(c, set, std::nullopt, threaded)) == encode_checkpoint(a));
}

TEST_CASE("train: metrics and errors") {
    TrainConfig c = desk_config();
    const SurfaceSampleSet set = spheres({0.5}, 40);
    std::vector<EpochMetrics> seen;
    TrainOptions opts;
    opts.on_epoch = [&](const EpochMetrics& m) { seen.push_back(m); };
    train(c, set, std::nullopt, opts);
    REQUIRE(seen.size() == 3);
    CHECK(seen[2].epoch == 2);
    CHECK(seen[0].lr == 1e-3);
    CHECK(seen[0].mean_total == doctest::Approx(seen[0].mean_surface + seen[0].mean_normal +
                                                0.5 * seen[0].mean_eikonal + 1e-4 * seen[0].mean_codereg));
    CHECK(metrics_csv_header() == "epoch,mean_total,mean_surface,mean_normal,mean_eikonal,mean_codereg,lr\n");
    CHECK(metrics_csv_row(seen[0]).rfind("0,", 0) == 0);

    const Checkpoint ck = train(c, set);
    TrainConfig other = c;
    other.arch.hidden_width = 16;
    CHECK(code_of([&] { train(other, set, ck); }) == ErrorCode::ConfigMismatch);
    CHECK(code_of([&] { train(c, SurfaceSampleSet{}); }) == ErrorCode::EmptySurfaceSet);

    TrainConfig blowup = c;
    blowup.initial_lr = 1e300;
    blowup.epochs = 50;
    CHECK(code_of([&] { train(blowup, set); }) == ErrorCode::NonFiniteLoss);
}

TEST_CASE("train: single sphere overfits") {
    // radius 0.75, 2000 samples, width 64, d = 8, 2000 steps
    TrainConfig c;
    c.arch.hidden_width = 64;
    c.arch.latent_dim = 8;
    c.surface_batch_size = 128;
    c.epochs = 2000;
    c.seed = 1;
    SurfaceSampleSet set;
    set.shapes.push_back(fixtures::sphere_samples(0.75, 2000, 21));
    std::vector<double> totals;
    TrainOptions opts;
    opts.on_epoch = [&](const EpochMetrics& m) { totals.push_back(m.mean_total); };
    const Checkpoint ck = train(c, set, std::nullopt, opts);

    const auto held = fixtures::sphere_samples(0.75, 1000, 999);
    const auto f = forward(ck.params, ck.code(0), held.points);
    double mean_abs = 0.0;
    for (double v : f) mean_abs += std::abs(v);
    mean_abs /= static_cast<double>(f.size());
    MESSAGE("mean |f| on held-out surface: " << mean_abs);
    CHECK(mean_abs < 0.01);

    const auto tail = [&](std::size_t from, std::size_t n) {
        return std::accumulate(totals.begin() + static_cast<std::ptrdiff_t>(from),
                               totals.begin() + static_cast<std::ptrdiff_t>(from + n), 0.0) /
               static_cast<double>(n);
    };
    MESSAGE("first epoch loss " << totals.front() << ", last " << totals.back());
    CHECK(totals.back() < 0.5 * totals.front());
    CHECK(tail(totals.size() - 50, 50) < 0.5 * tail(0, 50));
}
