#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "polylab/kernels.hpp"
#include "polylab/polymer.hpp"
#include "polylab/stats.hpp"

using namespace polylab;

namespace {
const double kOrigin[3] = {0.0, 0.0, 0.0};
}

TEST_CASE("single-slab weight matches the compensated increment exactly") {
    NoiseSpec noise(0.1, 0.2, 314);
    PolymerEnv env(noise, 0.7);
    Frame id = Frame::identity();
    double start[3] = {0.21, -0.4, 0.13};

    SmcOptions one;
    one.particles = 1;
    one.resample = false;

    auto inc = mollified_increment_full(noise, id, 0, start);
    auto est = estimate_Z(env, id, 1, start, one, 0, 0);
    double expect = env.beta * inc.value - 0.5 * env.beta * env.beta * env.v0 * noise.dt;
    CHECK(est.log_z == doctest::Approx(expect).epsilon(1e-12));

    one.comp = Compensation::exact;
    auto este = estimate_Z(env, id, 1, start, one, 0, 0);
    double expecte = env.beta * inc.value - 0.5 * env.beta * env.beta * inc.variance;
    CHECK(este.log_z == doctest::Approx(expecte).epsilon(1e-12));
}

TEST_CASE("zero coupling gives unit normalizer identically") {
    NoiseSpec noise(0.1, 0.25, 9);
    PolymerEnv env(noise, 0.0);
    SmcOptions opts;
    opts.particles = 4;
    auto est = estimate_Z(env, Frame::identity(), 15, kOrigin, opts, 3, 0);
    CHECK(est.z == 1.0);
    CHECK(est.log_z == 0.0);
}

TEST_CASE("normalizer estimates are reproducible and stream-separated") {
    NoiseSpec noise(0.1, 0.25, 77);
    PolymerEnv env(noise, 0.5);
    SmcOptions opts;
    opts.particles = 8;
    auto a = estimate_Z(env, Frame::identity(), 10, kOrigin, opts, 4, 0, 2);
    auto b = estimate_Z(env, Frame::identity(), 10, kOrigin, opts, 4, 0, 2);
    auto c = estimate_Z(env, Frame::identity(), 10, kOrigin, opts, 4, 1, 2);
    auto d = estimate_Z(env, Frame::identity(), 10, kOrigin, opts, 4, 0, 3);
    CHECK(a.z == b.z);
    CHECK(a.z != c.z);
    CHECK(a.z != d.z);
}

TEST_CASE("normalizer is mean-one across disorder") {
    SmcOptions opts;
    opts.particles = 8;
    const int reps = 3000;
    const std::int64_t slabs = 20;

    Accumulator smc, naive, rev;
    for (int r = 0; r < reps; ++r) {
        NoiseSpec noise(0.1, 0.2, 1000 + r);
        PolymerEnv env(noise, 0.6);
        smc.add(estimate_Z(env, Frame::identity(), slabs, kOrigin, opts, 0, 0).z);
        SmcOptions plain = opts;
        plain.resample = false;
        naive.add(estimate_Z(env, Frame::identity(), slabs, kOrigin, plain, 0, 1).z);
        if (r < 1500) {
            rev.add(estimate_Z(env, Frame::time_reversal(slabs), slabs, kOrigin, opts, 0, 2).z);
        }
    }
    CHECK(std::abs(smc.mean() - 1.0) < 4.0 * smc.stderr_mean());
    CHECK(std::abs(naive.mean() - 1.0) < 4.0 * naive.stderr_mean());
    CHECK(std::abs(rev.mean() - 1.0) < 4.0 * rev.stderr_mean());
    CHECK(smc.stderr_mean() < 0.02);
}

TEST_CASE("exact per-slab compensation also averages to one on a coarse grid") {
    SmcOptions opts;
    opts.particles = 8;
    opts.comp = Compensation::exact;
    Accumulator acc;
    for (int r = 0; r < 1500; ++r) {
        NoiseSpec noise(0.1, 0.25, 5000 + r);
        PolymerEnv env(noise, 0.6);
        acc.add(estimate_Z(env, Frame::identity(), 20, kOrigin, opts, 0, 0).z);
    }
    CHECK(std::abs(acc.mean() - 1.0) < 4.0 * acc.stderr_mean());
}

TEST_CASE("prefix normalizers equal truncated runs bitwise") {
    NoiseSpec noise(0.1, 0.25, 321);
    PolymerEnv env(noise, 0.8);
    SmcOptions opts;
    opts.particles = 16;
    opts.ess_frac = 0.9;  // force frequent resampling
    std::vector<std::int64_t> cps = {6, 12, 24};
    auto full = estimate_Z(env, Frame::identity(), 24, kOrigin, opts, 11, 0, 0, cps);
    CHECK(full.resamples > 0);
    for (std::size_t i = 0; i < cps.size(); ++i) {
        auto part = estimate_Z(env, Frame::identity(), cps[i], kOrigin, opts, 11, 0);
        CHECK(full.z_prefix[i] == part.z);
        CHECK(full.log_z_prefix[i] == part.log_z);
    }
    CHECK(full.z_prefix[2] == full.z);
}

TEST_CASE("successive horizons agree in the mean under shared noise") {
    SmcOptions opts;
    opts.particles = 8;
    std::vector<std::int64_t> cps = {10, 20};
    Accumulator diff;
    for (int r = 0; r < 1500; ++r) {
        NoiseSpec noise(0.1, 0.25, 90000 + r);
        PolymerEnv env(noise, 0.6);
        auto est = estimate_Z(env, Frame::identity(), 20, kOrigin, opts, 0, 0, 0, cps);
        diff.add(est.z_prefix[1] - est.z_prefix[0]);
    }
    CHECK(std::abs(diff.mean()) < 4.0 * diff.stderr_mean());
}

TEST_CASE("resampling lowers the estimator variance at stronger coupling") {
    SmcOptions smc;
    smc.particles = 16;
    SmcOptions naive = smc;
    naive.resample = false;

    Accumulator with, without;
    const int reps = 1500;
    for (int r = 0; r < reps; ++r) {
        NoiseSpec noise(0.2, 0.25, 20000 + r);
        PolymerEnv env(noise, 0.8);
        with.add(estimate_Z(env, Frame::identity(), 40, kOrigin, smc, 0, 0).z);
        without.add(estimate_Z(env, Frame::identity(), 40, kOrigin, naive, 0, 1).z);
    }
    CHECK(std::abs(with.mean() - 1.0) < 4.0 * with.stderr_mean());
    CHECK(std::abs(without.mean() - 1.0) < 4.0 * without.stderr_mean());
    CHECK(with.variance() < 0.8 * without.variance());
}

TEST_CASE("integer cell shifts move estimates covariantly") {
    NoiseSpec noise(0.1, 0.25, 555);
    PolymerEnv env(noise, 0.7);
    SmcOptions opts;
    opts.particles = 8;
    double shifted_start[3] = {3 * noise.dx, -2 * noise.dx, 0.0};
    auto a = estimate_Z(env, Frame::shift(0, 3, -2, 0), 20, kOrigin, opts, 6, 0);
    auto b = estimate_Z(env, Frame::identity(), 20, shifted_start, opts, 6, 0);
    CHECK(a.log_z == doctest::Approx(b.log_z).epsilon(1e-9));
}

TEST_CASE("free paths and bridges have the conditioned Gaussian law") {
    CounterRng rng(12345);
    const std::int64_t slabs = 10;
    const double dt = 0.1;
    const double T = slabs * dt;
    double y[3] = {1.0, -0.5, 0.25};

    Accumulator end0, mid0;
    for (int r = 0; r < 20000; ++r) {
        auto free = sample_free_path(rng, kOrigin, slabs, dt);
        end0.add(free.pos.back()[0]);
        auto bridge = sample_bridge(rng, kOrigin, slabs, dt, y);
        for (int i = 0; i < 3; ++i) CHECK(bridge.pos.back()[i] == y[i]);
        mid0.add(bridge.pos[5][0]);
    }
    CHECK(std::abs(end0.mean()) < 4.0 * std::sqrt(T / 20000.0));
    CHECK(end0.variance() == doctest::Approx(T).epsilon(0.05));
    // bridge midpoint: mean y/2, variance T/4 per coordinate
    CHECK(mid0.mean() == doctest::Approx(0.5 * y[0]).epsilon(0.05));
    CHECK(mid0.variance() == doctest::Approx(T / 4.0).epsilon(0.06));

    CHECK_THROWS_AS(sample_free_path(rng, kOrigin, 0, dt), std::invalid_argument);
    CHECK_THROWS_AS(sample_bridge(rng, kOrigin, 5, 0.0, y), std::invalid_argument);
}

TEST_CASE("fixed-path weights tie the two compensation conventions together") {
    NoiseSpec noise(0.1, 0.25, 4242);
    PolymerEnv env(noise, 0.8);
    Frame id = Frame::identity();
    CounterRng rng(777);
    auto path = sample_free_path(rng, kOrigin, 12, noise.dt);

    auto wc = path_weight(env, id, path, nullptr, Compensation::continuum);
    auto we = path_weight(env, id, path, nullptr, Compensation::exact);
    double var_sum = 0.0;
    for (std::int64_t k = 0; k < 12; ++k)
        var_sum += increment_variance(noise, path.pos[static_cast<std::size_t>(k)].data());
    double gap = 0.5 * env.beta * env.beta * (var_sum - env.v0 * 12 * noise.dt);
    CHECK(wc.log_weight - we.log_weight == doctest::Approx(gap).epsilon(1e-12));
    CHECK(wc.endpoint[0] == path.pos.back()[0]);
    CHECK(wc.confined);

    PolymerEnv off(noise, 0.0);
    auto w0 = path_weight(off, id, path);
    CHECK(w0.log_weight == 0.0);

    Cuboid tight{{0.0, 0.0, 0.0}, 1e-6};
    auto wt = path_weight(env, id, path, &tight);
    CHECK_FALSE(wt.confined);
    CHECK(wt.log_weight == wc.log_weight);

    CHECK_THROWS_AS(path_weight(PolymerEnv(NoiseSpec(0.2, 0.25, 1), 0.5), id, path),
                    std::invalid_argument);
}

TEST_CASE("fixed paths average to one over disorder under exact compensation") {
    Frame id = Frame::identity();
    CounterRng rng(31337);
    auto path = sample_free_path(rng, kOrigin, 8, 0.1);
    Accumulator acc;
    for (int r = 0; r < 4000; ++r) {
        NoiseSpec noise(0.1, 0.25, 600000 + r);
        PolymerEnv env(noise, 0.9);
        acc.add(std::exp(path_weight(env, id, path, nullptr, Compensation::exact).log_weight));
    }
    CHECK(std::abs(acc.mean() - 1.0) < 4.0 * acc.stderr_mean());
    CHECK(acc.stderr_mean() < 0.02);
}

TEST_CASE("free bridge reproduces the heat kernel") {
    NoiseSpec noise(0.1, 0.25, 31);
    PolymerEnv env(noise, 0.0);
    SmcOptions opts;
    opts.particles = 32;
    double end[3] = {0.8, -0.4, 0.2};
    auto est = estimate_p2p(env, Frame::identity(), 20, kOrigin, end, opts, 0, 0);
    double rho = heat_kernel(2.0, 0.8 * 0.8 + 0.4 * 0.4 + 0.2 * 0.2);
    CHECK(est.z == doctest::Approx(rho).epsilon(1e-12));
    CHECK(est.end_mean[0] == doctest::Approx(end[0]).epsilon(1e-12));
    CHECK(est.end_mean[1] == doctest::Approx(end[1]).epsilon(1e-12));
    CHECK(est.end_mean[2] == doctest::Approx(end[2]).epsilon(1e-12));
}

TEST_CASE("point-to-point density is mean-one relative to the heat kernel") {
    SmcOptions opts;
    opts.particles = 8;
    double end[3] = {0.5, 0.5, -0.5};
    double rho = heat_kernel(2.0, 0.75);
    Accumulator acc;
    for (int r = 0; r < 2000; ++r) {
        NoiseSpec noise(0.1, 0.2, 40000 + r);
        PolymerEnv env(noise, 0.6);
        acc.add(estimate_p2p(env, Frame::identity(), 20, kOrigin, end, opts, 0, 0).z / rho);
    }
    CHECK(std::abs(acc.mean() - 1.0) < 4.0 * acc.stderr_mean());
    CHECK(acc.stderr_mean() < 0.03);
}

TEST_CASE("reversed windows match forward statistics in law") {
    SmcOptions opts;
    opts.particles = 8;
    const std::int64_t total = 24, window = 10;
    Accumulator fwd, bwd;
    for (int r = 0; r < 1200; ++r) {
        NoiseSpec noise(0.1, 0.25, 70000 + r);
        PolymerEnv env(noise, 0.6);
        bwd.add(estimate_time_reversed(env, total, window, kOrigin, opts, 0, 0).z);
        fwd.add(estimate_Z(env, Frame::identity(), window, kOrigin, opts, 0, 1).z);
    }
    CHECK(std::abs(bwd.mean() - 1.0) < 4.0 * bwd.stderr_mean());
    double se = std::hypot(fwd.stderr_mean(), bwd.stderr_mean());
    CHECK(std::abs(fwd.mean() - bwd.mean()) < 4.0 * se);
    // same window length, same law: spreads agree too
    CHECK(bwd.variance() == doctest::Approx(fwd.variance()).epsilon(0.35));

    PolymerEnv env(NoiseSpec(0.1, 0.25, 1), 0.5);
    CHECK_THROWS_AS(estimate_time_reversed(env, 10, 11, kOrigin, opts, 0, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_time_reversed(env, 10, 0, kOrigin, opts, 0, 0),
                    std::invalid_argument);
}

TEST_CASE("confinement only removes weight") {
    NoiseSpec noise(0.1, 0.25, 808);
    PolymerEnv env(noise, 0.7);
    SmcOptions free;
    free.particles = 32;
    free.resample = false;
    SmcOptions tight = free;
    tight.confine_half_width = 0.8;
    SmcOptions huge = free;
    huge.confine_half_width = 1e9;

    auto zf = estimate_Z(env, Frame::identity(), 20, kOrigin, free, 2, 0);
    auto zt = estimate_Z(env, Frame::identity(), 20, kOrigin, tight, 2, 0);
    auto zh = estimate_Z(env, Frame::identity(), 20, kOrigin, huge, 2, 0);
    CHECK(zt.z <= zf.z);
    CHECK(zt.killed > 0);
    CHECK(zh.z == zf.z);
    CHECK(zh.killed == 0);

    SmcOptions tiny = free;
    tiny.confine_half_width = 0.18;
    auto zz = estimate_Z(env, Frame::identity(), 20, kOrigin, tiny, 2, 0);
    CHECK(zz.ess_warning);
}

TEST_CASE("constrained estimates reproduce box survival at zero coupling") {
    const std::int64_t slabs = 10;
    const double dt = 0.1, hw = 1.5;
    NoiseSpec noise(dt, 0.25, 4711);
    PolymerEnv env(noise, 0.0);
    SmcOptions opts;
    opts.particles = 8000;
    opts.resample = false;
    opts.ess_warn_frac = 0.0;
    auto est = estimate_constrained(env, Frame::identity(), slabs, kOrigin, hw, -1.0, opts, 0, 0);

    // independent path-only control with the same slab monitoring
    CounterRng rng(999);
    int inside = 0;
    const int n = 8000;
    for (int r = 0; r < n; ++r) {
        auto path = sample_free_path(rng, kOrigin, slabs, dt);
        bool ok = true;
        for (const auto& p : path.pos)
            if (std::abs(p[0]) > hw || std::abs(p[1]) > hw || std::abs(p[2]) > hw) {
                ok = false;
                break;
            }
        inside += ok;
    }
    double ref = static_cast<double>(inside) / n;
    double se = std::sqrt(2.0 * ref * (1.0 - ref) / n);
    CHECK(std::abs(est.z - ref) < 4.0 * se);
    CHECK(est.z > 0.2);

    // truncation semantics
    auto capped = estimate_constrained(env, Frame::identity(), slabs, kOrigin, hw, 0.5 * est.z,
                                       opts, 0, 0);
    CHECK(capped.z == 0.5 * est.z);
    auto zero = estimate_constrained(env, Frame::identity(), slabs, kOrigin, hw, 0.0, opts, 0, 0);
    CHECK(zero.z == 0.0);
    auto loose = estimate_constrained(env, Frame::identity(), slabs, kOrigin, hw, 1e9, opts, 0, 0);
    CHECK(loose.z == est.z);
    CHECK_THROWS_AS(
        estimate_constrained(env, Frame::identity(), slabs, kOrigin, 0.0, 1.0, opts, 0, 0),
        std::invalid_argument);
}

TEST_CASE("constrained estimates in far-apart boxes decorrelate") {
    SmcOptions opts;
    opts.particles = 16;
    opts.resample = false;
    opts.ess_warn_frac = 0.0;
    double za[3] = {-4.0, 0.0, 0.0};
    double zb[3] = {4.0, 0.0, 0.0};
    std::vector<double> xs, ys;
    for (int r = 0; r < 500; ++r) {
        NoiseSpec noise(0.1, 0.25, 80000 + r);
        PolymerEnv env(noise, 0.7);
        xs.push_back(estimate_constrained(env, Frame::identity(), 10, za, 1.0, -1.0, opts, 0, 0).z);
        ys.push_back(estimate_constrained(env, Frame::identity(), 10, zb, 1.0, -1.0, opts, 0, 1).z);
    }
    Accumulator ax, ay;
    for (double v : xs) ax.add(v);
    for (double v : ys) ay.add(v);
    Accumulator prod;
    for (std::size_t i = 0; i < xs.size(); ++i)
        prod.add((xs[i] - ax.mean()) * (ys[i] - ay.mean()));
    CHECK(std::abs(prod.mean()) < 4.0 * prod.stderr_mean());
}

TEST_CASE("endpoint statistics are diffusive without disorder") {
    NoiseSpec noise(0.1, 0.25, 60);
    PolymerEnv env(noise, 0.0);
    SmcOptions opts;
    opts.particles = 20000;
    opts.resample = false;
    const std::int64_t slabs = 20;
    double T = slabs * noise.dt;
    auto est = estimate_Z(env, Frame::identity(), slabs, kOrigin, opts, 0, 0);
    CHECK(est.ess_final == doctest::Approx(20000.0).epsilon(1e-12));
    CHECK(est.end_msd == doctest::Approx(3.0 * T).epsilon(0.03));
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(est.end_mean[i]) < 4.0 * std::sqrt(T / opts.particles));

    auto rep = polymer_endpoint_stats(env, Frame::identity(), slabs, kOrigin, opts, 0, 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(rep.mean_scaled[i]) < 4.0 / std::sqrt(20000.0));
        CHECK(rep.var_scaled[i] == doctest::Approx(1.0).epsilon(0.05));
    }
    CHECK(rep.ess == doctest::Approx(20000.0).epsilon(1e-12));
    CHECK_FALSE(rep.warning);
}

TEST_CASE("endpoint functionals average correctly") {
    NoiseSpec noise(0.1, 0.25, 61);
    PolymerEnv env(noise, 0.0);
    SmcOptions opts;
    opts.particles = 20000;
    opts.resample = false;
    double start[3] = {1.0, 0.0, 0.0};
    auto g = [](const double* x) { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; };
    auto est = estimate_Z(env, Frame::identity(), 20, start, opts, 0, 0, 0, {}, g);
    CHECK(est.functional == doctest::Approx(1.0 + 3.0 * 2.0).epsilon(0.03));
}

TEST_CASE("option and argument validation") {
    NoiseSpec noise(0.1, 0.25, 1);
    PolymerEnv env(noise, 0.5);
    SmcOptions opts;
    CHECK_THROWS_AS(estimate_Z(env, Frame::identity(), 0, kOrigin, opts, 0, 0),
                    std::invalid_argument);
    SmcOptions bad = opts;
    bad.particles = 0;
    CHECK_THROWS_AS(estimate_Z(env, Frame::identity(), 5, kOrigin, bad, 0, 0),
                    std::invalid_argument);
    bad = opts;
    bad.ess_frac = 0.0;
    CHECK_THROWS_AS(estimate_Z(env, Frame::identity(), 5, kOrigin, bad, 0, 0),
                    std::invalid_argument);
    bad = opts;
    bad.confine_half_width = -1.0;
    CHECK_THROWS_AS(estimate_Z(env, Frame::identity(), 5, kOrigin, bad, 0, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(PolymerEnv(noise, -0.1), std::invalid_argument);
}
