#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "polylab/kernels.hpp"
#include "polylab/noise.hpp"
#include "polylab/polymer.hpp"
#include "polylab/quad.hpp"
#include "polylab/theory.hpp"

using namespace polylab;

namespace {

const Mollifier kPhi{};
const CovarianceKernel kV{kPhi};
const RadialFkOptions kCoarse{0.02, 0.04, 8.0};
const RadialFkOptions kFine{0.01, 0.02, 8.0};
const double kBetaHat = 3.1982421875;
const double kLabBeta = 0.3 * kBetaHat;

TestFunction bump(double radius, double amplitude = 1.0) {
    TestFunction f;
    f.radius = radius;
    f.amplitude = amplitude;
    return f;
}

// pulls "key=value" out of the inputs record
double input_field(const TheoryTarget& t, const std::string& key) {
    auto pos = t.inputs.find(key + "=");
    REQUIRE(pos != std::string::npos);
    return std::strtod(t.inputs.c_str() + pos + key.size() + 1, nullptr);
}

}  // namespace

TEST_CASE("test function: bump profile, integral, fourier transform") {
    TestFunction f = bump(0.5);
    CHECK(f.radial(0.0) == doctest::Approx(1.0));
    CHECK(f.radial(0.49) > 0.0);
    CHECK(f.radial(0.5) == 0.0);
    CHECK(f.radial(0.7) == 0.0);
    double p[3] = {0.2, -0.1, 0.3};
    CHECK(f(p) >= 0.0);
    double far[3] = {0.6, 0.0, 0.0};
    CHECK(f(far) == 0.0);

    auto direct = integrate(
        [&](double r) { return 4.0 * M_PI * r * r * f.radial(r); }, 0.0, 0.5, 1e-13, 1e-11, 40000);
    CHECK(f.integral() == doctest::Approx(direct.value).epsilon(1e-7));
    CHECK(f.integral() > 0.0);

    CHECK(f.fourier(0.0) == f.integral());
    CHECK(std::abs(f.fourier(8.0)) < f.integral());
    CHECK(std::abs(f.fourier(20.0)) < 0.02 * f.integral());

    TestFunction g = bump(0.5, 3.0);
    CHECK(g.integral() == doctest::Approx(3.0 * f.integral()).epsilon(1e-12));
}

TEST_CASE("second moment: free case is exactly one") {
    TheoryTarget t = second_moment_ZT(0.0, 5.0, kV);
    CHECK(t.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.abs_error_bound <= 1e-12);
}

TEST_CASE("second moment: weak-coupling expansion") {
    TheoryTarget t = second_moment_ZT(0.05, 1.0, kV);
    // first-order excess: beta^2 * int_0^T E[V(relative walk at s)] ds
    auto inner = [&](double s) {
        auto g = integrate(
            [&](double r) { return kV(r) * heat_kernel(2.0 * s, r * r) * 4.0 * M_PI * r * r; },
            0.0, kV.support(), 1e-12, 1e-10, 20000);
        return g.value;
    };
    auto I = integrate(inner, 0.0, 1.0, 1e-12, 1e-10, 20000);
    double excess = 0.05 * 0.05 * I.value;
    CHECK(t.value - 1.0 == doctest::Approx(excess).epsilon(2e-2));
    CHECK(t.abs_error_bound < 1e-6);
}

TEST_CASE("second moment: grid refinement stays within the reported bound") {
    TheoryTarget coarse = second_moment_ZT(kLabBeta, 4.0, kV, kCoarse);
    TheoryTarget fine = second_moment_ZT(kLabBeta, 4.0, kV, kFine);
    CHECK(std::abs(fine.value - coarse.value) <= coarse.abs_error_bound);
    CHECK(fine.abs_error_bound < coarse.abs_error_bound);
    CHECK(fine.value == doctest::Approx(1.106964128215).epsilon(1e-7));
}

TEST_CASE("second moment: saturation below the critical coupling") {
    TheoryTarget a = second_moment_ZT(1.6, 32.0, kV, kFine);
    TheoryTarget b = second_moment_ZT(1.6, 64.0, kV, kFine);
    CHECK(a.value == doctest::Approx(1.410685031756).epsilon(1e-7));
    CHECK(b.value == doctest::Approx(1.421887509728).epsilon(1e-7));
    CHECK(std::abs(b.value / a.value - 1.0) < 0.01);
}

TEST_CASE("second moment: supercritical coupling overflows with a clear message") {
    RadialFkOptions cheap{0.05, 0.1, 4.0};
    CHECK_THROWS_WITH_AS(second_moment_ZT(6.0, 200.0, kV, cheap),
                         "second_moment_ZT: beyond L2 threshold at this T", std::overflow_error);
    CHECK_THROWS_AS(second_moment_ZT(1.0, 0.0, kV), std::invalid_argument);
}

TEST_CASE("second moment: agrees with a direct polymer Monte Carlo") {
    TheoryTarget fk = second_moment_ZT(kLabBeta, 2.0, kV, kFine);
    const double start[3] = {0.0, 0.0, 0.0};
    SmcOptions opts;
    opts.particles = 32;
    Frame frame;
    const int reps = 600, slabs = 100;
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < reps; ++r) {
        NoiseSpec noise(0.02, 0.25, 9000 + r);
        PolymerEnv env(noise, kLabBeta);
        // shared disorder, independent path halves: the product is unbiased for Z^2
        double za = estimate_Z(env, frame, slabs, start, opts, 0, 0).z;
        double zb = estimate_Z(env, frame, slabs, start, opts, 0, 1).z;
        double p = za * zb;
        sum += p;
        sumsq += p * p;
    }
    double mean = sum / reps;
    double se = std::sqrt((sumsq / reps - mean * mean) / reps);
    CHECK(std::abs(mean - fk.value) <= std::max(4.0 * se, 0.08 * fk.value));
}

TEST_CASE("critical coupling: bracketed value and grid robustness") {
    BetaL2Result b = estimate_beta_L2(kV);
    CHECK(b.value == doctest::Approx(3.1982421875).epsilon(1e-3));
    CHECK(b.lo < b.value);
    CHECK(b.value < b.hi);
    CHECK(b.hi - b.lo <= 1.1e-3 * b.value);
    CHECK_FALSE(b.grid_sensitive);

    // doubling the kernel strength scales the threshold by 1/sqrt(2)
    BetaL2Result s = estimate_beta_L2(kV, 1600, 2.0);
    CHECK(s.value == doctest::Approx(b.value / std::sqrt(2.0)).epsilon(1.5e-3));

    CHECK_THROWS_AS(estimate_beta_L2(kV, 32), std::invalid_argument);
    CHECK_THROWS_AS(estimate_beta_L2(kV, 1600, -1.0), std::invalid_argument);
}

TEST_CASE("variance rate: weak-coupling limit, monotone excess, resolvent cross-check") {
    TheoryTarget tiny = gamma2(1e-3, kV, 0.0, kCoarse);
    CHECK(tiny.value / 1e-6 == doctest::Approx(1.0).epsilon(1e-3));

    double prev_ratio = 0.0;
    for (double beta : {0.2, 0.4, 0.8, kLabBeta}) {
        TheoryTarget g = gamma2(beta, kV, 0.0, kCoarse);
        double ratio = g.value / (beta * beta);
        CHECK(ratio > prev_ratio);
        CHECK(ratio >= 1.0);
        prev_ratio = ratio;
    }

    TheoryTarget lab = gamma2(kLabBeta, kV, 0.0, kCoarse);
    CHECK(lab.value == doctest::Approx(1.007646294927).epsilon(1e-6));

    // independent route: resolvent fixed point w = 1 + beta^2 G(V w) on a midpoint grid,
    // with the radial Newton kernel of the relative walk
    const int n = 4000;
    const double h = 2.0 / n;
    std::vector<double> r(n), Vr(n), w(n, 1.0);
    for (int i = 0; i < n; ++i) {
        r[i] = (i + 0.5) * h;
        Vr[i] = kV(r[i]);
    }
    const double b2 = kLabBeta * kLabBeta;
    for (int it = 0; it < 500; ++it) {
        std::vector<double> g(n), pre(n + 1, 0.0), suf(n + 1, 0.0);
        for (int i = 0; i < n; ++i) g[i] = Vr[i] * w[i];
        for (int i = 0; i < n; ++i) pre[i + 1] = pre[i] + g[i] * r[i] * r[i] * h;
        for (int i = n - 1; i >= 0; --i) suf[i] = suf[i + 1] + g[i] * r[i] * h;
        double delta = 0.0;
        for (int i = 0; i < n; ++i) {
            double nw = 1.0 + b2 * (pre[i + 1] / r[i] + suf[i + 1]);
            delta = std::max(delta, std::abs(nw - w[i]));
            w[i] = nw;
        }
        if (delta < 1e-13) break;
    }
    double alt = 0.0;
    for (int i = 0; i < n; ++i) alt += Vr[i] * w[i] * 4.0 * M_PI * r[i] * r[i] * h;
    alt *= b2;
    CHECK(lab.value == doctest::Approx(alt).epsilon(1e-2));

    CHECK(gamma2(0.0, kV).value == 0.0);
    CHECK_THROWS_AS(gamma2(-0.5, kV), std::invalid_argument);
    CHECK_THROWS_WITH_AS(gamma2(3.3, kV, 0.0, kCoarse),
                         "gamma2: coupling at or beyond the L2 threshold", std::domain_error);
}

TEST_CASE("ew variance: flat start, scaling in the test function, dual routes") {
    double hint = gamma2(0.3, kV, 0.0, kCoarse).value;
    TestFunction f = bump(0.5);

    TheoryTarget v = ew_variance(f, 1.0, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    CHECK(v.value == doctest::Approx(4.340985191627816e-04).epsilon(1e-7));
    CHECK(v.abs_error_bound < 1e-8);

    // repeat call is bit-reproducible
    TheoryTarget v2 = ew_variance(f, 1.0, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    CHECK(v2.value == v.value);
    CHECK(v2.abs_error_bound == v.abs_error_bound);

    // variance is quadratic in the test function amplitude
    TheoryTarget vd = ew_variance(bump(0.5, 2.0), 1.0, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    CHECK(vd.value == doctest::Approx(4.0 * v.value).epsilon(1e-9));

    // short horizons: variance grows but less than linearly in t doubling
    TheoryTarget s1 = ew_variance(f, 0.02, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    TheoryTarget s2 = ew_variance(f, 0.04, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    CHECK(s2.value / s1.value > 1.0);
    CHECK(s2.value / s1.value <= 2.0);

    // zero test function
    TheoryTarget z = ew_variance(bump(0.5, 0.0), 1.0, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    CHECK(z.value == 0.0);

    CHECK_THROWS_AS(ew_variance(f, 0.0, 0.3, kV), std::invalid_argument);
    CHECK_THROWS_AS(ew_variance(f, 1.0, 0.3, kV, flat_mean_field(), 2.0), std::invalid_argument);
}

TEST_CASE("ew variance: general starts reduce to flat and match closed forms") {
    double hint = gamma2(0.3, kV, 0.0, kCoarse).value;
    TestFunction f = bump(0.5);
    TheoryTarget flat = ew_variance(f, 1.0, 0.3, kV, flat_mean_field(), 0.0, {}, hint);

    // constant profile through the general (chaos expansion) path
    TheoryTarget gen = ew_variance(f, 1.0, 0.3, kV, trig_mean_field(1.0, 0.0), 0.0, {}, hint);
    CHECK(gen.value == doctest::Approx(flat.value).epsilon(3e-3));

    // oscillating profile: closed-form smoothing vs generic quadrature fallback
    ChaosQuadOptions cq;
    cq.xy_order = 8;
    cq.sigma_order = 12;
    cq.check_order = 6;
    TheoryTarget closed = ew_variance(f, 1.0, 0.3, kV, trig_mean_field(2.0, 0.5), 0.0, cq, hint);
    MeanField fallback = trig_mean_field(2.0, 0.5);
    fallback.smoothed_sq = nullptr;
    TheoryTarget generic = ew_variance(f, 1.0, 0.3, kV, fallback, 0.0, cq, hint);
    CHECK(generic.value == doctest::Approx(closed.value).epsilon(1e-6));

    CHECK_THROWS_WITH_AS(trig_mean_field(1.0, 1.0),
                         "trig_mean_field: need |amp| < base for positivity",
                         std::invalid_argument);
}

TEST_CASE("ew cross covariance: ordering, reduction to variance, causality") {
    double hint = gamma2(0.3, kV, 0.0, kCoarse).value;
    TestFunction f1 = bump(0.5);
    TestFunction f2 = bump(0.5);
    f2.center = {0.6, 0.0, 0.0};

    TheoryTarget c = ew_cross_cov(f1, f2, 0.3, 0.5, 1.2, 0.3, kV, hint);
    CHECK(c.value == doctest::Approx(1.095095197404196e-04).epsilon(1e-7));

    TheoryTarget swapped = ew_cross_cov(f2, f1, 0.5, 0.3, 1.2, 0.3, kV, hint);
    CHECK(swapped.value == c.value);

    // equal observation times collapse onto the variance window
    TheoryTarget same = ew_cross_cov(f1, f1, 0.4, 0.4, 1.0, 0.3, kV, hint);
    TheoryTarget var = ew_variance(f1, 0.6, 0.3, kV, flat_mean_field(), 0.0, {}, hint);
    CHECK(same.value == var.value);

    // observation after the field time has no correlation yet
    TheoryTarget zero = ew_cross_cov(f1, f2, 0.8, 0.5, 0.7, 0.3, kV, hint);
    CHECK(zero.value == 0.0);
    CHECK(zero.abs_error_bound == 0.0);
}

TEST_CASE("gff covariance: decay, symmetry, weak-coupling scale") {
    double hint = gamma2(0.3, kV, 0.0, kCoarse).value;
    double x[3] = {0.0, 0.0, 0.0};
    double y[3] = {1.0, 0.0, 0.0};
    double y2[3] = {2.0, 0.0, 0.0};

    TheoryTarget a = gff_cov(x, y, 0.3, kV, hint);
    CHECK(a.value == doctest::Approx(hint / (4.0 * M_PI)).epsilon(1e-6));
    CHECK(input_field(a, "ratio_to_closed_form") == doctest::Approx(0.25).epsilon(1e-6));

    TheoryTarget b = gff_cov(x, y2, 0.3, kV, hint);
    CHECK(2.0 * b.value == doctest::Approx(a.value).epsilon(1e-9));

    TheoryTarget sym = gff_cov(y, x, 0.3, kV, hint);
    CHECK(sym.value == a.value);

    CHECK(gff_cov(x, y, 0.0, kV, 0.0).value == 0.0);
    CHECK_THROWS_WITH_AS(gff_cov(x, x, 0.3, kV, hint),
                         "gff_cov: coincident points diverge", std::invalid_argument);
}

TEST_CASE("u3 covariance: flat case equals ew variance, profile-scale invariance") {
    double hint = gamma2(0.3, kV, 0.0, kCoarse).value;
    TestFunction f = bump(0.5);
    ChaosQuadOptions cq;
    cq.xy_order = 8;
    cq.sigma_order = 12;
    cq.check_order = 6;

    TheoryTarget flat_u3 = u3_cov(f, f, 1.0, 0.3, kV, flat_mean_field(), cq, hint);
    TheoryTarget flat_ew = ew_variance(f, 1.0, 0.3, kV, flat_mean_field(), 0.0, cq, hint);
    CHECK(flat_u3.value == flat_ew.value);
    CHECK(flat_u3.value > 0.0);

    // relative fluctuations ignore a constant rescaling of the background
    TheoryTarget ua = u3_cov(f, f, 1.0, 0.3, kV, trig_mean_field(2.0, 0.5), cq, hint);
    TheoryTarget ub = u3_cov(f, f, 1.0, 0.3, kV, trig_mean_field(6.0, 1.5), cq, hint);
    CHECK(ua.value == doctest::Approx(ub.value).epsilon(1e-12));

    CHECK_THROWS_AS(u3_cov(f, f, -1.0, 0.3, kV, flat_mean_field()), std::invalid_argument);
}

TEST_CASE("tabulate: csv layout with quoted name and inputs") {
    TheoryTarget t1;
    t1.name = "alpha";
    t1.value = 1.5;
    t1.abs_error_bound = 0.25;
    t1.inputs = "a=1;b=2";
    TheoryTarget t2;
    t2.name = "beta";
    t2.value = -0.125;
    t2.abs_error_bound = 0.0;
    t2.inputs = "";
    std::ostringstream os;
    tabulate({t1, t2}, os);
    std::istringstream is(os.str());
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "name,inputs,value,abs_error_bound");
    REQUIRE(std::getline(is, line));
    CHECK(line == "\"alpha\",\"a=1;b=2\",1.5,0.25");
    REQUIRE(std::getline(is, line));
    CHECK(line == "\"beta\",\"\",-0.125,0");
    CHECK_FALSE(std::getline(is, line));
}
