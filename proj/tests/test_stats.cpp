#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "polylab/rng.hpp"
#include "polylab/stats.hpp"

using namespace polylab;

namespace {

std::vector<double> sine_data(int n) {
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = std::sin(double(i)) * (1.0 + 0.1 * std::cos(3.0 * i));
    return x;
}

// standard normal quantiles at plotting positions, mildly skewed by a square
std::vector<double> skewed_scores(int n, double c) {
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) {
        double z = inv_normal_cdf((i + 0.5) / n);
        x[i] = z + c * z * z;
    }
    return x;
}

}  // namespace

TEST_CASE("accumulator matches direct sums and merges exactly") {
    auto xs = sine_data(500);
    Accumulator a;
    for (double v : xs) a.add(v);

    double mean = 0;
    for (double v : xs) mean += v;
    mean /= xs.size();
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : xs) {
        double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= xs.size();
    m3 /= xs.size();
    m4 /= xs.size();

    CHECK(a.count() == 500);
    CHECK(a.mean() == doctest::Approx(0.0038656357038705023).epsilon(1e-12));
    CHECK(a.variance() == doctest::Approx(0.50199392684391431).epsilon(1e-12));
    CHECK(a.skewness() == doctest::Approx(m3 / std::pow(m2, 1.5)).epsilon(1e-10));
    CHECK(a.kurtosis() == doctest::Approx(m4 / (m2 * m2)).epsilon(1e-10));

    Accumulator p, q, r;
    for (int i = 0; i < 123; ++i) p.add(xs[i]);
    for (int i = 123; i < 310; ++i) q.add(xs[i]);
    for (int i = 310; i < 500; ++i) r.add(xs[i]);
    p.merge(q);
    p.merge(r);
    CHECK(p.count() == a.count());
    CHECK(p.mean() == doctest::Approx(a.mean()).epsilon(1e-13));
    CHECK(p.variance() == doctest::Approx(a.variance()).epsilon(1e-12));
    CHECK(p.skewness() == doctest::Approx(a.skewness()).epsilon(1e-10));
    CHECK(p.kurtosis() == doctest::Approx(a.kurtosis()).epsilon(1e-10));
    CHECK(p.min() == a.min());
    CHECK(p.max() == a.max());
}

TEST_CASE("normality test reproduces frozen reference values") {
    // grossly non-normal sine data
    auto r = normality_test(sine_data(500));
    CHECK(r.skewness == doctest::Approx(-0.0075832705998832408).epsilon(1e-9));
    CHECK(r.kurtosis == doctest::Approx(1.5312140991308416).epsilon(1e-9));
    CHECK(r.z_skew == doctest::Approx(-0.070227390473520709).epsilon(1e-8));
    CHECK(r.z_kurt == doctest::Approx(72.277245232109181).epsilon(1e-8));
    CHECK(r.k2 == doctest::Approx(5224.0051102288226).epsilon(1e-8));
    CHECK(r.ks_stat == doctest::Approx(0.097725796675093624).epsilon(1e-9));
    CHECK(r.p_ks == doctest::Approx(0.00014235535089728916).epsilon(1e-6));
    CHECK_FALSE(r.gaussian(0.01));

    // mildly skewed scores
    auto m = normality_test(skewed_scores(500, 0.13));
    CHECK(m.k2 == doctest::Approx(43.987538873752371).epsilon(1e-7));
    CHECK(m.z_skew == doctest::Approx(6.1667942399626936).epsilon(1e-7));
    CHECK(m.z_kurt == doctest::Approx(2.4409399164492589).epsilon(1e-7));
    CHECK(m.p_k2 == doctest::Approx(2.8069023059865608e-10).epsilon(1e-6));
    CHECK(m.ks_stat == doctest::Approx(0.052097966685858532).epsilon(1e-7));
    CHECK(m.p_ks == doctest::Approx(0.13247757730817292).epsilon(1e-6));

    // perfect normal scores pass comfortably
    auto g = normality_test(skewed_scores(500, 0.0));
    CHECK(g.gaussian(0.05));
    CHECK(g.ks_stat < 0.01);
}

TEST_CASE("kolmogorov tail matches frozen values") {
    CHECK(kolmogorov_sf(0.5) == doctest::Approx(0.96394524366487511).epsilon(1e-12));
    CHECK(kolmogorov_sf(1.0) == doctest::Approx(0.26999967167735456).epsilon(1e-12));
    CHECK(kolmogorov_sf(2.0) == doctest::Approx(0.00067092525577969533).epsilon(1e-12));
    CHECK(chi2_sf_2dof(4.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
    CHECK(normal_cdf(1.9599639845400542) == doctest::Approx(0.975).epsilon(1e-12));
    CHECK(normal_sf(1.9599639845400542) == doctest::Approx(0.025).epsilon(1e-10));
}

TEST_CASE("normality calibration over many seeds") {
    int pass = 0;
    const int seeds = 200, n = 300;
    for (int s = 0; s < seeds; ++s) {
        CounterRng rng = CounterRng::derive(s, 0, 0, 0, stream_tag::calibration);
        std::vector<double> xs(n);
        for (auto& v : xs) v = rng.normal();
        if (normality_test(xs).gaussian(0.02)) ++pass;
    }
    // two tests at alpha = 0.02 each; joint pass rate must sit above 0.93
    CHECK(pass >= 186);

    int reject = 0;
    for (int s = 0; s < seeds; ++s) {
        CounterRng rng = CounterRng::derive(s, 1, 0, 0, stream_tag::calibration);
        std::vector<double> xs(n);
        for (auto& v : xs) v = -std::log(rng.uniform());
        if (!normality_test(xs).gaussian(0.02)) ++reject;
    }
    CHECK(reject >= 195);
}

TEST_CASE("batch stderr is calibrated on iid data") {
    const int seeds = 200, n = 4096;
    int cover = 0;
    for (int s = 0; s < seeds; ++s) {
        CounterRng rng = CounterRng::derive(s, 2, 0, 0, stream_tag::calibration);
        std::vector<double> xs(n);
        double mean = 0;
        for (auto& v : xs) {
            v = rng.normal();
            mean += v;
        }
        mean /= n;
        double se = batch_stderr(xs);
        if (s == 0) CHECK(se == doctest::Approx(1.0 / std::sqrt(double(n))).epsilon(0.5));
        if (std::abs(mean) < 1.96 * se) ++cover;
    }
    // nominal 95% coverage, widened for the 15-dof variance estimate:
    // binomial 3-sigma band around ~0.94 at 200 trials
    CHECK(cover >= 176);
    CHECK(cover <= 200);

    CHECK_THROWS_AS(batch_stderr(std::vector<double>(5, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(batch_stderr(std::vector<double>(100, 1.0), 1), std::invalid_argument);
}

TEST_CASE("weighted stats and effective sample size") {
    WeightedStats w;
    for (int i = 0; i < 10; ++i) w.add(i, 1.0);
    CHECK(w.ess() == doctest::Approx(10.0));
    CHECK(w.mean() == doctest::Approx(4.5));

    WeightedStats v;
    v.add(1.0, 1.0);
    v.add(2.0, 3.0);
    CHECK(v.mean() == doctest::Approx((1.0 + 6.0) / 4.0));
    CHECK(v.ess() == doctest::Approx(16.0 / 10.0));
    CHECK_THROWS_AS(v.add(0.0, -1.0), std::invalid_argument);
}

TEST_CASE("weighted log-log slope recovery") {
    std::vector<double> x = {1.0, 2.0, 4.0, 8.0, 16.0};
    std::vector<double> y, s;
    for (double xi : x) {
        y.push_back(3.5 * std::pow(xi, -0.5));
        s.push_back(0.01 * y.back());
    }
    auto f = fit_loglog(x, y, s);
    CHECK(f.slope == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK(std::exp(f.intercept) == doctest::Approx(3.5).epsilon(1e-9));
    CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-9));

    // perturb one point but give it a huge error bar: slope should hold
    y[2] *= 1.8;
    s[2] = y[2] * 10.0;
    auto g = fit_loglog(x, y, s);
    CHECK(g.slope == doctest::Approx(-0.5).epsilon(2e-3));

    CHECK_THROWS_AS(fit_loglog({1.0, -2.0}, {1.0, 1.0}, {0.1, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(fit_wls({1.0}, {1.0}, {0.1}), std::invalid_argument);
}

TEST_CASE("pairwise trend test") {
    auto t = trend_decreasing({5.0, 4.0, 3.0}, {0.1, 0.1, 0.1});
    CHECK(t.min_z == doctest::Approx(1.0 / std::sqrt(0.02)).epsilon(1e-12));
    CHECK(t.decreasing_at(2.0));

    auto u = trend_decreasing({5.0, 5.5, 3.0}, {0.1, 0.1, 0.1});
    CHECK_FALSE(u.decreasing_at(0.0));
    CHECK_THROWS_AS(trend_decreasing({1.0}, {0.1}), std::invalid_argument);
}
