#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace polylab {

// One-pass central moments up to order four, mergeable across workers.
class Accumulator {
  public:
    void add(double x);
    void merge(const Accumulator& o);

    std::int64_t count() const { return n_; }
    double mean() const { return m1_; }
    double variance() const { return n_ > 1 ? m2_ / n_ : 0.0; }  // population convention
    double sample_variance() const { return n_ > 1 ? m2_ / (n_ - 1) : 0.0; }
    double stderr_mean() const { return n_ > 1 ? std::sqrt(sample_variance() / n_) : 0.0; }
    double skewness() const;
    double kurtosis() const;  // raw b2, normal = 3
    double min() const { return min_; }
    double max() const { return max_; }

  private:
    std::int64_t n_ = 0;
    double m1_ = 0, m2_ = 0, m3_ = 0, m4_ = 0;
    double min_ = std::numeric_limits<double>::infinity();
    double max_ = -std::numeric_limits<double>::infinity();
};

// Self-normalized importance sampling tallies.
class WeightedStats {
  public:
    void add(double x, double w) {
        if (!(w >= 0.0)) throw std::invalid_argument("WeightedStats: negative weight");
        sw_ += w;
        sw2_ += w * w;
        swx_ += w * x;
        swx2_ += w * x * x;
        ++n_;
    }
    std::int64_t count() const { return n_; }
    double weight_sum() const { return sw_; }
    double mean() const { return sw_ > 0 ? swx_ / sw_ : 0.0; }
    double second_moment() const { return sw_ > 0 ? swx2_ / sw_ : 0.0; }
    double variance() const { return second_moment() - mean() * mean(); }
    double ess() const { return sw2_ > 0 ? sw_ * sw_ / sw2_ : 0.0; }

  private:
    std::int64_t n_ = 0;
    double sw_ = 0, sw2_ = 0, swx_ = 0, swx2_ = 0;
};

// Standard error of the overall mean from contiguous batch means; robust to
// the mild serial dependence left by adaptive schemes.
double batch_stderr(const std::vector<double>& xs, int batches = 16);

double normal_cdf(double x);
double normal_sf(double x);
double chi2_sf_2dof(double x);
double kolmogorov_sf(double lambda);

struct NormalityReport {
    std::int64_t n = 0;
    double skewness = 0, kurtosis = 0;
    double z_skew = 0, z_kurt = 0;
    double k2 = 0, p_k2 = 0;
    double ks_stat = 0, p_ks = 0;
    bool gaussian(double alpha) const { return p_k2 >= alpha && p_ks >= alpha; }
};

// Moment-based omnibus test plus a KS distance against the fitted normal.
NormalityReport normality_test(std::vector<double> xs);

struct SlopeFit {
    double slope = 0, intercept = 0;
    double stderr_slope = 0, stderr_intercept = 0;
    double r2 = 0;
};

// Weighted least squares of y on x; sigma are absolute errors on y.
SlopeFit fit_wls(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& sigma);

// Same fit in log-log coordinates; sigma transforms by the delta method.
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                    const std::vector<double>& sigma);

struct TrendCheck {
    double min_z = 0;  // smallest pairwise decrease in units of its stderr
    bool decreasing_at(double z0) const { return min_z > z0; }
};

// Intersection-union test that the sequence decreases at every step.
TrendCheck trend_decreasing(const std::vector<double>& v, const std::vector<double>& se);

}  // namespace polylab
