#include "polylab/stats.hpp"

#include <algorithm>
#include <numeric>

namespace polylab {

void Accumulator::add(double x) {
    // standard one-pass update of central moments
    double n1 = static_cast<double>(n_);
    ++n_;
    double n = static_cast<double>(n_);
    double delta = x - m1_;
    double dn = delta / n;
    double dn2 = dn * dn;
    double t1 = delta * dn * n1;
    m1_ += dn;
    m4_ += t1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2_ - 4.0 * dn * m3_;
    m3_ += t1 * dn * (n - 2.0) - 3.0 * dn * m2_;
    m2_ += t1;
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
}

void Accumulator::merge(const Accumulator& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) {
        *this = o;
        return;
    }
    double na = static_cast<double>(n_), nb = static_cast<double>(o.n_);
    double n = na + nb;
    double d = o.m1_ - m1_;
    double d2 = d * d;
    double m2 = m2_ + o.m2_ + d2 * na * nb / n;
    double m3 = m3_ + o.m3_ + d2 * d * na * nb * (na - nb) / (n * n) +
                3.0 * d * (na * o.m2_ - nb * m2_) / n;
    double m4 = m4_ + o.m4_ +
                d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                6.0 * d2 * (na * na * o.m2_ + nb * nb * m2_) / (n * n) +
                4.0 * d * (na * o.m3_ - nb * m3_) / n;
    m1_ = (na * m1_ + nb * o.m1_) / n;
    m2_ = m2;
    m3_ = m3;
    m4_ = m4;
    n_ += o.n_;
    min_ = std::min(min_, o.min_);
    max_ = std::max(max_, o.max_);
}

double Accumulator::skewness() const {
    if (n_ < 3 || m2_ <= 0) return 0.0;
    double n = static_cast<double>(n_);
    return std::sqrt(n) * m3_ / std::pow(m2_, 1.5);
}

double Accumulator::kurtosis() const {
    if (n_ < 4 || m2_ <= 0) return 3.0;
    double n = static_cast<double>(n_);
    return n * m4_ / (m2_ * m2_);
}

double batch_stderr(const std::vector<double>& xs, int batches) {
    if (batches < 2) throw std::invalid_argument("batch_stderr: need at least 2 batches");
    auto n = static_cast<std::int64_t>(xs.size());
    if (n < 2 * batches) throw std::invalid_argument("batch_stderr: series too short");
    std::int64_t m = n / batches;
    double grand = 0.0;
    std::vector<double> bm(batches, 0.0);
    for (int b = 0; b < batches; ++b) {
        double s = 0.0;
        for (std::int64_t i = b * m; i < (b + 1) * m; ++i) s += xs[i];
        bm[b] = s / m;
        grand += bm[b];
    }
    grand /= batches;
    double ss = 0.0;
    for (double v : bm) ss += (v - grand) * (v - grand);
    double var_bm = ss / (batches - 1);
    return std::sqrt(var_bm / batches);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }
double chi2_sf_2dof(double x) { return std::exp(-0.5 * x); }

double kolmogorov_sf(double lambda) {
    if (lambda <= 0.0) return 1.0;
    if (lambda < 0.2) return 1.0;
    double s = 0.0;
    for (int j = 1; j <= 100; ++j) {
        double term = 2.0 * std::exp(-2.0 * j * j * lambda * lambda);
        s += (j % 2 == 1) ? term : -term;
        if (term < 1e-16) break;
    }
    return std::min(1.0, std::max(0.0, s));
}

NormalityReport normality_test(std::vector<double> xs) {
    NormalityReport r;
    auto n = static_cast<double>(xs.size());
    r.n = static_cast<std::int64_t>(xs.size());
    if (r.n < 20) throw std::invalid_argument("normality_test: need at least 20 points");

    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double m2 = 0, m3 = 0, m4 = 0;
    for (double x : xs) {
        double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    double b1 = m3 / std::pow(m2, 1.5);
    double b2 = m4 / (m2 * m2);
    r.skewness = b1;
    r.kurtosis = b2;

    // moment test for skewness
    {
        double y = b1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
        double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                       ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
        double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
        double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
        double alpha = std::sqrt(2.0 / (w2 - 1.0));
        if (y == 0.0) y = 1.0;
        double q = y / alpha;
        r.z_skew = delta * std::log(q + std::sqrt(q * q + 1.0));
    }
    // moment test for kurtosis
    {
        double eb2 = 3.0 * (n - 1.0) / (n + 1.0);
        double vb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
        double x = (b2 - eb2) / std::sqrt(vb2);
        double sb1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                     std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
        double a = 6.0 + 8.0 / sb1 * (2.0 / sb1 + std::sqrt(1.0 + 4.0 / (sb1 * sb1)));
        double t1 = 1.0 - 2.0 / (9.0 * a);
        double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
        double t2 = std::copysign(std::cbrt((1.0 - 2.0 / a) / std::abs(denom)), denom);
        r.z_kurt = (t1 - t2) / std::sqrt(2.0 / (9.0 * a));
    }
    r.k2 = r.z_skew * r.z_skew + r.z_kurt * r.z_kurt;
    r.p_k2 = chi2_sf_2dof(r.k2);

    // KS distance against the fitted normal, asymptotic tail probability
    std::sort(xs.begin(), xs.end());
    double sd = std::sqrt(m2);
    double d = 0.0;
    for (std::int64_t i = 0; i < r.n; ++i) {
        double f = normal_cdf((xs[i] - mean) / sd);
        d = std::max(d, std::max(f - static_cast<double>(i) / n,
                                 static_cast<double>(i + 1) / n - f));
    }
    r.ks_stat = d;
    r.p_ks = kolmogorov_sf(std::sqrt(n) * d);
    return r;
}

SlopeFit fit_wls(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& sigma) {
    std::size_t n = x.size();
    if (n < 2 || y.size() != n || sigma.size() != n)
        throw std::invalid_argument("fit_wls: need matched arrays with >= 2 points");
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("fit_wls: sigma must be positive");
        double w = 1.0 / (sigma[i] * sigma[i]);
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
        sxx += w * x[i] * x[i];
        sxy += w * x[i] * y[i];
    }
    double det = sw * sxx - sx * sx;
    if (det <= 0.0) throw std::invalid_argument("fit_wls: degenerate abscissae");
    SlopeFit f;
    f.slope = (sw * sxy - sx * sy) / det;
    f.intercept = (sxx * sy - sx * sxy) / det;
    f.stderr_slope = std::sqrt(sw / det);
    f.stderr_intercept = std::sqrt(sxx / det);
    double ssr = 0, sst = 0, ybar = sy / sw;
    for (std::size_t i = 0; i < n; ++i) {
        double w = 1.0 / (sigma[i] * sigma[i]);
        double e = y[i] - f.intercept - f.slope * x[i];
        ssr += w * e * e;
        sst += w * (y[i] - ybar) * (y[i] - ybar);
    }
    f.r2 = sst > 0 ? 1.0 - ssr / sst : 1.0;
    return f;
}

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                    const std::vector<double>& sigma) {
    std::size_t n = x.size();
    std::vector<double> lx(n), ly(n), ls(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0))
            throw std::invalid_argument("fit_loglog: needs positive data");
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        ls[i] = sigma[i] / y[i];
    }
    return fit_wls(lx, ly, ls);
}

TrendCheck trend_decreasing(const std::vector<double>& v, const std::vector<double>& se) {
    if (v.size() < 2 || se.size() != v.size())
        throw std::invalid_argument("trend_decreasing: need matched arrays with >= 2 points");
    TrendCheck t;
    t.min_z = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        double z = (v[i] - v[i + 1]) / std::sqrt(se[i] * se[i] + se[i + 1] * se[i + 1]);
        t.min_z = std::min(t.min_z, z);
    }
    return t;
}

}  // namespace polylab
