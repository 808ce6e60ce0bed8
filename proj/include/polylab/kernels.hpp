#pragma once

#include <cmath>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace polylab {

// Quartic bump normalized to unit mass in R^3:
// phi(x) = amp * (1 - |x/R|^2)^2 for |x| <= R, zero outside.
// amp = 105/(32 pi R^3) so that the integral is 1 for every radius.
struct Mollifier {
    double radius = 1.0;
    double amp = 0.0;

    explicit Mollifier(double R = 1.0) : radius(R) {
        if (!(R > 0.0)) throw std::invalid_argument("Mollifier: radius must be positive");
        amp = 105.0 / (32.0 * M_PI * R * R * R);
    }

    // value at squared distance; hot path, keep branch-cheap
    double at_r2(double r2) const {
        double u = 1.0 - r2 / (radius * radius);
        if (u <= 0.0) return 0.0;
        return amp * u * u;
    }
    double operator()(double r) const { return at_r2(r * r); }
    double value(const double x[3]) const { return at_r2(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]); }

    // int phi^2 over R^3, equals the autocorrelation at zero
    double sq_integral() const;
};

// Radial autocorrelation V = phi * phi, tabulated on [0, 2R] and evaluated
// by 4-point local cubic interpolation.  Construction integrates the radial
// convolution with an adaptive rule, then audits the interpolant against
// direct quadrature at interval midpoints; max audit error and the table's
// monotonicity are hard build contracts.
class CovarianceKernel {
  public:
    explicit CovarianceKernel(const Mollifier& m, int table_size = 512);

    double operator()(double r) const {
        if (r >= rmax_) return 0.0;
        return interp(r);
    }
    double at_r2(double r2) const {
        if (r2 >= rmax_ * rmax_) return 0.0;
        return interp(std::sqrt(r2));
    }

    double v0() const { return table_[0]; }
    double support() const { return rmax_; }
    double table_error_bound() const { return audit_err_; }
    double mass() const { return mass_; }  // int V(x) dx over R^3
    int size() const { return static_cast<int>(table_.size()); }

    void dump_csv(std::ostream& os) const;

  private:
    double interp(double r) const;
    double direct_value(const Mollifier& m, double r) const;

    std::vector<double> table_;
    double h_ = 0.0;
    double rmax_ = 0.0;
    double audit_err_ = 0.0;
    double mass_ = 0.0;
};

// Gaussian transition density at squared displacement r2, time t > 0.
inline double heat_kernel(double t, double r2, int dim = 3) {
    if (!(t > 0.0)) throw std::invalid_argument("heat_kernel: t must be positive");
    return std::pow(2.0 * M_PI * t, -0.5 * dim) * std::exp(-r2 / (2.0 * t));
}

// Density of the Brownian bridge position at time s in (0,t), pinned at
// 0 -> x over [0,t], evaluated at y.
double bridge_density(double s, const double y[3], double t, const double x[3]);

// P(|G| > radius) for G ~ N(0, t I_3); used to bound truncation of
// heat-kernel integrals to finite balls.
inline double gaussian_mass_outside(double t, double radius) {
    if (!(t > 0.0)) throw std::invalid_argument("gaussian_mass_outside: t must be positive");
    if (radius <= 0.0) return 1.0;
    double z = radius / std::sqrt(t);
    return std::erfc(z / std::sqrt(2.0)) + std::sqrt(2.0 / M_PI) * z * std::exp(-0.5 * z * z);
}

}  // namespace polylab
