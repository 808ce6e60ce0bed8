#pragma once

#include <array>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "polylab/kernels.hpp"

namespace polylab {

// One deterministic prediction with a quadrature/truncation error bound.
// `inputs` is a human-readable key=value list sufficient to reproduce value.
struct TheoryTarget {
    std::string name;
    double value = 0.0;
    double abs_error_bound = 0.0;
    std::string inputs;
};

// Smooth compactly supported bump  amplitude * exp(1 - 1/(1 - (r/R)^2)).
struct TestFunction {
    std::array<double, 3> center{0, 0, 0};
    double radius = 1.0;
    double amplitude = 1.0;

    double radial(double r) const;
    double operator()(const double* x) const;
    double integral() const;           // to 1e-8 relative
    double fourier(double kappa) const;  // radial transform, fourier(0) == integral()
};

struct BetaL2Result {
    double value = 0.0;  // midpoint of the final bracket
    double lo = 0.0;
    double hi = 0.0;
    double grid_shift = 0.0;  // relative move under radial grid doubling
    bool grid_sensitive = false;
};

// Radial Feynman-Kac discretization knobs (Strang splitting + Crank-Nicolson,
// Richardson-extrapolated in the time step; the error bound is the
// step-halving difference).
struct RadialFkOptions {
    double dr = 0.005;
    double step = 0.005;
    double pad = 8.0;  // domain radius = support + pad * sqrt(diffusivity * T)
};

// E[Z_T^2] = E_0[exp(beta^2 int_0^T V(sqrt(2) B_s) ds)] for standard BM.
TheoryTarget second_moment_ZT(double beta, double T, const CovarianceKernel& V,
                              const RadialFkOptions& opts = {});

// Critical coupling where the fixed point u <- 1 + K_beta u stops converging;
// bracketing bisection to 1e-3 relative width.  `v_scale` multiplies V.
BetaL2Result estimate_beta_L2(const CovarianceKernel& V, int grid_n = 1600, double v_scale = 1.0);

// gamma^2(beta) = beta^2 int V(z) E_z[exp(beta^2 int_0^inf V(B_2s) ds)] dz.
// horizon 0 doubles the truncation until the value moves < 1e-4 relative.
// Rejects beta at or beyond the L2 threshold.
TheoryTarget gamma2(double beta, const CovarianceKernel& V, double horizon = 0.0,
                    const RadialFkOptions& opts = {});

// Mean profile of the limiting equation and the Gaussian smoothing of its
// square, as needed by the covariance integrals.  `smoothed_sq(s, sigma, m)`
// is the heat kernel at time sigma/2 convolved with ubar(s,.)^2 at m; when
// absent it is evaluated by Gauss-Hermite quadrature of `ubar`.
struct MeanField {
    bool flat = true;
    std::function<double(double s, const double*)> ubar;
    std::function<double(double s, double sigma, const double*)> smoothed_sq;
};

MeanField flat_mean_field();
// u0(x) = base + amp * sin(x[0]); requires |amp| < base
MeanField trig_mean_field(double base, double amp);

struct ChaosQuadOptions {
    int xy_order = 10;    // Gauss-Legendre points per axis over each support cube
    int sigma_order = 16;
    int check_order = 8;  // coarser re-evaluation driving the error bound
};

// Variance of the Edwards-Wilkinson limit field tested against f at time t:
// gamma^2 int_tau0^t int (rho_sigma * f)(z)^2 ubar(t-sigma, z)^2 dz dsigma.
// Flat initial data collapses the z-integral to rho_{2 sigma}(x - y); the
// Fourier and direct-space evaluations of that form must agree to 1e-4.
TheoryTarget ew_variance(const TestFunction& f, double t, double beta, const CovarianceKernel& V,
                         const MeanField& ic = flat_mean_field(), double tau0 = 0.0,
                         const ChaosQuadOptions& qopts = {}, double gamma_sq_hint = -1.0);

// Two-time covariance, flat initial data:
// gamma^2 int_0^{tau-u1} <f1, rho_{2 sigma + (u1-u2)} * f2> dsigma
// (after ordering u1 >= u2); zero when tau < u1.
TheoryTarget ew_cross_cov(const TestFunction& f1, const TestFunction& f2, double u1, double u2,
                          double tau, double beta, const CovarianceKernel& V,
                          double gamma_sq_hint = -1.0);

// Stationary covariance gamma^2 int_0^inf rho_{2 sigma}(x - y) dsigma; the
// integral form is authoritative and the ratio against the r^{2-d} closed
// form is recorded in `inputs`.
TheoryTarget gff_cov(const double x[3], const double y[3], double beta, const CovarianceKernel& V,
                     double gamma_sq_hint = -1.0);

// Covariance of the mean-normalized field: the ubar-weighted double integral
// with outer weights 1/ubar(t,x) 1/ubar(t,y).  Invariant under scaling the
// initial data by a constant.
TheoryTarget u3_cov(const TestFunction& f1, const TestFunction& f2, double t, double beta,
                    const CovarianceKernel& V, const MeanField& ic,
                    const ChaosQuadOptions& qopts = {}, double gamma_sq_hint = -1.0);

void tabulate(const std::vector<TheoryTarget>& targets, std::ostream& out);

}  // namespace polylab
