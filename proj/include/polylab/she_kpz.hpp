#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "polylab/kernels.hpp"
#include "polylab/noise.hpp"

namespace polylab {

// Starting data for the regularized equation.  A bounded-continuous profile
// carries certified bounds 0 < lower <= upper so downstream positivity and
// Hopf-Cole preconditions can be checked without sampling the function.
struct InitialCondition {
    enum class Kind { flat, bounded_continuous, dirac };

    Kind kind = Kind::flat;
    std::function<double(const double*)> profile;  // bounded_continuous only
    double lower = 1.0;
    double upper = 1.0;
    std::array<double, 3> location{0.0, 0.0, 0.0};  // dirac only

    static InitialCondition make_flat();
    static InitialCondition make_bounded(std::function<double(const double*)> profile,
                                         double lower, double upper);
    static InitialCondition make_dirac(const std::array<double, 3>& location);

    void validate() const;
};

// One noise realization evaluated at a batch of space points: correlations
// between entries are meaningful.  std_error comes from the two independent
// path halves behind each value; h stays empty until h_eps fills it.
struct FieldSample {
    double eps = 1.0;
    double t = 0.0;
    std::vector<std::array<double, 3>> points;
    std::vector<double> u;
    std::vector<double> h;
    std::vector<double> std_error;
    std::vector<double> half_delta;  // signed half-A minus half-B, per point
    std::vector<std::uint8_t> warning;
    std::int64_t paths_per_point = 0;
    std::string ic_kind;
    double ic_lower = 0.0;
    double ic_upper = 0.0;
    double proxy_horizon = 0.0;       // stationary proxy only
    double truncation_exponent = 0.0;  // stationary proxy only
};

// Heat semigroup applied to the initial condition.  Flat is constant one,
// bounded profiles go through Gauss-Hermite quadrature, dirac is the heat
// kernel itself (and needs t > 0 for pointwise values).
double solve_ubar(const InitialCondition& ic, double t, const double x[3]);

// Diffusively rescaled solution u_eps(t, x) on one shared noise realization,
// one entry per evaluation point, with the same path budget at every point.
// The macroscopic window t/eps^2 must land on the slab grid of `noise`.
FieldSample u_eps(const NoiseSpec& noise, const InitialCondition& ic, double eps, double t,
                  const std::vector<std::array<double, 3>>& xs, double beta,
                  std::int64_t n_paths, std::uint64_t stream_offset = 0);

// Weighted quadrature sum over the field estimated by one pooled particle
// system instead of per-point runs: the whole budget enters the resampling
// population, which is what keeps long horizons affordable for linear
// functionals.  Two independent halves of n_paths/2 give value (their mean)
// and half_delta (their signed difference, pure path noise).
struct FunctionalSample {
    double value = 0.0;       // estimate of sum_i weights_i * u(t, x_i)
    double half_delta = 0.0;
    bool warning = false;
    std::vector<double> ladder;        // per requested horizon, ladder variant only
    std::vector<double> ladder_delta;
};

FunctionalSample u_functional(const NoiseSpec& noise, const InitialCondition& ic, double eps,
                              double t, const std::vector<std::array<double, 3>>& xs,
                              const std::vector<double>& weights, double beta,
                              std::int64_t n_paths, std::uint64_t stream = 0);

// Forward-window partition functional sum_i weights_i * Z_{tau T}(x_i / eps)
// reported for every tau in the increasing ladder from a single pooled run
// (prefix checkpoints), so the ladder entries are nested in the disorder.
FunctionalSample z_functional_ladder(const NoiseSpec& noise, double eps,
                                     const std::vector<double>& taus,
                                     const std::vector<std::array<double, 3>>& xs,
                                     const std::vector<double>& weights, double beta,
                                     std::int64_t n_paths, std::uint64_t stream = 0);

// Hopf-Cole transform per point.  Nonpositive u-values are excluded: their h
// is NaN and the point's warning flag is set.
FieldSample h_eps(const FieldSample& field);

// KPZ renormalization constant beta^2 V(0) / (2 eps^2).
double renorm_constant(double beta, const CovarianceKernel& kernel, double eps);

// Finite-horizon proxy for the stationary solution: a partition window of
// length horizon in slab time, anchored by the stationarity of the noise.
// Requires horizon >= min_factor * t / eps^2; the sample records the horizon
// and the L2 truncation decay exponent.
FieldSample u_stat_proxy(const NoiseSpec& noise, double eps, double t,
                         const std::vector<std::array<double, 3>>& xs, double beta,
                         double horizon, std::int64_t n_paths, double min_factor = 8.0,
                         std::uint64_t stream_offset = 0);

// CSV rows: eps,t,x0,x1,x2,u,h,std_error,n (h is nan when not yet computed).
void write_field_csv(const FieldSample& field, std::ostream& os);

// JSON manifest describing how the sample was built (IC kind, bounds, proxy
// horizon when applicable).
std::string field_manifest_json(const FieldSample& field);

}  // namespace polylab
