#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "polylab/noise.hpp"
#include "polylab/rng.hpp"

namespace polylab {

// Per-slab counterterm convention: `continuum` subtracts beta^2 V(0) dt / 2
// per slab, `exact` subtracts the lattice variance of the increment (making
// the normalizer mean-one identically on any grid).  They differ by O(dx^2);
// the continuum form is the model definition and the default.
enum class Compensation { continuum, exact };

// Disorder coupling on top of a discretized noise field.
struct PolymerEnv {
    NoiseSpec noise;
    double beta = 0.0;
    double v0 = 0.0;  // int phi^2 = V(0) of the mollifier autocorrelation

    PolymerEnv(const NoiseSpec& n, double beta_) : noise(n), beta(beta_) {
        if (!(beta_ >= 0.0)) throw std::invalid_argument("PolymerEnv: beta must be >= 0");
        v0 = noise.mollifier.sq_integral();
    }
};

// Discrete path on the slab grid; pos[k] is the location at time k*dt.
struct PathSample {
    double dt = 0.0;
    std::vector<std::array<double, 3>> pos;
    bool bridged = false;
    std::array<double, 3> target{0, 0, 0};

    std::int64_t slabs() const { return static_cast<std::int64_t>(pos.size()) - 1; }
};

PathSample sample_free_path(CounterRng& rng, const double x[3], std::int64_t slabs, double dt);
// conditional-increment construction; hits y exactly at slab `slabs`
PathSample sample_bridge(CounterRng& rng, const double x[3], std::int64_t slabs, double dt,
                         const double y[3]);

// Axis-aligned box of half width `half_width` around `center`.
struct Cuboid {
    std::array<double, 3> center{0, 0, 0};
    double half_width = 0.0;
    bool contains(const double x[3]) const {
        for (int i = 0; i < 3; ++i) {
            double d = x[i] - center[i];
            if (d > half_width || d < -half_width) return false;
        }
        return true;
    }
};

struct WeightedSample {
    double log_weight = 0.0;  // log Phi including the counterterm
    std::array<double, 3> endpoint{0, 0, 0};
    bool confined = true;  // stayed inside the cuboid when one was requested
};

// Disorder weight of one fixed path.  The noise average of exp(log_weight)
// over realizations equals exp(beta^2/2 (sum_k latticeVar_k - V(0) T)) in the
// continuum convention and 1 exactly in the exact convention.
WeightedSample path_weight(const PolymerEnv& env, const Frame& f, const PathSample& path,
                           const Cuboid* confine = nullptr,
                           Compensation comp = Compensation::continuum);

struct SmcOptions {
    int particles = 128;
    bool resample = true;   // false = plain independent-path averaging
    double ess_frac = 0.5;  // resample when ESS < ess_frac * particles
    Compensation comp = Compensation::continuum;
    double confine_half_width = 0.0;  // box half width around the anchor; 0 = off
    double ess_warn_frac = 0.05;

    void validate() const {
        if (particles < 1) throw std::invalid_argument("SmcOptions: particles must be >= 1");
        if (!(ess_frac > 0.0 && ess_frac <= 1.0))
            throw std::invalid_argument("SmcOptions: ess_frac must lie in (0,1]");
        if (confine_half_width < 0.0)
            throw std::invalid_argument("SmcOptions: confine_half_width must be >= 0");
    }
};

// endpoint observable evaluated on the final particle cloud
using EndFunctional = std::function<double(const double*)>;

struct ZEstimate {
    double z = 0.0;      // unbiased normalizer estimate
    double log_z = 0.0;  // finite even when z overflows; -inf when the system died
    std::vector<double> z_prefix;  // normalizer at the requested slab counts
    std::vector<double> log_z_prefix;

    double end_mean[3] = {0, 0, 0};  // self-normalized endpoint statistics
    double end_msd = 0.0;            // weighted mean squared displacement from the start
    double end_cov[6] = {0, 0, 0, 0, 0, 0};  // weighted covariance, packed (xx,yy,zz,xy,xz,yz)
    double functional = 0.0;         // estimate of E[Phi * g(B_T)] when g is supplied

    double ess_final = 0.0;
    double min_ess_frac = 1.0;
    int resamples = 0;
    std::int64_t killed = 0;
    bool ess_warning = false;
};

// Unbiased estimate of the normalized partition function over `slabs` slabs
// of the field read through `f`, started at `start`.  `rep`, `half` and
// `stream` index independent path/resampling randomness; the field itself is
// fixed by env.noise.seed, so calls with different arguments share disorder.
ZEstimate estimate_Z(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                     const double start[3], const SmcOptions& opts, std::uint64_t rep, int half,
                     std::uint64_t stream = 0, const std::vector<std::int64_t>& checkpoints = {},
                     const EndFunctional& g = nullptr);

// One anchor of a weighted linear combination of partition functions.
struct MixtureSource {
    std::array<double, 3> x{0, 0, 0};
    double mass = 0.0;
};

// Unbiased estimate of sum_i mass_i * Z(x_i) from a single particle system:
// particles are apportioned over the anchors (largest remainder, at least one
// per positive mass) and start with weight mass_i * particles / count_i, so
// the population mean stays unbiased for the weighted sum while resampling
// mixes the whole budget.  Prefix checkpoints report the same weighted sum at
// intermediate horizons.  Requires particles >= number of positive masses.
ZEstimate estimate_mixture(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                           const std::vector<MixtureSource>& sources, const SmcOptions& opts,
                           std::uint64_t rep, int half, std::uint64_t stream = 0,
                           const std::vector<std::int64_t>& checkpoints = {},
                           const EndFunctional& g = nullptr);

// Point-to-point density estimate rho_T(end-start) * E_bridge[Phi]: paths are
// proposed from the exact Brownian bridge, so no proposal correction enters
// the weights.  Confinement, when on, is a box following the straight line.
ZEstimate estimate_p2p(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                       const double start[3], const double end[3], const SmcOptions& opts,
                       std::uint64_t rep, int half, std::uint64_t stream = 0);

// Partition function over the window of `window_slabs` slabs ending at slab
// `total_slabs` of the base field, read in reverse.
ZEstimate estimate_time_reversed(const PolymerEnv& env, std::int64_t total_slabs,
                                 std::int64_t window_slabs, const double start[3],
                                 const SmcOptions& opts, std::uint64_t rep, int half,
                                 std::uint64_t stream = 0);

// Partition function restricted to paths confined to the box of half width
// `half_width` around `zeta`, the estimate then truncated at `cap`
// (a negative cap means no truncation).
ZEstimate estimate_constrained(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                               const double zeta[3], double half_width, double cap,
                               const SmcOptions& opts, std::uint64_t rep, int half,
                               std::uint64_t stream = 0);

struct EndpointReport {
    double mean_scaled[3] = {0, 0, 0};  // weighted mean of B_T / sqrt(T)
    double var_scaled[3] = {0, 0, 0};   // weighted per-coordinate variance of B_T / sqrt(T)
    double ess = 0.0;
    bool warning = false;
};

// Self-normalized polymer-measure endpoint moments.
EndpointReport polymer_endpoint_stats(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                                      const double start[3], const SmcOptions& opts,
                                      std::uint64_t rep, int half, std::uint64_t stream = 0);

}  // namespace polylab
