#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "polylab/she_kpz.hpp"
#include "polylab/theory.hpp"

namespace polylab {

struct ModelParams {
    double beta = 0.5;
    double dt = 0.1;
    double dx = 0.5;
    double mollifier_radius = 1.0;
};

// One row of an experiment schedule.  Labs read the fields they need: T is
// the macroscopic horizon (eps = T^{-1/2}), t the field time, a the window
// exponent, reps the replication count, paths the per-point path budget.
struct ScheduleEntry {
    double T = 16.0;
    double t = 1.0;
    double a = 0.3;
    int reps = 200;
    std::int64_t paths = 8;
};

struct ExperimentConfig {
    ModelParams model;
    std::vector<ScheduleEntry> schedule;
    std::uint64_t base_seed = 1;
    std::uint64_t seed_stride = 1;
    int grid_n = 8;  // support-lattice subdivisions per axis; (grid_n-1)^3 points
    double var_tol = 0.15;
    double normality_alpha = 0.01;
    double trend_z = 1.645;  // one-sided 5%
    int workers = 1;

    void validate() const;
};

// One named pass/fail comparison inside a Report.  `tolerance` is the band
// the criterion declared for itself (relative, absolute, or z-units; the
// note says which).
struct Criterion {
    std::string name;
    double observed = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string note;
};

struct EntryStats {
    std::string id;
    std::map<std::string, double> values;
};

// Raw per-replication values of one statistic, for the CSV side channel.
struct SampleColumn {
    std::string entry;
    std::string stat;
    std::vector<double> values;
};

struct Report {
    std::string experiment;
    std::vector<EntryStats> entries;
    std::vector<Criterion> criteria;
    std::vector<SampleColumn> samples;
    std::string manifest;

    bool pass() const;
};

std::string report_json(const Report& report);

// Long-format rows: experiment,entry,stat,replication,value.
void report_csv(const Report& report, std::ostream& os);

// Law of large numbers: D(T) = E|int f (u_eps - ubar)| over the schedule's
// T-ladder, with a strict-decrease trend criterion.  Dirac initial data also
// checks the mean identity E int f u_eps = int f rho_t(. - x0).
Report lln_lab(const ExperimentConfig& cfg, const InitialCondition& ic, const TestFunction& f);

// Edwards-Wilkinson fluctuations of the field: variance, normality, and
// two-time covariance of S = T^{1/4} int f (u_eps - ubar) against theory.
// `lags` are observation offsets below the field time t (0 = at t); entries
// use schedule[0].
Report ew_fluct_lab(const ExperimentConfig& cfg, const InitialCondition& ic,
                    const std::vector<double>& lags, const std::vector<TestFunction>& fs);

// Flat-start partition field on a tau-ladder: variance at the largest tau
// against the Gaussian free field form factor, and the tau-truncation decay
// exponent -(d-2)/4 from paired tau vs 2*tau differences.
Report gff_lab(const ExperimentConfig& cfg, const TestFunction& f,
               const std::vector<double>& tau_ladder);

// KPZ side: variance of S_h = T^{1/4} int f (h_eps - mean h) against the
// u3 target, the Ito-decomposition residual slope in the checkpoint spacing,
// and concentration of the rescaled bracket across the tail of the schedule.
Report kpz_fluct_lab(const ExperimentConfig& cfg, const InitialCondition& ic,
                     const TestFunction& f);

// Local limit theorem error: squared L2 difference between the bridge
// average and the product of endpoint windows, over the window ladder
// l = T^a; slope at y = 0 and envelope fit at the other endpoints.
Report llt_lab(const ExperimentConfig& cfg, const std::vector<std::array<double, 3>>& ys,
               const std::vector<double>& a_ladder);

// Uniform-integrability, capped-second-moment, minimum, and ratio
// diagnostics for the partition martingale across the schedule's T-ladder.
Report diagnostics_suite(const ExperimentConfig& cfg);

}  // namespace polylab
