#include "polylab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "polylab/polymer.hpp"
#include "polylab/stats.hpp"

namespace polylab {

namespace {

using nlohmann::json;

// Disjoint path-randomness blocks for statistics sharing one noise
// realization; larger than any support grid.
constexpr std::uint64_t kStreamBlock = std::uint64_t(1) << 22;

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

json config_json(const ExperimentConfig& cfg) {
    json j;
    j["model"] = {{"beta", cfg.model.beta},
                  {"dt", cfg.model.dt},
                  {"dx", cfg.model.dx},
                  {"mollifier_radius", cfg.model.mollifier_radius}};
    j["schedule"] = json::array();
    for (const auto& e : cfg.schedule)
        j["schedule"].push_back(
            {{"T", e.T}, {"t", e.t}, {"a", e.a}, {"reps", e.reps}, {"paths", e.paths}});
    j["base_seed"] = cfg.base_seed;
    j["seed_stride"] = cfg.seed_stride;
    j["grid_n"] = cfg.grid_n;
    j["var_tol"] = cfg.var_tol;
    j["normality_alpha"] = cfg.normality_alpha;
    j["trend_z"] = cfg.trend_z;
    j["workers"] = cfg.workers;
    return j;
}

NoiseSpec make_noise(const ExperimentConfig& cfg, int rep) {
    return NoiseSpec(cfg.model.dt, cfg.model.dx,
                     cfg.base_seed + cfg.seed_stride * static_cast<std::uint64_t>(rep),
                     Mollifier(cfg.model.mollifier_radius));
}

void run_parallel(int n, int workers, const std::function<void(int)>& body) {
    int w = std::min(workers, n);
    if (w <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (int k = 0; k < w; ++k)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    for (auto& th : pool) th.join();
}

// Interior lattice over the support cube of f, step h = 2R/n, plus the
// nested every-other-node sublattice used to probe resolution effects.
struct Grid {
    std::vector<std::array<double, 3>> pts;
    std::vector<double> w;               // f(x) h^3
    std::vector<std::size_t> half_ix;    // indices of the even-node subset
    std::vector<double> half_w;          // f(x) (2h)^3
};

Grid support_grid(const TestFunction& f, int n) {
    Grid g;
    double h = 2.0 * f.radius / n;
    double h3 = h * h * h;
    for (int j1 = 1; j1 < n; ++j1)
        for (int j2 = 1; j2 < n; ++j2)
            for (int j3 = 1; j3 < n; ++j3) {
                std::array<double, 3> x = {f.center[0] - f.radius + h * j1,
                                           f.center[1] - f.radius + h * j2,
                                           f.center[2] - f.radius + h * j3};
                double fv = f(x.data());
                if (j1 % 2 == 0 && j2 % 2 == 0 && j3 % 2 == 0) {
                    g.half_ix.push_back(g.pts.size());
                    g.half_w.push_back(fv * 8.0 * h3);
                }
                g.pts.push_back(x);
                g.w.push_back(fv * h3);
            }
    return g;
}

std::vector<double> ubar_on(const InitialCondition& ic, double t,
                            const std::vector<std::array<double, 3>>& pts) {
    std::vector<double> ub(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) ub[i] = solve_ubar(ic, t, pts[i].data());
    return ub;
}

// Constants of the sub-grid sampling-noise model: a field component rough
// below the lattice step contributes variance q * c to a weighted lattice
// sum, with c the per-point roughness variance.  qd is the variance unit of
// the half-minus-full difference, which is what the data can estimate.
struct NoiseModel {
    double qf = 0.0;  // full grid
    double qh = 0.0;  // half grid
    double qd = 0.0;  // difference
};

NoiseModel noise_model(const Grid& g, const std::vector<double>& ub, double scale) {
    NoiseModel m;
    double qc = 0.0;
    for (std::size_t i = 0; i < g.pts.size(); ++i) {
        double a = scale * g.w[i] * ub[i];
        m.qf += a * a;
    }
    for (std::size_t k = 0; k < g.half_ix.size(); ++k) {
        std::size_t i = g.half_ix[k];
        double a = scale * g.w[i] * ub[i];
        double b = scale * g.half_w[k] * ub[i];
        m.qh += b * b;
        qc += a * b;
    }
    m.qd = m.qh + m.qf - 2.0 * qc;
    return m;
}

// One replication's grid statistics: full and half lattice sums of
// scale * w * (u - ubar), each with its signed path-half difference.
struct StatRow {
    double s = 0, sh = 0, d = 0, dh = 0;
    bool warned = false;
};

StatRow field_statistic(const Grid& g, const FieldSample& fs, const std::vector<double>& ub,
                        double scale) {
    StatRow r;
    for (std::size_t i = 0; i < g.pts.size(); ++i) {
        r.s += g.w[i] * (fs.u[i] - ub[i]);
        r.d += g.w[i] * fs.half_delta[i];
    }
    for (std::size_t k = 0; k < g.half_ix.size(); ++k) {
        std::size_t i = g.half_ix[k];
        r.sh += g.half_w[k] * (fs.u[i] - ub[i]);
        r.dh += g.half_w[k] * fs.half_delta[i];
    }
    r.s *= scale;
    r.sh *= scale;
    r.d *= scale;
    r.dh *= scale;
    for (auto wflag : fs.warning) r.warned = r.warned || wflag != 0;
    return r;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Mean and variance of the field statistic with the path-noise and sub-grid
// sampling-noise components estimated and removed.  grid_z is the corrected
// full-vs-half variance shift in units of the variance's standard error.
struct FieldMoments {
    std::int64_t n = 0;
    double mean = 0, mean_se = 0;
    double var_raw = 0, path_var = 0, lattice_var = 0;
    double var = 0, var_se = 0;
    double var_half = 0;
    double grid_z = 0;  // shift under grid doubling over its own resolution
    double warn_rate = 0;
};

FieldMoments summarize_field(const std::vector<StatRow>& rows, const NoiseModel& nm) {
    FieldMoments out;
    std::size_t n = rows.size();
    out.n = static_cast<std::int64_t>(n);
    if (n < 2) return out;

    Accumulator as, ah, ad;
    for (const auto& r : rows) {
        as.add(r.s);
        ah.add(r.sh);
        ad.add(r.sh - r.s);
    }
    out.mean = as.mean();
    out.mean_se = as.stderr_mean();
    out.var_raw = as.sample_variance();
    double b2 = as.kurtosis();
    double se_raw = out.var_raw * std::sqrt(std::max(b2 - 1.0, 2.0) / static_cast<double>(n));

    std::vector<double> pv(n), pvh(n), lat(n);
    double md = ad.mean();
    for (std::size_t i = 0; i < n; ++i) {
        pv[i] = rows[i].d * rows[i].d / 4.0;
        pvh[i] = rows[i].dh * rows[i].dh / 4.0;
        double dd = rows[i].sh - rows[i].s;
        double pd = rows[i].dh - rows[i].d;
        lat[i] = (dd - md) * (dd - md) - pd * pd / 4.0;
    }
    out.path_var = mean_of(pv);
    double field_d = std::max(mean_of(lat), 0.0);
    double ratio = nm.qd > 0 ? field_d / nm.qd : 0.0;
    out.lattice_var = nm.qf * ratio;
    out.var = out.var_raw - out.path_var - out.lattice_var;

    double se_path = sd_of(pv) / std::sqrt(static_cast<double>(n));
    double se_lat = nm.qd > 0 ? nm.qf / nm.qd * sd_of(lat) / std::sqrt(static_cast<double>(n)) : 0.0;
    out.var_se = std::sqrt(se_raw * se_raw + se_path * se_path + se_lat * se_lat);

    out.var_half = ah.sample_variance() - mean_of(pvh) - nm.qh * ratio;

    // The two resolutions share every sample, so the shift's standard error
    // comes from the paired per-replication quantities, floored by the
    // variance estimate's own error.
    double mh2 = ah.mean();
    std::vector<double> q(n);
    int warned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double cf = (rows[i].s - out.mean) * (rows[i].s - out.mean) - pv[i];
        double ch = (rows[i].sh - mh2) * (rows[i].sh - mh2) - pvh[i];
        q[i] = cf - ch - (nm.qf - nm.qh) * (nm.qd > 0 ? lat[i] / nm.qd : 0.0);
        if (rows[i].warned) ++warned;
    }
    double paired_se = sd_of(q) / std::sqrt(static_cast<double>(n));
    double denom = std::max(out.var_se, 3.0 * paired_se);
    out.grid_z = denom > 0 ? std::abs(out.var - out.var_half) / denom
                           : std::numeric_limits<double>::infinity();
    out.warn_rate = static_cast<double>(warned) / static_cast<double>(n);
    return out;
}

// Covariance of two statistics on one lattice with independent path streams:
// the path parts drop out on their own and only the sub-grid component needs
// the two-grid subtraction.
struct CovEstimate {
    double cov = 0, se = 0;
};

CovEstimate covariance_corrected(const std::vector<StatRow>& x, const std::vector<StatRow>& y,
                                 const NoiseModel& nm) {
    CovEstimate out;
    std::size_t n = x.size();
    if (n < 2 || y.size() != n) return out;
    double mx = 0, my = 0, mdx = 0, mdy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i].s;
        my += y[i].s;
        mdx += x[i].sh - x[i].s;
        mdy += y[i].sh - y[i].s;
    }
    mx /= n; my /= n; mdx /= n; mdy /= n;
    double corr = nm.qd > 0 ? nm.qf / nm.qd : 0.0;
    std::vector<double> prod(n);
    for (std::size_t i = 0; i < n; ++i) {
        double cx = x[i].s - mx, cy = y[i].s - my;
        double dx = x[i].sh - x[i].s - mdx, dy = y[i].sh - y[i].s - mdy;
        prod[i] = cx * cy - corr * dx * dy;
    }
    double nn = static_cast<double>(n);
    out.cov = mean_of(prod) * nn / (nn - 1.0);
    out.se = sd_of(prod) / std::sqrt(nn);
    return out;
}

Criterion crit(std::string name, double observed, double expected, double tol, bool pass,
               std::string note) {
    Criterion c;
    c.name = std::move(name);
    c.observed = observed;
    c.expected = expected;
    c.tolerance = tol;
    c.pass = pass;
    c.note = std::move(note);
    return c;
}

void add_samples(Report& rep, const std::string& entry, const std::string& stat,
                 std::vector<double> values) {
    SampleColumn col;
    col.entry = entry;
    col.stat = stat;
    col.values = std::move(values);
    rep.samples.push_back(std::move(col));
}

std::vector<double> column(const std::vector<StatRow>& rows) {
    std::vector<double> v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) v[i] = rows[i].s;
    return v;
}

double coarse_gamma_hint(double beta, const CovarianceKernel& V) {
    if (beta == 0.0) return 0.0;
    return gamma2(beta, V, 0.0, RadialFkOptions{0.02, 0.04, 8.0}).value;
}

// Largest |statistic| seen; the labs' zero-coupling criteria assert exact
// degeneracy rather than running trend machinery on identical zeros.
Criterion zero_coupling_criterion(double max_abs) {
    return crit("zero_coupling_degenerate", max_abs, 0.0, 1e-10, max_abs <= 1e-10,
                "beta = 0: all statistics vanish identically");
}

int resolve_reps(const ScheduleEntry& e) {
    if (e.reps < 4) throw std::invalid_argument("experiments: need at least 4 replications");
    return e.reps;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (!(model.beta >= 0.0) || !std::isfinite(model.beta))
        throw std::invalid_argument("ExperimentConfig: beta must be finite and >= 0");
    if (!(model.dt > 0.0) || !(model.dx > 0.0))
        throw std::invalid_argument("ExperimentConfig: dt and dx must be positive");
    if (!(model.mollifier_radius > 0.0))
        throw std::invalid_argument("ExperimentConfig: mollifier radius must be positive");
    if (schedule.empty()) throw std::invalid_argument("ExperimentConfig: empty schedule");
    for (const auto& e : schedule) {
        if (!(e.T > 0.0) || !(e.t > 0.0))
            throw std::invalid_argument("ExperimentConfig: schedule needs T > 0 and t > 0");
        if (!(e.a > 0.0) || !(e.a < 1.0))
            throw std::invalid_argument("ExperimentConfig: window exponent must lie in (0,1)");
        if (e.reps < 1) throw std::invalid_argument("ExperimentConfig: reps must be >= 1");
        if (e.paths < 2 || e.paths % 2 != 0)
            throw std::invalid_argument("ExperimentConfig: paths must be even and >= 2");
    }
    if (grid_n < 4 || grid_n % 2 != 0)
        throw std::invalid_argument("ExperimentConfig: grid_n must be even and >= 4");
    if (!(var_tol > 0.0)) throw std::invalid_argument("ExperimentConfig: var_tol must be positive");
    if (!(normality_alpha > 0.0) || !(normality_alpha < 1.0))
        throw std::invalid_argument("ExperimentConfig: normality_alpha must lie in (0,1)");
    if (!(trend_z > 0.0)) throw std::invalid_argument("ExperimentConfig: trend_z must be positive");
    if (workers < 1) throw std::invalid_argument("ExperimentConfig: workers must be >= 1");
}

bool Report::pass() const {
    for (const auto& c : criteria)
        if (!c.pass) return false;
    return true;
}

std::string report_json(const Report& report) {
    json j;
    j["experiment"] = report.experiment;
    j["pass"] = report.pass();
    j["config"] = report.manifest.empty() ? json() : json::parse(report.manifest);
    j["entries"] = json::array();
    for (const auto& e : report.entries) {
        json je;
        je["id"] = e.id;
        je["values"] = json::object();
        for (const auto& [k, v] : e.values) je["values"][k] = v;
        j["entries"].push_back(std::move(je));
    }
    j["criteria"] = json::array();
    for (const auto& c : report.criteria)
        j["criteria"].push_back({{"name", c.name},
                                 {"observed", c.observed},
                                 {"expected", c.expected},
                                 {"tolerance", c.tolerance},
                                 {"pass", c.pass},
                                 {"note", c.note}});
    return j.dump(2);
}

void report_csv(const Report& report, std::ostream& os) {
    os << "experiment,entry,stat,replication,value\n";
    os << std::setprecision(17);
    for (const auto& col : report.samples)
        for (std::size_t i = 0; i < col.values.size(); ++i)
            os << report.experiment << ',' << col.entry << ',' << col.stat << ',' << i << ','
               << col.values[i] << '\n';
}

// ---------------------------------------------------------------------------
// Law of large numbers

Report lln_lab(const ExperimentConfig& cfg, const InitialCondition& ic, const TestFunction& f) {
    cfg.validate();
    ic.validate();
    Report rep;
    rep.experiment = "lln";
    rep.manifest = config_json(cfg).dump(2);

    bool dirac = ic.kind == InitialCondition::Kind::dirac;
    if (!dirac && cfg.model.beta > 0.0 && cfg.schedule.size() < 3)
        throw std::invalid_argument("lln_lab: the decay trend needs at least 3 horizons");

    Grid g = support_grid(f, cfg.grid_n);
    double mu_last = 0.0;

    std::vector<double> d_vals, d_ses;
    double max_abs = 0.0;

    for (std::size_t ei = 0; ei < cfg.schedule.size(); ++ei) {
        const auto& e = cfg.schedule[ei];
        int R = resolve_reps(e);
        double eps = 1.0 / std::sqrt(e.T);
        std::vector<double> ub = ubar_on(ic, e.t, g.pts);
        NoiseModel nm = noise_model(g, dirac ? std::vector<double>(g.pts.size(), 1.0) : ub, 1.0);

        std::vector<StatRow> rows(R);
        std::vector<double> integral(R), zproxy(R);
        std::int64_t wslabs = std::llround(e.t / (eps * eps * cfg.model.dt));

        run_parallel(R, cfg.workers, [&](int r) {
            NoiseSpec noise = make_noise(cfg, r);
            FieldSample fs = u_eps(noise, ic, eps, e.t, g.pts, cfg.model.beta, e.paths, 0);
            rows[r] = field_statistic(g, fs, ub, 1.0);
            if (dirac) {
                double tot = 0.0;
                for (std::size_t i = 0; i < g.pts.size(); ++i) tot += g.w[i] * fs.u[i];
                integral[r] = tot;
                if (cfg.model.beta > 0.0) {
                    PolymerEnv env(noise, cfg.model.beta);
                    SmcOptions opts;
                    opts.particles = static_cast<int>(std::max<std::int64_t>(1, e.paths / 2));
                    double start[3] = {ic.location[0] / eps, ic.location[1] / eps,
                                       ic.location[2] / eps};
                    ZEstimate a =
                        estimate_Z(env, Frame{}, wslabs, start, opts, 0, 0, kStreamBlock);
                    ZEstimate b =
                        estimate_Z(env, Frame{}, wslabs, start, opts, 0, 1, kStreamBlock);
                    zproxy[r] = 0.5 * (a.z + b.z);
                } else {
                    zproxy[r] = 1.0;
                }
            }
        });

        FieldMoments fm = summarize_field(rows, nm);
        std::ostringstream id;
        id << "T=" << fmt(e.T) << ",t=" << fmt(e.t);
        EntryStats es;
        es.id = id.str();

        std::vector<double> abs_s(R);
        for (int r = 0; r < R; ++r) {
            abs_s[r] = std::abs(rows[r].s);
            max_abs = std::max(max_abs, abs_s[r]);
        }

        if (dirac) {
            double mu = 0.0;
            for (std::size_t i = 0; i < g.pts.size(); ++i) mu += g.w[i] * ub[i];
            mu_last = mu;
            Accumulator ai, az;
            for (int r = 0; r < R; ++r) {
                ai.add(integral[r]);
                az.add(zproxy[r]);
            }
            std::vector<double> ratio(R);
            for (int r = 0; r < R; ++r)
                ratio[r] = zproxy[r] > 0 ? integral[r] / (zproxy[r] * mu)
                                         : std::numeric_limits<double>::quiet_NaN();
            Accumulator ar;
            for (double v : ratio)
                if (std::isfinite(v)) ar.add(v);
            es.values["integral_mean"] = ai.mean();
            es.values["integral_se"] = ai.stderr_mean();
            es.values["target"] = mu;
            es.values["zproxy_mean"] = az.mean();
            es.values["ratio_mean"] = ar.mean();
            es.values["ratio_var"] = ar.sample_variance();
            add_samples(rep, es.id, "integral", integral);
            add_samples(rep, es.id, "ratio", ratio);
            if (ei + 1 == cfg.schedule.size() && cfg.model.beta > 0.0) {
                double diff = std::abs(ai.mean() - mu);
                double band = 3.0 * ai.stderr_mean();
                rep.criteria.push_back(crit("dirac_mean_identity", ai.mean(), mu, band,
                                            diff <= band, "|mean - target| within 3 se"));
            }
        } else {
            // E|S| picks up path and sub-grid noise multiplicatively; shrink
            // by the field-to-total standard deviation ratio.
            double mean_abs = mean_of(abs_s);
            double se_abs = sd_of(abs_s) / std::sqrt(static_cast<double>(R));
            double tot = fm.var_raw;
            double fieldv = std::max(fm.var, 0.0);
            double shrink = tot > 0 ? std::sqrt(fieldv / tot) : 1.0;
            double D = mean_abs * shrink;
            double D_se = se_abs * shrink;
            es.values["D"] = D;
            es.values["D_se"] = D_se;
            es.values["mean_abs_raw"] = mean_abs;
            es.values["var"] = fm.var;
            es.values["var_raw"] = fm.var_raw;
            es.values["path_var"] = fm.path_var;
            es.values["lattice_var"] = fm.lattice_var;
            es.values["grid_z"] = fm.grid_z;
            es.values["warn_rate"] = fm.warn_rate;
            d_vals.push_back(D);
            d_ses.push_back(D_se);
            add_samples(rep, es.id, "abs_s", abs_s);
        }
        rep.entries.push_back(std::move(es));
    }

    if (cfg.model.beta == 0.0) {
        rep.criteria.push_back(zero_coupling_criterion(dirac ? std::abs(rep.entries.back().values["integral_mean"] - mu_last)
                                                             : max_abs));
    } else if (!dirac) {
        TrendCheck tc = trend_decreasing(d_vals, d_ses);
        rep.criteria.push_back(crit("d_strictly_decreasing", tc.min_z, cfg.trend_z, cfg.trend_z,
                                    tc.decreasing_at(cfg.trend_z),
                                    "smallest pairwise decrease z over the T ladder"));
        double gz = rep.entries.back().values["grid_z"];
        rep.criteria.push_back(crit("grid_sensitivity", gz, 0.0, 1.0, gz <= 1.0,
                                    "corrected variance shift under grid doubling, se units"));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Edwards-Wilkinson fluctuations

Report ew_fluct_lab(const ExperimentConfig& cfg, const InitialCondition& ic,
                    const std::vector<double>& lags, const std::vector<TestFunction>& fs) {
    cfg.validate();
    ic.validate();
    if (lags.empty() || fs.empty())
        throw std::invalid_argument("ew_fluct_lab: need at least one lag and one test function");
    for (std::size_t j = 0; j < lags.size(); ++j) {
        if (!(lags[j] >= 0.0)) throw std::invalid_argument("ew_fluct_lab: lags must be >= 0");
        if (j > 0 && !(lags[j] > lags[j - 1]))
            throw std::invalid_argument("ew_fluct_lab: lags must be strictly increasing");
    }
    const auto& e = cfg.schedule.front();
    if (!(lags.back() < e.t))
        throw std::invalid_argument("ew_fluct_lab: lags must stay below the field time");

    Report rep;
    rep.experiment = "ew_she";
    rep.manifest = config_json(cfg).dump(2);

    int R = resolve_reps(e);
    double eps = 1.0 / std::sqrt(e.T);
    double scale = std::pow(e.T, 0.25);
    bool flat = ic.kind == InitialCondition::Kind::flat;
    std::size_t J = lags.size(), K = fs.size();

    std::vector<Grid> grids;
    grids.reserve(K);
    for (const auto& f : fs) grids.push_back(support_grid(f, cfg.grid_n));
    std::vector<std::vector<std::vector<double>>> ub(J);   // [lag][f][pt]
    std::vector<std::vector<NoiseModel>> nm(J);
    for (std::size_t j = 0; j < J; ++j) {
        ub[j].reserve(K);
        nm[j].reserve(K);
        for (std::size_t k = 0; k < K; ++k) {
            ub[j].push_back(ubar_on(ic, e.t - lags[j], grids[k].pts));
            nm[j].push_back(noise_model(grids[k], ub[j][k], scale));
        }
    }

    std::vector<std::vector<std::vector<StatRow>>> S(J,
        std::vector<std::vector<StatRow>>(K, std::vector<StatRow>(R)));
    run_parallel(R, cfg.workers, [&](int r) {
        NoiseSpec noise = make_noise(cfg, r);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k) {
                FieldSample fsample =
                    u_eps(noise, ic, eps, e.t - lags[j], grids[k].pts, cfg.model.beta, e.paths,
                          (j * K + k) * kStreamBlock);
                S[j][k][r] = field_statistic(grids[k], fsample, ub[j][k], scale);
            }
    });

    Mollifier phi(cfg.model.mollifier_radius);
    CovarianceKernel V(phi);
    double hint = coarse_gamma_hint(cfg.model.beta, V);

    double max_abs = 0.0;
    std::vector<std::vector<FieldMoments>> fm(J, std::vector<FieldMoments>(K));
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t k = 0; k < K; ++k) {
            fm[j][k] = summarize_field(S[j][k], nm[j][k]);
            for (const auto& row : S[j][k]) max_abs = std::max(max_abs, std::abs(row.s));
            std::ostringstream id;
            id << "lag=" << fmt(lags[j]) << ",f=" << k;
            EntryStats es;
            es.id = id.str();
            const FieldMoments& m = fm[j][k];
            es.values["mean"] = m.mean;
            es.values["mean_se"] = m.mean_se;
            es.values["var"] = m.var;
            es.values["var_se"] = m.var_se;
            es.values["var_raw"] = m.var_raw;
            es.values["path_var"] = m.path_var;
            es.values["lattice_var"] = m.lattice_var;
            es.values["grid_z"] = m.grid_z;
            es.values["warn_rate"] = m.warn_rate;
            if (flat && cfg.model.beta > 0.0) {
                TheoryTarget tt = ew_variance(fs[k], e.t - lags[j], cfg.model.beta, V,
                                              flat_mean_field(), 0.0, {}, hint);
                es.values["theory_var"] = tt.value;
            }
            rep.entries.push_back(std::move(es));
            if (j == 0) add_samples(rep, rep.entries.back().id, "S", column(S[j][k]));
        }

    if (cfg.model.beta == 0.0) {
        rep.criteria.push_back(zero_coupling_criterion(max_abs));
        return rep;
    }

    const FieldMoments& m0 = fm[0][0];
    rep.criteria.push_back(crit("mean_zero", m0.mean, 0.0, 4.0 * m0.mean_se,
                                std::abs(m0.mean) <= 4.0 * m0.mean_se,
                                "statistic mean within 4 se of zero"));
    if (flat) {
        double tv = rep.entries[0].values["theory_var"];
        bool ok = std::abs(m0.var - tv) <= cfg.var_tol * tv;
        rep.criteria.push_back(crit("variance_vs_theory", m0.var, tv, cfg.var_tol, ok,
                                    "relative band on the corrected variance"));
    }
    if (R >= 100) {
        NormalityReport nr = normality_test(column(S[0][0]));
        double p = std::min(nr.p_k2, nr.p_ks);
        rep.criteria.push_back(crit("normality", p, cfg.normality_alpha, cfg.normality_alpha,
                                    nr.gaussian(cfg.normality_alpha),
                                    "min of moment-based and KS p-values"));
    }
    if (flat)
        for (std::size_t j = 1; j < J; ++j) {
            CovEstimate ce = covariance_corrected(S[0][0], S[j][0], nm[0][0]);
            TheoryTarget tt =
                ew_cross_cov(fs[0], fs[0], lags[j], lags[0], e.t, cfg.model.beta, V, hint);
            double band = 3.0 * ce.se;
            std::ostringstream nm2;
            nm2 << "two_time_cov_lag=" << fmt(lags[j]);
            rep.criteria.push_back(crit(nm2.str(), ce.cov, tt.value, band,
                                        std::abs(ce.cov - tt.value) <= band,
                                        "covariance against the two-time form, 3 se"));
        }
    rep.criteria.push_back(crit("grid_sensitivity", m0.grid_z, 0.0, 1.0, m0.grid_z <= 1.0,
                                "corrected variance shift under grid doubling, se units"));
    return rep;
}

// ---------------------------------------------------------------------------
// Gaussian free field window

Report gff_lab(const ExperimentConfig& cfg, const TestFunction& f,
               const std::vector<double>& tau_ladder) {
    cfg.validate();
    if (tau_ladder.size() < 3)
        throw std::invalid_argument("gff_lab: the decay fit needs at least 3 tau values");
    for (std::size_t j = 0; j < tau_ladder.size(); ++j) {
        if (!(tau_ladder[j] > 0.0)) throw std::invalid_argument("gff_lab: tau must be positive");
        if (j > 0 && !(tau_ladder[j] > tau_ladder[j - 1]))
            throw std::invalid_argument("gff_lab: tau ladder must be strictly increasing");
    }
    const auto& e = cfg.schedule.front();
    int R = resolve_reps(e);
    double eps = 1.0 / std::sqrt(e.T);
    double scale = std::pow(e.T, 0.25);

    Report rep;
    rep.experiment = "gff";
    rep.manifest = config_json(cfg).dump(2);

    InitialCondition flat_ic = InitialCondition::make_flat();
    Grid g = support_grid(f, cfg.grid_n);
    std::vector<double> ub(g.pts.size(), 1.0);
    NoiseModel nm = noise_model(g, ub, scale);

    // Observation times: each tau and its double, deduplicated.
    std::vector<double> times;
    for (double tau : tau_ladder) {
        times.push_back(tau);
        times.push_back(2.0 * tau);
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    std::size_t M = times.size();

    std::vector<std::vector<StatRow>> S(M, std::vector<StatRow>(R));
    run_parallel(R, cfg.workers, [&](int r) {
        NoiseSpec noise = make_noise(cfg, r);
        for (std::size_t m = 0; m < M; ++m) {
            FieldSample fsample = u_eps(noise, flat_ic, eps, times[m], g.pts, cfg.model.beta,
                                        e.paths, m * kStreamBlock);
            S[m][r] = field_statistic(g, fsample, ub, scale);
        }
    });

    auto time_index = [&](double t) {
        return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) -
                                        times.begin());
    };

    double max_abs = 0.0;
    for (const auto& col : S)
        for (const auto& row : col) max_abs = std::max(max_abs, std::abs(row.s));

    // Paired tau vs 2 tau differences, with the same noise decomposition
    // applied to the difference statistic.
    std::vector<double> l2(tau_ladder.size()), l2_se(tau_ladder.size());
    for (std::size_t j = 0; j < tau_ladder.size(); ++j) {
        std::size_t a = time_index(tau_ladder[j]), b = time_index(2.0 * tau_ladder[j]);
        std::vector<StatRow> diff(R);
        for (int r = 0; r < R; ++r) {
            diff[r].s = S[b][r].s - S[a][r].s;
            diff[r].sh = S[b][r].sh - S[a][r].sh;
            diff[r].d = S[b][r].d - S[a][r].d;
            diff[r].dh = S[b][r].dh - S[a][r].dh;
        }
        FieldMoments dm = summarize_field(diff, nm);
        double m2 = dm.var + dm.mean * dm.mean;
        double m2_floor = std::max(m2, 1e-300);
        l2[j] = std::sqrt(m2_floor);
        l2_se[j] = dm.var_se / (2.0 * l2[j]);

        EntryStats es;
        es.id = "tau=" + fmt(tau_ladder[j]);
        es.values["l2_diff"] = l2[j];
        es.values["l2_se"] = l2_se[j];
        es.values["m2"] = m2;
        es.values["path_var"] = dm.path_var;
        es.values["lattice_var"] = dm.lattice_var;
        rep.entries.push_back(std::move(es));
        add_samples(rep, rep.entries.back().id, "diff", column(diff));
    }

    // Form factor at the deepest window.
    std::size_t top = time_index(times.back());
    FieldMoments fmtop = summarize_field(S[top], nm);
    {
        EntryStats es;
        es.id = "tau=" + fmt(times.back()) + ",window";
        es.values["var"] = fmtop.var;
        es.values["var_se"] = fmtop.var_se;
        es.values["var_raw"] = fmtop.var_raw;
        es.values["path_var"] = fmtop.path_var;
        es.values["lattice_var"] = fmtop.lattice_var;
        es.values["grid_z"] = fmtop.grid_z;
        es.values["warn_rate"] = fmtop.warn_rate;
        rep.entries.push_back(std::move(es));
        add_samples(rep, rep.entries.back().id, "S", column(S[top]));
    }

    if (cfg.model.beta == 0.0) {
        rep.criteria.push_back(zero_coupling_criterion(max_abs));
        return rep;
    }

    SlopeFit fit = fit_loglog(tau_ladder, l2, l2_se);
    rep.criteria.push_back(crit("tau_decay_slope", fit.slope, -0.25, 0.15,
                                std::abs(fit.slope + 0.25) <= 0.15,
                                "log-log slope of the tau vs 2 tau L2 difference"));

    Mollifier phi(cfg.model.mollifier_radius);
    CovarianceKernel V(phi);
    double hint = coarse_gamma_hint(cfg.model.beta, V);
    TheoryTarget ff = ew_variance(f, times.back(), cfg.model.beta, V, flat_mean_field(), 0.0, {},
                                  hint);
    bool ok = std::abs(fmtop.var - ff.value) <= cfg.var_tol * ff.value;
    rep.criteria.push_back(crit("variance_vs_form_factor", fmtop.var, ff.value, cfg.var_tol, ok,
                                "relative band at the deepest window"));
    rep.criteria.push_back(crit("grid_sensitivity", fmtop.grid_z, 0.0, 1.0, fmtop.grid_z <= 1.0,
                                "corrected variance shift under grid doubling, se units"));
    return rep;
}

// ---------------------------------------------------------------------------
// KPZ / Hopf-Cole side

Report kpz_fluct_lab(const ExperimentConfig& cfg, const InitialCondition& ic,
                     const TestFunction& f) {
    cfg.validate();
    ic.validate();
    Report rep;
    rep.experiment = "ew_kpz";
    rep.manifest = config_json(cfg).dump(2);

    const auto& e = cfg.schedule.front();
    int R = resolve_reps(e);
    double eps = 1.0 / std::sqrt(e.T);
    double scale = std::pow(e.T, 0.25);
    bool flat = ic.kind == InitialCondition::Kind::flat;

    Grid g = support_grid(f, cfg.grid_n);
    std::vector<double> ub = ubar_on(ic, e.t, g.pts);
    std::vector<double> ones(g.pts.size(), 1.0);
    NoiseModel nm_u = noise_model(g, ub, scale);
    NoiseModel nm_h = noise_model(g, ones, scale);

    std::size_t G = g.pts.size();
    std::vector<std::vector<double>> u_all(R), d_all(R);
    std::vector<StatRow> Su(R);
    std::vector<char> aborted(R, 0);
    run_parallel(R, cfg.workers, [&](int r) {
        NoiseSpec noise = make_noise(cfg, r);
        FieldSample fsample = u_eps(noise, ic, eps, e.t, g.pts, cfg.model.beta, e.paths, 0);
        Su[r] = field_statistic(g, fsample, ub, scale);
        u_all[r] = fsample.u;
        d_all[r] = fsample.half_delta;
        for (std::size_t i = 0; i < G; ++i) {
            double a = fsample.u[i] + 0.5 * fsample.half_delta[i];
            double b = fsample.u[i] - 0.5 * fsample.half_delta[i];
            if (!(a > 0.0) || !(b > 0.0)) aborted[r] = 1;
        }
    });

    // Heights from the geometric mean of the path halves: the half log
    // difference is pure path noise, so its square over 4 is an unbiased
    // estimate of the height's path variance with no linearization.
    int good = 0;
    std::vector<double> hbar(G, 0.0);
    for (int r = 0; r < R; ++r) {
        if (aborted[r]) continue;
        ++good;
        for (std::size_t i = 0; i < G; ++i) {
            double a = u_all[r][i] + 0.5 * d_all[r][i];
            double b = u_all[r][i] - 0.5 * d_all[r][i];
            hbar[i] += 0.5 * (std::log(a) + std::log(b));
        }
    }
    if (good < 4) throw std::runtime_error("kpz_fluct_lab: too many aborted replications");
    for (double& v : hbar) v /= good;

    std::vector<StatRow> Sh;
    std::vector<double> sh_samples;
    Sh.reserve(good);
    for (int r = 0; r < R; ++r) {
        if (aborted[r]) continue;
        StatRow row;
        std::vector<double> h(G), dh(G);
        for (std::size_t i = 0; i < G; ++i) {
            double a = u_all[r][i] + 0.5 * d_all[r][i];
            double b = u_all[r][i] - 0.5 * d_all[r][i];
            h[i] = 0.5 * (std::log(a) + std::log(b)) - hbar[i];
            dh[i] = std::log(a) - std::log(b);
            row.s += g.w[i] * h[i];
            row.d += g.w[i] * dh[i];
        }
        for (std::size_t k = 0; k < g.half_ix.size(); ++k) {
            std::size_t i = g.half_ix[k];
            row.sh += g.half_w[k] * h[i];
            row.dh += g.half_w[k] * dh[i];
        }
        row.s *= scale;
        row.sh *= scale;
        row.d *= scale;
        row.dh *= scale;
        Sh.push_back(row);
        sh_samples.push_back(row.s);
    }
    FieldMoments mh = summarize_field(Sh, nm_h);
    FieldMoments mu = summarize_field(Su, nm_u);
    // Centering at the empirical mean removes 1/n of the variance.
    double centering = static_cast<double>(good) / std::max(good - 1, 1);
    double var_h = mh.var * centering;

    {
        EntryStats es;
        es.id = "T=" + fmt(e.T) + ",t=" + fmt(e.t);
        es.values["var_h"] = var_h;
        es.values["var_h_se"] = mh.var_se * centering;
        es.values["path_var_h"] = mh.path_var;
        es.values["lattice_var_h"] = mh.lattice_var;
        es.values["grid_z_h"] = mh.grid_z;
        es.values["warn_rate"] = mu.warn_rate;
        es.values["var_u"] = mu.var;
        es.values["var_u_se"] = mu.var_se;
        es.values["abort_rate"] = static_cast<double>(R - good) / R;
        rep.entries.push_back(std::move(es));
        add_samples(rep, rep.entries.back().id, "S_h", sh_samples);
        add_samples(rep, rep.entries.back().id, "S_u", column(Su));
    }

    double max_abs = 0.0;
    for (const auto& row : Sh) max_abs = std::max(max_abs, std::abs(row.s));
    for (const auto& row : Su) max_abs = std::max(max_abs, std::abs(row.s));

    Mollifier phi(cfg.model.mollifier_radius);
    CovarianceKernel V(phi);

    if (cfg.model.beta == 0.0) {
        rep.criteria.push_back(zero_coupling_criterion(max_abs));
    } else {
        double hint = coarse_gamma_hint(cfg.model.beta, V);
        if (flat) {
            TheoryTarget tt = u3_cov(f, f, e.t, cfg.model.beta, V, flat_mean_field(), {}, hint);
            bool ok = std::abs(var_h - tt.value) <= cfg.var_tol * tt.value;
            rep.criteria.push_back(crit("variance_vs_theory", var_h, tt.value, cfg.var_tol, ok,
                                        "corrected Var(S_h) against the height form"));
        }
        if (good >= 100) {
            NormalityReport nr = normality_test(sh_samples);
            double p = std::min(nr.p_k2, nr.p_ks);
            rep.criteria.push_back(crit("normality", p, cfg.normality_alpha, cfg.normality_alpha,
                                        nr.gaussian(cfg.normality_alpha),
                                        "min of moment-based and KS p-values on S_h"));
        }
        // Matched-seed comparison of the height and field statistics; the
        // paired spread prices in their strong coupling.
        {
            std::vector<double> pd;
            pd.reserve(good);
            std::size_t k = 0;
            double mhm = mh.mean, mum = mu.mean;
            for (int r = 0; r < R; ++r) {
                if (aborted[r]) continue;
                double a = Sh[k].s - mhm, b = Su[r].s - mum;
                double la = Sh[k].d, lb = Su[r].d;
                pd.push_back((a * a - la * la / 4.0) * centering - (b * b - lb * lb / 4.0));
                ++k;
            }
            double lat_gap = mh.lattice_var * centering - mu.lattice_var;
            double gap = mean_of(pd) - lat_gap;
            double gap_se = sd_of(pd) / std::sqrt(static_cast<double>(good));
            double band = 3.0 * std::max(gap_se, 0.01 * mu.var);
            rep.criteria.push_back(crit("she_kpz_joint", gap, 0.0, band, std::abs(gap) <= band,
                                        "Var(S_h) - Var(S_u) on matched seeds, 3 se"));
        }
        double ar = rep.entries[0].values["abort_rate"];
        rep.criteria.push_back(
            crit("abort_rate", ar, 0.0, 0.01, ar < 0.01, "share of replications with u <= 0"));
        rep.criteria.push_back(crit("grid_sensitivity", mh.grid_z, 0.0, 1.0, mh.grid_z <= 1.0,
                                    "corrected variance shift under grid doubling, se units"));
    }

    // Ito decomposition residual along one trajectory per replication:
    // log Z_H - sum(delta - delta^2/2) over coarsenings of the checkpoint
    // grid; exact telescoping makes the residual the third-order remainder.
    if (cfg.model.beta > 0.0) {
        std::int64_t base = std::max<std::int64_t>(1, std::llround(0.5 / cfg.model.dt));
        std::int64_t H = 16 * base;
        std::vector<std::int64_t> cps(H);
        for (std::int64_t i = 0; i < H; ++i) cps[i] = i + 1;
        const std::array<std::int64_t, 5> strides = {1, 2, 4, 8, 16};
        int R_ito = std::min(R, 400);
        std::vector<std::array<double, 5>> res(R_ito);
        run_parallel(R_ito, cfg.workers, [&](int r) {
            NoiseSpec noise = make_noise(cfg, r);
            PolymerEnv env(noise, cfg.model.beta);
            SmcOptions opts;
            opts.particles = 32;
            opts.resample = false;
            double origin[3] = {0, 0, 0};
            ZEstimate est = estimate_Z(env, Frame{}, H, origin, opts, 0, 0,
                                       5 * kStreamBlock, cps);
            for (std::size_t si = 0; si < strides.size(); ++si) {
                std::int64_t k = strides[si] * base;
                double acc = 0.0, prev = 1.0;
                for (std::int64_t j = k; j <= H; j += k) {
                    double z = est.z_prefix[j - 1];
                    double delta = z / prev - 1.0;
                    acc += std::log1p(delta) - delta + 0.5 * delta * delta;
                    prev = z;
                }
                res[r][si] = std::abs(acc);
            }
        });
        std::vector<double> xs(strides.size()), ys(strides.size()), ss(strides.size());
        EntryStats es;
        es.id = "ito,H=" + fmt(H * cfg.model.dt);
        for (std::size_t si = 0; si < strides.size(); ++si) {
            Accumulator a;
            for (int r = 0; r < R_ito; ++r) a.add(res[r][si]);
            xs[si] = static_cast<double>(H / (strides[si] * base));  // step count
            ys[si] = a.mean();
            ss[si] = a.stderr_mean();
            es.values["residual_n=" + fmt(xs[si])] = ys[si];
        }
        SlopeFit fit = fit_loglog(xs, ys, ss);
        es.values["ito_slope"] = fit.slope;
        es.values["ito_slope_se"] = fit.stderr_slope;
        rep.entries.push_back(std::move(es));
        rep.criteria.push_back(crit("ito_residual_slope", fit.slope, -0.5, 0.0, fit.slope <= -0.5,
                                    "residual decay against the step count, log-log"));
    }

    // Bracket concentration across the remaining schedule rows: the unbiased
    // half-product bracket of the rescaled martingale, its replication
    // variance shrinking up the T ladder.
    if (cfg.schedule.size() >= 3 && cfg.model.beta > 0.0) {
        const int kIncrements = 16;
        TestFunction fb = f;
        const int nb = 6;
        Grid gb = support_grid(fb, nb);
        std::vector<double> bvar, bvar_se;
        for (std::size_t ei = 1; ei < cfg.schedule.size(); ++ei) {
            const auto& eb = cfg.schedule[ei];
            int Rb = resolve_reps(eb);
            double Tb = eb.T;
            double sb = std::pow(Tb, 0.25);
            double epsb = 1.0 / std::sqrt(Tb);
            std::int64_t slabs = std::llround(eb.t * Tb / cfg.model.dt);
            std::int64_t stride = std::max<std::int64_t>(1, slabs / kIncrements);
            std::vector<std::int64_t> cps;
            for (std::int64_t c = stride; c <= slabs; c += stride) cps.push_back(c);
            std::vector<double> B(Rb);
            run_parallel(Rb, cfg.workers, [&](int r) {
                NoiseSpec noise = make_noise(cfg, r);
                PolymerEnv env(noise, cfg.model.beta);
                SmcOptions opts;
                opts.particles = static_cast<int>(std::max<std::int64_t>(1, eb.paths / 2));
                std::vector<std::vector<double>> za(gb.pts.size()), zb(gb.pts.size());
                for (std::size_t i = 0; i < gb.pts.size(); ++i) {
                    double start[3] = {gb.pts[i][0] / epsb, gb.pts[i][1] / epsb,
                                       gb.pts[i][2] / epsb};
                    za[i] = estimate_Z(env, Frame{}, slabs, start, opts, 0, 0,
                                       6 * kStreamBlock + i, cps)
                                .z_prefix;
                    zb[i] = estimate_Z(env, Frame{}, slabs, start, opts, 0, 1,
                                       6 * kStreamBlock + i, cps)
                                .z_prefix;
                }
                double acc = 0.0;
                double prev_a = 0.0, prev_b = 0.0;  // N(0) = 0
                for (std::size_t c = 0; c < cps.size(); ++c) {
                    double na = 0.0, nbv = 0.0;
                    for (std::size_t i = 0; i < gb.pts.size(); ++i) {
                        na += gb.w[i] * (za[i][c] - 1.0);
                        nbv += gb.w[i] * (zb[i][c] - 1.0);
                    }
                    na *= sb;
                    nbv *= sb;
                    acc += (na - prev_a) * (nbv - prev_b);
                    prev_a = na;
                    prev_b = nbv;
                }
                B[r] = acc;
            });
            Accumulator ab;
            for (double v : B) ab.add(v);
            double v = ab.sample_variance();
            double b2 = ab.kurtosis();
            double se = v * std::sqrt(std::max(b2 - 1.0, 2.0) / static_cast<double>(Rb));
            bvar.push_back(v);
            bvar_se.push_back(se);
            EntryStats es;
            es.id = "bracket,T=" + fmt(Tb);
            es.values["bracket_mean"] = ab.mean();
            es.values["bracket_var"] = v;
            es.values["bracket_var_se"] = se;
            rep.entries.push_back(std::move(es));
            add_samples(rep, rep.entries.back().id, "bracket", B);
        }
        TrendCheck tc = trend_decreasing(bvar, bvar_se);
        rep.criteria.push_back(crit("bracket_concentration", tc.min_z, cfg.trend_z, cfg.trend_z,
                                    tc.decreasing_at(cfg.trend_z),
                                    "replication variance of the bracket decreasing in T"));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Local limit theorem

Report llt_lab(const ExperimentConfig& cfg, const std::vector<std::array<double, 3>>& ys,
               const std::vector<double>& a_ladder) {
    cfg.validate();
    if (ys.empty()) throw std::invalid_argument("llt_lab: need at least one endpoint");
    if (a_ladder.size() < 3)
        throw std::invalid_argument("llt_lab: the decay fit needs at least 3 window exponents");
    for (std::size_t j = 0; j < a_ladder.size(); ++j) {
        if (!(a_ladder[j] > 0.0) || !(a_ladder[j] < 1.0))
            throw std::invalid_argument("llt_lab: window exponents must lie in (0,1)");
        if (j > 0 && !(a_ladder[j] > a_ladder[j - 1]))
            throw std::invalid_argument("llt_lab: window exponents must be strictly increasing");
    }
    bool has_origin = false;
    for (const auto& y : ys)
        if (y[0] == 0.0 && y[1] == 0.0 && y[2] == 0.0) has_origin = true;
    if (!has_origin) throw std::invalid_argument("llt_lab: the endpoint list must contain 0");

    Report rep;
    rep.experiment = "llt";
    rep.manifest = config_json(cfg).dump(2);

    struct Cell {
        double D = 0, se = 0, l_eff = 0, r2 = 0;
        bool origin = false, flagged = false;
    };
    std::vector<Cell> cells;
    double max_abs = 0.0;

    for (const auto& e : cfg.schedule) {
        int R = resolve_reps(e);
        double T = e.T;
        std::int64_t W = std::llround(T / cfg.model.dt);
        double sqT = std::sqrt(T);
        std::size_t ny = ys.size(), na = a_ladder.size();

        std::vector<std::int64_t> lslabs(na);
        for (std::size_t ja = 0; ja < na; ++ja) {
            double l = std::pow(T, a_ladder[ja]);
            lslabs[ja] = std::max<std::int64_t>(1, std::llround(l / cfg.model.dt));
            if (lslabs[ja] > W) lslabs[ja] = W;
        }

        // G[r][iy][ja][half]
        std::vector<std::vector<std::vector<std::array<double, 2>>>> Gv(
            R, std::vector<std::vector<std::array<double, 2>>>(
                   ny, std::vector<std::array<double, 2>>(na)));
        run_parallel(R, cfg.workers, [&](int r) {
            NoiseSpec noise = make_noise(cfg, r);
            PolymerEnv env(noise, cfg.model.beta);
            SmcOptions opts;
            opts.particles = static_cast<int>(e.paths);
            double origin[3] = {0, 0, 0};
            std::vector<std::array<double, 2>> bwin(na);
            for (std::size_t ja = 0; ja < na; ++ja)
                for (int half = 0; half < 2; ++half)
                    bwin[ja][half] =
                        estimate_Z(env, Frame{}, lslabs[ja], origin, opts, 0, half,
                                   kStreamBlock + ja)
                            .z;
            for (std::size_t iy = 0; iy < ny; ++iy) {
                double end[3] = {sqT * ys[iy][0], sqT * ys[iy][1], sqT * ys[iy][2]};
                double r2 = 0.0;
                for (int ax = 0; ax < 3; ++ax) r2 += end[ax] * end[ax];
                double rho = heat_kernel(W * cfg.model.dt, r2);
                std::array<double, 2> bridge;
                for (int half = 0; half < 2; ++half)
                    bridge[half] =
                        estimate_p2p(env, Frame{}, W, origin, end, opts, 0, half,
                                     2 * kStreamBlock + iy)
                            .z /
                        rho;
                for (std::size_t ja = 0; ja < na; ++ja) {
                    std::array<double, 2> cwin;
                    for (int half = 0; half < 2; ++half)
                        cwin[half] = estimate_time_reversed(env, W, lslabs[ja], end, opts, 0,
                                                            half,
                                                            3 * kStreamBlock + iy * 64 + ja)
                                         .z;
                    for (int half = 0; half < 2; ++half)
                        Gv[r][iy][ja][half] = bridge[half] - bwin[ja][half] * cwin[half];
                }
            }
        });

        for (std::size_t iy = 0; iy < ny; ++iy)
            for (std::size_t ja = 0; ja < na; ++ja) {
                Accumulator acc;
                for (int r = 0; r < R; ++r) {
                    double v = Gv[r][iy][ja][0] * Gv[r][iy][ja][1];
                    acc.add(v);
                    max_abs = std::max(max_abs, std::abs(v));
                }
                Cell c;
                c.D = acc.mean();
                c.se = acc.stderr_mean();
                c.l_eff = lslabs[ja] * cfg.model.dt;
                c.r2 = ys[iy][0] * ys[iy][0] + ys[iy][1] * ys[iy][1] + ys[iy][2] * ys[iy][2];
                c.origin = c.r2 == 0.0;
                c.flagged = !(std::abs(c.D) > 0.0) || c.se > 0.3 * std::abs(c.D);
                cells.push_back(c);

                EntryStats es;
                std::ostringstream id;
                id << "T=" << fmt(T) << ",y=(" << fmt(ys[iy][0]) << ' ' << fmt(ys[iy][1]) << ' '
                   << fmt(ys[iy][2]) << "),a=" << fmt(a_ladder[ja]);
                es.id = id.str();
                es.values["D"] = c.D;
                es.values["D_se"] = c.se;
                es.values["l_eff"] = c.l_eff;
                es.values["r2"] = c.r2;
                es.values["flagged"] = c.flagged ? 1.0 : 0.0;
                rep.entries.push_back(std::move(es));
                {
                    std::vector<double> dv(R);
                    for (int r = 0; r < R; ++r) dv[r] = Gv[r][iy][ja][0] * Gv[r][iy][ja][1];
                    add_samples(rep, rep.entries.back().id, "D", dv);
                }
                // schedule entries share ids only through T, already encoded
            }
    }

    if (cfg.model.beta == 0.0) {
        rep.criteria.push_back(zero_coupling_criterion(max_abs));
        return rep;
    }

    std::vector<double> xs, dsv, ses;
    for (const auto& c : cells)
        if (c.origin && c.D > 0.0) {
            xs.push_back(c.l_eff);
            dsv.push_back(c.D);
            ses.push_back(c.se);
        }
    if (xs.size() >= 3) {
        SlopeFit fit = fit_loglog(xs, dsv, ses);
        rep.criteria.push_back(crit("llt_decay_slope", fit.slope, -0.5, 0.15,
                                    std::abs(fit.slope + 0.5) <= 0.15,
                                    "log-log decay of E[(bridge - product)^2] in the window"));
    } else {
        rep.criteria.push_back(crit("llt_decay_slope", 0.0, -0.5, 0.15, false,
                                    "too few usable origin entries for the fit"));
    }

    // Envelope C (l^{-1/2} + (1+r^2) e^{c l r^2 / T} (l/T)^{1/2}); C from the
    // origin entries, then the smallest c on a fixed grid covering the rest.
    {
        double T0 = cfg.schedule.front().T;
        double C = 0.0;
        for (const auto& c : cells)
            if (c.origin)
                C = std::max(C, c.D / (std::pow(c.l_eff, -0.5) + std::sqrt(c.l_eff / T0)));
        double c_fit = -1.0;
        if (C > 0.0) {
            for (double cand : {0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0}) {
                bool covers = true;
                for (const auto& c : cells) {
                    if (c.origin) continue;
                    double env = C * (std::pow(c.l_eff, -0.5) +
                                      (1.0 + c.r2) * std::exp(cand * c.l_eff * c.r2 / T0) *
                                          std::sqrt(c.l_eff / T0));
                    if (c.D > env * (1.0 + 1e-9)) {
                        covers = false;
                        break;
                    }
                }
                if (covers) {
                    c_fit = cand;
                    break;
                }
            }
        }
        bool any_off = false;
        for (const auto& c : cells)
            if (!c.origin) any_off = true;
        if (any_off)
            rep.criteria.push_back(crit("envelope_fit", c_fit, 50.0, 50.0,
                                        C > 0.0 && c_fit > 0.0,
                                        "smallest growth constant covering r > 0, capped"));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Martingale diagnostics

Report diagnostics_suite(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.schedule.size() < 2)
        throw std::invalid_argument("diagnostics_suite: need a T ladder of at least 2");
    for (std::size_t i = 1; i < cfg.schedule.size(); ++i)
        if (!(cfg.schedule[i].T > cfg.schedule[i - 1].T))
            throw std::invalid_argument("diagnostics_suite: T ladder must be strictly increasing");

    Report rep;
    rep.experiment = "diag";
    rep.manifest = config_json(cfg).dump(2);

    const auto& e0 = cfg.schedule.front();
    int R = resolve_reps(e0);
    std::size_t L = cfg.schedule.size();
    double Tmax = cfg.schedule.back().T;
    std::int64_t wmax = std::llround(Tmax / cfg.model.dt);

    // One trajectory per replication, checkpointed on a fine grid that
    // contains every ladder horizon.
    std::vector<std::int64_t> cps;
    {
        std::int64_t stride = std::max<std::int64_t>(1, wmax / 64);
        for (std::int64_t c = stride; c <= wmax; c += stride) cps.push_back(c);
        for (const auto& e : cfg.schedule) {
            std::int64_t w = std::llround(e.T / cfg.model.dt);
            cps.push_back(std::min(w, wmax));
        }
        std::sort(cps.begin(), cps.end());
        cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
    }
    std::vector<std::size_t> ladder_pos(L);
    for (std::size_t j = 0; j < L; ++j) {
        std::int64_t w = std::min<std::int64_t>(std::llround(cfg.schedule[j].T / cfg.model.dt),
                                                wmax);
        ladder_pos[j] = static_cast<std::size_t>(
            std::lower_bound(cps.begin(), cps.end(), w) - cps.begin());
    }

    std::vector<std::vector<double>> zlad(L, std::vector<double>(R));
    std::vector<double> zmin(R), ratio(R);
    run_parallel(R, cfg.workers, [&](int r) {
        NoiseSpec noise = make_noise(cfg, r);
        PolymerEnv env(noise, cfg.model.beta);
        SmcOptions opts;
        opts.particles = static_cast<int>(e0.paths);
        opts.resample = false;
        double origin[3] = {0, 0, 0};
        ZEstimate est = estimate_Z(env, Frame{}, wmax, origin, opts, 0, 0, 0, cps);
        double mn = 1.0, runmax = 1.0, worst = 1.0;
        for (double z : est.z_prefix) {
            mn = std::min(mn, z);
            runmax = std::max(runmax, z);
            worst = std::max(worst, runmax / z);
        }
        zmin[r] = mn;
        ratio[r] = worst;
        for (std::size_t j = 0; j < L; ++j) zlad[j][r] = est.z_prefix[ladder_pos[j]];
    });

    double tail8_max = 0.0;
    std::vector<std::vector<double>> capped(L, std::vector<double>(R));
    for (std::size_t j = 0; j < L; ++j) {
        double T = cfg.schedule[j].T;
        double cap = std::pow(T, 0.25);
        EntryStats es;
        es.id = "T=" + fmt(T);
        Accumulator az;
        double t2 = 0, t4 = 0, t8 = 0;
        for (int r = 0; r < R; ++r) {
            double z = zlad[j][r];
            az.add(z);
            if (z > 2.0) t2 += z;
            if (z > 4.0) t4 += z;
            if (z > 8.0) t8 += z;
            double zc = std::min(z, cap);
            capped[j][r] = zc * zc / cap;
        }
        t2 /= R; t4 /= R; t8 /= R;
        tail8_max = std::max(tail8_max, t8);
        Accumulator ac;
        for (double v : capped[j]) ac.add(v);
        es.values["z_mean"] = az.mean();
        es.values["z_mean_se"] = az.stderr_mean();
        es.values["tail_2"] = t2;
        es.values["tail_4"] = t4;
        es.values["tail_8"] = t8;
        es.values["capped_moment"] = ac.mean();
        es.values["capped_moment_se"] = ac.stderr_mean();
        rep.entries.push_back(std::move(es));
        add_samples(rep, rep.entries.back().id, "z", zlad[j]);
    }

    rep.criteria.push_back(crit("tail_uniform_small", tail8_max, 0.0, 0.05, tail8_max < 0.05,
                                "max over T of E[Z; Z > 8]"));

    // Paired decrease of the capped, rescaled second moment along the ladder.
    {
        double worst_z = std::numeric_limits<double>::infinity();
        bool ok = true;
        for (std::size_t j = 0; j + 1 < L; ++j) {
            Accumulator ad;
            for (int r = 0; r < R; ++r) ad.add(capped[j + 1][r] - capped[j][r]);
            double m = ad.mean(), se = ad.stderr_mean();
            if (se == 0.0) {
                if (!(m < 0.0)) ok = false;
                continue;
            }
            double z = -m / se;
            worst_z = std::min(worst_z, z);
            if (z <= cfg.trend_z) ok = false;
        }
        if (!std::isfinite(worst_z)) worst_z = ok ? cfg.trend_z + 1.0 : 0.0;
        rep.criteria.push_back(crit("capped_moment_decreasing", worst_z, cfg.trend_z, cfg.trend_z,
                                    ok, "paired one-sided z, worst adjacent ladder step"));
    }

    {
        std::vector<double> sorted = zmin;
        std::sort(sorted.begin(), sorted.end());
        double q05 = sorted[static_cast<std::size_t>(0.05 * (sorted.size() - 1))];
        rep.criteria.push_back(crit("min_bounded_away", q05, 0.05, 0.05, q05 > 0.05,
                                    "5% quantile of the trajectory minimum"));
        EntryStats es;
        es.id = "trajectory";
        es.values["min_q05"] = q05;
        Accumulator arat;
        for (double v : ratio) arat.add(v);
        es.values["ratio_mean"] = arat.mean();
        es.values["ratio_se"] = arat.stderr_mean();
        rep.entries.push_back(std::move(es));
        add_samples(rep, "trajectory", "zmin", zmin);
        add_samples(rep, "trajectory", "ratio", ratio);

        Accumulator a1, a2;
        for (int r = 0; r < R; ++r) (r < R / 2 ? a1 : a2).add(ratio[r]);
        double se = std::sqrt(a1.stderr_mean() * a1.stderr_mean() +
                              a2.stderr_mean() * a2.stderr_mean());
        double diff = std::abs(a1.mean() - a2.mean());
        bool stable = diff <= 3.0 * se + 1e-12 && arat.mean() < 10.0;
        rep.criteria.push_back(crit("ratio_moment_stable", arat.mean(), 0.0, 10.0, stable,
                                    "mean sup-ratio below 10, halves within 3 se"));
    }
    return rep;
}

}  // namespace polylab
