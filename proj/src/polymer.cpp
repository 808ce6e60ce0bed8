#include "polylab/polymer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "polylab/kernels.hpp"

namespace polylab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Particle {
    double x[3];
    double logw;
    bool alive;
};

struct MeanWeight {
    double shift;  // max log weight
    double rel;    // (1/N) sum exp(logw - shift); mean weight = exp(shift) * rel
};

MeanWeight mean_weight(const std::vector<Particle>& ps) {
    double m = kNegInf;
    for (const auto& p : ps)
        if (p.alive && p.logw > m) m = p.logw;
    if (m == kNegInf) return {0.0, 0.0};
    double s = 0.0;
    for (const auto& p : ps)
        if (p.alive) s += std::exp(p.logw - m);
    return {m, s / ps.size()};
}

double ess_of(const std::vector<Particle>& ps) {
    double m = kNegInf;
    for (const auto& p : ps)
        if (p.alive && p.logw > m) m = p.logw;
    if (m == kNegInf) return 0.0;
    double s = 0.0, s2 = 0.0;
    for (const auto& p : ps) {
        if (!p.alive) continue;
        double w = std::exp(p.logw - m);
        s += w;
        s2 += w * w;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
}

void systematic_resample(std::vector<Particle>& ps, CounterRng& rng) {
    const int n = static_cast<int>(ps.size());
    std::vector<double> cum(n);
    double m = kNegInf;
    for (const auto& p : ps)
        if (p.alive && p.logw > m) m = p.logw;
    double run = 0.0;
    for (int i = 0; i < n; ++i) {
        run += ps[i].alive ? std::exp(ps[i].logw - m) : 0.0;
        cum[i] = run;
    }
    std::vector<Particle> out;
    out.reserve(n);
    double step = run / n;
    double u = rng.uniform() * step;
    int j = 0;
    for (int i = 0; i < n; ++i) {
        double target = u + i * step;
        while (j < n - 1 && cum[j] < target) ++j;
        out.push_back(ps[j]);
        out.back().logw = 0.0;
    }
    ps.swap(out);
}

bool outside_box(const double x[3], const double a[3], double hw) {
    for (int i = 0; i < 3; ++i) {
        double d = x[i] - a[i];
        if (d > hw || d < -hw) return true;
    }
    return false;
}

// Shared SMC loop.  `pin` fixes the endpoint; the proposal is then the exact
// conditional law, so disorder is the only weight source either way.  When
// `sources` is given the population is spread over the anchors with initial
// weights mass * particles / count, keeping the mean-weight chain unbiased
// for the mass-weighted sum of normalizers.
ZEstimate run_smc(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                  const double start[3], const double* pin, const SmcOptions& opts,
                  std::uint64_t rep, int half, std::uint64_t stream,
                  const std::vector<std::int64_t>& checkpoints, const EndFunctional& g,
                  const std::vector<MixtureSource>* sources = nullptr) {
    opts.validate();
    if (slabs < 1) throw std::invalid_argument("estimate: slabs must be >= 1");
    const double dt = env.noise.dt;
    const double T = static_cast<double>(slabs) * dt;
    const double beta = env.beta;
    const double cont_comp = 0.5 * beta * beta * env.v0 * dt;
    const bool exact_comp = opts.comp == Compensation::exact;
    const double hw = opts.confine_half_width;

    CounterRng path_rng =
        CounterRng::derive(env.noise.seed, rep, static_cast<std::uint64_t>(half), stream,
                           stream_tag::path);
    CounterRng res_rng =
        CounterRng::derive(env.noise.seed, rep, static_cast<std::uint64_t>(half), stream,
                           stream_tag::resample);

    std::vector<Particle> ps(static_cast<std::size_t>(opts.particles));
    if (sources) {
        const int n = opts.particles;
        double total = 0.0;
        int positive = 0;
        for (const auto& s : *sources) {
            if (!(s.mass >= 0.0) || !std::isfinite(s.mass))
                throw std::invalid_argument("estimate_mixture: masses must be finite and >= 0");
            if (s.mass > 0.0) ++positive;
            total += s.mass;
        }
        if (positive == 0) throw std::invalid_argument("estimate_mixture: all masses vanish");
        if (n < positive)
            throw std::invalid_argument("estimate_mixture: fewer particles than anchors");
        // one particle per positive mass, the rest by largest remainder
        std::vector<int> count(sources->size(), 0);
        std::vector<std::pair<double, std::size_t>> frac;
        int rest = n - positive, given = 0;
        for (std::size_t i = 0; i < sources->size(); ++i) {
            if ((*sources)[i].mass <= 0.0) continue;
            double quota = rest * (*sources)[i].mass / total;
            count[i] = 1 + static_cast<int>(quota);
            given += count[i] - 1;
            frac.emplace_back(quota - std::floor(quota), i);
        }
        std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (int k = 0; k < rest - given; ++k) ++count[frac[static_cast<std::size_t>(k)].second];
        std::size_t j = 0;
        for (std::size_t i = 0; i < sources->size(); ++i) {
            for (int c = 0; c < count[i]; ++c, ++j) {
                ps[j].x[0] = (*sources)[i].x[0];
                ps[j].x[1] = (*sources)[i].x[1];
                ps[j].x[2] = (*sources)[i].x[2];
                ps[j].logw = std::log((*sources)[i].mass * n / count[i]);
                ps[j].alive = true;
            }
        }
    } else {
        for (auto& p : ps) {
            p.x[0] = start[0];
            p.x[1] = start[1];
            p.x[2] = start[2];
            p.logw = 0.0;
            p.alive = true;
        }
    }

    ZEstimate est;
    est.z_prefix.assign(checkpoints.size(), 0.0);
    est.log_z_prefix.assign(checkpoints.size(), kNegInf);

    double log_acc = 0.0;
    const double sdt = std::sqrt(dt);

    for (std::int64_t k = 0; k < slabs; ++k) {
        const double s_next = static_cast<double>(k + 1) * dt;
        const double remain = T - static_cast<double>(k) * dt;
        for (auto& p : ps) {
            if (p.alive && beta != 0.0) {
                auto inc = mollified_increment_full(env.noise, f, k, p.x);
                p.logw += beta * inc.value -
                          (exact_comp ? 0.5 * beta * beta * inc.variance : cont_comp);
            }
            // propagate even when dead so paired runs stay draw-aligned
            auto [z0, z1, z2] = path_rng.normal3();
            if (pin) {
                double frac = dt / remain;
                double sd = std::sqrt(std::max(0.0, dt * (remain - dt) / remain));
                p.x[0] += (pin[0] - p.x[0]) * frac + sd * z0;
                p.x[1] += (pin[1] - p.x[1]) * frac + sd * z1;
                p.x[2] += (pin[2] - p.x[2]) * frac + sd * z2;
            } else {
                p.x[0] += sdt * z0;
                p.x[1] += sdt * z1;
                p.x[2] += sdt * z2;
            }
            if (p.alive && hw > 0.0) {
                double a[3] = {start[0], start[1], start[2]};
                if (pin) {
                    double u = s_next / T;
                    for (int i = 0; i < 3; ++i) a[i] += (pin[i] - start[i]) * u;
                }
                if (outside_box(p.x, a, hw)) {
                    p.alive = false;
                    p.logw = kNegInf;
                    ++est.killed;
                }
            }
        }

        double ess = ess_of(ps);
        est.min_ess_frac = std::min(est.min_ess_frac, ess / opts.particles);

        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            if (checkpoints[c] == k + 1) {
                auto mw = mean_weight(ps);
                double lz = mw.rel > 0.0 ? log_acc + mw.shift + std::log(mw.rel) : kNegInf;
                est.log_z_prefix[c] = lz;
                est.z_prefix[c] = std::exp(lz);
            }
        }

        if (opts.resample && k + 1 < slabs && ess < opts.ess_frac * opts.particles) {
            auto mw = mean_weight(ps);
            if (mw.rel <= 0.0) break;  // the whole system died
            log_acc += mw.shift + std::log(mw.rel);
            systematic_resample(ps, res_rng);
            ++est.resamples;
        }
    }

    auto mw = mean_weight(ps);
    est.log_z = mw.rel > 0.0 ? log_acc + mw.shift + std::log(mw.rel) : kNegInf;
    est.z = std::exp(est.log_z);

    double sw = 0.0, sw2 = 0.0, sx[3] = {0, 0, 0}, sd1[3] = {0, 0, 0}, sdd[6] = {0, 0, 0, 0, 0, 0};
    double smsd = 0.0, sg = 0.0;
    for (const auto& p : ps) {
        if (!p.alive) continue;
        double w = std::exp(p.logw - mw.shift);
        sw += w;
        sw2 += w * w;
        double d[3] = {p.x[0] - start[0], p.x[1] - start[1], p.x[2] - start[2]};
        for (int i = 0; i < 3; ++i) {
            sx[i] += w * p.x[i];
            sd1[i] += w * d[i];
            sdd[i] += w * d[i] * d[i];
        }
        sdd[3] += w * d[0] * d[1];
        sdd[4] += w * d[0] * d[2];
        sdd[5] += w * d[1] * d[2];
        smsd += w * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (g) sg += w * g(p.x);
    }
    if (sw > 0.0) {
        double m[3];
        for (int i = 0; i < 3; ++i) {
            est.end_mean[i] = sx[i] / sw;
            m[i] = sd1[i] / sw;
        }
        for (int i = 0; i < 3; ++i) est.end_cov[i] = sdd[i] / sw - m[i] * m[i];
        est.end_cov[3] = sdd[3] / sw - m[0] * m[1];
        est.end_cov[4] = sdd[4] / sw - m[0] * m[2];
        est.end_cov[5] = sdd[5] / sw - m[1] * m[2];
        est.end_msd = smsd / sw;
        est.ess_final = sw * sw / sw2;
        if (g) est.functional = std::exp(log_acc + mw.shift) * (sg / opts.particles);
    }
    est.ess_warning = est.min_ess_frac < opts.ess_warn_frac;
    return est;
}

}  // namespace

PathSample sample_free_path(CounterRng& rng, const double x[3], std::int64_t slabs, double dt) {
    if (slabs < 1) throw std::invalid_argument("sample_free_path: slabs must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("sample_free_path: dt must be > 0");
    PathSample path;
    path.dt = dt;
    path.pos.resize(static_cast<std::size_t>(slabs) + 1);
    path.pos[0] = {x[0], x[1], x[2]};
    const double sdt = std::sqrt(dt);
    for (std::int64_t k = 0; k < slabs; ++k) {
        auto [z0, z1, z2] = rng.normal3();
        auto& prev = path.pos[static_cast<std::size_t>(k)];
        path.pos[static_cast<std::size_t>(k) + 1] = {prev[0] + sdt * z0, prev[1] + sdt * z1,
                                                     prev[2] + sdt * z2};
    }
    return path;
}

PathSample sample_bridge(CounterRng& rng, const double x[3], std::int64_t slabs, double dt,
                         const double y[3]) {
    if (slabs < 1) throw std::invalid_argument("sample_bridge: slabs must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("sample_bridge: dt must be > 0");
    PathSample path;
    path.dt = dt;
    path.bridged = true;
    path.target = {y[0], y[1], y[2]};
    path.pos.resize(static_cast<std::size_t>(slabs) + 1);
    path.pos[0] = {x[0], x[1], x[2]};
    const double T = static_cast<double>(slabs) * dt;
    for (std::int64_t k = 0; k < slabs; ++k) {
        auto [z0, z1, z2] = rng.normal3();
        double remain = T - static_cast<double>(k) * dt;
        double frac = dt / remain;
        double sd = std::sqrt(std::max(0.0, dt * (remain - dt) / remain));
        const auto& prev = path.pos[static_cast<std::size_t>(k)];
        path.pos[static_cast<std::size_t>(k) + 1] = {prev[0] + (y[0] - prev[0]) * frac + sd * z0,
                                                     prev[1] + (y[1] - prev[1]) * frac + sd * z1,
                                                     prev[2] + (y[2] - prev[2]) * frac + sd * z2};
    }
    path.pos.back() = {y[0], y[1], y[2]};  // kill the last-step rounding residue
    return path;
}

WeightedSample path_weight(const PolymerEnv& env, const Frame& f, const PathSample& path,
                           const Cuboid* confine, Compensation comp) {
    const std::int64_t slabs = path.slabs();
    if (slabs < 1) throw std::invalid_argument("path_weight: path must span at least one slab");
    if (path.dt != env.noise.dt)
        throw std::invalid_argument("path_weight: path dt does not match the field grid");
    const double beta = env.beta;
    const double cont_comp = 0.5 * beta * beta * env.v0 * env.noise.dt;
    WeightedSample out;
    out.endpoint = path.pos.back();
    if (confine) {
        for (const auto& p : path.pos)
            if (!confine->contains(p.data())) {
                out.confined = false;
                break;
            }
    }
    double lw = 0.0;
    for (std::int64_t k = 0; k < slabs; ++k) {
        auto inc = mollified_increment_full(env.noise, f, k, path.pos[static_cast<std::size_t>(k)].data());
        lw += beta * inc.value -
              (comp == Compensation::exact ? 0.5 * beta * beta * inc.variance : cont_comp);
    }
    out.log_weight = lw;
    return out;
}

ZEstimate estimate_Z(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                     const double start[3], const SmcOptions& opts, std::uint64_t rep, int half,
                     std::uint64_t stream, const std::vector<std::int64_t>& checkpoints,
                     const EndFunctional& g) {
    return run_smc(env, f, slabs, start, nullptr, opts, rep, half, stream, checkpoints, g);
}

ZEstimate estimate_mixture(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                           const std::vector<MixtureSource>& sources, const SmcOptions& opts,
                           std::uint64_t rep, int half, std::uint64_t stream,
                           const std::vector<std::int64_t>& checkpoints, const EndFunctional& g) {
    if (sources.empty()) throw std::invalid_argument("estimate_mixture: no sources");
    return run_smc(env, f, slabs, sources.front().x.data(), nullptr, opts, rep, half, stream,
                   checkpoints, g, &sources);
}

ZEstimate estimate_p2p(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                       const double start[3], const double end[3], const SmcOptions& opts,
                       std::uint64_t rep, int half, std::uint64_t stream) {
    ZEstimate est = run_smc(env, f, slabs, start, end, opts, rep, half, stream, {}, nullptr);
    double d0 = end[0] - start[0], d1 = end[1] - start[1], d2 = end[2] - start[2];
    double T = static_cast<double>(slabs) * env.noise.dt;
    double rho = heat_kernel(T, d0 * d0 + d1 * d1 + d2 * d2);
    est.z *= rho;
    est.log_z += std::log(rho);
    for (auto& v : est.z_prefix) v *= rho;
    for (auto& v : est.log_z_prefix) v += std::log(rho);
    return est;
}

ZEstimate estimate_time_reversed(const PolymerEnv& env, std::int64_t total_slabs,
                                 std::int64_t window_slabs, const double start[3],
                                 const SmcOptions& opts, std::uint64_t rep, int half,
                                 std::uint64_t stream) {
    if (total_slabs < 1 || window_slabs < 1 || window_slabs > total_slabs)
        throw std::invalid_argument(
            "estimate_time_reversed: need 1 <= window_slabs <= total_slabs");
    Frame rev = Frame::time_reversal(total_slabs);
    return run_smc(env, rev, window_slabs, start, nullptr, opts, rep, half, stream, {}, nullptr);
}

ZEstimate estimate_constrained(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                               const double zeta[3], double half_width, double cap,
                               const SmcOptions& opts, std::uint64_t rep, int half,
                               std::uint64_t stream) {
    if (!(half_width > 0.0))
        throw std::invalid_argument("estimate_constrained: half_width must be > 0");
    SmcOptions boxed = opts;
    boxed.confine_half_width = half_width;
    ZEstimate est = run_smc(env, f, slabs, zeta, nullptr, boxed, rep, half, stream, {}, nullptr);
    if (cap >= 0.0 && est.z > cap) {
        est.z = cap;
        est.log_z = std::log(cap);
    }
    return est;
}

EndpointReport polymer_endpoint_stats(const PolymerEnv& env, const Frame& f, std::int64_t slabs,
                                      const double start[3], const SmcOptions& opts,
                                      std::uint64_t rep, int half, std::uint64_t stream) {
    ZEstimate est = estimate_Z(env, f, slabs, start, opts, rep, half, stream);
    const double T = static_cast<double>(slabs) * env.noise.dt;
    const double rt = std::sqrt(T);
    EndpointReport rep_out;
    for (int i = 0; i < 3; ++i) {
        rep_out.mean_scaled[i] = (est.end_mean[i] - start[i]) / rt;
        rep_out.var_scaled[i] = est.end_cov[i] / T;
    }
    rep_out.ess = est.ess_final;
    rep_out.warning = est.ess_warning;
    return rep_out;
}

}  // namespace polylab
