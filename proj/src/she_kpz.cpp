#include "polylab/she_kpz.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "polylab/polymer.hpp"
#include "polylab/quad.hpp"

namespace polylab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// macroscopic time t over slabs of width eps^2 * dt; must land on the grid
std::int64_t resolve_slabs(double t, double eps, double dt, const char* who) {
    double s = t / (eps * eps * dt);
    double r = std::round(s);
    if (!(r >= 1.0) || std::abs(s - r) > 1e-6 * std::max(1.0, s)) {
        std::ostringstream msg;
        msg << who << ": t/eps^2 = " << t / (eps * eps)
            << " does not land on the slab grid (dt = " << dt << ")";
        throw std::invalid_argument(msg.str());
    }
    return static_cast<std::int64_t>(r);
}

void check_paths(std::int64_t n_paths, const char* who) {
    if (n_paths < 2 || n_paths % 2 != 0)
        throw std::invalid_argument(std::string(who) + ": n_paths must be even and >= 2");
}

struct HalfPair {
    double value = 0.0;
    double err = 0.0;
    double delta = 0.0;
    bool warned = false;
};

HalfPair combine(double a, double b, bool warn_a, bool warn_b) {
    return {0.5 * (a + b), 0.5 * std::abs(a - b), a - b, warn_a || warn_b};
}

FieldSample blank_sample(const InitialCondition& ic, double eps, double t,
                         const std::vector<std::array<double, 3>>& xs, std::int64_t n_paths) {
    FieldSample out;
    out.eps = eps;
    out.t = t;
    out.points = xs;
    out.u.assign(xs.size(), 0.0);
    out.std_error.assign(xs.size(), 0.0);
    out.half_delta.assign(xs.size(), 0.0);
    out.warning.assign(xs.size(), 0);
    out.paths_per_point = n_paths;
    switch (ic.kind) {
        case InitialCondition::Kind::flat: out.ic_kind = "flat"; break;
        case InitialCondition::Kind::bounded_continuous: out.ic_kind = "bounded_continuous"; break;
        case InitialCondition::Kind::dirac: out.ic_kind = "dirac"; break;
    }
    out.ic_lower = ic.lower;
    out.ic_upper = ic.upper;
    return out;
}

}  // namespace

InitialCondition InitialCondition::make_flat() { return InitialCondition{}; }

InitialCondition InitialCondition::make_bounded(std::function<double(const double*)> profile,
                                                double lower, double upper) {
    InitialCondition ic;
    ic.kind = Kind::bounded_continuous;
    ic.profile = std::move(profile);
    ic.lower = lower;
    ic.upper = upper;
    ic.validate();
    return ic;
}

InitialCondition InitialCondition::make_dirac(const std::array<double, 3>& location) {
    InitialCondition ic;
    ic.kind = Kind::dirac;
    ic.location = location;
    ic.validate();
    return ic;
}

void InitialCondition::validate() const {
    switch (kind) {
        case Kind::flat:
            return;
        case Kind::bounded_continuous:
            if (!profile)
                throw std::invalid_argument("InitialCondition: bounded profile missing");
            if (!(lower > 0.0) || !(upper >= lower) || !std::isfinite(upper))
                throw std::invalid_argument(
                    "InitialCondition: need certified bounds 0 < lower <= upper < inf");
            return;
        case Kind::dirac:
            for (double c : location)
                if (!std::isfinite(c))
                    throw std::invalid_argument("InitialCondition: dirac location must be finite");
            return;
    }
    throw std::invalid_argument("InitialCondition: unknown kind");
}

double solve_ubar(const InitialCondition& ic, double t, const double x[3]) {
    if (!(t >= 0.0)) throw std::invalid_argument("solve_ubar: t must be >= 0");
    ic.validate();
    switch (ic.kind) {
        case InitialCondition::Kind::flat:
            return 1.0;
        case InitialCondition::Kind::bounded_continuous: {
            if (t == 0.0) return ic.profile(x);
            static const GaussHermite gh(24);
            const double sd = std::sqrt(t);
            double acc = 0.0;
            for (std::size_t i = 0; i < gh.x.size(); ++i)
                for (std::size_t j = 0; j < gh.x.size(); ++j)
                    for (std::size_t k = 0; k < gh.x.size(); ++k) {
                        double p[3] = {x[0] + sd * gh.x[i], x[1] + sd * gh.x[j],
                                       x[2] + sd * gh.x[k]};
                        acc += gh.w[i] * gh.w[j] * gh.w[k] * ic.profile(p);
                    }
            return acc;
        }
        case InitialCondition::Kind::dirac: {
            if (t == 0.0)
                throw std::invalid_argument("solve_ubar: dirac has no pointwise value at t = 0");
            double d0 = x[0] - ic.location[0], d1 = x[1] - ic.location[1],
                   d2 = x[2] - ic.location[2];
            return heat_kernel(t, d0 * d0 + d1 * d1 + d2 * d2);
        }
    }
    throw std::invalid_argument("solve_ubar: unknown kind");
}

FieldSample u_eps(const NoiseSpec& noise, const InitialCondition& ic, double eps, double t,
                  const std::vector<std::array<double, 3>>& xs, double beta,
                  std::int64_t n_paths, std::uint64_t stream_offset) {
    if (!(eps > 0.0)) throw std::invalid_argument("u_eps: eps must be > 0");
    if (!(t > 0.0)) throw std::invalid_argument("u_eps: t must be > 0");
    ic.validate();
    check_paths(n_paths, "u_eps");
    const std::int64_t slabs = resolve_slabs(t, eps, noise.dt, "u_eps");

    FieldSample out = blank_sample(ic, eps, t, xs, n_paths);
    if (beta == 0.0) {
        // no disorder: the field is the deterministic heat solution
        for (std::size_t i = 0; i < xs.size(); ++i) out.u[i] = solve_ubar(ic, t, xs[i].data());
        return out;
    }

    PolymerEnv env(noise, beta);
    SmcOptions opts;
    opts.particles = static_cast<int>(n_paths / 2);
    // PDE orientation: path time runs backwards through the noise slabs, so
    // fields at different t on one realization share their early noise and
    // multi-time covariances carry the intended convention.
    Frame frame = Frame::time_reversal(slabs);
    const double inv3 = 1.0 / (eps * eps * eps);

    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::uint64_t stream = stream_offset + i;
        double start[3] = {xs[i][0] / eps, xs[i][1] / eps, xs[i][2] / eps};
        HalfPair hp;
        switch (ic.kind) {
            case InitialCondition::Kind::flat: {
                ZEstimate a = estimate_Z(env, frame, slabs, start, opts, 0, 0, stream);
                ZEstimate b = estimate_Z(env, frame, slabs, start, opts, 0, 1, stream);
                hp = combine(a.z, b.z, a.ess_warning, b.ess_warning);
                break;
            }
            case InitialCondition::Kind::bounded_continuous: {
                EndFunctional g = [&ic, eps](const double* y) {
                    double p[3] = {eps * y[0], eps * y[1], eps * y[2]};
                    return ic.profile(p);
                };
                ZEstimate a = estimate_Z(env, frame, slabs, start, opts, 0, 0, stream, {}, g);
                ZEstimate b = estimate_Z(env, frame, slabs, start, opts, 0, 1, stream, {}, g);
                hp = combine(a.functional, b.functional, a.ess_warning, b.ess_warning);
                break;
            }
            case InitialCondition::Kind::dirac: {
                double end[3] = {ic.location[0] / eps, ic.location[1] / eps,
                                 ic.location[2] / eps};
                ZEstimate a = estimate_p2p(env, frame, slabs, start, end, opts, 0, 0, stream);
                ZEstimate b = estimate_p2p(env, frame, slabs, start, end, opts, 0, 1, stream);
                hp = combine(inv3 * a.z, inv3 * b.z, a.ess_warning, b.ess_warning);
                break;
            }
        }
        out.u[i] = hp.value;
        out.std_error[i] = hp.err;
        out.half_delta[i] = hp.delta;
        out.warning[i] = hp.warned ? 1 : 0;
    }
    return out;
}

FunctionalSample u_functional(const NoiseSpec& noise, const InitialCondition& ic, double eps,
                              double t, const std::vector<std::array<double, 3>>& xs,
                              const std::vector<double>& weights, double beta,
                              std::int64_t n_paths, std::uint64_t stream) {
    if (!(eps > 0.0)) throw std::invalid_argument("u_functional: eps must be > 0");
    if (!(t > 0.0)) throw std::invalid_argument("u_functional: t must be > 0");
    ic.validate();
    check_paths(n_paths, "u_functional");
    if (weights.size() != xs.size())
        throw std::invalid_argument("u_functional: one weight per point required");
    if (ic.kind == InitialCondition::Kind::dirac)
        throw std::invalid_argument("u_functional: dirac data needs per-point bridges");
    const std::int64_t slabs = resolve_slabs(t, eps, noise.dt, "u_functional");

    FunctionalSample out;
    if (beta == 0.0) {
        for (std::size_t i = 0; i < xs.size(); ++i)
            out.value += weights[i] * solve_ubar(ic, t, xs[i].data());
        return out;
    }

    std::vector<MixtureSource> sources(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sources[i].x = {xs[i][0] / eps, xs[i][1] / eps, xs[i][2] / eps};
        sources[i].mass = weights[i];
    }

    PolymerEnv env(noise, beta);
    SmcOptions opts;
    opts.particles = static_cast<int>(n_paths / 2);
    Frame frame = Frame::time_reversal(slabs);  // same orientation as u_eps

    EndFunctional g;
    if (ic.kind == InitialCondition::Kind::bounded_continuous)
        g = [&ic, eps](const double* y) {
            double p[3] = {eps * y[0], eps * y[1], eps * y[2]};
            return ic.profile(p);
        };

    ZEstimate a = estimate_mixture(env, frame, slabs, sources, opts, 0, 0, stream, {}, g);
    ZEstimate b = estimate_mixture(env, frame, slabs, sources, opts, 0, 1, stream, {}, g);
    double va = g ? a.functional : a.z;
    double vb = g ? b.functional : b.z;
    out.value = 0.5 * (va + vb);
    out.half_delta = va - vb;
    out.warning = a.ess_warning || b.ess_warning;
    return out;
}

FunctionalSample z_functional_ladder(const NoiseSpec& noise, double eps,
                                     const std::vector<double>& taus,
                                     const std::vector<std::array<double, 3>>& xs,
                                     const std::vector<double>& weights, double beta,
                                     std::int64_t n_paths, std::uint64_t stream) {
    if (!(eps > 0.0)) throw std::invalid_argument("z_functional_ladder: eps must be > 0");
    if (taus.empty()) throw std::invalid_argument("z_functional_ladder: empty horizon ladder");
    check_paths(n_paths, "z_functional_ladder");
    if (weights.size() != xs.size())
        throw std::invalid_argument("z_functional_ladder: one weight per point required");

    std::vector<std::int64_t> marks(taus.size());
    for (std::size_t k = 0; k < taus.size(); ++k) {
        marks[k] = resolve_slabs(taus[k], eps, noise.dt, "z_functional_ladder");
        if (k > 0 && marks[k] <= marks[k - 1])
            throw std::invalid_argument("z_functional_ladder: horizons must increase");
    }

    FunctionalSample out;
    out.ladder.assign(taus.size(), 0.0);
    out.ladder_delta.assign(taus.size(), 0.0);
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (beta == 0.0) {
        out.value = wsum;
        out.ladder.assign(taus.size(), wsum);
        return out;
    }

    std::vector<MixtureSource> sources(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sources[i].x = {xs[i][0] / eps, xs[i][1] / eps, xs[i][2] / eps};
        sources[i].mass = weights[i];
    }

    PolymerEnv env(noise, beta);
    SmcOptions opts;
    opts.particles = static_cast<int>(n_paths / 2);
    Frame fwd;

    ZEstimate a = estimate_mixture(env, fwd, marks.back(), sources, opts, 0, 0, stream, marks);
    ZEstimate b = estimate_mixture(env, fwd, marks.back(), sources, opts, 0, 1, stream, marks);
    for (std::size_t k = 0; k < taus.size(); ++k) {
        out.ladder[k] = 0.5 * (a.z_prefix[k] + b.z_prefix[k]);
        out.ladder_delta[k] = a.z_prefix[k] - b.z_prefix[k];
    }
    out.value = out.ladder.back();
    out.half_delta = out.ladder_delta.back();
    out.warning = a.ess_warning || b.ess_warning;
    return out;
}

FieldSample h_eps(const FieldSample& field) {
    FieldSample out = field;
    out.h.assign(field.u.size(), kNaN);
    for (std::size_t i = 0; i < field.u.size(); ++i) {
        if (field.u[i] > 0.0)
            out.h[i] = std::log(field.u[i]);
        else
            out.warning[i] = 1;
    }
    return out;
}

double renorm_constant(double beta, const CovarianceKernel& kernel, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("renorm_constant: eps must be > 0");
    return 0.5 * beta * beta * kernel.v0() / (eps * eps);
}

FieldSample u_stat_proxy(const NoiseSpec& noise, double eps, double t,
                         const std::vector<std::array<double, 3>>& xs, double beta,
                         double horizon, std::int64_t n_paths, double min_factor,
                         std::uint64_t stream_offset) {
    if (!(eps > 0.0)) throw std::invalid_argument("u_stat_proxy: eps must be > 0");
    if (!(t >= 0.0)) throw std::invalid_argument("u_stat_proxy: t must be >= 0");
    check_paths(n_paths, "u_stat_proxy");
    if (!(horizon >= min_factor * t / (eps * eps)))
        throw std::invalid_argument("u_stat_proxy: horizon too short for the requested time");
    double s = horizon / noise.dt;
    double r = std::round(s);
    if (!(r >= 1.0) || std::abs(s - r) > 1e-6 * std::max(1.0, s))
        throw std::invalid_argument("u_stat_proxy: horizon does not land on the slab grid");
    const auto slabs = static_cast<std::int64_t>(r);

    InitialCondition flat = InitialCondition::make_flat();
    FieldSample out = blank_sample(flat, eps, t, xs, n_paths);
    out.ic_kind = "stationary_proxy";
    out.proxy_horizon = horizon;
    out.truncation_exponent = 0.25;  // (d - 2) / 4 at d = 3
    if (beta == 0.0) {
        for (auto& v : out.u) v = 1.0;
        return out;
    }

    PolymerEnv env(noise, beta);
    SmcOptions opts;
    opts.particles = n_paths / 2;
    Frame frame;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double start[3] = {xs[i][0] / eps, xs[i][1] / eps, xs[i][2] / eps};
        ZEstimate a = estimate_Z(env, frame, slabs, start, opts, 0, 0, stream_offset + i);
        ZEstimate b = estimate_Z(env, frame, slabs, start, opts, 0, 1, stream_offset + i);
        HalfPair hp = combine(a.z, b.z, a.ess_warning, b.ess_warning);
        out.u[i] = hp.value;
        out.std_error[i] = hp.err;
        out.half_delta[i] = hp.delta;
        out.warning[i] = hp.warned ? 1 : 0;
    }
    return out;
}

void write_field_csv(const FieldSample& field, std::ostream& os) {
    os << "eps,t,x0,x1,x2,u,h,std_error,n\n";
    os.precision(17);
    for (std::size_t i = 0; i < field.points.size(); ++i) {
        double h = i < field.h.size() ? field.h[i] : kNaN;
        os << field.eps << ',' << field.t << ',' << field.points[i][0] << ','
           << field.points[i][1] << ',' << field.points[i][2] << ',' << field.u[i] << ',' << h
           << ',' << field.std_error[i] << ',' << field.paths_per_point << '\n';
    }
}

std::string field_manifest_json(const FieldSample& field) {
    nlohmann::json j;
    j["ic"]["kind"] = field.ic_kind;
    j["ic"]["lower"] = field.ic_lower;
    j["ic"]["upper"] = field.ic_upper;
    j["eps"] = field.eps;
    j["t"] = field.t;
    j["points"] = field.points.size();
    j["paths_per_point"] = field.paths_per_point;
    if (field.proxy_horizon > 0.0) {
        j["proxy_horizon"] = field.proxy_horizon;
        j["truncation_exponent"] = field.truncation_exponent;
    }
    return j.dump();
}

}  // namespace polylab
