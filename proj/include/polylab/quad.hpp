#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <vector>

namespace polylab {

struct QuadratureResult {
    double value = 0.0;
    double abs_error_bound = 0.0;
    std::int64_t evaluations = 0;
    bool converged = true;
};

namespace detail {

// Gauss-Kronrod 7-15 pair on [-1,1]; positive abscissae.
inline constexpr double kr_x[8] = {0.991455371120813, 0.949107912342759, 0.864864423359769,
                                   0.741531185599394, 0.586087235467691, 0.405845151377397,
                                   0.207784955007898, 0.0};
inline constexpr double kr_w[8] = {0.022935322010529, 0.063092092629979, 0.104790010322250,
                                   0.140653259715525, 0.169004726639267, 0.190350578064785,
                                   0.204432940075298, 0.209482141084728};
inline constexpr double g7_w[4] = {0.129484966168870, 0.279705391489277, 0.381830050505119,
                                   0.417959183673469};

struct GkCell {
    double a, b, value, err;
};
struct GkCellLess {
    bool operator()(const GkCell& p, const GkCell& q) const { return p.err < q.err; }
};

template <class F>
inline GkCell gk15(const F& f, double a, double b) {
    const double h = 0.5 * (b - a);
    const double m = 0.5 * (a + b);
    double kron = 0.0, gauss = 0.0;
    for (int i = 0; i < 8; ++i) {
        double fv;
        if (i == 7) {
            fv = f(m);
        } else {
            fv = f(m - h * kr_x[i]) + f(m + h * kr_x[i]);
        }
        kron += kr_w[i] * fv;
        if (i % 2 == 1) gauss += g7_w[i / 2] * fv;  // Gauss-7 nodes sit at odd slots
    }
    kron *= h;
    gauss *= h;
    // the pair difference is a conservative bound for smooth integrands
    double err = std::abs(kron - gauss);
    return {a, b, kron, std::max(err, 1e-300)};
}

}  // namespace detail

// Adaptive 1-d quadrature of a scalar function over [a,b].
// Splits the worst interval until the summed error bound meets
// max(abs_tol, rel_tol*|I|) or the evaluation budget runs out.
template <class F>
QuadratureResult integrate(const F& f, double a, double b, double abs_tol = 1e-10,
                           double rel_tol = 1e-10, std::int64_t max_evals = 200000) {
    if (!(b > a)) {
        if (a == b) return {0.0, 0.0, 0, true};
        throw std::invalid_argument("integrate: requires b >= a");
    }
    std::priority_queue<detail::GkCell, std::vector<detail::GkCell>, detail::GkCellLess> q;
    std::int64_t evals = 15;
    q.push(detail::gk15(f, a, b));
    double total = q.top().value, toterr = q.top().err;
    while (evals + 30 <= max_evals) {
        double goal = std::max(abs_tol, rel_tol * std::abs(total));
        if (toterr <= goal) break;
        detail::GkCell w = q.top();
        q.pop();
        double mid = 0.5 * (w.a + w.b);
        auto l = detail::gk15(f, w.a, mid);
        auto r = detail::gk15(f, mid, w.b);
        evals += 30;
        total += l.value + r.value - w.value;
        toterr += l.err + r.err - w.err;
        q.push(l);
        q.push(r);
    }
    bool ok = toterr <= std::max(abs_tol, rel_tol * std::abs(total));
    return {total, toterr, evals, ok};
}

// Iterated adaptive quadrature over an axis-aligned box in R^3.
// Intended for smooth compactly supported integrands; the returned
// bound stacks the per-axis tolerances and is approximate.
template <class F>
QuadratureResult integrate3(const F& f, const double lo[3], const double hi[3],
                            double abs_tol = 1e-8, std::int64_t max_evals_axis = 20000) {
    std::int64_t evals = 0;
    double inner_tol = abs_tol / std::max(1.0, (hi[0] - lo[0]) * (hi[1] - lo[1]) * 4.0);
    bool ok = true;
    auto fz = [&](double x, double y) {
        auto r = integrate([&](double z) { return f(x, y, z); }, lo[2], hi[2], inner_tol,
                           1e-12, max_evals_axis);
        evals += r.evaluations;
        ok = ok && r.converged;
        return r.value;
    };
    auto fy = [&](double x) {
        auto r = integrate([&](double y) { return fz(x, y); }, lo[1], hi[1],
                           abs_tol / std::max(1.0, (hi[0] - lo[0]) * 2.0), 1e-12, max_evals_axis);
        ok = ok && r.converged;
        return r.value;
    };
    auto rx = integrate([&](double x) { return fy(x); }, lo[0], hi[0], abs_tol, 1e-12,
                        max_evals_axis);
    return {rx.value, rx.abs_error_bound + abs_tol, evals + rx.evaluations, ok && rx.converged};
}

// Nodes and weights of the n-point Gauss-Legendre rule on [-1,1],
// computed by Newton iteration on the Legendre recurrence.
struct GaussLegendre {
    std::vector<double> x, w;
    explicit GaussLegendre(int n) : x(n), w(n) {
        for (int i = 0; i < n; ++i) {
            double xi = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = xi;
                for (int k = 2; k <= n; ++k) {
                    double p2 = ((2.0 * k - 1.0) * xi * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                double dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
                double dx = p1 / dp;
                xi -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            double p0 = 1.0, p1 = xi;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * xi * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
            x[i] = xi;
            w[i] = 2.0 / ((1.0 - xi * xi) * dp * dp);
        }
    }
};

// Gauss-Hermite rule for integrals against the standard normal density:
// E[g(G)] ~ sum w_i g(x_i). Built from Gauss-Legendre is poor here, so use
// the Golub-Welsch-style Newton iteration on physicists' Hermite, then
// rescale to probabilists' convention.
struct GaussHermite {
    std::vector<double> x, w;  // E[g(G)] = sum w_i g(x_i), G ~ N(0,1)
    explicit GaussHermite(int n) : x(n), w(n) {
        // roots of H_n (physicists'), weights pi^{-1/2} * 2^{n-1} n! / (n^2 H_{n-1}^2)
        std::vector<double> xs(n);
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double xi;
            if (i == 0)
                xi = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
            else if (i == 1)
                xi = xs[0] - 1.14 * std::pow(n, 0.426) / xs[0];
            else if (i == 2)
                xi = 1.86 * xs[1] - 0.86 * xs[0];
            else if (i == 3)
                xi = 1.91 * xs[2] - 0.91 * xs[1];
            else
                xi = 2.0 * xs[i - 1] - xs[i - 2];
            for (int it = 0; it < 200; ++it) {
                // evaluate orthonormal Hermite via recurrence
                double p0 = std::pow(M_PI, -0.25), p1 = p0 * std::sqrt(2.0) * xi;
                for (int k = 2; k <= n; ++k) {
                    double p2 = xi * std::sqrt(2.0 / k) * p1 - std::sqrt((k - 1.0) / k) * p0;
                    p0 = p1;
                    p1 = p2;
                }
                double dp = std::sqrt(2.0 * n) * p0;
                double dx = p1 / dp;
                xi -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            xs[i] = xi;
        }
        for (int i = 0; i < n; ++i) {
            double xi = (i < (n + 1) / 2) ? xs[i] : -xs[n - 1 - i];
            double p0 = std::pow(M_PI, -0.25), p1 = p0 * std::sqrt(2.0) * xi;
            for (int k = 2; k <= n; ++k) {
                double p2 = xi * std::sqrt(2.0 / k) * p1 - std::sqrt((k - 1.0) / k) * p0;
                p0 = p1;
                p1 = p2;
            }
            double dp = std::sqrt(2.0 * n) * p0;
            // physicists' weight 2/dp^2; divide by sqrt(pi) for the normal measure
            x[i] = xi * std::sqrt(2.0);  // probabilists' abscissa
            w[i] = 2.0 / (dp * dp) / std::sqrt(M_PI);
        }
    }
};

}  // namespace polylab
