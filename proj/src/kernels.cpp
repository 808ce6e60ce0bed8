#include "polylab/kernels.hpp"

#include <algorithm>
#include <ostream>

#include "polylab/quad.hpp"

namespace polylab {

double Mollifier::sq_integral() const {
    auto r = integrate(
        [this](double s) {
            double v = at_r2(s * s);
            return 4.0 * M_PI * s * s * v * v;
        },
        0.0, radius, 1e-14, 1e-13);
    return r.value;
}

namespace {

// Antiderivative of t*phi(t) for the quartic bump; saturates past the support.
double radial_mass(const Mollifier& m, double t) {
    double R = m.radius;
    double cap = m.amp * R * R / 6.0;
    if (t >= R) return cap;
    if (t <= 0.0) return 0.0;
    double u = 1.0 - (t / R) * (t / R);
    return cap * (1.0 - u * u * u);
}

}  // namespace

double CovarianceKernel::direct_value(const Mollifier& m, double r) const {
    double R = m.radius;
    if (r <= 0.0) return m.sq_integral();
    if (r >= 2.0 * R) return 0.0;
    // radial convolution: (2 pi / r) * int s phi(s) [P(r+s) - P(|r-s|)] ds
    auto q = integrate(
        [&](double s) {
            return s * m.at_r2(s * s) * (radial_mass(m, r + s) - radial_mass(m, std::abs(r - s)));
        },
        0.0, R, 1e-14, 1e-13);
    return (2.0 * M_PI / r) * q.value;
}

CovarianceKernel::CovarianceKernel(const Mollifier& m, int table_size) {
    if (table_size < 256) throw std::invalid_argument("CovarianceKernel: table_size must be >= 256");
    rmax_ = 2.0 * m.radius;
    h_ = rmax_ / (table_size - 1);
    table_.resize(table_size);
    for (int i = 0; i < table_size; ++i) table_[i] = direct_value(m, i * h_);
    table_.back() = 0.0;

    // monotone radial decay is a property of the bump's autocorrelation;
    // a violation means the quadrature or the table went wrong
    for (int i = 0; i + 1 < table_size; ++i) {
        if (table_[i + 1] > table_[i] + 1e-12)
            throw std::runtime_error("CovarianceKernel: table is not non-increasing");
    }

    audit_err_ = 0.0;
    for (int i = 0; i + 1 < table_size; ++i) {
        double rm = (i + 0.5) * h_;
        audit_err_ = std::max(audit_err_, std::abs(interp(rm) - direct_value(m, rm)));
    }
    if (audit_err_ > 1e-6 * table_[0])
        throw std::runtime_error("CovarianceKernel: interpolation audit exceeded tolerance");

    auto q = integrate([this](double r) { return 4.0 * M_PI * r * r * interp(r); }, 0.0, rmax_,
                       1e-12, 1e-12);
    mass_ = q.value;
}

double CovarianceKernel::interp(double r) const {
    if (r <= 0.0) return table_[0];
    double u = r / h_;
    int j = static_cast<int>(u);
    int n = static_cast<int>(table_.size());
    if (j >= n - 1) return 0.0;
    // 4-point Lagrange on the uniform grid, clamped at the ends
    int j0 = std::clamp(j - 1, 0, n - 4);
    double t = u - j0;  // in [1,2] away from the ends
    const double* p = table_.data() + j0;
    double c0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
    double c1 = t * (t - 2.0) * (t - 3.0) / 2.0;
    double c2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
    double c3 = t * (t - 1.0) * (t - 2.0) / 6.0;
    return c0 * p[0] + c1 * p[1] + c2 * p[2] + c3 * p[3];
}

void CovarianceKernel::dump_csv(std::ostream& os) const {
    os << "r,V\n";
    for (std::size_t i = 0; i < table_.size(); ++i) os << i * h_ << "," << table_[i] << "\n";
}

double bridge_density(double s, const double y[3], double t, const double x[3]) {
    if (!(s > 0.0 && s < t)) throw std::invalid_argument("bridge_density: requires 0 < s < t");
    double y2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    double x2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    double d0 = x[0] - y[0], d1 = x[1] - y[1], d2 = x[2] - y[2];
    double dy2 = d0 * d0 + d1 * d1 + d2 * d2;
    return heat_kernel(s, y2) * heat_kernel(t - s, dy2) / heat_kernel(t, x2);
}

}  // namespace polylab
