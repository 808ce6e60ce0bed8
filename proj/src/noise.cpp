#include "polylab/noise.hpp"

namespace polylab {

double increment_variance(const NoiseSpec& n, const double pos[3]) {
    const double r = n.mollifier.radius;
    const double dx = n.dx;
    std::int64_t lo[3], hi[3];
    for (int i = 0; i < 3; ++i) {
        lo[i] = static_cast<std::int64_t>(std::ceil((pos[i] - r) / dx));
        hi[i] = static_cast<std::int64_t>(std::floor((pos[i] + r) / dx));
    }
    double s = 0.0;
    for (std::int64_t c2 = lo[2]; c2 <= hi[2]; ++c2)
        for (std::int64_t c1 = lo[1]; c1 <= hi[1]; ++c1)
            for (std::int64_t c0 = lo[0]; c0 <= hi[0]; ++c0) {
                double d0 = c0 * dx - pos[0];
                double d1 = c1 * dx - pos[1];
                double d2 = c2 * dx - pos[2];
                double w = n.mollifier.at_r2(d0 * d0 + d1 * d1 + d2 * d2);
                s += w * w;
            }
    return n.dt * dx * dx * dx * s;
}

TransformedView transformed_view(const NoiseSpec& n, double eps, double t, const double x[3],
                                 bool shift_cells) {
    if (!(eps > 0.0)) throw std::invalid_argument("transformed_view: eps must be positive");
    if (!(t > 0.0)) throw std::invalid_argument("transformed_view: t must be positive");
    TransformedView v;
    v.slabs = std::llround(t / (eps * eps * n.dt));
    if (v.slabs < 1) v.slabs = 1;
    v.t_realized = static_cast<double>(v.slabs) * eps * eps * n.dt;
    v.time_rounding = std::abs(t - v.t_realized);
    v.frame = Frame::time_reversal(v.slabs);
    v.frame.scale = eps;
    double rounding2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        v.start[i] = x[i] / eps;
        v.cell[i] = std::llround(v.start[i] / n.dx);
        double d = v.start[i] - v.cell[i] * n.dx;
        rounding2 += d * d;
    }
    v.cell_rounding = std::sqrt(rounding2);
    if (shift_cells) {
        for (int i = 0; i < 3; ++i) {
            v.frame.c0[i] = v.cell[i];
            v.start[i] -= v.cell[i] * n.dx;
        }
    }
    return v;
}

}  // namespace polylab
