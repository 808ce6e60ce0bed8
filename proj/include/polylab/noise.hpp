#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "polylab/kernels.hpp"
#include "polylab/rng.hpp"

namespace polylab {

// Space-time white noise discretized on slabs of width dt and cubic cells of
// side dx: one standard normal per (slab, cell), realized as a pure hash of
// (seed, slab, cell).  Nothing is stored; any worker can evaluate any cell.
struct NoiseSpec {
    double dt = 0.05;
    double dx = 0.05;
    std::uint64_t seed = 1;
    Mollifier mollifier{1.0};

    NoiseSpec() = default;
    NoiseSpec(double dt_, double dx_, std::uint64_t seed_, Mollifier m = Mollifier(1.0))
        : dt(dt_), dx(dx_), seed(seed_), mollifier(m) {
        if (!(dt > 0.0) || !(dx > 0.0))
            throw std::invalid_argument("NoiseSpec: dt and dx must be positive");
    }

    std::uint64_t base_hash() const {
        return absorb(mix64(seed + 0x5851F42D4C957F2Dull), stream_tag::noise);
    }
};

// Affine remap from view indices to base-field indices.  Views let the same
// underlying field be read time-reversed, time-shifted, or cell-shifted, so
// couplings between estimators are exact rather than statistical.
struct Frame {
    bool reversed = false;      // slab map is k0 - k instead of k0 + k
    std::int64_t k0 = 0;
    std::array<std::int64_t, 3> c0{0, 0, 0};
    double scale = 1.0;         // records the space-time zoom; not used for indexing

    static Frame identity() { return {}; }

    // reversal of a horizon of `slabs` slabs: view slab k reads base slab slabs-1-k
    static Frame time_reversal(std::int64_t slabs) {
        Frame f;
        f.reversed = true;
        f.k0 = slabs - 1;
        return f;
    }

    static Frame shift(std::int64_t dk, std::int64_t dc0, std::int64_t dc1, std::int64_t dc2) {
        Frame f;
        f.k0 = dk;
        f.c0 = {dc0, dc1, dc2};
        return f;
    }

    std::int64_t map_slab(std::int64_t k) const { return reversed ? k0 - k : k0 + k; }
    std::int64_t map_cell(int axis, std::int64_t c) const { return c0[axis] + c; }

    // apply `inner` first, then this frame
    Frame compose(const Frame& inner) const {
        Frame f;
        f.reversed = reversed != inner.reversed;
        f.k0 = reversed ? k0 - inner.k0 : k0 + inner.k0;
        for (int i = 0; i < 3; ++i) f.c0[i] = c0[i] + inner.c0[i];
        f.scale = scale * inner.scale;
        return f;
    }

    Frame inverse() const {
        Frame f;
        f.reversed = reversed;
        f.k0 = reversed ? k0 : -k0;
        for (int i = 0; i < 3; ++i) f.c0[i] = -c0[i];
        f.scale = 1.0 / scale;
        return f;
    }

    bool operator==(const Frame& o) const {
        return reversed == o.reversed && k0 == o.k0 && c0 == o.c0;
    }
};

// hash chain order is part of the on-disk contract: slab, c2, c1, c0
inline std::uint64_t slab_hash(const NoiseSpec& n, std::int64_t k_base) {
    return absorb(n.base_hash(), static_cast<std::uint64_t>(k_base));
}

inline double cell_deviate(const NoiseSpec& n, const Frame& f, std::int64_t k,
                           const std::int64_t c[3]) {
    std::uint64_t h = slab_hash(n, f.map_slab(k));
    h = absorb(h, static_cast<std::uint64_t>(f.map_cell(2, c[2])));
    h = absorb(h, static_cast<std::uint64_t>(f.map_cell(1, c[1])));
    h = absorb(h, static_cast<std::uint64_t>(f.map_cell(0, c[0])));
    return hash_to_normal(h);
}

// One slab's mollified noise integral together with its exact conditional
// variance given the path position.
struct IncrementSample {
    double value = 0.0;     // sum_c phi(c dx - pos) eta_{k,c} sqrt(dt dx^3)
    double variance = 0.0;  // dt dx^3 sum_c phi(c dx - pos)^2
};

// Integral of phi(. - pos) against the slab-k noise increment, in physical
// units.  pos is given in view coordinates of `f`.  This is the innermost
// loop of every simulation, so the variance comes out of the same pass.
inline IncrementSample mollified_increment_full(const NoiseSpec& n, const Frame& f,
                                                std::int64_t k, const double pos[3]) {
    const double r = n.mollifier.radius;
    const double dx = n.dx;
    const double inv_dx = 1.0 / dx;
    std::int64_t lo[3], hi[3];
    for (int i = 0; i < 3; ++i) {
        lo[i] = static_cast<std::int64_t>(std::ceil((pos[i] - r) * inv_dx));
        hi[i] = static_cast<std::int64_t>(std::floor((pos[i] + r) * inv_dx));
    }
    const double r2 = r * r;
    const std::uint64_t hk = slab_hash(n, f.map_slab(k));
    double acc = 0.0, sq = 0.0;
    for (std::int64_t c2 = lo[2]; c2 <= hi[2]; ++c2) {
        const double d2 = c2 * dx - pos[2];
        const double d2s = d2 * d2;
        if (d2s >= r2) continue;
        const std::uint64_t h2 = absorb(hk, static_cast<std::uint64_t>(f.map_cell(2, c2)));
        for (std::int64_t c1 = lo[1]; c1 <= hi[1]; ++c1) {
            const double d1 = c1 * dx - pos[1];
            const double d12 = d2s + d1 * d1;
            if (d12 >= r2) continue;
            const std::uint64_t h12 = absorb(h2, static_cast<std::uint64_t>(f.map_cell(1, c1)));
            const std::uint64_t cb0 = static_cast<std::uint64_t>(f.c0[0]);
            for (std::int64_t c0 = lo[0]; c0 <= hi[0]; ++c0) {
                const double d0 = c0 * dx - pos[0];
                const double rr = d12 + d0 * d0;
                if (rr >= r2) continue;
                const double w = n.mollifier.at_r2(rr);
                const double z =
                    hash_to_normal(absorb(h12, cb0 + static_cast<std::uint64_t>(c0)));
                acc += w * z;
                sq += w * w;
            }
        }
    }
    const double cell = n.dt * dx * dx * dx;
    return {acc * std::sqrt(cell), sq * cell};
}

inline double mollified_increment(const NoiseSpec& n, const Frame& f, std::int64_t k,
                                  const double pos[3]) {
    return mollified_increment_full(n, f, k, pos).value;
}

// Deterministic lattice sum entering the increment's variance:
// Var = dt dx^3 sum_c phi(c dx - pos)^2, which converges to dt * V(0) as dx -> 0.
double increment_variance(const NoiseSpec& n, const double pos[3]);

// Index view realizing the scale-eps field at macroscopic (t, x): the
// polymer horizon becomes K = round(t / (eps^2 dt)) slabs read in reverse,
// and the spatial anchor is x / eps with its nearest-cell rounding recorded.
struct TransformedView {
    Frame frame;                 // time reversal over `slabs`, plus any cell shift
    std::int64_t slabs = 0;
    double t_realized = 0.0;     // slabs * eps^2 * dt
    double start[3] = {0, 0, 0};         // exact polymer-units start x / eps
    std::int64_t cell[3] = {0, 0, 0};    // nearest cell to start
    double cell_rounding = 0.0;          // |start - cell*dx| in polymer units
    double time_rounding = 0.0;          // |t - t_realized| in macro units
};

TransformedView transformed_view(const NoiseSpec& n, double eps, double t, const double x[3],
                                 bool shift_cells = false);

}  // namespace polylab
