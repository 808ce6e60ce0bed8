#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace polylab {

// SplitMix64 finalizer. Full avalanche on 64 bits.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// Folds one word into a running hash state. Order-sensitive.
constexpr std::uint64_t absorb(std::uint64_t h, std::uint64_t w) {
    return mix64(h + kGolden * (w + 0x632BE59BD9B4E019ull));
}

inline double to_unit_interval(std::uint64_t x) {
    // strictly inside (0,1) so inverse-CDF transforms stay finite
    return static_cast<double>(x >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

// Inverse standard normal CDF, Acklam's rational approximation.
// Relative error below 1.2e-9 over (0,1); adequate for sampling.
inline double inv_normal_cdf(double p) {
    static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                    -2.759285104469687e+02, 1.383577518672690e+02,
                                    -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                    -1.556989798598866e+02, 6.680131188771972e+01,
                                    -1.328068155288572e+01};
    static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                    4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                    2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double q = p - 0.5;
    double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// one extra mix so neighbouring hashes land on unrelated quantiles
inline double hash_to_normal(std::uint64_t h) {
    return inv_normal_cdf(to_unit_interval(mix64(h)));
}

// Deterministic stream: equivalent to SplitMix64 seeded with `key`.
// Streams derived from distinct key tuples are treated as independent.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    static CounterRng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                             std::uint64_t c = 0, std::uint64_t tag = 0) {
        std::uint64_t h = mix64(seed + 0x51ED2701306AD5E5ull);
        h = absorb(h, a);
        h = absorb(h, b);
        h = absorb(h, c);
        h = absorb(h, tag);
        return CounterRng(h);
    }

    std::uint64_t next_u64() { return mix64(key_ + kGolden * (++ctr_)); }
    double uniform() { return to_unit_interval(next_u64()); }
    double normal() { return inv_normal_cdf(uniform()); }

    std::array<double, 3> normal3() { return {normal(), normal(), normal()}; }

    std::uint64_t counter() const { return ctr_; }
    std::uint64_t key() const { return key_; }

  private:
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
};

// Stream tags. Keeps independent uses of the same (seed, replicate) apart.
namespace stream_tag {
constexpr std::uint64_t noise = 0xA1;
constexpr std::uint64_t path = 0xB2;
constexpr std::uint64_t resample = 0xC3;
constexpr std::uint64_t scatter = 0xD4;
constexpr std::uint64_t calibration = 0xE5;
}  // namespace stream_tag

}  // namespace polylab
