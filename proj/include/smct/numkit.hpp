#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

// Plain-loop numeric kernels and a splittable counter-based PRNG.
// Everything here is deterministic: same inputs and seed give bit-identical
// results on every run, which the filter and trainer rely on.

namespace smct {

using Vec = std::vector<double>;

struct Mat {
    int rows = 0;
    int cols = 0;
    Vec values;  // row-major, rows*cols entries

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), values(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int i, int j) { return values[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
};

// Splittable 64-bit generator (SplitMix64 core). A stream is identified by a
// key; child(k) derives an independent sub-stream, so each (sequence,
// timestep, particle, noise-source) tuple can own its own stream. Resampling
// therefore never shifts the noise another particle consumes.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

    SeededRng child(uint64_t k) const {
        return SeededRng(Raw{}, mix(key_ ^ (0x9e3779b97f4a7c15ull * (k + 1))));
    }

    uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * (++counter_)); }

    // uniform on [0,1)
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // standard normal, fixed two-u64 consumption (Box-Muller, cosine branch)
    double next_gaussian();

  private:
    struct Raw {};
    SeededRng(Raw, uint64_t key) : key_(key) {}
    static uint64_t mix(uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return x;
    }
    uint64_t key_;
    uint64_t counter_ = 0;
};

// softmax with max-subtraction; equal logits give exactly equal probabilities
Vec softmax(std::span<const double> logits);

Vec matvec(const Mat& w, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
Vec relu(std::span<const double> x);

// y = gain * (x - mean(x)) / sqrt(var(x) + eps) + bias, biased variance
Vec layer_norm(std::span<const double> x, std::span<const double> gain,
               std::span<const double> bias, double eps);

// isotropic N(mean, var*I): -d/2*log(2*pi*var) - |x-mean|^2 / (2*var)
double log_gaussian_density(std::span<const double> x, std::span<const double> mean,
                            double var);

struct GaussianDraw {
    Vec value;  // mean + std*eps
    Vec eps;    // raw standard-normal draw, kept for reparametrized gradients
};

GaussianDraw gaussian_sample(std::span<const double> mean, double stddev, SeededRng& rng);

// order statistic at h = n*p + 0.5 with linear interpolation, h clamped to
// [1, n]; e.g. values 1..100 give 3.0 at p = 0.025 and 98.0 at p = 0.975
double empirical_quantile(Vec values, double p);

// shortest decimal string that round-trips the double
std::string format_double(double v);

}  // namespace smct
