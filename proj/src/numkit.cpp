#include "smct/numkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace smct {

double SeededRng::next_gaussian() {
    // u1 in (0,1] so the log is finite; u2 in [0,1)
    double u1 = 1.0 - next_uniform();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::domain_error("softmax: empty input");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    Vec out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

Vec matvec(const Mat& w, std::span<const double> x) {
    if (static_cast<size_t>(w.cols) != x.size())
        throw std::domain_error("matvec: dimension mismatch");
    Vec y(static_cast<size_t>(w.rows), 0.0);
    for (int i = 0; i < w.rows; ++i) {
        double acc = 0.0;
        const double* row = w.values.data() + static_cast<size_t>(i) * w.cols;
        for (int j = 0; j < w.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::domain_error("dot: dimension mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double squared_norm(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return acc;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::domain_error("squared_distance: dimension mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

Vec relu(std::span<const double> x) {
    Vec y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Vec layer_norm(std::span<const double> x, std::span<const double> gain,
               std::span<const double> bias, double eps) {
    if (x.size() != gain.size() || x.size() != bias.size())
        throw std::domain_error("layer_norm: dimension mismatch");
    const size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) {
        double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    Vec y(n);
    for (size_t i = 0; i < n; ++i) y[i] = gain[i] * (x[i] - mean) * inv + bias[i];
    return y;
}

double log_gaussian_density(std::span<const double> x, std::span<const double> mean,
                            double var) {
    if (x.size() != mean.size())
        throw std::domain_error("log_gaussian_density: dimension mismatch");
    if (!(var > 0.0)) throw std::domain_error("log_gaussian_density: var must be > 0");
    const double d = static_cast<double>(x.size());
    return -0.5 * d * std::log(2.0 * std::numbers::pi * var)
           - squared_distance(x, mean) / (2.0 * var);
}

GaussianDraw gaussian_sample(std::span<const double> mean, double stddev, SeededRng& rng) {
    if (stddev < 0.0) throw std::domain_error("gaussian_sample: negative std");
    GaussianDraw out;
    out.eps.resize(mean.size());
    out.value.resize(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) {
        out.eps[i] = rng.next_gaussian();
        out.value[i] = mean[i] + stddev * out.eps[i];
    }
    return out;
}

double empirical_quantile(Vec values, double p) {
    if (values.empty()) throw std::domain_error("empirical_quantile: empty input");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    double h = n * p + 0.5;
    h = std::clamp(h, 1.0, n);
    const size_t lo = static_cast<size_t>(std::floor(h)) - 1;
    const double frac = h - std::floor(h);
    if (frac == 0.0 || lo + 1 >= values.size()) return values[lo];
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace smct
