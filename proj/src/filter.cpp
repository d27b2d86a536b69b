#include "smct/filter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace smct {

NormalizedWeights normalize_log_weights(std::span<const double> log_weights) {
    if (log_weights.empty()) throw std::domain_error("normalize_log_weights: empty input");
    double mx = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) {
        if (std::isnan(w)) throw std::runtime_error("normalize_log_weights: NaN log weight");
        mx = std::max(mx, w);
    }
    if (!std::isfinite(mx))
        throw std::runtime_error("normalize_log_weights: all weights underflow");
    NormalizedWeights out;
    out.probs.resize(log_weights.size());
    double sum = 0.0;
    for (size_t i = 0; i < log_weights.size(); ++i) {
        out.probs[i] = std::exp(log_weights[i] - mx);
        sum += out.probs[i];
    }
    for (double& p : out.probs) p /= sum;
    out.log_mean = mx + std::log(sum / static_cast<double>(log_weights.size()));
    return out;
}

std::vector<int> resample_indices(std::span<const double> weights, int m_out,
                                  SeededRng& rng) {
    if (weights.empty()) throw std::domain_error("resample_indices: empty weights");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::domain_error("resample_indices: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::domain_error("resample_indices: weights do not sum to 1");
    std::vector<int> idx(m_out);
    const int n = static_cast<int>(weights.size());
    for (int m = 0; m < m_out; ++m) {
        const double u = rng.next_uniform();
        double cum = 0.0;
        int pick = n - 1;
        for (int j = 0; j < n; ++j) {
            cum += weights[j];
            if (u < cum) {
                pick = j;
                break;
            }
        }
        idx[m] = pick;
    }
    return idx;
}

FilterResult filter_sequence(const std::vector<Vec>& xs, const ModelParams& p,
                             int particles, int lag, SeededRng stream) {
    if (xs.size() < 2) throw std::domain_error("filter_sequence: need at least 2 observations");
    Filter f(p, particles, lag, stream);
    f.init(xs[0]);
    for (size_t t = 1; t < xs.size(); ++t) f.step(xs[t]);
    FilterResult out;
    out.weights = f.weights();
    out.step_weights = f.step_weights();
    out.genealogy = f.genealogy();
    out.windows = f.windows();
    out.trajs = f.trajs();
    out.log_likelihood = f.log_likelihood();
    return out;
}

std::vector<Vec> unistep_predictions(const std::vector<Vec>& xs, const ModelParams& p,
                                     int particles, int lag, SeededRng stream) {
    if (xs.size() < 2)
        throw std::domain_error("unistep_predictions: need at least 2 observations");
    Filter f(p, particles, lag, stream);
    f.init(xs[0]);
    std::vector<Vec> preds;
    preds.reserve(xs.size() - 1);
    const size_t d = xs[0].size();
    for (size_t t = 1; t < xs.size(); ++t) {
        const auto& attends = f.attend();
        const Vec& w = f.weights();
        Vec pred(d, 0.0);
        for (int m = 0; m < particles; ++m) {
            Vec g = observation_mean(attends[m].mu, p.head);
            for (size_t i = 0; i < d; ++i) pred[i] += w[m] * g[i];
        }
        preds.push_back(std::move(pred));
        f.step(xs[t]);
    }
    return preds;
}

namespace {
int distinct_count(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return static_cast<int>(std::unique(v.begin(), v.end()) - v.begin());
}
}  // namespace

AncestryReport unique_ancestors(const std::vector<std::vector<int>>& genealogy,
                                int particles, int max_lag) {
    const int t = static_cast<int>(genealogy.size()) + 1;  // observations consumed
    if (max_lag < 1) throw std::domain_error("unique_ancestors: lag must be >= 1");
    if (max_lag > t) throw std::domain_error("unique_ancestors: lag exceeds recorded history");
    AncestryReport rep;
    rep.counts.reserve(max_lag);
    std::vector<int> anc(particles);
    std::iota(anc.begin(), anc.end(), 0);
    rep.counts.push_back(distinct_count(anc));
    // lag l is time t+1-l; genealogy[u-2] maps slots at time u to time u-1
    for (int lag = 2; lag <= max_lag; ++lag) {
        const std::vector<int>& g = genealogy[t - lag];
        for (int m = 0; m < particles; ++m) anc[m] = g[anc[m]];
        rep.counts.push_back(distinct_count(anc));
    }
    return rep;
}

AncestryBand summarize_ancestry(const std::vector<AncestryReport>& runs) {
    if (runs.empty()) throw std::domain_error("summarize_ancestry: no runs");
    const size_t lags = runs[0].counts.size();
    for (const auto& r : runs)
        if (r.counts.size() != lags)
            throw std::domain_error("summarize_ancestry: mismatched lag counts");
    AncestryBand band;
    band.lags.resize(lags);
    band.mean.resize(lags);
    band.lo.resize(lags);
    band.hi.resize(lags);
    for (size_t i = 0; i < lags; ++i) {
        band.lags[i] = static_cast<int>(i) + 1;
        Vec vals(runs.size());
        double sum = 0.0;
        for (size_t r = 0; r < runs.size(); ++r) {
            vals[r] = runs[r].counts[i];
            sum += vals[r];
        }
        band.mean[i] = sum / static_cast<double>(runs.size());
        band.lo[i] = empirical_quantile(vals, 0.025);
        band.hi[i] = empirical_quantile(vals, 0.975);
    }
    return band;
}

void write_ancestry_csv(const std::string& path, const AncestryBand& band) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "lag,mean_unique,ci_low,ci_high\n";
    for (size_t i = 0; i < band.lags.size(); ++i) {
        out << band.lags[i] << ',' << format_double(band.mean[i]) << ','
            << format_double(band.lo[i]) << ',' << format_double(band.hi[i]) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace smct
