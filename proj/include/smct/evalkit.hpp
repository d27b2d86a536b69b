#pragma once

#include <string>
#include <vector>

#include "smct/dataio.hpp"
#include "smct/filter.hpp"
#include "smct/model.hpp"

// Predictive-distribution sampling and the interval metrics computed from it.
// The predictive law at a step is the particle mixture: pick a particle by
// weight, draw the attention vector around its mix, pass it through the
// observation head and add observation noise. Metrics are computed on the
// original data scale (normalization inverted first).

namespace smct {

struct PredictiveSamples {
    int first_t = 2;                      // 1-based time of the first target
    std::vector<std::vector<Vec>> draws;  // [target][draw][feature]
};

struct IntervalBounds {
    int first_t = 2;
    std::vector<Vec> lower, upper;  // [target][feature]
};

// coverage pooled over (sequence, timestep, feature) plus the per-timestep
// breakdown; counts[i] is the number of (sequence, feature) pairs scored at
// target offset i
struct CoverageReport {
    double picp = 0.0;
    double mpiw = 0.0;
    std::vector<double> picp_per_timestep;
    std::vector<long> counts;
    int first_t = 2;

    bool empty() const { return counts.empty(); }
};

struct MetricsReport {
    double mse = 0.0;
    double dist_mse = 0.0;  // NaN when no generator ground truth is available
    CoverageReport coverage;
};

// n_samples draws of X_t from the mixture over particles: pick m by weight,
// z = mu_m + sqrt(var_z) eps, x = G(z) + sqrt(var_obs) eps'
std::vector<Vec> sample_predictive(const std::vector<PlainCell::Attend>& attends,
                                   const Vec& weights, const ModelParams& p, int n_samples,
                                   SeededRng stream);

// n_samples autoregressive paths of length tau_f: per path pick a particle by
// weight, then repeatedly draw the attention vector over the rolling window,
// sample the next value and feed it back in. No resampling (no observations).
PredictiveSamples multistep_forecast(const std::vector<Window>& windows, const Vec& weights,
                                     const ModelParams& p, int lag, int tau_f, int n_samples,
                                     SeededRng stream, int first_t);

// mean over modes, weighted by mode_probs, of the mean squared deviation of
// every draw from that mode's conditional mean (averaged over targets, draws
// and features)
double dist_mse(const PredictiveSamples& samples,
                const std::vector<std::vector<Vec>>& mode_means, const Vec& mode_probs);

// conditional means of the synthetic generators for targets t = 2..T:
// one mode alpha*x_{t-1}, plus beta*x_{t-1} for the mixture model
std::vector<std::vector<Vec>> synthetic_mode_means(const std::vector<Vec>& xs,
                                                   const SyntheticSpec& spec);
Vec synthetic_mode_probs(const SyntheticSpec& spec);

// empirical (1-level)/2 and (1+level)/2 quantiles per target and feature;
// needs n_samples >= 1/(1-level) so the tail order statistics exist
IntervalBounds intervals_from_samples(const PredictiveSamples& samples, double level);

// closed-interval coverage of the realized values, pooled over sequences;
// bounds[i] pairs with truth[i], whose rows align with bounds[i].first_t
CoverageReport picp_mpiw(const std::vector<IntervalBounds>& bounds,
                         const std::vector<std::vector<Vec>>& truth);

// mean squared deviation over all (sequence, timestep, feature)
double mse(const std::vector<std::vector<Vec>>& preds,
           const std::vector<std::vector<Vec>>& truth);

struct EvalOptions {
    int particles = 10;
    int lag = 0;  // attention window; 0 keeps the full history
    int n_samples = 1000;
    double level = 0.95;
    uint64_t seed = 0;
    const SyntheticSpec* truth_spec = nullptr;  // enables dist-mse
};

// teacher-forced pass over every sequence in the split: point predictions and
// predictive draws are formed before each observation is consumed, metrics
// are computed on denormalized values
MetricsReport evaluate_unistep(const SeriesDataset& ds, SplitId split, const ModelParams& p,
                               const EvalOptions& opt);

struct SequenceForecast {
    PredictiveSamples samples;
    IntervalBounds bounds;
};

// filter each sequence through its first tau_h observations, then roll out
// tau_f steps; draws and bounds are denormalized. Coverage is reported for
// the forecast steps where realized values exist (tau_h + tau_f may exceed
// the series length).
struct ForecastReport {
    std::vector<std::string> ids;
    std::vector<SequenceForecast> forecasts;
    CoverageReport coverage;
};
ForecastReport forecast_dataset(const SeriesDataset& ds, SplitId split, const ModelParams& p,
                                const EvalOptions& opt, int tau_h, int tau_f);

// rows `metric,value`: mse, dist_mse (when finite), picp, mpiw
void write_metrics_csv(const std::string& path, const MetricsReport& report);
// columns t,picp,n
void write_picp_csv(const std::string& path, const CoverageReport& coverage);
// columns series_id,t,draw_id,f0,...
void write_samples_csv(const std::string& path, const std::vector<std::string>& ids,
                       const std::vector<PredictiveSamples>& samples);
// columns series_id,t,feature,lower,upper
void write_intervals_csv(const std::string& path, const std::vector<std::string>& ids,
                         const std::vector<IntervalBounds>& bounds);

}  // namespace smct
