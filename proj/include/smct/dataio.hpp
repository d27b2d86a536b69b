#pragma once

#include <array>
#include <string>
#include <vector>

#include "smct/numkit.hpp"

// Dataset plumbing: the two autoregressive synthetic generators, CSV
// ingestion and export, windowing, split assignment and train-only
// standardization. Datasets are immutable after construction.

namespace smct {

enum class SplitId : int { kTrain = 0, kVal = 1, kTest = 2 };

struct NormStats {
    Vec mean;    // per feature; empty when normalization is off
    Vec stddev;  // per feature, strictly positive

    bool active() const { return !mean.empty(); }
};

// (x - mean) / std per feature; identity when stats are inactive
Vec apply_norm(const Vec& x, const NormStats& n);
// x * std + mean per feature; identity when stats are inactive
Vec invert_norm(const Vec& x, const NormStats& n);

struct SeriesDataset {
    std::vector<std::string> ids;          // one per series
    std::vector<std::vector<Vec>> series;  // [series][time][feature]
    std::vector<SplitId> split;            // empty until assigned
    NormStats norm;

    int n_series() const { return static_cast<int>(series.size()); }
    bool uniform_length() const;
    int t_len() const;  // length shared by all series; throws if ragged or empty
    int d_obs() const;
    std::vector<int> indices_of(SplitId s) const;
};

enum class SyntheticModel : int { kModelI = 1, kModelII = 2 };

struct SyntheticSpec {
    SyntheticModel model = SyntheticModel::kModelI;
    double alpha = 0.8;
    double beta = 0.54;  // second regime coefficient (model II)
    double p = 0.7;      // regime probability (model II)
    double sigma2 = 0.5;
    int n_series = 1000;
    int t_len = 24;
    uint64_t seed = 0;
};

// per-model defaults: I uses alpha 0.8, sigma2 0.5; II uses alpha 0.9,
// beta 0.54, p 0.7, sigma2 0.3; both 1000 series of 24 steps
SyntheticSpec default_spec(SyntheticModel model);

// X_0 ~ N(0,1); X_{t+1} = alpha X_t + sigma eps. Pure function of spec.
SeriesDataset gen_model_I(const SyntheticSpec& spec);

// X_0 ~ N(0,1); X_{t+1} = (U alpha + (1-U) beta) X_t + sigma eps with
// U ~ Bernoulli(p) per step. p = 1 reproduces gen_model_I draw for draw.
SeriesDataset gen_model_II(const SyntheticSpec& spec);

// header `series_id,t,f0,f1,...`; rows grouped by series with strictly
// increasing t. Rows with missing feature cells (empty, NA, NaN) are dropped
// and counted; anything else unparsable is an error naming line and column.
struct LoadReport {
    int dropped_rows = 0;
};
SeriesDataset load_csv(const std::string& path, LoadReport* report = nullptr);

// same schema; t written as 0..T-1 per series
void save_csv(const SeriesDataset& ds, const std::string& path);

// cut each series into fixed-length windows at the given stride, dropping
// series shorter than `length`; split and norm assignments are cleared
SeriesDataset window_series(const SeriesDataset& ds, int length, int stride);

struct SplitRatios {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

// shuffle series by seed, assign splits by ratio, and (optionally) apply
// per-feature standardization with statistics computed on the train split
// only. Any empty split or a zero-variance feature is a domain error.
SeriesDataset split_normalize(SeriesDataset ds, const SplitRatios& ratios, uint64_t seed,
                              bool normalize = true);

}  // namespace smct
