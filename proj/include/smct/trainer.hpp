#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "smct/dataio.hpp"
#include "smct/filter.hpp"
#include "smct/model.hpp"
#include "smct/tape.hpp"

// Training splits the parameters in two: the weight tensors move by Adam on
// the gradient of the particle-weighted negative complete-data log-density
// (final weights treated as constants), the five noise variances move by a
// stochastic-approximation EM update. Neither touches the other's set.

namespace smct {

enum class LrSchedule : int { kConstant = 0, kWarmup = 1 };

struct TrainConfig {
    int particles = 10;
    int lag = 0;  // attention window; 0 keeps the full history
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 0.001;  // constant value, or the warmup peak
    LrSchedule schedule = LrSchedule::kConstant;
    int warmup_steps = 4000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double em_exponent = 0.6;  // step size p^-em_exponent; must be > 0.5
    double variance_floor = 1e-6;
    std::array<bool, kEmSourceCount> em_update = {true, true, true, true, true};
    bool early_stopping = false;
    int patience = 10;
    int threads = 1;
    uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct OptState {
    std::vector<Vec> m1, m2;  // per weight tensor, flat, ParamId order
    long step = 0;            // Adam steps taken
    long em_step = 0;         // EM batches processed (p)
};

// flat views of the eight weight tensors in ParamId order
std::array<Vec*, kParamCount> weight_views(ModelParams& p);
std::array<const Vec*, kParamCount> weight_views(const ModelParams& p);

OptState init_opt_state(const ModelParams& p);

// 1-based step; constant, or inverse-square-root warmup peaking at
// learning_rate when step = warmup_steps
double learning_rate_at(const TrainConfig& cfg, long step);

// Adam on the weight tensors only; noise variances are never touched
void adam_step(ModelParams& p, const GradMap& grads, OptState& st, const TrainConfig& cfg);

// Accumulated EM sufficient statistics: weighted_sq[s] collects
// sum_m w_T^m sum_t |residual_t^m|^2, denom[s] the matching residual count
// times the source dimension.
struct EmBatch {
    std::array<double, kEmSourceCount> weighted_sq{};
    std::array<double, kEmSourceCount> denom{};

    void add_run(const Vec& final_weights, const std::vector<TrajStats>& trajs, int depth,
                 int d_obs);
    void merge(const EmBatch& other);
};

// var <- (1 - eta_p) var + eta_p * weighted_sq/denom with eta_p = p^-em_exponent,
// per enabled source, floored at variance_floor; p < 1 is a domain error
NoiseScales em_update_variances(const NoiseScales& current, const EmBatch& batch, long p,
                                const TrainConfig& cfg);

// loss node -sum_m w_m * S_m from per-trajectory running sums S_m and the
// final-step log weights; w = stop_gradient(softmax(final_log_weights)), or
// the given constants when frozen_weights is set
NodeRef smc_loss(Tape& tape, std::span<const NodeRef> traj_sums,
                 std::span<const NodeRef> final_log_weights,
                 const Vec* frozen_weights = nullptr);

// One taped filter pass over a sequence. The filter itself (states, weights,
// genealogy, likelihood) matches the plain Filter bit for bit; on top of it
// every per-step transition + observation log-density is recorded on the
// tape and accumulated along genealogy lines.
struct TapedRun {
    Tape tape;
    ParamNodes pnodes;
    NodeRef loss;
    double loss_value = 0.0;
    Vec final_weights;
    std::vector<TrajStats> stats;  // plain per-trajectory sums (EM input)
    std::vector<std::vector<int>> genealogy;
    std::vector<Vec> step_weights;
    double log_likelihood = 0.0;
};

struct TapedLossOptions {
    const std::vector<std::vector<int>>* replay = nullptr;  // frozen ancestor indices
    const Vec* frozen_weights = nullptr;                    // frozen final weights
};

TapedRun taped_filter_loss(const std::vector<Vec>& xs, const ModelParams& p, int particles,
                           int lag, SeededRng stream, const TapedLossOptions& opt = {});

// plain-filter loss value (same quantity as TapedRun.loss_value, no tape)
double sequence_loss(const std::vector<Vec>& xs, const ModelParams& p, int particles,
                     int lag, SeededRng stream);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0, train_mse = 0.0;
    double val_loss = 0.0, val_mse = 0.0;
    NoiseScales noise;
};

struct FitResult {
    ModelParams params;  // best-validation snapshot
    OptState opt;
    std::vector<EpochLog> log;
    int best_epoch = -1;
};

// full loop: per batch, filter + backward per sequence (deterministically
// reduced in order, whatever the thread count), one Adam step on the mean
// gradient, one EM update; per epoch, train/val loss and mse are logged and
// the best-validation parameters are retained. NaN loss aborts with the
// epoch, step and sequence id in the message.
FitResult fit(const SeriesDataset& ds, const ModelParams& initial, const TrainConfig& cfg);

// columns: epoch,split,loss,mse,var_q,var_k,var_v,var_z,var_obs
void write_train_log(const std::string& path, const std::vector<EpochLog>& log);

struct Checkpoint {
    ModelParams params;
    OptState opt;
    NormStats norm;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace smct
