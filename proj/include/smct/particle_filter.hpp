#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "smct/numkit.hpp"

// Generic auxiliary particle filter over a pluggable transition cell. The
// engine owns selection (multinomial resampling), window bookkeeping,
// genealogy, weight normalization and the likelihood estimate; the cell owns
// everything model specific. One step splits into three phases:
//
//   attend()          per-particle proposal statistics from the current
//                     windows, before any selection (callers may read these
//                     for one-step-ahead prediction)
//   propagate(x_t)    draw ancestors from the current weights, then extend
//                     each slot with a fresh state conditioned on x_t
//   compute_weights() normalize the pending observation log-densities and
//                     fold log(mean unnormalized weight) into the estimate
//
// A cell provides:
//   State                           what a window entry stores
//   Attend                          per-particle proposal statistics
//   MutateOut { state, log_obs }    plus anything extend() wants
//   Traj                            per-trajectory running payload, copied
//                                   along genealogy lines at resampling
//   init_state(x1, m, stream)       -> shared_ptr<const State>
//   attend(window)                  -> Attend
//   mutate(attend, window, xt, t, m, stream) -> MutateOut
//   init_traj()                     -> Traj
//   extend(anc_traj, attend, out, xt, t)     -> Traj

namespace smct {

struct NormalizedWeights {
    Vec probs;        // softmax of the log weights
    double log_mean;  // log of the mean unnormalized weight
};

// log-sum-exp normalization; throws std::runtime_error if every weight
// underflows (no finite maximum)
NormalizedWeights normalize_log_weights(std::span<const double> log_weights);

// m_out iid draws from the categorical distribution given by `weights`;
// throws std::domain_error unless the weights are nonnegative and sum to 1
// within 1e-6
std::vector<int> resample_indices(std::span<const double> weights, int m_out,
                                  SeededRng& rng);

template <class Cell>
class ParticleFilter {
  public:
    using State = typename Cell::State;
    using Attend = typename Cell::Attend;
    using Traj = typename Cell::Traj;
    using WindowT = std::vector<std::shared_ptr<const State>>;

    ParticleFilter(Cell& cell, int particles, int lag, SeededRng stream)
        : cell_(cell), m_(particles), lag_(lag), stream_(stream) {
        if (particles < 1) throw std::domain_error("particle count must be >= 1");
        if (lag < 1) throw std::domain_error("lag must be >= 1");
    }

    // substitute a frozen genealogy for fresh multinomial draws (used to
    // replay a run under perturbed parameters)
    void set_replay(const std::vector<std::vector<int>>* genealogy) { replay_ = genealogy; }

    void init(const Vec& x1) {
        if (t_ != 0) throw std::domain_error("ParticleFilter: init called twice");
        SeededRng step = stream_.child(1);
        windows_.assign(m_, WindowT{});
        trajs_.assign(m_, cell_.init_traj());
        for (int m = 0; m < m_; ++m)
            windows_[m].push_back(cell_.init_state(x1, m, step.child(1 + m)));
        weights_.assign(m_, 1.0 / m_);
        t_ = 1;
        weighted_ = true;
        attends_fresh_ = false;
    }

    const std::vector<Attend>& attend() {
        if (t_ < 1) throw std::domain_error("ParticleFilter: attend before init");
        if (!attends_fresh_) {
            attends_.clear();
            attends_.reserve(m_);
            for (int m = 0; m < m_; ++m) attends_.push_back(cell_.attend(windows_[m]));
            attends_fresh_ = true;
        }
        return attends_;
    }

    void propagate(const Vec& xt) {
        if (t_ < 1) throw std::domain_error("ParticleFilter: propagate before init");
        if (!weighted_) throw std::domain_error("ParticleFilter: propagate before compute_weights");
        attend();
        const int t = t_ + 1;
        SeededRng step = stream_.child(t);
        std::vector<int> idx;
        if (replay_) {
            idx = replay_->at(t - 2);
        } else {
            SeededRng sel = step.child(0);
            idx = resample_indices(weights_, m_, sel);
        }

        std::vector<WindowT> next_windows(m_);
        std::vector<Traj> next_trajs;
        next_trajs.reserve(m_);
        pending_logw_.assign(m_, 0.0);
        for (int m = 0; m < m_; ++m) {
            const int a = idx[m];
            auto out = cell_.mutate(attends_[a], windows_[a], xt, t, m, step.child(1 + m));
            pending_logw_[m] = out.log_obs;
            next_trajs.push_back(cell_.extend(trajs_[a], attends_[a], out, xt, t));
            WindowT& w = next_windows[m];
            w.reserve(std::min<size_t>(windows_[a].size() + 1, lag_));
            w.push_back(std::move(out.state));
            for (const auto& s : windows_[a]) {
                if (static_cast<int>(w.size()) >= lag_) break;
                w.push_back(s);
            }
        }
        windows_ = std::move(next_windows);
        trajs_ = std::move(next_trajs);
        genealogy_.push_back(std::move(idx));
        attends_fresh_ = false;
        weighted_ = false;
        t_ = t;
    }

    void compute_weights() {
        if (weighted_) throw std::domain_error("ParticleFilter: weights already computed");
        NormalizedWeights nw = normalize_log_weights(pending_logw_);
        weights_ = std::move(nw.probs);
        step_weights_.push_back(weights_);
        log_likelihood_ += nw.log_mean;
        weighted_ = true;
    }

    void step(const Vec& xt) {
        propagate(xt);
        compute_weights();
    }

    int particles() const { return m_; }
    int lag() const { return lag_; }
    int t() const { return t_; }
    const Vec& weights() const { return weights_; }
    const std::vector<WindowT>& windows() const { return windows_; }
    const std::vector<Traj>& trajs() const { return trajs_; }
    const std::vector<std::vector<int>>& genealogy() const { return genealogy_; }
    const std::vector<Vec>& step_weights() const { return step_weights_; }
    double log_likelihood() const { return log_likelihood_; }

  private:
    Cell& cell_;
    int m_;
    int lag_;
    SeededRng stream_;
    const std::vector<std::vector<int>>* replay_ = nullptr;

    int t_ = 0;
    bool weighted_ = false;
    bool attends_fresh_ = false;
    std::vector<WindowT> windows_;
    std::vector<Traj> trajs_;
    std::vector<Attend> attends_;
    Vec weights_;
    Vec pending_logw_;
    std::vector<std::vector<int>> genealogy_;   // entry t-2 maps slot at t to ancestor at t-1
    std::vector<Vec> step_weights_;             // normalized weights after each scored step
    double log_likelihood_ = 0.0;
};

}  // namespace smct
