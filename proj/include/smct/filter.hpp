#pragma once

#include <array>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "smct/model.hpp"
#include "smct/particle_filter.hpp"

// The particle filter instantiated with the attention cell. Resampling runs
// at every step; weights come from the observation density alone, so the
// reparametrized transition draws never enter the weights.

namespace smct {

enum EmSource : int { kEmQ = 0, kEmK, kEmV, kEmZ, kEmObs, kEmSourceCount };

// Per-trajectory running sums, copied along genealogy lines at resampling.
// residual_sq[s] accumulates the squared residual of source s over the
// trajectory; steps counts the scored observations (t = 2..T).
struct TrajStats {
    double logdensity_sum = 0.0;  // sum of transition + observation log-densities
    std::array<double, kEmSourceCount> residual_sq{};
    int steps = 0;
};

class PlainCell {
  public:
    using State = LatentState;
    struct Attend {
        Vec pi;  // attention weights over the window
        Vec mu;  // sum_s pi_s v(t-s)
    };
    struct MutateOut {
        std::shared_ptr<const LatentState> state;
        double log_obs;
        double trans_ld;  // 0 when any latent variance is 0 (density undefined)
        Vec g;            // G(z), reused by prediction and the EM residual
    };
    using Traj = TrajStats;

    explicit PlainCell(const ModelParams& p)
        : p_(&p),
          with_density_(p.noise.var_q > 0.0 && p.noise.var_k > 0.0 &&
                        p.noise.var_v > 0.0 && p.noise.var_z > 0.0) {}

    const ModelParams& params() const { return *p_; }

    std::shared_ptr<const LatentState> init_state(const Vec& x1, int /*m*/,
                                                  SeededRng stream) const {
        return std::make_shared<LatentState>(project_qkv(x1, *p_, stream));
    }

    Attend attend(const Window& w) const {
        Attend a;
        a.pi = attention_weights(w[0]->q, w, p_->depth());
        a.mu = attention_mix(a.pi, w);
        return a;
    }

    MutateOut mutate(const Attend& a, const Window& /*anc*/, const Vec& xt, int /*t*/,
                     int /*m*/, SeededRng stream) const {
        LatentState st = project_qkv(xt, *p_, stream);
        GaussianDraw zd = sample_attention_noise(a.mu, *p_, stream);
        st.z = std::move(zd.value);
        st.eps_z = std::move(zd.eps);
        MutateOut out;
        out.g = observation_mean(st.z, p_->head);
        out.log_obs = log_gaussian_density(xt, out.g, p_->noise.var_obs);
        out.trans_ld = with_density_ ? transition_logdensity(st, a.mu, xt, *p_) : 0.0;
        out.state = std::make_shared<const LatentState>(std::move(st));
        return out;
    }

    Traj init_traj() const { return {}; }

    Traj extend(const Traj& anc, const Attend& /*a*/, const MutateOut& out, const Vec& xt,
                int /*t*/) const {
        Traj tr = anc;
        tr.logdensity_sum += out.trans_ld + out.log_obs;
        const LatentState& s = *out.state;
        // residual = std * eps by construction, so |residual|^2 = var * |eps|^2
        tr.residual_sq[kEmQ] += p_->noise.var_q * squared_norm(s.eps_q);
        tr.residual_sq[kEmK] += p_->noise.var_k * squared_norm(s.eps_k);
        tr.residual_sq[kEmV] += p_->noise.var_v * squared_norm(s.eps_v);
        tr.residual_sq[kEmZ] += p_->noise.var_z * squared_norm(s.eps_z);
        tr.residual_sq[kEmObs] += squared_distance(xt, out.g);
        tr.steps += 1;
        return tr;
    }

  private:
    const ModelParams* p_;
    bool with_density_;
};

// lag <= 0 means the full history is kept in every window
class Filter {
  public:
    Filter(const ModelParams& p, int particles, int lag, SeededRng stream)
        : cell_(p),
          pf_(cell_, particles, lag <= 0 ? std::numeric_limits<int>::max() : lag, stream) {}
    Filter(const Filter&) = delete;
    Filter& operator=(const Filter&) = delete;

    void init(const Vec& x1) { pf_.init(x1); }
    const std::vector<PlainCell::Attend>& attend() { return pf_.attend(); }
    void propagate(const Vec& xt) { pf_.propagate(xt); }
    void compute_weights() { pf_.compute_weights(); }
    void step(const Vec& xt) { pf_.step(xt); }
    void set_replay(const std::vector<std::vector<int>>* g) { pf_.set_replay(g); }

    const ModelParams& params() const { return cell_.params(); }
    int particles() const { return pf_.particles(); }
    int t() const { return pf_.t(); }
    const Vec& weights() const { return pf_.weights(); }
    const std::vector<Window>& windows() const { return pf_.windows(); }
    const std::vector<TrajStats>& trajs() const { return pf_.trajs(); }
    const std::vector<std::vector<int>>& genealogy() const { return pf_.genealogy(); }
    const std::vector<Vec>& step_weights() const { return pf_.step_weights(); }
    double log_likelihood() const { return pf_.log_likelihood(); }

  private:
    PlainCell cell_;
    ParticleFilter<PlainCell> pf_;
};

struct FilterResult {
    Vec weights;                              // final normalized weights
    std::vector<Vec> step_weights;            // one row per scored step, t = 2..T
    std::vector<std::vector<int>> genealogy;  // ancestor indices per scored step
    std::vector<Window> windows;              // final lag-window per particle
    std::vector<TrajStats> trajs;             // per-trajectory running sums
    double log_likelihood = 0.0;
};

// init from X_1, then resample/propagate/weight for t = 2..T;
// T < 2 is a domain error
FilterResult filter_sequence(const std::vector<Vec>& xs, const ModelParams& p,
                             int particles, int lag, SeededRng stream);

// one-step-ahead point predictions sum_m w_{t-1}^m G(mu^m(t)) for t = 2..T,
// each formed before x_t is scored
std::vector<Vec> unistep_predictions(const std::vector<Vec>& xs, const ModelParams& p,
                                     int particles, int lag, SeededRng stream);

// number of distinct ancestors at each lag 1..max_lag among the surviving
// trajectories; max_lag may not exceed the number of observations consumed
struct AncestryReport {
    std::vector<int> counts;  // counts[i] is lag i+1
};
AncestryReport unique_ancestors(const std::vector<std::vector<int>>& genealogy,
                                int particles, int max_lag);

// mean and empirical 2.5/97.5 percentile band across runs, one row per lag
struct AncestryBand {
    std::vector<int> lags;
    Vec mean, lo, hi;
};
AncestryBand summarize_ancestry(const std::vector<AncestryReport>& runs);

// columns: lag,mean_unique,ci_low,ci_high
void write_ancestry_csv(const std::string& path, const AncestryBand& band);

}  // namespace smct
