#pragma once

#include <memory>
#include <span>
#include <vector>

#include "smct/numkit.hpp"
#include "smct/tape.hpp"

// The stochastic self-attention cell. One layer, one head. At each step the
// cell projects the current observation to Gaussian (q, k, v) states, forms
// attention weights from the previous query against the windowed keys, and
// draws a Gaussian attention vector z whose pushforward G(z) parameterizes
// the observation density.
//
// Timing convention: z(t) is drawn from the window alone, before X_t is
// scored, so the importance weight is well defined; (q, k, v) at t are then
// sampled from X_t. At t = 1 there is no window and no z; the first scored
// observation is X_2.

namespace smct {

struct ObservationHead {
    Mat ffn_in;   // d_ff x r
    Mat ffn_out;  // r x d_ff
    Vec ln_gain;  // r
    Vec ln_bias;  // r
    Mat out_proj;  // d_obs x r
    double ln_epsilon = 1e-6;
};

struct NoiseScales {
    double var_q = 0.5;
    double var_k = 0.5;
    double var_v = 0.5;
    double var_z = 0.5;
    double var_obs = 0.5;
};

struct ModelDims {
    int r = 32;      // latent depth
    int d_in = 1;    // input features (equals d_obs; no positional encoding)
    int d_obs = 1;   // observed features
    int d_ff = 32;   // feed-forward width
};

struct ModelParams {
    Mat w_q, w_k, w_v;  // r x d_in
    ObservationHead head;
    NoiseScales noise;

    int depth() const { return w_q.rows; }
    int d_in() const { return w_q.cols; }
    int d_obs() const { return head.out_proj.rows; }
    int d_ff() const { return head.ffn_in.rows; }
    ModelDims dims() const { return {depth(), d_in(), d_obs(), d_ff()}; }
};

// weight tensors in registration order; variances are not tape parameters
enum ParamId : int {
    kParamWq = 0, kParamWk, kParamWv, kParamFfnIn, kParamFfnOut,
    kParamLnGain, kParamLnBias, kParamOutProj, kParamCount,
};

struct LatentState {
    Vec q, k, v;                          // r each
    Vec z;                                // r; empty at t = 1
    Vec eps_q, eps_k, eps_v, eps_z;       // recorded standard-normal draws
};

// most-recent-first, at most lag entries; states shared across offspring
using Window = std::vector<std::shared_ptr<const LatentState>>;

// weights ~ uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); LN gain 1, bias 0;
// all five variances 0.5
ModelParams init_params(const ModelDims& dims, SeededRng rng);

// q = W_q x + sqrt(var_q) eps, independently for q/k/v; eps recorded.
// Noise sub-streams are derived from `stream` per source.
LatentState project_qkv(std::span<const double> x, const ModelParams& p, SeededRng stream);

// pi_s proportional to exp(<q_prev, k(t-s)> / sqrt(r)) over the window
Vec attention_weights(std::span<const double> q_prev, const Window& window, int r);

struct AttentionDraw {
    Vec mu;     // sum_s pi_s v(t-s), needed by the transition density and EM
    Vec z;      // mu + sqrt(var_z) eps
    Vec eps_z;
};
AttentionDraw attention_vector(std::span<const double> pi, const Window& window,
                               const ModelParams& p, SeededRng stream);

// the deterministic part of the draw: mu = sum_s pi_s v(t-s)
Vec attention_mix(std::span<const double> pi, const Window& window);

// z = mu + sqrt(var_z) eps with the same noise sub-stream keying as
// attention_vector, so callers that precompute mu stay bit-identical
GaussianDraw sample_attention_noise(std::span<const double> mu, const ModelParams& p,
                                    SeededRng stream);

// G(z) = out_proj * LN(z + ffn_out * relu(ffn_in * z))
Vec observation_mean(std::span<const double> z, const ObservationHead& head);

// log N(x; G(z), var_obs * I)
double observation_logdensity(std::span<const double> x, std::span<const double> z,
                              const ModelParams& p);

// sum of the four isotropic transition terms: q/k/v about W*x, z about mu_z
double transition_logdensity(const LatentState& state, std::span<const double> mu_z,
                             std::span<const double> x, const ModelParams& p);

// the same recursion with every variance forced to 0; returns G(mu(t)) for
// t = 2..T
std::vector<Vec> deterministic_forward(const std::vector<Vec>& xs, const ModelParams& p);

// generative rollout of the model itself: X_1 ~ N(0, I); for t >= 2 draw the
// attention vector from the window, then X_t ~ N(G(z_t), var_obs * I).
// lag <= 0 keeps the full history.
std::vector<Vec> simulate_sequence(const ModelParams& p, int t_len, int lag,
                                   SeededRng stream);

// ---- taped twins (used by the trainer); forwards call the same kernels ----

struct ParamNodes {
    NodeRef w_q, w_k, w_v, ffn_in, ffn_out, ln_gain, ln_bias, out_proj;
};
ParamNodes register_params(Tape& t, const ModelParams& p);

NodeRef taped_observation_mean(Tape& t, NodeRef z, const ParamNodes& pn,
                               const ObservationHead& head);

}  // namespace smct
