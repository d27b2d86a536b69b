#include "smct/model.hpp"

#include <cmath>
#include <stdexcept>

namespace smct {

namespace {
// fixed child keys for per-source noise sub-streams
enum NoiseSource : uint64_t { kSrcQ = 1, kSrcK = 2, kSrcV = 3, kSrcZ = 4 };

Mat uniform_init(int rows, int cols, int fan_in, SeededRng rng) {
    Mat m(rows, cols);
    double bound = std::sqrt(1.0 / fan_in);
    for (double& v : m.values) v = bound * (2.0 * rng.next_uniform() - 1.0);
    return m;
}
}  // namespace

ModelParams init_params(const ModelDims& dims, SeededRng rng) {
    if (dims.r < 1 || dims.d_in < 1 || dims.d_obs < 1 || dims.d_ff < 1)
        throw std::domain_error("init_params: dimensions must be >= 1");
    ModelParams p;
    p.w_q = uniform_init(dims.r, dims.d_in, dims.d_in, rng.child(0));
    p.w_k = uniform_init(dims.r, dims.d_in, dims.d_in, rng.child(1));
    p.w_v = uniform_init(dims.r, dims.d_in, dims.d_in, rng.child(2));
    p.head.ffn_in = uniform_init(dims.d_ff, dims.r, dims.r, rng.child(3));
    p.head.ffn_out = uniform_init(dims.r, dims.d_ff, dims.d_ff, rng.child(4));
    p.head.out_proj = uniform_init(dims.d_obs, dims.r, dims.r, rng.child(5));
    p.head.ln_gain.assign(dims.r, 1.0);
    p.head.ln_bias.assign(dims.r, 0.0);
    p.head.ln_epsilon = 1e-6;
    p.noise = NoiseScales{};
    return p;
}

LatentState project_qkv(std::span<const double> x, const ModelParams& p, SeededRng stream) {
    if (static_cast<size_t>(p.w_q.cols) != x.size())
        throw std::domain_error("project_qkv: input dimension mismatch");
    LatentState s;
    SeededRng rq = stream.child(kSrcQ), rk = stream.child(kSrcK), rv = stream.child(kSrcV);
    GaussianDraw q = gaussian_sample(matvec(p.w_q, x), std::sqrt(p.noise.var_q), rq);
    GaussianDraw k = gaussian_sample(matvec(p.w_k, x), std::sqrt(p.noise.var_k), rk);
    GaussianDraw v = gaussian_sample(matvec(p.w_v, x), std::sqrt(p.noise.var_v), rv);
    s.q = std::move(q.value);
    s.eps_q = std::move(q.eps);
    s.k = std::move(k.value);
    s.eps_k = std::move(k.eps);
    s.v = std::move(v.value);
    s.eps_v = std::move(v.eps);
    return s;
}

Vec attention_weights(std::span<const double> q_prev, const Window& window, int r) {
    if (window.empty()) throw std::domain_error("attention_weights: empty window");
    double inv_sqrt_r = 1.0 / std::sqrt(static_cast<double>(r));
    Vec logits(window.size());
    for (size_t s = 0; s < window.size(); ++s)
        logits[s] = dot(q_prev, window[s]->k) * inv_sqrt_r;
    return softmax(logits);
}

Vec attention_mix(std::span<const double> pi, const Window& window) {
    if (pi.size() != window.size())
        throw std::domain_error("attention_mix: pi/window length mismatch");
    if (window.empty()) throw std::domain_error("attention_mix: empty window");
    const size_t r = window[0]->v.size();
    Vec mu(r, 0.0);
    for (size_t s = 0; s < window.size(); ++s) {
        const Vec& vs = window[s]->v;
        for (size_t i = 0; i < r; ++i) mu[i] += pi[s] * vs[i];
    }
    return mu;
}

GaussianDraw sample_attention_noise(std::span<const double> mu, const ModelParams& p,
                                    SeededRng stream) {
    SeededRng rz = stream.child(kSrcZ);
    return gaussian_sample(mu, std::sqrt(p.noise.var_z), rz);
}

AttentionDraw attention_vector(std::span<const double> pi, const Window& window,
                               const ModelParams& p, SeededRng stream) {
    AttentionDraw out;
    out.mu = attention_mix(pi, window);
    GaussianDraw z = sample_attention_noise(out.mu, p, stream);
    out.z = std::move(z.value);
    out.eps_z = std::move(z.eps);
    return out;
}

Vec observation_mean(std::span<const double> z, const ObservationHead& head) {
    Vec h = matvec(head.ffn_in, z);
    Vec a = relu(h);
    Vec f = matvec(head.ffn_out, a);
    Vec u(z.size());
    for (size_t i = 0; i < u.size(); ++i) u[i] = z[i] + f[i];
    Vec ln = layer_norm(u, head.ln_gain, head.ln_bias, head.ln_epsilon);
    return matvec(head.out_proj, ln);
}

double observation_logdensity(std::span<const double> x, std::span<const double> z,
                              const ModelParams& p) {
    if (!(p.noise.var_obs > 0.0))
        throw std::domain_error("observation_logdensity: var_obs must be > 0");
    return log_gaussian_density(x, observation_mean(z, p.head), p.noise.var_obs);
}

double transition_logdensity(const LatentState& state, std::span<const double> mu_z,
                             std::span<const double> x, const ModelParams& p) {
    const NoiseScales& n = p.noise;
    if (!(n.var_q > 0.0 && n.var_k > 0.0 && n.var_v > 0.0 && n.var_z > 0.0))
        throw std::domain_error("transition_logdensity: variances must be > 0");
    double ld = log_gaussian_density(state.q, matvec(p.w_q, x), n.var_q);
    ld += log_gaussian_density(state.k, matvec(p.w_k, x), n.var_k);
    ld += log_gaussian_density(state.v, matvec(p.w_v, x), n.var_v);
    ld += log_gaussian_density(state.z, mu_z, n.var_z);
    return ld;
}

std::vector<Vec> deterministic_forward(const std::vector<Vec>& xs, const ModelParams& p) {
    if (xs.size() < 2) throw std::domain_error("deterministic_forward: T must be >= 2");
    const int lag = static_cast<int>(xs.size());  // full history
    Window window;
    std::vector<Vec> preds;
    preds.reserve(xs.size() - 1);
    for (size_t t = 0; t < xs.size(); ++t) {
        if (t > 0) {
            Vec pi = attention_weights(window[0]->q, window, p.depth());
            auto st = std::make_shared<LatentState>();
            st->q = matvec(p.w_q, xs[t]);
            st->k = matvec(p.w_k, xs[t]);
            st->v = matvec(p.w_v, xs[t]);
            const size_t r = st->v.size();
            st->z.assign(r, 0.0);
            for (size_t s = 0; s < window.size(); ++s)
                for (size_t i = 0; i < r; ++i) st->z[i] += pi[s] * window[s]->v[i];
            preds.push_back(observation_mean(st->z, p.head));
            window.insert(window.begin(), std::move(st));
            if (static_cast<int>(window.size()) > lag) window.pop_back();
        } else {
            auto st = std::make_shared<LatentState>();
            st->q = matvec(p.w_q, xs[t]);
            st->k = matvec(p.w_k, xs[t]);
            st->v = matvec(p.w_v, xs[t]);
            window.insert(window.begin(), std::move(st));
        }
    }
    return preds;
}

std::vector<Vec> simulate_sequence(const ModelParams& p, int t_len, int lag,
                                   SeededRng stream) {
    if (t_len < 2) throw std::domain_error("simulate_sequence: t_len must be >= 2");
    if (!(p.noise.var_obs > 0.0))
        throw std::domain_error("simulate_sequence: var_obs must be > 0");
    const int d = p.d_obs();
    const int max_window = lag <= 0 ? t_len : lag;
    std::vector<Vec> xs;
    xs.reserve(t_len);
    Window window;
    for (int t = 1; t <= t_len; ++t) {
        SeededRng st = stream.child(static_cast<uint64_t>(t));
        Vec x;
        std::shared_ptr<LatentState> state;
        if (t == 1) {
            SeededRng sx = st.child(0);
            x = gaussian_sample(Vec(d, 0.0), 1.0, sx).value;
            state = std::make_shared<LatentState>(project_qkv(x, p, st));
        } else {
            Vec pi = attention_weights(window[0]->q, window, p.depth());
            AttentionDraw zd = attention_vector(pi, window, p, st);
            Vec g = observation_mean(zd.z, p.head);
            SeededRng sx = st.child(0);
            x = gaussian_sample(g, std::sqrt(p.noise.var_obs), sx).value;
            state = std::make_shared<LatentState>(project_qkv(x, p, st));
            state->z = std::move(zd.z);
            state->eps_z = std::move(zd.eps_z);
        }
        window.insert(window.begin(), std::move(state));
        if (static_cast<int>(window.size()) > max_window) window.pop_back();
        xs.push_back(std::move(x));
    }
    return xs;
}

ParamNodes register_params(Tape& t, const ModelParams& p) {
    ParamNodes n;
    n.w_q = t.param(kParamWq, p.w_q.values, p.w_q.rows, p.w_q.cols);
    n.w_k = t.param(kParamWk, p.w_k.values, p.w_k.rows, p.w_k.cols);
    n.w_v = t.param(kParamWv, p.w_v.values, p.w_v.rows, p.w_v.cols);
    n.ffn_in = t.param(kParamFfnIn, p.head.ffn_in.values, p.head.ffn_in.rows, p.head.ffn_in.cols);
    n.ffn_out =
        t.param(kParamFfnOut, p.head.ffn_out.values, p.head.ffn_out.rows, p.head.ffn_out.cols);
    n.ln_gain = t.param(kParamLnGain, p.head.ln_gain, static_cast<int>(p.head.ln_gain.size()), 1);
    n.ln_bias = t.param(kParamLnBias, p.head.ln_bias, static_cast<int>(p.head.ln_bias.size()), 1);
    n.out_proj =
        t.param(kParamOutProj, p.head.out_proj.values, p.head.out_proj.rows, p.head.out_proj.cols);
    return n;
}

NodeRef taped_observation_mean(Tape& t, NodeRef z, const ParamNodes& pn,
                               const ObservationHead& head) {
    NodeRef h = t.matvec(pn.ffn_in, z);
    NodeRef a = t.relu(h);
    NodeRef f = t.matvec(pn.ffn_out, a);
    NodeRef u = t.add(z, f);
    NodeRef ln = t.layer_norm(u, pn.ln_gain, pn.ln_bias, head.ln_epsilon);
    return t.matvec(pn.out_proj, ln);
}

}  // namespace smct
