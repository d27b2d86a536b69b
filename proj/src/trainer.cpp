#include "smct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace smct {

void validate(const TrainConfig& cfg) {
    if (cfg.particles < 1) throw std::domain_error("config: particles must be >= 1");
    if (cfg.lag < 0) throw std::domain_error("config: lag must be >= 0");
    if (cfg.epochs < 0) throw std::domain_error("config: epochs must be >= 0");
    if (cfg.batch_size < 1) throw std::domain_error("config: batch_size must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw std::domain_error("config: learning rate must be > 0");
    if (!(cfg.em_exponent > 0.5))
        throw std::domain_error("config: em_exponent must be > 0.5");
    if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
        !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0))
        throw std::domain_error("config: adam betas must be in [0, 1)");
    if (!(cfg.adam_epsilon > 0.0)) throw std::domain_error("config: adam epsilon must be > 0");
    if (!(cfg.variance_floor > 0.0)) throw std::domain_error("config: variance floor must be > 0");
    if (cfg.warmup_steps < 1) throw std::domain_error("config: warmup_steps must be >= 1");
    if (cfg.patience < 1) throw std::domain_error("config: patience must be >= 1");
    if (cfg.threads < 1) throw std::domain_error("config: threads must be >= 1");
}

std::array<Vec*, kParamCount> weight_views(ModelParams& p) {
    return {&p.w_q.values,        &p.w_k.values,  &p.w_v.values,
            &p.head.ffn_in.values, &p.head.ffn_out.values,
            &p.head.ln_gain,       &p.head.ln_bias, &p.head.out_proj.values};
}

std::array<const Vec*, kParamCount> weight_views(const ModelParams& p) {
    return {&p.w_q.values,        &p.w_k.values,  &p.w_v.values,
            &p.head.ffn_in.values, &p.head.ffn_out.values,
            &p.head.ln_gain,       &p.head.ln_bias, &p.head.out_proj.values};
}

OptState init_opt_state(const ModelParams& p) {
    OptState st;
    auto views = weight_views(p);
    st.m1.resize(kParamCount);
    st.m2.resize(kParamCount);
    for (int i = 0; i < kParamCount; ++i) {
        st.m1[i].assign(views[i]->size(), 0.0);
        st.m2[i].assign(views[i]->size(), 0.0);
    }
    return st;
}

double learning_rate_at(const TrainConfig& cfg, long step) {
    if (step < 1) throw std::domain_error("learning_rate_at: step must be >= 1");
    if (cfg.schedule == LrSchedule::kConstant) return cfg.learning_rate;
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(cfg.warmup_steps);
    return cfg.learning_rate * std::sqrt(w) *
           std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

void adam_step(ModelParams& p, const GradMap& grads, OptState& st, const TrainConfig& cfg) {
    auto views = weight_views(p);
    st.step += 1;
    const double lr = learning_rate_at(cfg, st.step);
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (int i = 0; i < kParamCount; ++i) {
        if (!grads.has(i)) continue;
        const Vec& g = grads.at(i);
        Vec& w = *views[i];
        if (g.size() != w.size()) throw std::domain_error("adam_step: gradient shape mismatch");
        Vec& m = st.m1[i];
        Vec& v = st.m2[i];
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
    }
}

void EmBatch::add_run(const Vec& final_weights, const std::vector<TrajStats>& trajs,
                      int depth, int d_obs) {
    if (final_weights.size() != trajs.size())
        throw std::domain_error("EmBatch: weights/trajectories length mismatch");
    if (trajs.empty()) throw std::domain_error("EmBatch: no trajectories");
    const std::array<int, kEmSourceCount> dims{depth, depth, depth, depth, d_obs};
    for (size_t m = 0; m < trajs.size(); ++m)
        for (int s = 0; s < kEmSourceCount; ++s)
            weighted_sq[s] += final_weights[m] * trajs[m].residual_sq[s];
    for (int s = 0; s < kEmSourceCount; ++s)
        denom[s] += static_cast<double>(trajs[0].steps) * dims[s];
}

void EmBatch::merge(const EmBatch& other) {
    for (int s = 0; s < kEmSourceCount; ++s) {
        weighted_sq[s] += other.weighted_sq[s];
        denom[s] += other.denom[s];
    }
}

NoiseScales em_update_variances(const NoiseScales& current, const EmBatch& batch, long p,
                                const TrainConfig& cfg) {
    if (p < 1) throw std::domain_error("em_update_variances: step p must be >= 1");
    const double eta = std::pow(static_cast<double>(p), -cfg.em_exponent);
    NoiseScales out = current;
    std::array<double*, kEmSourceCount> slots{&out.var_q, &out.var_k, &out.var_v, &out.var_z,
                                              &out.var_obs};
    for (int s = 0; s < kEmSourceCount; ++s) {
        if (!cfg.em_update[s] || batch.denom[s] <= 0.0) continue;
        const double target = batch.weighted_sq[s] / batch.denom[s];
        *slots[s] = std::max(cfg.variance_floor, (1.0 - eta) * (*slots[s]) + eta * target);
    }
    return out;
}

NodeRef smc_loss(Tape& tape, std::span<const NodeRef> traj_sums,
                 std::span<const NodeRef> final_log_weights, const Vec* frozen_weights) {
    if (traj_sums.empty() || traj_sums.size() != final_log_weights.size())
        throw std::domain_error("smc_loss: need matching trajectory sums and log weights");
    NodeRef w;
    if (frozen_weights) {
        if (frozen_weights->size() != traj_sums.size())
            throw std::domain_error("smc_loss: frozen weight length mismatch");
        w = tape.constant(*frozen_weights);
    } else {
        w = tape.stop_gradient(tape.softmax(tape.stack(final_log_weights)));
    }
    return tape.scale(tape.dot(w, tape.stack(traj_sums)), -1.0);
}

namespace {

// The taped twin of PlainCell: identical plain values (same kernels, same
// noise streams), plus tape nodes for every state so the loss can be
// differentiated. Running per-trajectory sums live on the tape and follow
// genealogy lines exactly like the plain TrajStats do.
class TapedCell {
  public:
    struct State {
        LatentState vals;
        NodeRef q, k, v, z;
    };
    struct Attend {
        Vec pi, mu;
        NodeRef pi_node, mu_node;
    };
    struct MutateOut {
        std::shared_ptr<const State> state;
        double log_obs = 0.0;
        NodeRef obs_node, step_node;
        Vec g;
    };
    struct Traj {
        NodeRef sum_node, last_obs_node;
        TrajStats stats;
    };
    using WindowT = std::vector<std::shared_ptr<const State>>;

    TapedCell(Tape& tape, const ModelParams& p)
        : tape_(&tape), p_(&p), pn_(register_params(tape, p)) {
        const NoiseScales& n = p.noise;
        if (!(n.var_q > 0.0 && n.var_k > 0.0 && n.var_v > 0.0 && n.var_z > 0.0 &&
              n.var_obs > 0.0))
            throw std::domain_error("taped filter: all variances must be > 0");
    }

    const ParamNodes& pnodes() const { return pn_; }

    std::shared_ptr<const State> init_state(const Vec& x1, int /*m*/, SeededRng stream) const {
        auto st = std::make_shared<State>();
        st->vals = project_qkv(x1, *p_, stream);
        (void)project_nodes(x1, *st);
        return st;
    }

    Attend attend(const WindowT& w) const {
        const double inv_sqrt_r = 1.0 / std::sqrt(static_cast<double>(p_->depth()));
        std::vector<NodeRef> logits(w.size()), vs(w.size());
        for (size_t s = 0; s < w.size(); ++s) {
            logits[s] = tape_->scale(tape_->dot(w[0]->q, w[s]->k), inv_sqrt_r);
            vs[s] = w[s]->v;
        }
        Attend a;
        a.pi_node = tape_->softmax(tape_->stack(logits));
        a.mu_node = tape_->weighted_sum(a.pi_node, vs);
        a.pi = tape_->val(a.pi_node);
        a.mu = tape_->val(a.mu_node);
        return a;
    }

    MutateOut mutate(const Attend& a, const WindowT& /*anc*/, const Vec& xt, int /*t*/,
                     int /*m*/, SeededRng stream) const {
        auto st = std::make_shared<State>();
        st->vals = project_qkv(xt, *p_, stream);
        GaussianDraw zd = sample_attention_noise(a.mu, *p_, stream);
        st->vals.z = zd.value;
        st->vals.eps_z = zd.eps;

        Projection pr = project_nodes(xt, *st);
        st->z = tape_->add_scaled(a.mu_node, tape_->constant(st->vals.eps_z),
                                  std::sqrt(p_->noise.var_z));
        NodeRef g_node = taped_observation_mean(*tape_, st->z, pn_, p_->head);
        MutateOut out;
        out.obs_node = tape_->gauss_logdensity(pr.x, g_node, p_->noise.var_obs);
        const std::array<NodeRef, 4> trans_terms{
            tape_->gauss_logdensity(st->q, pr.mean_q, p_->noise.var_q),
            tape_->gauss_logdensity(st->k, pr.mean_k, p_->noise.var_k),
            tape_->gauss_logdensity(st->v, pr.mean_v, p_->noise.var_v),
            tape_->gauss_logdensity(st->z, a.mu_node, p_->noise.var_z)};
        out.step_node = tape_->add(tape_->sum(trans_terms), out.obs_node);
        out.log_obs = tape_->val(out.obs_node)[0];
        out.g = tape_->val(g_node);
        out.state = std::move(st);
        return out;
    }

    Traj init_traj() const { return {}; }

    Traj extend(const Traj& anc, const Attend& /*a*/, const MutateOut& out, const Vec& xt,
                int /*t*/) const {
        Traj tr;
        tr.sum_node =
            anc.sum_node.valid() ? tape_->add(anc.sum_node, out.step_node) : out.step_node;
        tr.last_obs_node = out.obs_node;
        tr.stats = anc.stats;
        const LatentState& s = out.state->vals;
        tr.stats.logdensity_sum += tape_->val(out.step_node)[0];
        tr.stats.residual_sq[kEmQ] += p_->noise.var_q * squared_norm(s.eps_q);
        tr.stats.residual_sq[kEmK] += p_->noise.var_k * squared_norm(s.eps_k);
        tr.stats.residual_sq[kEmV] += p_->noise.var_v * squared_norm(s.eps_v);
        tr.stats.residual_sq[kEmZ] += p_->noise.var_z * squared_norm(s.eps_z);
        tr.stats.residual_sq[kEmObs] += squared_distance(xt, out.g);
        tr.stats.steps += 1;
        return tr;
    }

  private:
    struct Projection {
        NodeRef x, mean_q, mean_k, mean_v;
    };

    // records mean + std*eps nodes for q/k/v, mirroring gaussian_sample
    Projection project_nodes(const Vec& x, State& st) const {
        Projection pr;
        pr.x = tape_->constant(x);
        pr.mean_q = tape_->matvec(pn_.w_q, pr.x);
        pr.mean_k = tape_->matvec(pn_.w_k, pr.x);
        pr.mean_v = tape_->matvec(pn_.w_v, pr.x);
        st.q = tape_->add_scaled(pr.mean_q, tape_->constant(st.vals.eps_q),
                                 std::sqrt(p_->noise.var_q));
        st.k = tape_->add_scaled(pr.mean_k, tape_->constant(st.vals.eps_k),
                                 std::sqrt(p_->noise.var_k));
        st.v = tape_->add_scaled(pr.mean_v, tape_->constant(st.vals.eps_v),
                                 std::sqrt(p_->noise.var_v));
        return pr;
    }

    Tape* tape_;
    const ModelParams* p_;
    ParamNodes pn_;
};

}  // namespace

TapedRun taped_filter_loss(const std::vector<Vec>& xs, const ModelParams& p, int particles,
                           int lag, SeededRng stream, const TapedLossOptions& opt) {
    if (xs.size() < 2)
        throw std::domain_error("taped_filter_loss: need at least 2 observations");
    const int t_len = static_cast<int>(xs.size());
    const int eff_lag = lag <= 0 ? std::numeric_limits<int>::max() : lag;
    TapedRun run;
    run.tape.reserve(64 + static_cast<size_t>(particles) * t_len *
                              (36 + 2 * std::min(eff_lag, t_len)));
    TapedCell cell(run.tape, p);
    run.pnodes = cell.pnodes();
    ParticleFilter<TapedCell> pf(cell, particles, eff_lag, stream);
    if (opt.replay) pf.set_replay(opt.replay);
    pf.init(xs[0]);
    for (size_t t = 1; t < xs.size(); ++t) pf.step(xs[t]);

    std::vector<NodeRef> sums, finals;
    sums.reserve(particles);
    finals.reserve(particles);
    run.stats.reserve(particles);
    for (const auto& tr : pf.trajs()) {
        sums.push_back(tr.sum_node);
        finals.push_back(tr.last_obs_node);
        run.stats.push_back(tr.stats);
    }
    run.loss = smc_loss(run.tape, sums, finals, opt.frozen_weights);
    run.loss_value = run.tape.val(run.loss)[0];
    run.final_weights = pf.weights();
    run.genealogy = pf.genealogy();
    run.step_weights = pf.step_weights();
    run.log_likelihood = pf.log_likelihood();
    return run;
}

double sequence_loss(const std::vector<Vec>& xs, const ModelParams& p, int particles,
                     int lag, SeededRng stream) {
    const NoiseScales& n = p.noise;
    if (!(n.var_q > 0.0 && n.var_k > 0.0 && n.var_v > 0.0 && n.var_z > 0.0))
        throw std::domain_error("sequence_loss: all variances must be > 0");
    FilterResult res = filter_sequence(xs, p, particles, lag, stream);
    double acc = 0.0;
    for (size_t m = 0; m < res.weights.size(); ++m)
        acc += res.weights[m] * res.trajs[m].logdensity_sum;
    return -acc;
}

namespace {

struct SeqResult {
    double loss = 0.0;
    GradMap grads;
    EmBatch em;
    std::string error;  // non-empty on failure
};

void check_finite(const TapedRun& run, const GradMap& grads, std::string& error) {
    if (!std::isfinite(run.loss_value)) {
        error = "non-finite loss";
        return;
    }
    for (const Vec& g : grads.grads)
        for (double v : g)
            if (!std::isfinite(v)) {
                error = "non-finite gradient";
                return;
            }
}

SeqResult process_sequence(const std::vector<Vec>& xs, const ModelParams& params,
                           const TrainConfig& cfg, SeededRng stream) {
    SeqResult out;
    try {
        TapedRun run = taped_filter_loss(xs, params, cfg.particles, cfg.lag, stream);
        out.grads = run.tape.backward(run.loss);
        out.loss = run.loss_value;
        check_finite(run, out.grads, out.error);
        if (out.error.empty())
            out.em.add_run(run.final_weights, run.stats, params.depth(), params.d_obs());
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

struct SplitEval {
    double loss = std::numeric_limits<double>::quiet_NaN();
    double mse = std::numeric_limits<double>::quiet_NaN();
};

SplitEval eval_split(const SeriesDataset& ds, const std::vector<int>& idx,
                     const ModelParams& p, const TrainConfig& cfg, SeededRng stream) {
    if (idx.empty()) return {};
    double loss_sum = 0.0, se = 0.0;
    long terms = 0;
    for (int sid : idx) {
        const std::vector<Vec>& xs = ds.series[sid];
        SeededRng fs = stream.child(static_cast<uint64_t>(sid));
        Filter f(p, cfg.particles, cfg.lag, fs);
        f.init(xs[0]);
        const size_t d = xs[0].size();
        for (size_t t = 1; t < xs.size(); ++t) {
            const auto& attends = f.attend();
            const Vec& w = f.weights();
            Vec pred(d, 0.0);
            for (int m = 0; m < cfg.particles; ++m) {
                Vec g = observation_mean(attends[m].mu, p.head);
                for (size_t i = 0; i < d; ++i) pred[i] += w[m] * g[i];
            }
            se += squared_distance(pred, xs[t]);
            terms += static_cast<long>(d);
            f.step(xs[t]);
        }
        double acc = 0.0;
        for (size_t m = 0; m < f.weights().size(); ++m)
            acc += f.weights()[m] * f.trajs()[m].logdensity_sum;
        loss_sum += -acc;
    }
    SplitEval ev;
    ev.loss = loss_sum / static_cast<double>(idx.size());
    ev.mse = se / static_cast<double>(terms);
    return ev;
}

}  // namespace

FitResult fit(const SeriesDataset& ds, const ModelParams& initial, const TrainConfig& cfg) {
    validate(cfg);
    const std::vector<int> train = ds.indices_of(SplitId::kTrain);
    const std::vector<int> val = ds.indices_of(SplitId::kVal);
    if (train.empty()) throw std::domain_error("fit: dataset has no train split");

    ModelParams params = initial;
    OptState opt = init_opt_state(params);
    FitResult out;
    out.params = initial;
    out.opt = opt;

    SeededRng root(cfg.seed);
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        SeededRng estream = root.child(static_cast<uint64_t>(epoch));
        std::vector<int> order = train;
        {
            SeededRng sh = estream.child(0);
            for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
                int j = static_cast<int>(sh.next_u64() % static_cast<uint64_t>(i + 1));
                std::swap(order[i], order[j]);
            }
        }

        for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            const size_t end = std::min(pos + cfg.batch_size, order.size());
            const int count = static_cast<int>(end - pos);
            std::vector<SeqResult> results(count);

            auto work = [&](int offset, int stride) {
                for (int i = offset; i < count; i += stride) {
                    const int sid = order[pos + i];
                    SeededRng fs = estream.child(1 + static_cast<uint64_t>(sid));
                    results[i] = process_sequence(ds.series[sid], params, cfg, fs);
                }
            };
            if (cfg.threads <= 1 || count == 1) {
                work(0, 1);
            } else {
                const int n_threads = std::min(cfg.threads, count);
                std::vector<std::thread> pool;
                pool.reserve(n_threads);
                for (int w = 0; w < n_threads; ++w) pool.emplace_back(work, w, n_threads);
                for (auto& th : pool) th.join();
            }

            // deterministic in-order reduction
            GradMap total;
            total.grads.resize(kParamCount);
            EmBatch em;
            double batch_loss = 0.0;
            for (int i = 0; i < count; ++i) {
                const SeqResult& r = results[i];
                if (!r.error.empty()) {
                    std::ostringstream msg;
                    msg << "fit aborted at epoch " << epoch << ", adam step " << (opt.step + 1)
                        << ", sequence " << ds.ids[order[pos + i]] << ": " << r.error;
                    throw std::runtime_error(msg.str());
                }
                batch_loss += r.loss;
                for (int t = 0; t < kParamCount; ++t) {
                    const Vec& g = r.grads.at(t);
                    if (total.grads[t].empty()) total.grads[t].assign(g.size(), 0.0);
                    for (size_t j = 0; j < g.size(); ++j) total.grads[t][j] += g[j];
                }
                em.merge(r.em);
            }
            const double inv = 1.0 / count;
            for (Vec& g : total.grads)
                for (double& v : g) v *= inv;
            batch_loss *= inv;
            (void)batch_loss;

            adam_step(params, total, opt, cfg);
            opt.em_step += 1;
            params.noise = em_update_variances(params.noise, em, opt.em_step, cfg);
        }

        SeededRng ev = root.child(1000000 + static_cast<uint64_t>(epoch));
        SplitEval tr, va;
        try {
            tr = eval_split(ds, train, params, cfg, ev.child(1));
            va = eval_split(ds, val, params, cfg, ev.child(2));
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "fit aborted at epoch " << epoch << " during the evaluation pass: "
                << e.what();
            throw std::runtime_error(msg.str());
        }
        EpochLog row;
        row.epoch = epoch;
        row.train_loss = tr.loss;
        row.train_mse = tr.mse;
        row.val_loss = va.loss;
        row.val_mse = va.mse;
        row.noise = params.noise;
        out.log.push_back(row);

        // the surrogate loss is dominated by latent transition terms whose
        // epoch-to-epoch spread is resampling noise, so select on held-out mse
        const double score = val.empty() ? tr.mse : va.mse;
        if (score < best_val) {
            best_val = score;
            out.params = params;
            out.opt = opt;
            out.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (cfg.early_stopping && since_best >= cfg.patience) break;
    }

    if (out.best_epoch < 0) {
        out.params = params;
        out.opt = opt;
    }
    return out;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "epoch,split,loss,mse,var_q,var_k,var_v,var_z,var_obs\n";
    for (const EpochLog& row : log) {
        const NoiseScales& n = row.noise;
        const std::string vars = format_double(n.var_q) + "," + format_double(n.var_k) + "," +
                                 format_double(n.var_v) + "," + format_double(n.var_z) + "," +
                                 format_double(n.var_obs);
        out << row.epoch << ",train," << format_double(row.train_loss) << ','
            << format_double(row.train_mse) << ',' << vars << '\n';
        out << row.epoch << ",val," << format_double(row.val_loss) << ','
            << format_double(row.val_mse) << ',' << vars << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

nlohmann::json mat_to_json(const Mat& m) {
    return {{"rows", m.rows}, {"cols", m.cols}, {"values", m.values}};
}

Mat mat_from_json(const nlohmann::json& j) {
    Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
    m.values = j.at("values").get<Vec>();
    if (m.values.size() != static_cast<size_t>(m.rows) * m.cols)
        throw std::runtime_error("checkpoint: matrix value count mismatch");
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["weights"] = {{"w_q", mat_to_json(c.params.w_q)},
                    {"w_k", mat_to_json(c.params.w_k)},
                    {"w_v", mat_to_json(c.params.w_v)},
                    {"ffn_in", mat_to_json(c.params.head.ffn_in)},
                    {"ffn_out", mat_to_json(c.params.head.ffn_out)},
                    {"ln_gain", c.params.head.ln_gain},
                    {"ln_bias", c.params.head.ln_bias},
                    {"out_proj", mat_to_json(c.params.head.out_proj)},
                    {"ln_epsilon", c.params.head.ln_epsilon}};
    j["noise"] = {{"var_q", c.params.noise.var_q},
                  {"var_k", c.params.noise.var_k},
                  {"var_v", c.params.noise.var_v},
                  {"var_z", c.params.noise.var_z},
                  {"var_obs", c.params.noise.var_obs}};
    j["opt"] = {{"m1", c.opt.m1}, {"m2", c.opt.m2}, {"step", c.opt.step},
                {"em_step", c.opt.em_step}};
    j["norm"] = {{"mean", c.norm.mean}, {"stddev", c.norm.stddev}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint parse error in " + path + ": " + e.what());
    }
    if (!j.contains("format_version") || j.at("format_version").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported format version in " + path);
    Checkpoint c;
    const auto& w = j.at("weights");
    c.params.w_q = mat_from_json(w.at("w_q"));
    c.params.w_k = mat_from_json(w.at("w_k"));
    c.params.w_v = mat_from_json(w.at("w_v"));
    c.params.head.ffn_in = mat_from_json(w.at("ffn_in"));
    c.params.head.ffn_out = mat_from_json(w.at("ffn_out"));
    c.params.head.ln_gain = w.at("ln_gain").get<Vec>();
    c.params.head.ln_bias = w.at("ln_bias").get<Vec>();
    c.params.head.out_proj = mat_from_json(w.at("out_proj"));
    c.params.head.ln_epsilon = w.at("ln_epsilon").get<double>();
    const auto& n = j.at("noise");
    c.params.noise.var_q = n.at("var_q").get<double>();
    c.params.noise.var_k = n.at("var_k").get<double>();
    c.params.noise.var_v = n.at("var_v").get<double>();
    c.params.noise.var_z = n.at("var_z").get<double>();
    c.params.noise.var_obs = n.at("var_obs").get<double>();
    const auto& o = j.at("opt");
    c.opt.m1 = o.at("m1").get<std::vector<Vec>>();
    c.opt.m2 = o.at("m2").get<std::vector<Vec>>();
    c.opt.step = o.at("step").get<long>();
    c.opt.em_step = o.at("em_step").get<long>();
    c.norm.mean = j.at("norm").at("mean").get<Vec>();
    c.norm.stddev = j.at("norm").at("stddev").get<Vec>();
    return c;
}

}  // namespace smct
