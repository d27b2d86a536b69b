#include "smct/evalkit.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace smct {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int pick_index(const Vec& weights, double u) {
    double cum = 0.0;
    for (size_t m = 0; m < weights.size(); ++m) {
        cum += weights[m];
        if (u < cum) return static_cast<int>(m);
    }
    return static_cast<int>(weights.size()) - 1;
}

void check_sampling_args(size_t particles, size_t weight_count, int n_samples) {
    if (particles == 0) throw std::domain_error("predictive sampling: no particles");
    if (weight_count != particles)
        throw std::domain_error("predictive sampling: weight/particle count mismatch");
    if (n_samples < 1) throw std::domain_error("predictive sampling: n_samples must be >= 1");
}

Vec denorm(const Vec& x, const NormStats& n) { return invert_norm(x, n); }

}  // namespace

std::vector<Vec> sample_predictive(const std::vector<PlainCell::Attend>& attends,
                                   const Vec& weights, const ModelParams& p, int n_samples,
                                   SeededRng stream) {
    check_sampling_args(attends.size(), weights.size(), n_samples);
    const double std_obs = std::sqrt(p.noise.var_obs);
    std::vector<Vec> draws;
    draws.reserve(n_samples);
    for (int d = 0; d < n_samples; ++d) {
        SeededRng ds = stream.child(1 + static_cast<uint64_t>(d));
        const int m = pick_index(weights, ds.next_uniform());
        GaussianDraw zd = sample_attention_noise(attends[m].mu, p, ds);
        Vec g = observation_mean(zd.value, p.head);
        SeededRng xs = ds.child(0);
        draws.push_back(gaussian_sample(g, std_obs, xs).value);
    }
    return draws;
}

PredictiveSamples multistep_forecast(const std::vector<Window>& windows, const Vec& weights,
                                     const ModelParams& p, int lag, int tau_f, int n_samples,
                                     SeededRng stream, int first_t) {
    check_sampling_args(windows.size(), weights.size(), n_samples);
    if (tau_f < 1) throw std::domain_error("multistep_forecast: tau_f must be >= 1");
    const size_t max_window =
        lag <= 0 ? std::numeric_limits<size_t>::max() : static_cast<size_t>(lag);
    const double std_obs = std::sqrt(p.noise.var_obs);

    PredictiveSamples out;
    out.first_t = first_t;
    out.draws.assign(tau_f, std::vector<Vec>(n_samples));
    for (int s = 0; s < n_samples; ++s) {
        SeededRng ps = stream.child(1 + static_cast<uint64_t>(s));
        Window w = windows[pick_index(weights, ps.next_uniform())];
        for (int h = 1; h <= tau_f; ++h) {
            SeededRng hs = ps.child(static_cast<uint64_t>(h));
            Vec pi = attention_weights(w[0]->q, w, p.depth());
            AttentionDraw zd = attention_vector(pi, w, p, hs);
            Vec g = observation_mean(zd.z, p.head);
            SeededRng sx = hs.child(0);
            Vec x = gaussian_sample(g, std_obs, sx).value;
            auto state = std::make_shared<LatentState>(project_qkv(x, p, hs));
            state->z = std::move(zd.z);
            state->eps_z = std::move(zd.eps_z);
            w.insert(w.begin(), std::move(state));
            if (w.size() > max_window) w.pop_back();
            out.draws[h - 1][s] = std::move(x);
        }
    }
    return out;
}

double dist_mse(const PredictiveSamples& samples,
                const std::vector<std::vector<Vec>>& mode_means, const Vec& mode_probs) {
    if (mode_probs.empty() || mode_means.size() != mode_probs.size())
        throw std::domain_error("dist_mse: need one conditional-mean track per mode");
    double prob_sum = 0.0;
    for (double q : mode_probs) {
        if (q < 0.0) throw std::domain_error("dist_mse: negative mode probability");
        prob_sum += q;
    }
    if (std::abs(prob_sum - 1.0) > 1e-9)
        throw std::domain_error("dist_mse: mode probabilities must sum to 1");
    if (samples.draws.empty()) throw std::domain_error("dist_mse: no samples");

    double result = 0.0;
    for (size_t mode = 0; mode < mode_means.size(); ++mode) {
        const auto& means = mode_means[mode];
        if (means.size() != samples.draws.size())
            throw std::domain_error("dist_mse: conditional-mean length mismatch");
        double acc = 0.0;
        long terms = 0;
        for (size_t t = 0; t < means.size(); ++t) {
            for (const Vec& draw : samples.draws[t]) {
                if (draw.size() != means[t].size())
                    throw std::domain_error("dist_mse: feature dimension mismatch");
                acc += squared_distance(draw, means[t]);
                terms += static_cast<long>(draw.size());
            }
        }
        if (terms == 0) throw std::domain_error("dist_mse: no draws");
        result += mode_probs[mode] * (acc / static_cast<double>(terms));
    }
    return result;
}

std::vector<std::vector<Vec>> synthetic_mode_means(const std::vector<Vec>& xs,
                                                   const SyntheticSpec& spec) {
    if (xs.size() < 2) throw std::domain_error("synthetic_mode_means: need at least 2 steps");
    std::vector<double> coefs{spec.alpha};
    if (spec.model == SyntheticModel::kModelII) coefs.push_back(spec.beta);
    std::vector<std::vector<Vec>> means(coefs.size());
    for (size_t mode = 0; mode < coefs.size(); ++mode) {
        means[mode].reserve(xs.size() - 1);
        for (size_t t = 1; t < xs.size(); ++t) {
            Vec m = xs[t - 1];
            for (double& v : m) v *= coefs[mode];
            means[mode].push_back(std::move(m));
        }
    }
    return means;
}

Vec synthetic_mode_probs(const SyntheticSpec& spec) {
    if (spec.model == SyntheticModel::kModelII) return {spec.p, 1.0 - spec.p};
    return {1.0};
}

IntervalBounds intervals_from_samples(const PredictiveSamples& samples, double level) {
    if (!(level > 0.0 && level < 1.0))
        throw std::domain_error("intervals_from_samples: level must be in (0, 1)");
    if (samples.draws.empty()) throw std::domain_error("intervals_from_samples: no samples");
    const double lo_p = (1.0 - level) / 2.0;
    const double hi_p = 1.0 - lo_p;

    IntervalBounds out;
    out.first_t = samples.first_t;
    out.lower.reserve(samples.draws.size());
    out.upper.reserve(samples.draws.size());
    for (const auto& step : samples.draws) {
        const size_t n = step.size();
        // the tail order statistic at h = n p + 1/2 must exist unclamped
        if (static_cast<double>(n) + 1e-9 < 1.0 / (1.0 - level))
            throw std::domain_error("intervals_from_samples: too few samples for the level");
        const size_t d = step[0].size();
        Vec lo(d), hi(d);
        Vec values(n);
        for (size_t f = 0; f < d; ++f) {
            for (size_t s = 0; s < n; ++s) values[s] = step[s][f];
            lo[f] = empirical_quantile(values, lo_p);
            hi[f] = empirical_quantile(values, hi_p);
        }
        out.lower.push_back(std::move(lo));
        out.upper.push_back(std::move(hi));
    }
    return out;
}

CoverageReport picp_mpiw(const std::vector<IntervalBounds>& bounds,
                         const std::vector<std::vector<Vec>>& truth) {
    if (bounds.size() != truth.size())
        throw std::domain_error("picp_mpiw: sequence count mismatch");
    CoverageReport rep;
    rep.first_t = bounds.empty() ? 2 : bounds[0].first_t;
    std::vector<long> covered;
    double width_sum = 0.0;
    long total = 0, hit = 0;
    for (size_t i = 0; i < bounds.size(); ++i) {
        const IntervalBounds& b = bounds[i];
        if (b.lower.size() != truth[i].size() || b.first_t != rep.first_t)
            throw std::domain_error("picp_mpiw: bounds/truth shape mismatch");
        if (b.lower.size() > covered.size()) {
            covered.resize(b.lower.size(), 0);
            rep.counts.resize(b.lower.size(), 0);
        }
        for (size_t t = 0; t < b.lower.size(); ++t) {
            const Vec& x = truth[i][t];
            if (b.lower[t].size() != x.size() || b.upper[t].size() != x.size())
                throw std::domain_error("picp_mpiw: feature dimension mismatch");
            for (size_t f = 0; f < x.size(); ++f) {
                const bool in = b.lower[t][f] <= x[f] && x[f] <= b.upper[t][f];
                covered[t] += in ? 1 : 0;
                hit += in ? 1 : 0;
                rep.counts[t] += 1;
                total += 1;
                width_sum += b.upper[t][f] - b.lower[t][f];
            }
        }
    }
    if (total == 0) throw std::domain_error("picp_mpiw: nothing to score");
    rep.picp = static_cast<double>(hit) / static_cast<double>(total);
    rep.mpiw = width_sum / static_cast<double>(total);
    rep.picp_per_timestep.resize(covered.size());
    for (size_t t = 0; t < covered.size(); ++t)
        rep.picp_per_timestep[t] =
            static_cast<double>(covered[t]) / static_cast<double>(rep.counts[t]);
    return rep;
}

double mse(const std::vector<std::vector<Vec>>& preds,
           const std::vector<std::vector<Vec>>& truth) {
    if (preds.size() != truth.size()) throw std::domain_error("mse: sequence count mismatch");
    double acc = 0.0;
    long terms = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].size() != truth[i].size())
            throw std::domain_error("mse: timestep count mismatch");
        for (size_t t = 0; t < preds[i].size(); ++t) {
            if (preds[i][t].size() != truth[i][t].size())
                throw std::domain_error("mse: feature dimension mismatch");
            acc += squared_distance(preds[i][t], truth[i][t]);
            terms += static_cast<long>(preds[i][t].size());
        }
    }
    if (terms == 0) throw std::domain_error("mse: nothing to score");
    return acc / static_cast<double>(terms);
}

namespace {

void check_eval_options(const EvalOptions& opt) {
    if (opt.particles < 1) throw std::domain_error("eval: particles must be >= 1");
    if (opt.lag < 0) throw std::domain_error("eval: lag must be >= 0");
    if (opt.n_samples < 1) throw std::domain_error("eval: n_samples must be >= 1");
    if (!(opt.level > 0.0 && opt.level < 1.0))
        throw std::domain_error("eval: level must be in (0, 1)");
}

}  // namespace

MetricsReport evaluate_unistep(const SeriesDataset& ds, SplitId split, const ModelParams& p,
                               const EvalOptions& opt) {
    check_eval_options(opt);
    const std::vector<int> idx = ds.indices_of(split);
    if (idx.empty()) throw std::domain_error("evaluate_unistep: empty split");

    SeededRng root(opt.seed);
    std::vector<std::vector<Vec>> all_preds, all_truth;
    std::vector<IntervalBounds> all_bounds;
    double dist_sum = 0.0;
    const size_t d = ds.series[idx[0]][0].size();

    for (int sid : idx) {
        const std::vector<Vec>& xs = ds.series[sid];
        if (xs.size() < 2) throw std::domain_error("evaluate_unistep: sequence too short");
        SeededRng seq = root.child(static_cast<uint64_t>(sid));
        Filter f(p, opt.particles, opt.lag, seq.child(0));
        f.init(xs[0]);

        PredictiveSamples ps;
        std::vector<Vec> preds, truth, raw;
        for (size_t t = 1; t < xs.size(); ++t) {
            const auto& attends = f.attend();
            const Vec& w = f.weights();
            Vec pred(d, 0.0);
            for (int m = 0; m < opt.particles; ++m) {
                Vec g = observation_mean(attends[m].mu, p.head);
                for (size_t k = 0; k < d; ++k) pred[k] += w[m] * g[k];
            }
            std::vector<Vec> draws =
                sample_predictive(attends, w, p, opt.n_samples, seq.child(1 + t));
            for (Vec& x : draws) x = denorm(x, ds.norm);
            ps.draws.push_back(std::move(draws));
            preds.push_back(denorm(pred, ds.norm));
            truth.push_back(denorm(xs[t], ds.norm));
            f.step(xs[t]);
        }

        all_bounds.push_back(intervals_from_samples(ps, opt.level));
        if (opt.truth_spec) {
            raw.reserve(xs.size());
            for (const Vec& x : xs) raw.push_back(denorm(x, ds.norm));
            dist_sum += dist_mse(ps, synthetic_mode_means(raw, *opt.truth_spec),
                                 synthetic_mode_probs(*opt.truth_spec));
        }
        all_preds.push_back(std::move(preds));
        all_truth.push_back(std::move(truth));
    }

    MetricsReport rep;
    rep.mse = mse(all_preds, all_truth);
    rep.dist_mse = opt.truth_spec ? dist_sum / static_cast<double>(idx.size()) : kNaN;
    rep.coverage = picp_mpiw(all_bounds, all_truth);
    return rep;
}

ForecastReport forecast_dataset(const SeriesDataset& ds, SplitId split, const ModelParams& p,
                                const EvalOptions& opt, int tau_h, int tau_f) {
    check_eval_options(opt);
    if (tau_h < 1) throw std::domain_error("forecast: tau_h must be >= 1");
    if (tau_f < 1) throw std::domain_error("forecast: tau_f must be >= 1");
    const std::vector<int> idx = ds.indices_of(split);
    if (idx.empty()) throw std::domain_error("forecast: empty split");

    SeededRng root(opt.seed);
    ForecastReport rep;
    std::vector<IntervalBounds> scored_bounds;
    std::vector<std::vector<Vec>> scored_truth;
    for (int sid : idx) {
        const std::vector<Vec>& xs = ds.series[sid];
        if (static_cast<size_t>(tau_h) > xs.size())
            throw std::domain_error("forecast: tau_h exceeds the series length");
        SeededRng seq = root.child(static_cast<uint64_t>(sid));
        Filter f(p, opt.particles, opt.lag, seq.child(0));
        f.init(xs[0]);
        for (int t = 1; t < tau_h; ++t) f.step(xs[t]);

        PredictiveSamples ps = multistep_forecast(f.windows(), f.weights(), p, opt.lag, tau_f,
                                                  opt.n_samples, seq.child(1), tau_h + 1);
        for (auto& step : ps.draws)
            for (Vec& x : step) x = denorm(x, ds.norm);
        SequenceForecast sf;
        sf.bounds = intervals_from_samples(ps, opt.level);
        sf.samples = std::move(ps);

        const int future = std::min<int>(tau_f, static_cast<int>(xs.size()) - tau_h);
        if (future > 0) {
            IntervalBounds head;
            head.first_t = sf.bounds.first_t;
            head.lower.assign(sf.bounds.lower.begin(), sf.bounds.lower.begin() + future);
            head.upper.assign(sf.bounds.upper.begin(), sf.bounds.upper.begin() + future);
            std::vector<Vec> truth;
            truth.reserve(future);
            for (int h = 0; h < future; ++h) truth.push_back(denorm(xs[tau_h + h], ds.norm));
            scored_bounds.push_back(std::move(head));
            scored_truth.push_back(std::move(truth));
        }
        rep.ids.push_back(ds.ids[sid]);
        rep.forecasts.push_back(std::move(sf));
    }
    if (!scored_bounds.empty()) rep.coverage = picp_mpiw(scored_bounds, scored_truth);
    return rep;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream out = open_out(path);
    out << "metric,value\n";
    out << "mse," << format_double(report.mse) << '\n';
    if (std::isfinite(report.dist_mse))
        out << "dist_mse," << format_double(report.dist_mse) << '\n';
    out << "picp," << format_double(report.coverage.picp) << '\n';
    out << "mpiw," << format_double(report.coverage.mpiw) << '\n';
    finish(out, path);
}

void write_picp_csv(const std::string& path, const CoverageReport& coverage) {
    std::ofstream out = open_out(path);
    out << "t,picp,n\n";
    for (size_t i = 0; i < coverage.picp_per_timestep.size(); ++i)
        out << coverage.first_t + static_cast<int>(i) << ','
            << format_double(coverage.picp_per_timestep[i]) << ',' << coverage.counts[i]
            << '\n';
    finish(out, path);
}

void write_samples_csv(const std::string& path, const std::vector<std::string>& ids,
                       const std::vector<PredictiveSamples>& samples) {
    if (ids.size() != samples.size())
        throw std::domain_error("write_samples_csv: id/sample count mismatch");
    std::ofstream out = open_out(path);
    out << "series_id,t,draw_id";
    const size_t d = samples.empty() || samples[0].draws.empty() || samples[0].draws[0].empty()
                         ? 0
                         : samples[0].draws[0][0].size();
    for (size_t f = 0; f < d; ++f) out << ",f" << f;
    out << '\n';
    for (size_t i = 0; i < samples.size(); ++i)
        for (size_t t = 0; t < samples[i].draws.size(); ++t)
            for (size_t s = 0; s < samples[i].draws[t].size(); ++s) {
                out << ids[i] << ',' << samples[i].first_t + static_cast<int>(t) << ',' << s;
                for (double v : samples[i].draws[t][s]) out << ',' << format_double(v);
                out << '\n';
            }
    finish(out, path);
}

void write_intervals_csv(const std::string& path, const std::vector<std::string>& ids,
                         const std::vector<IntervalBounds>& bounds) {
    if (ids.size() != bounds.size())
        throw std::domain_error("write_intervals_csv: id/bounds count mismatch");
    std::ofstream out = open_out(path);
    out << "series_id,t,feature,lower,upper\n";
    for (size_t i = 0; i < bounds.size(); ++i)
        for (size_t t = 0; t < bounds[i].lower.size(); ++t)
            for (size_t f = 0; f < bounds[i].lower[t].size(); ++f)
                out << ids[i] << ',' << bounds[i].first_t + static_cast<int>(t) << ',' << f
                    << ',' << format_double(bounds[i].lower[t][f]) << ','
                    << format_double(bounds[i].upper[t][f]) << '\n';
    finish(out, path);
}

}  // namespace smct
