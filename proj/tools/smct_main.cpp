#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smct/dataio.hpp"
#include "smct/evalkit.hpp"
#include "smct/filter.hpp"
#include "smct/model.hpp"
#include "smct/numkit.hpp"
#include "smct/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace smct;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// settings file shared by all subcommands: either flat `key = value` lines
// (# starts a comment) or a single JSON object. Values are kept as strings so
// both formats resolve through one code path; precedence is flag over file
// over built-in default.
class ConfigMap {
  public:
    ConfigMap() = default;

    static ConfigMap load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        const std::string text = ss.str();
        ConfigMap cfg;
        const size_t first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            json doc;
            try {
                doc = json::parse(text);
            } catch (const json::exception& e) {
                throw std::runtime_error("config: " + path + " is not valid JSON: " + e.what());
            }
            if (!doc.is_object()) throw std::runtime_error("config: " + path + " must be a JSON object");
            for (const auto& [key, val] : doc.items()) {
                std::string s;
                if (val.is_string())
                    s = val.get<std::string>();
                else if (val.is_boolean())
                    s = val.get<bool>() ? "true" : "false";
                else if (val.is_number())
                    s = val.dump();
                else
                    throw std::runtime_error("config: key " + key + " must be a scalar");
                cfg.kv_[key] = s;
            }
            return cfg;
        }
        std::istringstream lines(text);
        std::string line;
        int lineno = 0;
        while (std::getline(lines, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config: line " + std::to_string(lineno) +
                                         " is not key=value");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty())
                throw std::runtime_error("config: line " + std::to_string(lineno) +
                                         " has an empty key");
            cfg.kv_[key] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const {
        known_.insert(key);
        return kv_.count(key) > 0;
    }

    std::string str(const std::string& key) const { return kv_.at(key); }

    double num(const std::string& key) const {
        const std::string& s = kv_.at(key);
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size())
            throw std::runtime_error("config: " + key + " has non-numeric value '" + s + "'");
        return v;
    }

    long long integer(const std::string& key) const {
        const std::string& s = kv_.at(key);
        size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size())
            throw std::runtime_error("config: " + key + " has non-integer value '" + s + "'");
        return v;
    }

    // every key present in the file must have been consulted by the active
    // subcommand, so typos and misplaced keys fail loudly
    void reject_unknown() const {
        for (const auto& [key, val] : kv_)
            if (!known_.count(key))
                throw std::runtime_error("config: unknown key '" + key + "' for this command");
    }

  private:
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> known_;
};

bool given(const CLI::App& sub, const char* key) { return sub.count(std::string("--") + key) > 0; }

// cfg.has must run even when the flag wins, so the key still counts as
// recognized for reject_unknown
void pick(const CLI::App& sub, const ConfigMap& cfg, const char* key, double& slot) {
    if (cfg.has(key) && !given(sub, key)) slot = cfg.num(key);
}

void pick(const CLI::App& sub, const ConfigMap& cfg, const char* key, int& slot) {
    if (!cfg.has(key) || given(sub, key)) return;
    const long long v = cfg.integer(key);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw std::runtime_error("config: " + std::string(key) + " is out of range");
    slot = static_cast<int>(v);
}

void pick(const CLI::App& sub, const ConfigMap& cfg, const char* key, long long& slot) {
    if (cfg.has(key) && !given(sub, key)) slot = cfg.integer(key);
}

void pick(const CLI::App& sub, const ConfigMap& cfg, const char* key, std::string& slot) {
    if (cfg.has(key) && !given(sub, key)) slot = cfg.str(key);
}

bool to_onoff(const char* key, const std::string& s) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw std::runtime_error(std::string(key) + " must be on or off, got '" + s + "'");
}

SyntheticModel parse_model(const std::string& s) {
    if (s == "I") return SyntheticModel::kModelI;
    if (s == "II") return SyntheticModel::kModelII;
    throw std::runtime_error("model must be I or II, got '" + s + "'");
}

SplitId parse_split_id(const std::string& s) {
    if (s == "train") return SplitId::kTrain;
    if (s == "val") return SplitId::kVal;
    if (s == "test") return SplitId::kTest;
    throw std::runtime_error("eval-split must be train, val or test, got '" + s + "'");
}

SplitRatios parse_ratios(const std::string& s) {
    std::istringstream ss(s);
    std::string part;
    std::vector<double> vals;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != part.size())
            throw std::runtime_error("split must be three comma-separated numbers, got '" + s +
                                     "'");
        vals.push_back(v);
    }
    if (vals.size() != 3)
        throw std::runtime_error("split must be three comma-separated numbers, got '" + s + "'");
    return SplitRatios{vals[0], vals[1], vals[2]};
}

std::array<bool, kEmSourceCount> parse_em_sources(const std::string& s) {
    std::array<bool, kEmSourceCount> out{};
    if (trim(s) == "none") return out;
    const std::map<std::string, int> names{
        {"q", kEmQ}, {"k", kEmK}, {"v", kEmV}, {"z", kEmZ}, {"obs", kEmObs}};
    std::istringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        auto it = names.find(part);
        if (it == names.end())
            throw std::runtime_error("em-sources must list q, k, v, z, obs (or none), got '" +
                                     part + "'");
        out[it->second] = true;
    }
    return out;
}

// shared by every subcommand
struct Common {
    std::string config_path;
    std::string out_dir = ".";
    long long seed = -1;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "settings file, flat key=value or JSON object");
    sub->add_option("--out", c.out_dir, "output directory (created if missing)");
    sub->add_option("--seed", c.seed, "random seed, required (no wall-clock seeding)");
}

ConfigMap resolve_common(const CLI::App& sub, Common& c) {
    ConfigMap cfg;
    if (given(sub, "config") || !c.config_path.empty()) cfg = ConfigMap::load(c.config_path);
    pick(sub, cfg, "out", c.out_dir);
    pick(sub, cfg, "seed", c.seed);
    return cfg;
}

void finish_common(const ConfigMap& cfg, const Common& c) {
    cfg.reject_unknown();
    if (c.seed < 0) throw std::runtime_error("a nonnegative seed is required (--seed or config)");
    fs::create_directories(c.out_dir);
}

std::string join_path(const std::string& dir, const char* name) {
    return (fs::path(dir) / name).string();
}

void write_manifest(const Common& c, const char* command, json config, json artifacts) {
    config["seed"] = c.seed;
    config["out"] = c.out_dir;
    json m;
    m["command"] = command;
    m["config"] = std::move(config);
    m["artifacts"] = std::move(artifacts);
    m["format_versions"] = {{"checkpoint", 1}, {"dataset_csv", 1}, {"manifest", 1}};
    const std::string path = join_path(c.out_dir, "manifest.json");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << m.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed on " + path);
}

// re-derives split membership, then imposes the checkpoint's normalization so
// the filter sees the same scale the weights were trained on. `--split none`
// assigns every series to the evaluated split (dedicated holdout files).
SeriesDataset prepare_eval_data(const std::string& data_path, const std::string& split,
                                long long split_seed, SplitId eval_split,
                                const NormStats& norm) {
    SeriesDataset ds = load_csv(data_path);
    if (trim(split) == "none")
        ds.split.assign(ds.n_series(), eval_split);
    else
        ds = split_normalize(std::move(ds), parse_ratios(split),
                             static_cast<uint64_t>(split_seed), false);
    if (norm.active()) {
        for (auto& xs : ds.series)
            for (auto& x : xs) x = apply_norm(x, norm);
        ds.norm = norm;
    }
    return ds;
}

// ---- generate ---------------------------------------------------------------

struct GenArgs {
    Common common;
    std::string model = "I";
    double alpha = 0.0, beta = 0.0, p_mix = 0.0, sigma2 = 0.0;
    int n = 0, t_len = 0;
};

void add_generate(CLI::App* sub, GenArgs& a) {
    add_common(sub, a.common);
    sub->add_option("--model", a.model, "synthetic generator, I or II");
    sub->add_option("--alpha", a.alpha, "autoregressive coefficient");
    sub->add_option("--beta", a.beta, "second regime coefficient (model II)");
    sub->add_option("--p-mix", a.p_mix, "probability of the alpha regime (model II)");
    sub->add_option("--sigma2", a.sigma2, "innovation variance");
    sub->add_option("--n", a.n, "number of series");
    sub->add_option("--T", a.t_len, "series length");
}

int cmd_generate(const CLI::App& sub, GenArgs& a) {
    ConfigMap cfg = resolve_common(sub, a.common);
    pick(sub, cfg, "model", a.model);
    // spec defaults depend on the resolved model, so flags land in their own
    // slots first and are copied over the per-model defaults here
    SyntheticSpec spec = default_spec(parse_model(a.model));
    pick(sub, cfg, "alpha", spec.alpha);
    pick(sub, cfg, "beta", spec.beta);
    pick(sub, cfg, "p-mix", spec.p);
    pick(sub, cfg, "sigma2", spec.sigma2);
    pick(sub, cfg, "n", spec.n_series);
    pick(sub, cfg, "T", spec.t_len);
    if (given(sub, "alpha")) spec.alpha = a.alpha;
    if (given(sub, "beta")) spec.beta = a.beta;
    if (given(sub, "p-mix")) spec.p = a.p_mix;
    if (given(sub, "sigma2")) spec.sigma2 = a.sigma2;
    if (given(sub, "n")) spec.n_series = a.n;
    if (given(sub, "T")) spec.t_len = a.t_len;
    finish_common(cfg, a.common);
    spec.seed = static_cast<uint64_t>(a.common.seed);

    SeriesDataset ds =
        spec.model == SyntheticModel::kModelI ? gen_model_I(spec) : gen_model_II(spec);
    save_csv(ds, join_path(a.common.out_dir, "data.csv"));

    json conf{{"model", a.model},       {"alpha", spec.alpha}, {"beta", spec.beta},
              {"p-mix", spec.p},        {"sigma2", spec.sigma2}, {"n", spec.n_series},
              {"T", spec.t_len}};
    write_manifest(a.common, "generate", std::move(conf), json::array({"data.csv"}));
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string data;
    std::string split = "0.7,0.15,0.15";
    long long split_seed = 0;
    std::string normalize = "on";
    int rank = 32, d_ff = 32;
    double init_var = 0.5;
    int particles = 10, lag = 0, epochs = 50, batch = 32;
    double lr = 0.001;
    std::string schedule = "constant";
    int warmup_steps = 4000;
    double em_exponent = 0.6, variance_floor = 1e-6;
    std::string em_sources = "q,k,v,z,obs";
    std::string early_stopping = "off";
    int patience = 10;
    int threads = 1;
};

void add_train(CLI::App* sub, TrainArgs& a) {
    add_common(sub, a.common);
    sub->add_option("--data", a.data, "input series CSV");
    sub->add_option("--split", a.split, "train,val,test ratios");
    sub->add_option("--split-seed", a.split_seed, "seed for the split shuffle");
    sub->add_option("--normalize", a.normalize, "per-feature standardization, on or off");
    sub->add_option("--rank", a.rank, "latent depth r");
    sub->add_option("--d-ff", a.d_ff, "feed-forward width");
    sub->add_option("--init-var", a.init_var, "initial value for all noise variances");
    sub->add_option("--particles", a.particles, "particle count M");
    sub->add_option("--lag", a.lag, "attention window, 0 keeps full history");
    sub->add_option("--epochs", a.epochs, "training epochs");
    sub->add_option("--batch", a.batch, "sequences per gradient step");
    sub->add_option("--lr", a.lr, "learning rate (warmup peak)");
    sub->add_option("--lr-schedule", a.schedule, "constant or warmup");
    sub->add_option("--warmup-steps", a.warmup_steps, "warmup peak step");
    sub->add_option("--em-exponent", a.em_exponent, "EM step-size exponent, must exceed 0.5");
    sub->add_option("--variance-floor", a.variance_floor, "lower bound for updated variances");
    sub->add_option("--em-sources", a.em_sources,
                    "comma list of q,k,v,z,obs to update by EM, or none");
    sub->add_option("--early-stopping", a.early_stopping, "stop on stale validation, on or off");
    sub->add_option("--patience", a.patience, "epochs without improvement before stopping");
    sub->add_option("--threads", a.threads, "worker threads (env SMCT_THREADS as fallback)");
}

void resolve_threads(const CLI::App& sub, const ConfigMap& cfg, int& threads) {
    const bool in_cfg = cfg.has("threads");
    if (given(sub, "threads")) return;
    if (in_cfg) {
        threads = static_cast<int>(cfg.integer("threads"));
        return;
    }
    const char* env = std::getenv("SMCT_THREADS");
    if (env == nullptr) return;
    const std::string s(env);
    size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || v < 1)
        throw std::runtime_error("SMCT_THREADS must be a positive integer, got '" + s + "'");
    threads = v;
}

int cmd_train(const CLI::App& sub, TrainArgs& a) {
    ConfigMap cfg = resolve_common(sub, a.common);
    pick(sub, cfg, "data", a.data);
    pick(sub, cfg, "split", a.split);
    pick(sub, cfg, "split-seed", a.split_seed);
    pick(sub, cfg, "normalize", a.normalize);
    pick(sub, cfg, "rank", a.rank);
    pick(sub, cfg, "d-ff", a.d_ff);
    pick(sub, cfg, "init-var", a.init_var);
    pick(sub, cfg, "particles", a.particles);
    pick(sub, cfg, "lag", a.lag);
    pick(sub, cfg, "epochs", a.epochs);
    pick(sub, cfg, "batch", a.batch);
    pick(sub, cfg, "lr", a.lr);
    pick(sub, cfg, "lr-schedule", a.schedule);
    pick(sub, cfg, "warmup-steps", a.warmup_steps);
    pick(sub, cfg, "em-exponent", a.em_exponent);
    pick(sub, cfg, "variance-floor", a.variance_floor);
    pick(sub, cfg, "em-sources", a.em_sources);
    pick(sub, cfg, "early-stopping", a.early_stopping);
    pick(sub, cfg, "patience", a.patience);
    resolve_threads(sub, cfg, a.threads);
    finish_common(cfg, a.common);
    if (a.data.empty()) throw std::runtime_error("--data is required");
    if (a.init_var <= 0.0) throw std::runtime_error("--init-var must be positive");

    TrainConfig tc;
    tc.particles = a.particles;
    tc.lag = a.lag;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.learning_rate = a.lr;
    if (a.schedule == "constant")
        tc.schedule = LrSchedule::kConstant;
    else if (a.schedule == "warmup")
        tc.schedule = LrSchedule::kWarmup;
    else
        throw std::runtime_error("lr-schedule must be constant or warmup, got '" + a.schedule +
                                 "'");
    tc.warmup_steps = a.warmup_steps;
    tc.em_exponent = a.em_exponent;
    tc.variance_floor = a.variance_floor;
    tc.em_update = parse_em_sources(a.em_sources);
    tc.early_stopping = to_onoff("early-stopping", a.early_stopping);
    tc.patience = a.patience;
    tc.threads = a.threads;
    tc.seed = static_cast<uint64_t>(a.common.seed);
    validate(tc);

    SeriesDataset ds = split_normalize(load_csv(a.data), parse_ratios(a.split),
                                       static_cast<uint64_t>(a.split_seed),
                                       to_onoff("normalize", a.normalize));
    ModelParams params =
        init_params(ModelDims{a.rank, ds.d_obs(), ds.d_obs(), a.d_ff},
                    SeededRng(static_cast<uint64_t>(a.common.seed)));
    params.noise = NoiseScales{a.init_var, a.init_var, a.init_var, a.init_var, a.init_var};

    FitResult res = fit(ds, params, tc);
    write_train_log(join_path(a.common.out_dir, "train_log.csv"), res.log);
    save_checkpoint(join_path(a.common.out_dir, "checkpoint.json"),
                    Checkpoint{res.params, res.opt, ds.norm});

    json conf{{"data", a.data},
              {"split", a.split},
              {"split-seed", a.split_seed},
              {"normalize", a.normalize},
              {"rank", a.rank},
              {"d-ff", a.d_ff},
              {"init-var", a.init_var},
              {"particles", a.particles},
              {"lag", a.lag},
              {"epochs", a.epochs},
              {"batch", a.batch},
              {"lr", a.lr},
              {"lr-schedule", a.schedule},
              {"warmup-steps", a.warmup_steps},
              {"em-exponent", a.em_exponent},
              {"variance-floor", a.variance_floor},
              {"em-sources", a.em_sources},
              {"early-stopping", a.early_stopping},
              {"patience", a.patience},
              {"threads", a.threads}};
    write_manifest(a.common, "train", std::move(conf),
                   json::array({"checkpoint.json", "train_log.csv"}));
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string data, checkpoint;
    std::string eval_split = "test";
    std::string split = "0.7,0.15,0.15";
    long long split_seed = 0;
    int particles = 10, lag = 0, n_samples = 1000;
    double level = 0.95;
    std::string truth_model;
    double alpha = 0.0, beta = 0.0, p_mix = 0.0, sigma2 = 0.0;
};

void add_eval(CLI::App* sub, EvalArgs& a) {
    add_common(sub, a.common);
    sub->add_option("--data", a.data, "input series CSV");
    sub->add_option("--checkpoint", a.checkpoint, "trained model checkpoint");
    sub->add_option("--eval-split", a.eval_split, "split to score: train, val or test");
    sub->add_option("--split", a.split, "train,val,test ratios, or none for the whole file");
    sub->add_option("--split-seed", a.split_seed, "seed for the split shuffle");
    sub->add_option("--particles", a.particles, "particle count M");
    sub->add_option("--lag", a.lag, "attention window, 0 keeps full history");
    sub->add_option("--n-samples", a.n_samples, "predictive draws per step");
    sub->add_option("--level", a.level, "central interval level, e.g. 0.95");
    sub->add_option("--truth-model", a.truth_model,
                    "I or II: score dist-mse against this generator");
    sub->add_option("--alpha", a.alpha, "truth generator coefficient");
    sub->add_option("--beta", a.beta, "truth second regime coefficient");
    sub->add_option("--p-mix", a.p_mix, "truth regime probability");
    sub->add_option("--sigma2", a.sigma2, "truth innovation variance");
}

SyntheticSpec resolve_truth(const CLI::App& sub, const ConfigMap& cfg, EvalArgs& a,
                            bool& enabled) {
    pick(sub, cfg, "truth-model", a.truth_model);
    enabled = !a.truth_model.empty();
    if (!enabled) {
        for (const char* key : {"alpha", "beta", "p-mix", "sigma2"})
            if (given(sub, key) || cfg.has(key))
                throw std::runtime_error(std::string("--") + key + " requires --truth-model");
        return SyntheticSpec{};
    }
    SyntheticSpec spec = default_spec(parse_model(a.truth_model));
    pick(sub, cfg, "alpha", spec.alpha);
    pick(sub, cfg, "beta", spec.beta);
    pick(sub, cfg, "p-mix", spec.p);
    pick(sub, cfg, "sigma2", spec.sigma2);
    if (given(sub, "alpha")) spec.alpha = a.alpha;
    if (given(sub, "beta")) spec.beta = a.beta;
    if (given(sub, "p-mix")) spec.p = a.p_mix;
    if (given(sub, "sigma2")) spec.sigma2 = a.sigma2;
    return spec;
}

int cmd_eval(const CLI::App& sub, EvalArgs& a) {
    ConfigMap cfg = resolve_common(sub, a.common);
    pick(sub, cfg, "data", a.data);
    pick(sub, cfg, "checkpoint", a.checkpoint);
    pick(sub, cfg, "eval-split", a.eval_split);
    pick(sub, cfg, "split", a.split);
    pick(sub, cfg, "split-seed", a.split_seed);
    pick(sub, cfg, "particles", a.particles);
    pick(sub, cfg, "lag", a.lag);
    pick(sub, cfg, "n-samples", a.n_samples);
    pick(sub, cfg, "level", a.level);
    bool with_truth = false;
    SyntheticSpec truth = resolve_truth(sub, cfg, a, with_truth);
    finish_common(cfg, a.common);
    if (a.data.empty()) throw std::runtime_error("--data is required");
    if (a.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");

    Checkpoint ck = load_checkpoint(a.checkpoint);
    SplitId split_id = parse_split_id(a.eval_split);
    SeriesDataset ds = prepare_eval_data(a.data, a.split, a.split_seed, split_id, ck.norm);

    EvalOptions opt;
    opt.particles = a.particles;
    opt.lag = a.lag;
    opt.n_samples = a.n_samples;
    opt.level = a.level;
    opt.seed = static_cast<uint64_t>(a.common.seed);
    opt.truth_spec = with_truth ? &truth : nullptr;

    MetricsReport rep = evaluate_unistep(ds, split_id, ck.params, opt);
    write_metrics_csv(join_path(a.common.out_dir, "metrics.csv"), rep);
    write_picp_csv(join_path(a.common.out_dir, "picp_by_t.csv"), rep.coverage);

    json conf{{"data", a.data},
              {"checkpoint", a.checkpoint},
              {"eval-split", a.eval_split},
              {"split", a.split},
              {"split-seed", a.split_seed},
              {"particles", a.particles},
              {"lag", a.lag},
              {"n-samples", a.n_samples},
              {"level", a.level},
              {"truth-model", a.truth_model}};
    if (with_truth) {
        conf["alpha"] = truth.alpha;
        conf["beta"] = truth.beta;
        conf["p-mix"] = truth.p;
        conf["sigma2"] = truth.sigma2;
    }
    write_manifest(a.common, "eval", std::move(conf),
                   json::array({"metrics.csv", "picp_by_t.csv"}));
    return 0;
}

// ---- forecast ---------------------------------------------------------------

struct ForecastArgs {
    Common common;
    std::string data, checkpoint;
    std::string eval_split = "test";
    std::string split = "0.7,0.15,0.15";
    long long split_seed = 0;
    int particles = 10, lag = 0, n_samples = 1000;
    double level = 0.95;
    int tau_h = 0, tau_f = 0;
};

void add_forecast(CLI::App* sub, ForecastArgs& a) {
    add_common(sub, a.common);
    sub->add_option("--data", a.data, "input series CSV");
    sub->add_option("--checkpoint", a.checkpoint, "trained model checkpoint");
    sub->add_option("--eval-split", a.eval_split, "split to forecast: train, val or test");
    sub->add_option("--split", a.split, "train,val,test ratios, or none for the whole file");
    sub->add_option("--split-seed", a.split_seed, "seed for the split shuffle");
    sub->add_option("--particles", a.particles, "particle count M");
    sub->add_option("--lag", a.lag, "attention window, 0 keeps full history");
    sub->add_option("--n-samples", a.n_samples, "sample paths per series");
    sub->add_option("--level", a.level, "central interval level, e.g. 0.95");
    sub->add_option("--tau-h", a.tau_h, "observed prefix length fed to the filter");
    sub->add_option("--tau-f", a.tau_f, "forecast horizon");
}

int cmd_forecast(const CLI::App& sub, ForecastArgs& a) {
    ConfigMap cfg = resolve_common(sub, a.common);
    pick(sub, cfg, "data", a.data);
    pick(sub, cfg, "checkpoint", a.checkpoint);
    pick(sub, cfg, "eval-split", a.eval_split);
    pick(sub, cfg, "split", a.split);
    pick(sub, cfg, "split-seed", a.split_seed);
    pick(sub, cfg, "particles", a.particles);
    pick(sub, cfg, "lag", a.lag);
    pick(sub, cfg, "n-samples", a.n_samples);
    pick(sub, cfg, "level", a.level);
    pick(sub, cfg, "tau-h", a.tau_h);
    pick(sub, cfg, "tau-f", a.tau_f);
    finish_common(cfg, a.common);
    if (a.data.empty()) throw std::runtime_error("--data is required");
    if (a.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
    if (a.tau_h < 1) throw std::runtime_error("--tau-h must be at least 1");
    if (a.tau_f < 1) throw std::runtime_error("--tau-f must be at least 1");

    Checkpoint ck = load_checkpoint(a.checkpoint);
    SplitId split_id = parse_split_id(a.eval_split);
    SeriesDataset ds = prepare_eval_data(a.data, a.split, a.split_seed, split_id, ck.norm);

    EvalOptions opt;
    opt.particles = a.particles;
    opt.lag = a.lag;
    opt.n_samples = a.n_samples;
    opt.level = a.level;
    opt.seed = static_cast<uint64_t>(a.common.seed);

    ForecastReport rep = forecast_dataset(ds, split_id, ck.params, opt, a.tau_h, a.tau_f);
    std::vector<PredictiveSamples> samples;
    std::vector<IntervalBounds> bounds;
    samples.reserve(rep.forecasts.size());
    bounds.reserve(rep.forecasts.size());
    for (const SequenceForecast& sf : rep.forecasts) {
        samples.push_back(sf.samples);
        bounds.push_back(sf.bounds);
    }
    write_samples_csv(join_path(a.common.out_dir, "forecast_samples.csv"), rep.ids, samples);
    write_intervals_csv(join_path(a.common.out_dir, "forecast_intervals.csv"), rep.ids, bounds);
    json artifacts = json::array({"forecast_samples.csv", "forecast_intervals.csv"});
    if (!rep.coverage.empty()) {
        write_picp_csv(join_path(a.common.out_dir, "forecast_picp_by_t.csv"), rep.coverage);
        const std::string mpath = join_path(a.common.out_dir, "forecast_metrics.csv");
        std::ofstream mout(mpath);
        if (!mout) throw std::runtime_error("cannot open " + mpath + " for writing");
        mout << "metric,value\n";
        mout << "picp," << format_double(rep.coverage.picp) << "\n";
        mout << "mpiw," << format_double(rep.coverage.mpiw) << "\n";
        if (!mout) throw std::runtime_error("write failed on " + mpath);
        artifacts.push_back("forecast_picp_by_t.csv");
        artifacts.push_back("forecast_metrics.csv");
    }

    json conf{{"data", a.data},
              {"checkpoint", a.checkpoint},
              {"eval-split", a.eval_split},
              {"split", a.split},
              {"split-seed", a.split_seed},
              {"particles", a.particles},
              {"lag", a.lag},
              {"n-samples", a.n_samples},
              {"level", a.level},
              {"tau-h", a.tau_h},
              {"tau-f", a.tau_f}};
    write_manifest(a.common, "forecast", std::move(conf), std::move(artifacts));
    return 0;
}

// ---- diagnose ---------------------------------------------------------------

struct DiagnoseArgs {
    Common common;
    std::string data, checkpoint;
    std::string eval_split = "all";
    std::string split = "0.7,0.15,0.15";
    long long split_seed = 0;
    int rank = 32, d_ff = 32;
    int particles = 10, lag = 0, max_lag = 0;
};

void add_diagnose(CLI::App* sub, DiagnoseArgs& a) {
    add_common(sub, a.common);
    sub->add_option("--data", a.data, "input series CSV");
    sub->add_option("--checkpoint", a.checkpoint,
                    "trained model checkpoint (omit to probe a fresh model)");
    sub->add_option("--eval-split", a.eval_split, "series to probe: all, train, val or test");
    sub->add_option("--split", a.split, "train,val,test ratios");
    sub->add_option("--split-seed", a.split_seed, "seed for the split shuffle");
    sub->add_option("--rank", a.rank, "latent depth r when no checkpoint is given");
    sub->add_option("--d-ff", a.d_ff, "feed-forward width when no checkpoint is given");
    sub->add_option("--particles", a.particles, "particle count M");
    sub->add_option("--lag", a.lag, "attention window, 0 keeps full history");
    sub->add_option("--max-lag", a.max_lag, "deepest genealogy lag, 0 probes whole series");
}

int cmd_diagnose(const CLI::App& sub, DiagnoseArgs& a) {
    ConfigMap cfg = resolve_common(sub, a.common);
    pick(sub, cfg, "data", a.data);
    pick(sub, cfg, "checkpoint", a.checkpoint);
    pick(sub, cfg, "eval-split", a.eval_split);
    pick(sub, cfg, "split", a.split);
    pick(sub, cfg, "split-seed", a.split_seed);
    pick(sub, cfg, "rank", a.rank);
    pick(sub, cfg, "d-ff", a.d_ff);
    pick(sub, cfg, "particles", a.particles);
    pick(sub, cfg, "lag", a.lag);
    pick(sub, cfg, "max-lag", a.max_lag);
    finish_common(cfg, a.common);
    if (a.data.empty()) throw std::runtime_error("--data is required");

    SeriesDataset ds = load_csv(a.data);
    ModelParams params;
    NormStats norm;
    if (!a.checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(a.checkpoint);
        params = std::move(ck.params);
        norm = ck.norm;
    } else {
        params = init_params(ModelDims{a.rank, ds.d_obs(), ds.d_obs(), a.d_ff},
                             SeededRng(static_cast<uint64_t>(a.common.seed)));
    }

    std::vector<int> chosen;
    if (a.eval_split == "all") {
        chosen.resize(ds.n_series());
        std::iota(chosen.begin(), chosen.end(), 0);
    } else {
        ds = split_normalize(std::move(ds), parse_ratios(a.split),
                             static_cast<uint64_t>(a.split_seed), false);
        chosen = ds.indices_of(parse_split_id(a.eval_split));
    }
    if (norm.active()) {
        for (auto& xs : ds.series)
            for (auto& x : xs) x = apply_norm(x, norm);
        ds.norm = norm;
    }
    if (chosen.empty()) throw std::runtime_error("no series selected");

    int shortest = std::numeric_limits<int>::max();
    for (int i : chosen) shortest = std::min(shortest, static_cast<int>(ds.series[i].size()));
    int max_lag = a.max_lag <= 0 ? shortest : a.max_lag;
    if (max_lag > shortest)
        throw std::runtime_error("--max-lag exceeds the shortest selected series (" +
                                 std::to_string(shortest) + ")");

    SeededRng root(static_cast<uint64_t>(a.common.seed));
    std::vector<AncestryReport> runs;
    runs.reserve(chosen.size());
    for (int i : chosen) {
        FilterResult fr = filter_sequence(ds.series[i], params, a.particles, a.lag,
                                          root.child(static_cast<uint64_t>(i)));
        runs.push_back(unique_ancestors(fr.genealogy, a.particles, max_lag));
    }
    write_ancestry_csv(join_path(a.common.out_dir, "ancestry.csv"), summarize_ancestry(runs));

    json conf{{"data", a.data},       {"checkpoint", a.checkpoint},
              {"eval-split", a.eval_split}, {"split", a.split},
              {"split-seed", a.split_seed}, {"rank", a.rank},
              {"d-ff", a.d_ff},       {"particles", a.particles},
              {"lag", a.lag},         {"max-lag", max_lag}};
    write_manifest(a.common, "diagnose", std::move(conf), json::array({"ancestry.csv"}));
    return 0;
}

template <typename Fn>
int guarded(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        std::cerr << "smct " << name << ": " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-attention particle filter for time series"};
    app.require_subcommand(1);

    GenArgs gen;
    TrainArgs train;
    EvalArgs eval;
    ForecastArgs forecast;
    DiagnoseArgs diagnose;

    CLI::App* g = app.add_subcommand("generate", "write a synthetic dataset CSV");
    add_generate(g, gen);
    CLI::App* t = app.add_subcommand("train", "fit a model and write checkpoint + log");
    add_train(t, train);
    CLI::App* e = app.add_subcommand("eval", "one-step-ahead metrics on a split");
    add_eval(e, eval);
    CLI::App* f = app.add_subcommand("forecast", "multistep sample paths and intervals");
    add_forecast(f, forecast);
    CLI::App* d = app.add_subcommand("diagnose", "genealogy collapse curve");
    add_diagnose(d, diagnose);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    if (g->parsed()) return guarded("generate", [&] { return cmd_generate(*g, gen); });
    if (t->parsed()) return guarded("train", [&] { return cmd_train(*t, train); });
    if (e->parsed()) return guarded("eval", [&] { return cmd_eval(*e, eval); });
    if (f->parsed()) return guarded("forecast", [&] { return cmd_forecast(*f, forecast); });
    return guarded("diagnose", [&] { return cmd_diagnose(*d, diagnose); });
}
