#include "smct/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace smct {

Vec apply_norm(const Vec& x, const NormStats& n) {
    if (!n.active()) return x;
    if (x.size() != n.mean.size()) throw std::domain_error("apply_norm: dimension mismatch");
    Vec y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - n.mean[i]) / n.stddev[i];
    return y;
}

Vec invert_norm(const Vec& x, const NormStats& n) {
    if (!n.active()) return x;
    if (x.size() != n.mean.size()) throw std::domain_error("invert_norm: dimension mismatch");
    Vec y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * n.stddev[i] + n.mean[i];
    return y;
}

bool SeriesDataset::uniform_length() const {
    for (const auto& s : series)
        if (s.size() != series[0].size()) return false;
    return true;
}

int SeriesDataset::t_len() const {
    if (series.empty()) throw std::domain_error("t_len: empty dataset");
    if (!uniform_length()) throw std::domain_error("t_len: ragged series lengths");
    return static_cast<int>(series[0].size());
}

int SeriesDataset::d_obs() const {
    if (series.empty() || series[0].empty()) throw std::domain_error("d_obs: empty dataset");
    return static_cast<int>(series[0][0].size());
}

std::vector<int> SeriesDataset::indices_of(SplitId s) const {
    std::vector<int> out;
    for (size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(static_cast<int>(i));
    return out;
}

SyntheticSpec default_spec(SyntheticModel model) {
    SyntheticSpec s;
    s.model = model;
    if (model == SyntheticModel::kModelII) {
        s.alpha = 0.9;
        s.beta = 0.54;
        s.p = 0.7;
        s.sigma2 = 0.3;
    }
    return s;
}

namespace {

void validate_spec(const SyntheticSpec& spec, SyntheticModel expected) {
    if (spec.model != expected) throw std::domain_error("synthetic spec: wrong model id");
    if (!(spec.sigma2 > 0.0)) throw std::domain_error("synthetic spec: sigma2 must be > 0");
    if (spec.t_len < 2) throw std::domain_error("synthetic spec: need at least 2 steps");
    if (spec.n_series < 1) throw std::domain_error("synthetic spec: need at least 1 series");
    if (expected == SyntheticModel::kModelII && !(spec.p >= 0.0 && spec.p <= 1.0))
        throw std::domain_error("synthetic spec: p must be in [0, 1]");
}

// One sub-stream per (series, step, source) so the two models share their
// eps draws exactly and the regime stream never perturbs them.
SeriesDataset gen_autoregressive(const SyntheticSpec& spec, bool regime_switch) {
    SeriesDataset ds;
    ds.ids.reserve(spec.n_series);
    ds.series.reserve(spec.n_series);
    SeededRng root(spec.seed);
    const double sigma = std::sqrt(spec.sigma2);
    for (int s = 0; s < spec.n_series; ++s) {
        SeededRng sr = root.child(static_cast<uint64_t>(s));
        std::vector<Vec> xs(spec.t_len);
        SeededRng init = sr.child(0);
        double x = init.next_gaussian();
        xs[0] = Vec{x};
        for (int t = 1; t < spec.t_len; ++t) {
            SeededRng st = sr.child(static_cast<uint64_t>(t));
            SeededRng eps_stream = st.child(0);
            double coef = spec.alpha;
            if (regime_switch) {
                SeededRng u_stream = st.child(1);
                if (!(u_stream.next_uniform() < spec.p)) coef = spec.beta;
            }
            x = coef * x + sigma * eps_stream.next_gaussian();
            xs[t] = Vec{x};
        }
        ds.series.push_back(std::move(xs));
        ds.ids.push_back(std::to_string(s));
    }
    return ds;
}

}  // namespace

SeriesDataset gen_model_I(const SyntheticSpec& spec) {
    validate_spec(spec, SyntheticModel::kModelI);
    return gen_autoregressive(spec, false);
}

SeriesDataset gen_model_II(const SyntheticSpec& spec) {
    validate_spec(spec, SyntheticModel::kModelII);
    return gen_autoregressive(spec, true);
}

namespace {

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r')
        cells.back().pop_back();
    return cells;
}

bool is_missing(const std::string& cell) {
    if (cell.empty()) return true;
    std::string low;
    for (char c : cell)
        low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return low == "na" || low == "nan";
}

[[noreturn]] void parse_fail(const std::string& path, int line, int col, const std::string& what) {
    std::ostringstream msg;
    msg << path << ": line " << line << ", column " << col << ": " << what;
    throw std::runtime_error(msg.str());
}

double parse_double(const std::string& cell, const std::string& path, int line, int col) {
    double v = 0.0;
    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        parse_fail(path, line, col, "cannot parse '" + cell + "' as a number");
    return v;
}

long parse_long(const std::string& cell, const std::string& path, int line, int col) {
    long v = 0;
    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        parse_fail(path, line, col, "cannot parse '" + cell + "' as an integer");
    return v;
}

}  // namespace

SeriesDataset load_csv(const std::string& path, LoadReport* report) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": line 1: empty file");
    std::vector<std::string> header = split_cells(line);
    if (header.size() < 3 || header[0] != "series_id" || header[1] != "t")
        throw std::runtime_error(path + ": line 1: header must be series_id,t,f0,...");
    const size_t d = header.size() - 2;

    SeriesDataset ds;
    int dropped = 0;
    int lineno = 1;
    long prev_t = 0;
    bool have_series = false;
    std::vector<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> cells = split_cells(line);
        if (cells.size() != d + 2) {
            std::ostringstream msg;
            msg << path << ": line " << lineno << ": expected " << (d + 2) << " cells, got "
                << cells.size();
            throw std::runtime_error(msg.str());
        }
        const std::string& id = cells[0];
        if (id.empty()) parse_fail(path, lineno, 1, "empty series id");
        long t = parse_long(cells[1], path, lineno, 2);

        bool missing = false;
        Vec row(d);
        for (size_t j = 0; j < d; ++j) {
            if (is_missing(cells[2 + j])) {
                missing = true;
                break;
            }
            row[j] = parse_double(cells[2 + j], path, lineno, static_cast<int>(3 + j));
        }

        if (!have_series || ds.ids.back() != id) {
            // new series; an id may not reappear after another id started
            for (const auto& old : seen_ids)
                if (old == id)
                    parse_fail(path, lineno, 1, "series '" + id + "' is not contiguous");
            seen_ids.push_back(id);
            ds.ids.push_back(id);
            ds.series.emplace_back();
            have_series = true;
        } else if (t <= prev_t) {
            parse_fail(path, lineno, 2, "t must be strictly increasing within a series");
        }
        prev_t = t;
        if (missing) {
            ++dropped;
            continue;
        }
        ds.series.back().push_back(std::move(row));
    }
    // drop series that lost every row
    for (size_t i = ds.series.size(); i-- > 0;) {
        if (ds.series[i].empty()) {
            ds.series.erase(ds.series.begin() + static_cast<long>(i));
            ds.ids.erase(ds.ids.begin() + static_cast<long>(i));
        }
    }
    if (report) report->dropped_rows = dropped;
    return ds;
}

void save_csv(const SeriesDataset& ds, const std::string& path) {
    if (ds.series.empty()) throw std::domain_error("save_csv: empty dataset");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const size_t d = ds.series[0][0].size();
    out << "series_id,t";
    for (size_t j = 0; j < d; ++j) out << ",f" << j;
    out << '\n';
    for (size_t s = 0; s < ds.series.size(); ++s) {
        for (size_t t = 0; t < ds.series[s].size(); ++t) {
            out << ds.ids[s] << ',' << t;
            for (double v : ds.series[s][t]) out << ',' << format_double(v);
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

SeriesDataset window_series(const SeriesDataset& ds, int length, int stride) {
    if (length < 2) throw std::domain_error("window_series: length must be >= 2");
    if (stride < 1) throw std::domain_error("window_series: stride must be >= 1");
    SeriesDataset out;
    for (size_t s = 0; s < ds.series.size(); ++s) {
        const auto& xs = ds.series[s];
        int w = 0;
        for (size_t start = 0; start + length <= xs.size(); start += stride, ++w) {
            out.ids.push_back(ds.ids[s] + "#" + std::to_string(w));
            out.series.emplace_back(xs.begin() + static_cast<long>(start),
                                    xs.begin() + static_cast<long>(start) + length);
        }
    }
    if (out.series.empty()) throw std::domain_error("window_series: no window fits any series");
    return out;
}

SeriesDataset split_normalize(SeriesDataset ds, const SplitRatios& ratios, uint64_t seed,
                              bool normalize) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("split ratios must sum to 1");
    const int n = ds.n_series();
    if (n < 3) throw std::domain_error("split: need at least 3 series");
    const int t_len = ds.t_len();  // also enforces uniform lengths
    (void)t_len;
    const int n_train = static_cast<int>(std::floor(n * ratios.train));
    const int n_val = static_cast<int>(std::floor(n * ratios.val));
    const int n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw std::domain_error("split: every split needs at least 1 series");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    SeededRng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
        std::swap(order[i], order[j]);
    }
    ds.split.assign(n, SplitId::kTest);
    for (int i = 0; i < n_train; ++i) ds.split[order[i]] = SplitId::kTrain;
    for (int i = n_train; i < n_train + n_val; ++i) ds.split[order[i]] = SplitId::kVal;

    if (!normalize) {
        ds.norm = NormStats{};
        return ds;
    }

    const int d = ds.d_obs();
    Vec mean(d, 0.0), sq(d, 0.0);
    long rows = 0;
    for (int s = 0; s < n; ++s) {
        if (ds.split[s] != SplitId::kTrain) continue;
        for (const Vec& x : ds.series[s]) {
            for (int j = 0; j < d; ++j) mean[j] += x[j];
            ++rows;
        }
    }
    for (int j = 0; j < d; ++j) mean[j] /= static_cast<double>(rows);
    for (int s = 0; s < n; ++s) {
        if (ds.split[s] != SplitId::kTrain) continue;
        for (const Vec& x : ds.series[s])
            for (int j = 0; j < d; ++j) sq[j] += (x[j] - mean[j]) * (x[j] - mean[j]);
    }
    Vec stddev(d);
    for (int j = 0; j < d; ++j) {
        stddev[j] = std::sqrt(sq[j] / static_cast<double>(rows));
        if (!(stddev[j] > 1e-12))
            throw std::domain_error("normalize: feature " + std::to_string(j) +
                                    " has zero variance on the train split");
    }
    ds.norm.mean = std::move(mean);
    ds.norm.stddev = std::move(stddev);
    for (auto& series : ds.series)
        for (Vec& x : series) x = apply_norm(x, ds.norm);
    return ds;
}

}  // namespace smct
