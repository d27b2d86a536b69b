#include "smct/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace smct {

namespace {
void check_same_size(const Vec& a, const Vec& b, const char* op) {
    if (a.size() != b.size()) throw std::domain_error(std::string(op) + ": size mismatch");
}
}  // namespace

NodeRef Tape::constant(Vec v) {
    Node n;
    n.op = Op::Const;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeRef Tape::param(int id, std::span<const double> values, int rows, int cols) {
    if (id < 0) throw std::domain_error("param: negative id");
    for (auto& [pid, idx] : param_leaves_)
        if (pid == id) return NodeRef{idx};
    if (static_cast<size_t>(rows) * cols != values.size())
        throw std::domain_error("param: rows*cols != values");
    Node n;
    n.op = Op::Param;
    n.value.assign(values.begin(), values.end());
    n.param_id = id;
    n.rows = rows;
    n.cols = cols;
    NodeRef r = push(std::move(n));
    param_leaves_.emplace_back(id, r.idx);
    return r;
}

NodeRef Tape::add(NodeRef a, NodeRef b) {
    check_same_size(v(a), v(b), "add");
    Node n;
    n.op = Op::Add;
    n.parents = {a.idx, b.idx};
    n.value.resize(v(a).size());
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = v(a)[i] + v(b)[i];
    return push(std::move(n));
}

NodeRef Tape::sub(NodeRef a, NodeRef b) {
    check_same_size(v(a), v(b), "sub");
    Node n;
    n.op = Op::Sub;
    n.parents = {a.idx, b.idx};
    n.value.resize(v(a).size());
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = v(a)[i] - v(b)[i];
    return push(std::move(n));
}

NodeRef Tape::scale(NodeRef a, double c) {
    Node n;
    n.op = Op::Scale;
    n.parents = {a.idx};
    n.aux = {c};
    n.value.resize(v(a).size());
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = c * v(a)[i];
    return push(std::move(n));
}

NodeRef Tape::add_scaled(NodeRef a, NodeRef b, double c) {
    check_same_size(v(a), v(b), "add_scaled");
    Node n;
    n.op = Op::AddScaled;
    n.parents = {a.idx, b.idx};
    n.aux = {c};
    n.value.resize(v(a).size());
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = v(a)[i] + c * v(b)[i];
    return push(std::move(n));
}

NodeRef Tape::mul(NodeRef a, NodeRef b) {
    check_same_size(v(a), v(b), "mul");
    Node n;
    n.op = Op::Mul;
    n.parents = {a.idx, b.idx};
    n.value.resize(v(a).size());
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = v(a)[i] * v(b)[i];
    return push(std::move(n));
}

NodeRef Tape::matvec(NodeRef w, NodeRef x) {
    const Node& wn = nodes_[w.idx];
    int rows = wn.rows, cols = wn.cols;
    if (rows <= 0 || static_cast<size_t>(rows) * cols != wn.value.size())
        throw std::domain_error("matvec: w is not a matrix node");
    if (static_cast<size_t>(cols) != v(x).size())
        throw std::domain_error("matvec: dimension mismatch");
    Node n;
    n.op = Op::MatVec;
    n.parents = {w.idx, x.idx};
    n.rows = rows;
    n.cols = cols;
    n.value.resize(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* row = wn.value.data() + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) acc += row[j] * v(x)[j];
        n.value[i] = acc;
    }
    return push(std::move(n));
}

NodeRef Tape::dot(NodeRef a, NodeRef b) {
    check_same_size(v(a), v(b), "dot");
    Node n;
    n.op = Op::Dot;
    n.parents = {a.idx, b.idx};
    n.value = {smct::dot(v(a), v(b))};
    return push(std::move(n));
}

NodeRef Tape::stack(std::span<const NodeRef> scalars) {
    if (scalars.empty()) throw std::domain_error("stack: empty input");
    Node n;
    n.op = Op::Stack;
    n.value.resize(scalars.size());
    n.parents.reserve(scalars.size());
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (v(scalars[i]).size() != 1) throw std::domain_error("stack: non-scalar input");
        n.parents.push_back(scalars[i].idx);
        n.value[i] = v(scalars[i])[0];
    }
    return push(std::move(n));
}

NodeRef Tape::softmax(NodeRef logits) {
    Node n;
    n.op = Op::Softmax;
    n.parents = {logits.idx};
    n.value = smct::softmax(v(logits));
    return push(std::move(n));
}

NodeRef Tape::relu(NodeRef x) {
    Node n;
    n.op = Op::Relu;
    n.parents = {x.idx};
    n.value = smct::relu(v(x));
    return push(std::move(n));
}

NodeRef Tape::layer_norm(NodeRef x, NodeRef gain, NodeRef bias, double eps) {
    check_same_size(v(x), v(gain), "layer_norm");
    check_same_size(v(x), v(bias), "layer_norm");
    Node n;
    n.op = Op::LayerNorm;
    n.parents = {x.idx, gain.idx, bias.idx};
    n.value = smct::layer_norm(v(x), v(gain), v(bias), eps);
    // cache normalized input and 1/std for the backward pass
    const Vec& xv = v(x);
    const size_t d = xv.size();
    double mean = 0.0;
    for (double t : xv) mean += t;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double t : xv) {
        double dd = t - mean;
        var += dd * dd;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    n.aux.resize(d + 1);
    for (size_t i = 0; i < d; ++i) n.aux[i] = (xv[i] - mean) * inv;
    n.aux[d] = inv;
    return push(std::move(n));
}

NodeRef Tape::squared_norm(NodeRef x) {
    Node n;
    n.op = Op::SquaredNorm;
    n.parents = {x.idx};
    double acc = 0.0;
    for (double t : v(x)) acc += t * t;
    n.value = {acc};
    return push(std::move(n));
}

NodeRef Tape::weighted_sum(NodeRef coeffs, std::span<const NodeRef> vectors) {
    if (v(coeffs).size() != vectors.size())
        throw std::domain_error("weighted_sum: coeffs/vectors length mismatch");
    if (vectors.empty()) throw std::domain_error("weighted_sum: empty input");
    const size_t d = v(vectors[0]).size();
    Node n;
    n.op = Op::WeightedSum;
    n.parents.reserve(vectors.size() + 1);
    n.parents.push_back(coeffs.idx);
    n.value.assign(d, 0.0);
    for (size_t s = 0; s < vectors.size(); ++s) {
        check_same_size(v(vectors[0]), v(vectors[s]), "weighted_sum");
        n.parents.push_back(vectors[s].idx);
        double c = v(coeffs)[s];
        const Vec& vs = v(vectors[s]);
        for (size_t i = 0; i < d; ++i) n.value[i] += c * vs[i];
    }
    return push(std::move(n));
}

NodeRef Tape::sum(std::span<const NodeRef> terms) {
    if (terms.empty()) throw std::domain_error("sum: empty input");
    Node n;
    n.op = Op::Sum;
    n.value = v(terms[0]);
    n.parents.reserve(terms.size());
    n.parents.push_back(terms[0].idx);
    for (size_t k = 1; k < terms.size(); ++k) {
        check_same_size(v(terms[0]), v(terms[k]), "sum");
        n.parents.push_back(terms[k].idx);
        for (size_t i = 0; i < n.value.size(); ++i) n.value[i] += v(terms[k])[i];
    }
    return push(std::move(n));
}

NodeRef Tape::gauss_logdensity(NodeRef x, NodeRef mean, double var) {
    check_same_size(v(x), v(mean), "gauss_logdensity");
    Node n;
    n.op = Op::GaussLog;
    n.parents = {x.idx, mean.idx};
    n.aux = {var};
    n.value = {log_gaussian_density(v(x), v(mean), var)};
    return push(std::move(n));
}

NodeRef Tape::stop_gradient(NodeRef a) {
    Node n;
    n.op = Op::StopGrad;
    n.parents = {a.idx};
    n.value = v(a);
    return push(std::move(n));
}

GradMap Tape::backward(NodeRef root, double seed_gradient) const {
    if (!root.valid() || static_cast<size_t>(root.idx) >= nodes_.size())
        throw std::domain_error("backward: invalid root");
    if (nodes_[root.idx].value.size() != 1)
        throw std::domain_error("backward: root must be scalar");

    std::vector<Vec> adj(nodes_.size());
    auto bump = [&](int32_t i) -> Vec& {
        if (adj[i].empty()) adj[i].assign(nodes_[i].value.size(), 0.0);
        return adj[i];
    };
    bump(root.idx)[0] = seed_gradient;

    for (int32_t i = root.idx; i >= 0; --i) {
        if (adj[i].empty()) continue;
        const Node& n = nodes_[i];
        const Vec& g = adj[i];
        switch (n.op) {
            case Op::Const:
            case Op::Param:
                break;
            case Op::Add: {
                Vec& ga = bump(n.parents[0]);
                Vec& gb = bump(n.parents[1]);
                for (size_t k = 0; k < g.size(); ++k) {
                    ga[k] += g[k];
                    gb[k] += g[k];
                }
                break;
            }
            case Op::Sub: {
                Vec& ga = bump(n.parents[0]);
                Vec& gb = bump(n.parents[1]);
                for (size_t k = 0; k < g.size(); ++k) {
                    ga[k] += g[k];
                    gb[k] -= g[k];
                }
                break;
            }
            case Op::Scale: {
                Vec& ga = bump(n.parents[0]);
                for (size_t k = 0; k < g.size(); ++k) ga[k] += n.aux[0] * g[k];
                break;
            }
            case Op::AddScaled: {
                Vec& ga = bump(n.parents[0]);
                Vec& gb = bump(n.parents[1]);
                for (size_t k = 0; k < g.size(); ++k) {
                    ga[k] += g[k];
                    gb[k] += n.aux[0] * g[k];
                }
                break;
            }
            case Op::Mul: {
                const Vec& av = nodes_[n.parents[0]].value;
                const Vec& bv = nodes_[n.parents[1]].value;
                Vec& ga = bump(n.parents[0]);
                Vec& gb = bump(n.parents[1]);
                for (size_t k = 0; k < g.size(); ++k) {
                    ga[k] += g[k] * bv[k];
                    gb[k] += g[k] * av[k];
                }
                break;
            }
            case Op::MatVec: {
                const Vec& wv = nodes_[n.parents[0]].value;
                const Vec& xv = nodes_[n.parents[1]].value;
                Vec& gw = bump(n.parents[0]);
                Vec& gx = bump(n.parents[1]);
                for (int r = 0; r < n.rows; ++r) {
                    double gr = g[r];
                    const size_t off = static_cast<size_t>(r) * n.cols;
                    for (int c = 0; c < n.cols; ++c) {
                        gw[off + c] += gr * xv[c];
                        gx[c] += wv[off + c] * gr;
                    }
                }
                break;
            }
            case Op::Dot: {
                const Vec& av = nodes_[n.parents[0]].value;
                const Vec& bv = nodes_[n.parents[1]].value;
                Vec& ga = bump(n.parents[0]);
                Vec& gb = bump(n.parents[1]);
                for (size_t k = 0; k < av.size(); ++k) {
                    ga[k] += g[0] * bv[k];
                    gb[k] += g[0] * av[k];
                }
                break;
            }
            case Op::Stack: {
                for (size_t k = 0; k < n.parents.size(); ++k) bump(n.parents[k])[0] += g[k];
                break;
            }
            case Op::Softmax: {
                const Vec& y = n.value;
                double gy = 0.0;
                for (size_t k = 0; k < y.size(); ++k) gy += g[k] * y[k];
                Vec& ga = bump(n.parents[0]);
                for (size_t k = 0; k < y.size(); ++k) ga[k] += y[k] * (g[k] - gy);
                break;
            }
            case Op::Relu: {
                const Vec& xv = nodes_[n.parents[0]].value;
                Vec& ga = bump(n.parents[0]);
                for (size_t k = 0; k < g.size(); ++k)
                    if (xv[k] > 0.0) ga[k] += g[k];
                break;
            }
            case Op::LayerNorm: {
                const size_t d = g.size();
                const Vec& gain = nodes_[n.parents[1]].value;
                const double inv = n.aux[d];
                Vec& gx = bump(n.parents[0]);
                Vec& gg = bump(n.parents[1]);
                Vec& gb = bump(n.parents[2]);
                double mean_h = 0.0, mean_hx = 0.0;
                for (size_t k = 0; k < d; ++k) {
                    double h = g[k] * gain[k];
                    mean_h += h;
                    mean_hx += h * n.aux[k];
                }
                mean_h /= static_cast<double>(d);
                mean_hx /= static_cast<double>(d);
                for (size_t k = 0; k < d; ++k) {
                    double h = g[k] * gain[k];
                    gx[k] += inv * (h - mean_h - n.aux[k] * mean_hx);
                    gg[k] += g[k] * n.aux[k];
                    gb[k] += g[k];
                }
                break;
            }
            case Op::SquaredNorm: {
                const Vec& xv = nodes_[n.parents[0]].value;
                Vec& ga = bump(n.parents[0]);
                for (size_t k = 0; k < xv.size(); ++k) ga[k] += 2.0 * g[0] * xv[k];
                break;
            }
            case Op::WeightedSum: {
                const Vec& cv = nodes_[n.parents[0]].value;
                Vec& gc = bump(n.parents[0]);
                for (size_t s = 0; s + 1 < n.parents.size(); ++s) {
                    const Vec& vs = nodes_[n.parents[s + 1]].value;
                    Vec& gv = bump(n.parents[s + 1]);
                    double acc = 0.0;
                    for (size_t k = 0; k < g.size(); ++k) {
                        acc += g[k] * vs[k];
                        gv[k] += cv[s] * g[k];
                    }
                    gc[s] += acc;
                }
                break;
            }
            case Op::Sum: {
                for (int32_t p : n.parents) {
                    Vec& gp = bump(p);
                    for (size_t k = 0; k < g.size(); ++k) gp[k] += g[k];
                }
                break;
            }
            case Op::GaussLog: {
                // d/dx = -(x-mean)/var, d/dmean = (x-mean)/var
                const Vec& xv = nodes_[n.parents[0]].value;
                const Vec& mv = nodes_[n.parents[1]].value;
                const double var = n.aux[0];
                Vec& gx = bump(n.parents[0]);
                Vec& gm = bump(n.parents[1]);
                for (size_t k = 0; k < xv.size(); ++k) {
                    double r = (xv[k] - mv[k]) / var * g[0];
                    gx[k] -= r;
                    gm[k] += r;
                }
                break;
            }
            case Op::StopGrad:
                break;
        }
    }

    GradMap out;
    int max_id = -1;
    for (auto& [id, idx] : param_leaves_) max_id = std::max(max_id, id);
    out.grads.resize(max_id + 1);
    for (auto& [id, idx] : param_leaves_) {
        if (adj[idx].empty())
            out.grads[id].assign(nodes_[idx].value.size(), 0.0);
        else
            out.grads[id] = std::move(adj[idx]);
    }
    return out;
}

}  // namespace smct
