#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "smct/numkit.hpp"

// Reverse-mode differentiation over the kernel set the model uses: affine
// maps, softmax, layer norm, relu, squared error and Gaussian log-densities.
// A Tape is an append-only arena; node indices are a topological order by
// construction, so backward() is a single reverse sweep touching each node
// once. Forward evaluation calls the numkit kernels, so a taped value is
// bit-identical to the untaped one.

namespace smct {

struct NodeRef {
    int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// parameter-id -> flat gradient, same length as the parameter's values
struct GradMap {
    std::vector<Vec> grads;

    bool has(int id) const {
        return id >= 0 && id < static_cast<int>(grads.size()) && !grads[id].empty();
    }
    const Vec& at(int id) const { return grads[id]; }
};

class Tape {
  public:
    NodeRef constant(Vec v);
    NodeRef constant_scalar(double v) { return constant(Vec{v}); }

    // Registers a learnable parameter leaf; one node per id, cached on reuse.
    // rows/cols describe matrix parameters (cols = 1 for vectors).
    NodeRef param(int id, std::span<const double> values, int rows, int cols);

    NodeRef add(NodeRef a, NodeRef b);
    NodeRef sub(NodeRef a, NodeRef b);
    NodeRef scale(NodeRef a, double c);
    NodeRef add_scaled(NodeRef a, NodeRef b, double c);  // a + c*b
    NodeRef mul(NodeRef a, NodeRef b);                   // elementwise
    NodeRef matvec(NodeRef w, NodeRef x);                // w is a (rows x cols) leaf
    NodeRef dot(NodeRef a, NodeRef b);
    NodeRef stack(std::span<const NodeRef> scalars);
    NodeRef softmax(NodeRef logits);
    NodeRef relu(NodeRef x);
    NodeRef layer_norm(NodeRef x, NodeRef gain, NodeRef bias, double eps);
    NodeRef squared_norm(NodeRef x);
    NodeRef weighted_sum(NodeRef coeffs, std::span<const NodeRef> vectors);
    NodeRef sum(std::span<const NodeRef> terms);  // same-shape accumulation
    // fused isotropic Gaussian log-density: value matches log_gaussian_density
    NodeRef gauss_logdensity(NodeRef x, NodeRef mean, double var);
    NodeRef stop_gradient(NodeRef a);

    const Vec& val(NodeRef n) const { return nodes_[n.idx].value; }
    size_t size() const { return nodes_.size(); }
    void reserve(size_t n) { nodes_.reserve(n); }

    // Seeds the scalar root with seed_gradient and sweeps the tape in reverse
    // topological order. Every registered parameter appears in the result,
    // with zeros when the root does not depend on it.
    GradMap backward(NodeRef root, double seed_gradient = 1.0) const;

  private:
    enum class Op : uint8_t {
        Const, Param, Add, Sub, Scale, AddScaled, Mul, MatVec, Dot, Stack,
        Softmax, Relu, LayerNorm, SquaredNorm, WeightedSum, Sum, GaussLog,
        StopGrad,
    };
    struct Node {
        Op op;
        Vec value;
        std::vector<int32_t> parents;
        Vec aux;            // op constants / cached intermediates for backward
        int param_id = -1;  // Param leaves only
        int rows = 0, cols = 0;
    };

    NodeRef push(Node n) {
        nodes_.push_back(std::move(n));
        return NodeRef{static_cast<int32_t>(nodes_.size() - 1)};
    }
    const Vec& v(NodeRef n) const { return nodes_[n.idx].value; }

    std::vector<Node> nodes_;
    std::vector<std::pair<int, int32_t>> param_leaves_;  // (id, node index)
};

}  // namespace smct
