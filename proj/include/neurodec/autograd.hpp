#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Var is a shared handle to a graph node. Ops build nodes eagerly; a node
// keeps its inputs alive only when some input requires a gradient, so
// inference under NoGradGuard allocates no graph at all. backward() walks
// the graph once in reverse topological order and *adds* into grad buffers;
// clearing parameter gradients is the caller's job.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "neurodec/tensor.hpp"

namespace neurodec {

struct Node {
    Tensor value;
    Tensor grad;  // empty until the first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    // Gradient buffer, zero-allocated on first use.
    Tensor& grad_buffer();
    bool has_grad() const { return !grad.storage().empty(); }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    // Direct write access for optimizers and initializers; never call on a
    // node that is part of a live graph.
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }
    double item() const { return node_->value.item(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->has_grad(); }
    // Gradient, or zeros of the value's shape when none has accumulated.
    Tensor grad() const;
    void zero_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Disables graph construction in its scope (thread-local).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

enum class FiniteCheck { Always, Sampled, Off };
void set_finite_check(FiniteCheck mode);
FiniteCheck finite_check();

// Reverse topological order helper exposed for tests: every node reachable
// from `root` that participates in differentiation, each exactly once,
// inputs before consumers.
std::vector<Node*> topo_order(const Var& root);

// Accumulates d(loss)/d(x) into every reachable requires_grad node.
void backward(const Var& loss);

// ---- elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

// x (r x c) + row (c or 1 x c) broadcast down the rows.
Var add_row(const Var& x, const Var& row);
// x (r x c) * row broadcast down the rows.
Var mul_row(const Var& x, const Var& row);

// ---- linear algebra
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);

// ---- reductions
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sums(const Var& a);        // (r x c) -> (r)
Var mean_rows(const Var& a);       // (r x c) -> (1 x c)
Var logsumexp_rows(const Var& a);  // (r x c) -> (r)
Var softmax(const Var& x, std::size_t axis);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- structural
Var reshape(const Var& a, Shape shape);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
Var broadcast_row(const Var& row, std::size_t rows);
Var pick_cols(const Var& a, std::span<const std::size_t> cols);  // out[r] = a[r, cols[r]]
// out.flat[i] = a.flat[index[i]], reshaped to `shape`.
Var gather_elements(const Var& a, std::span<const std::size_t> index, Shape shape);
// Each row divided by its L2 norm (plus eps).
Var normalize_rows(const Var& a, double eps = 1e-12);

// ---- spatial (channels-last maps: (h*w) x c)
Var im2col(const Var& x, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
           std::size_t pad);
Var upsample2x(const Var& x, std::size_t h, std::size_t w);

// ---- losses
Var mse(const Var& a, const Var& b);
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);

}  // namespace neurodec
