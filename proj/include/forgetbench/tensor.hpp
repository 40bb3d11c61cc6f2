#ifndef FORGETBENCH_TENSOR_HPP
#define FORGETBENCH_TENSOR_HPP

// Minimal reverse-mode automatic differentiation over dense row-major float64
// tensors. A Tensor is a handle to a graph node; operations build the graph as
// they evaluate, and Backprop walks it in reverse topological order.
//
// Every row-wise operation (matmul, layer norm, softmax, causal attention)
// computes output row i from input rows <= i only, with a summation order that
// does not depend on how many rows are present. Evaluating a prefix of a
// sequence therefore reproduces the corresponding rows of the full evaluation
// bit for bit.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fb {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  /// Leaf that does not receive gradients.
  static Tensor constant(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradients during backprop.
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor scalar(double v) { return constant({}, {v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<const double> values() const { return node_->value; }
  /// Empty until a backward pass reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  bool defined() const { return static_cast<bool>(node_); }

  // Used by operation implementations.
  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive on a thread, operations do not record the graph.
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

// ---- operations -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// [n, m] + [m] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
/// [n, k] x [k, m]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [n, k] x [m, k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
/// tanh-form GELU.
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Rows of a [vocab, dim] table selected by ids.
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// out[i] = a[i, columns[i]] for a [n, m] input.
Tensor pick(const Tensor& a, std::span<const int> columns);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Multi-head causal self-attention on packed sequences. q, k, v are [n, dim];
/// row i attends to rows [segment_start[i], i]. Returns the concatenated heads.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::span<const std::size_t> segment_start);

// ---- backprop -------------------------------------------------------------

class Backprop {
 public:
  explicit Backprop(const Tensor& output);

  /// Zeroes every gradient in the graph, seeds d(output) and propagates.
  void run(std::span<const double> seed);
  /// Seeds a one-hot at output element `index`.
  void run_one_hot(std::size_t index);
  /// For scalar outputs.
  void run() { run_one_hot(0); }

 private:
  std::vector<detail::Node*> order_;  // inputs before consumers
  detail::Node* output_;
  Tensor keep_alive_;
};

}  // namespace fb

#endif  // FORGETBENCH_TENSOR_HPP
