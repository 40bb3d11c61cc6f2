#include "forgetbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "forgetbench/error.hpp"

namespace fb {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalFailure(std::string("non-finite value produced by ") + op);
  }
}

// Creates the output node. Graph edges and the backward closure are attached
// only when some input needs a gradient and recording is enabled.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
std::vector<double>& grad_of(Node& self, std::size_t i) { return self.inputs[i]->grad; }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ContractViolation(std::string(op) + ": expected a matrix, got shape " +
                            shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
}

// c[n,m] += a[n,k] * b[k,m]; the sum for each element runs over k in order.
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i]);
  return make_result(op, a.shape(), std::move(out), {&a}, [dfdx](Node& self) {
    auto& ga = grad_of(self, 0);
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size())
    throw ContractViolation("tensor: shape " + shape_string(shape) + " does not match " +
                            std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return from_node(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }
std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

double Tensor::item() const {
  if (size() != 1)
    throw ContractViolation("item(): tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      auto& g = grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "multiply");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result("multiply", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  return make_result("scale", a.shape(), std::move(out), {&a}, [s](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  if (row.size() != a.cols())
    throw ContractViolation("add_row: row of " + std::to_string(row.size()) +
                            " values for matrix " + shape_string(a.shape()));
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += row.values()[j];
  return make_result("add", a.shape(), std::move(out), {&a, &row}, [n, m](Node& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k)
    throw ContractViolation("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(n * m, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), n, k, m);
  return make_result("matmul", {n, m}, std::move(out), {&a, &b}, [n, k, m](Node& self) {
    const double* A = self.inputs[0]->value.data();
    const double* B = self.inputs[1]->value.data();
    const double* G = self.grad.data();
    if (wants(self, 0)) {
      double* gA = grad_of(self, 0).data();  // G * B^T
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) gA[i * k + p] += dot(G + i * m, B + p * m, m);
    }
    if (wants(self, 1)) {
      double* gB = grad_of(self, 1).data();  // A^T * G
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < m; ++j) gB[p * m + j] += aip * G[i * m + j];
        }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k)
    throw ContractViolation("matmul_nt: " + shape_string(a.shape()) + " x " +
                            shape_string(b.shape()) + "^T");
  std::vector<double> out(n * m);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = dot(A + i * k, B + j * k, k);
  return make_result("matmul", {n, m}, std::move(out), {&a, &b}, [n, k, m](Node& self) {
    const double* A = self.inputs[0]->value.data();
    const double* B = self.inputs[1]->value.data();
    const double* G = self.grad.data();
    if (wants(self, 0)) {
      double* gA = grad_of(self, 0).data();  // G * B
      gemm_nn(G, B, gA, n, m, k);
    }
    if (wants(self, 1)) {
      double* gB = grad_of(self, 1).data();  // G^T * A
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = G[i * m + j];
          for (std::size_t p = 0; p < k; ++p) gB[j * k + p] += gij * A[i * k + p];
        }
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result("sum", {}, {s}, {&a}, [](Node& self) {
    auto& g = grad_of(self, 0);
    for (double& x : g) x += self.grad[0];
  });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double c3 = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + c3 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + c3 * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * c3 * x * x);
      });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.size());
  const double* x = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = *std::max_element(x + i * m, x + i * m + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(x[i * m + j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return make_result("softmax", a.shape(), std::move(out), {&a}, [n, m](Node& self) {
    auto& g = grad_of(self, 0);
    const double* y = self.value.data();
    const double* gy = self.grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double s = dot(gy + i * m, y + i * m, m);
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += y[i * m + j] * (gy[i * m + j] - s);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.size());
  const double* x = a.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = *std::max_element(x + i * m, x + i * m + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(x[i * m + j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] - lz;
  }
  return make_result("log_softmax", a.shape(), std::move(out), {&a}, [n, m](Node& self) {
    auto& g = grad_of(self, 0);
    const double* y = self.value.data();
    const double* gy = self.grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gy[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += gy[i * m + j] - std::exp(y[i * m + j]) * s;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), dim = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * dim);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
      throw InvalidArgument("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    std::copy_n(table.values().data() + idx[i] * dim, dim, out.data() + i * dim);
  }
  const std::size_t n = idx.size();
  return make_result("embedding", {n, dim}, std::move(out), {&table},
                     [idx = std::move(idx), dim](Node& self) {
                       auto& g = grad_of(self, 0);
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < dim; ++j)
                           g[idx[i] * dim + j] += self.grad[i * dim + j];
                     });
}

Tensor pick(const Tensor& a, std::span<const int> columns) {
  require_matrix(a, "pick");
  const std::size_t n = a.rows(), m = a.cols();
  if (columns.size() != n)
    throw ContractViolation("pick: " + std::to_string(columns.size()) + " columns for " +
                            std::to_string(n) + " rows");
  std::vector<int> cols(columns.begin(), columns.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= m)
      throw InvalidArgument("pick: column " + std::to_string(cols[i]) + " out of range");
    out[i] = a.values()[i * m + cols[i]];
  }
  return make_result("pick", {n}, std::move(out), {&a}, [cols = std::move(cols), m](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < cols.size(); ++i) g[i * m + cols[i]] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), m = x.cols();
  if (gamma.size() != m || beta.size() != m)
    throw ContractViolation("layer_norm: gain/bias size does not match width " + std::to_string(m));
  std::vector<double> xhat(x.size()), rstd(n), out(x.size());
  const double* X = x.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += X[i * m + j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (X[i * m + j] - mu) * (X[i * m + j] - mu);
    var /= static_cast<double>(m);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (X[i * m + j] - mu) * rstd[i];
      out[i * m + j] = xhat[i * m + j] * gamma.values()[j] + beta.values()[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xhat = std::move(xhat), rstd = std::move(rstd), n, m](Node& self) {
        const double* G = self.grad.data();
        const double* gam = self.inputs[1]->value.data();
        if (wants(self, 0)) {
          auto& gx = grad_of(self, 0);
          std::vector<double> dxhat(m);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              dxhat[j] = G[i * m + j] * gam[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * m + j];
            }
            mean_d /= static_cast<double>(m);
            mean_dx /= static_cast<double>(m);
            for (std::size_t j = 0; j < m; ++j)
              gx[i * m + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * m + j] * mean_dx);
          }
        }
        if (wants(self, 1)) {
          auto& gg = grad_of(self, 1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gg[j] += G[i * m + j] * xhat[i * m + j];
        }
        if (wants(self, 2)) {
          auto& gb = grad_of(self, 2);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gb[j] += G[i * m + j];
        }
      });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::span<const std::size_t> segment_start) {
  require_matrix(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t n = q.rows(), dim = q.cols();
  if (heads == 0 || dim % heads != 0)
    throw ContractViolation("attention: width " + std::to_string(dim) + " not divisible into " +
                            std::to_string(heads) + " heads");
  if (segment_start.size() != n) throw ContractViolation("attention: segment table size mismatch");
  for (std::size_t i = 0; i < n; ++i)
    if (segment_start[i] > i) throw ContractViolation("attention: segment starts after its row");
  const std::size_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::size_t> starts(segment_start.begin(), segment_start.end());

  // Attention weights stored per (head, row) as a contiguous run of i - start + 1 values.
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offset[i + 1] = offset[i] + (i - starts[i] + 1);
  std::vector<double> probs(heads * offset[n]);
  std::vector<double> out(n * dim, 0.0);
  const double* Q = q.values().data();
  const double* K = k.values().data();
  const double* V = v.values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      double* a = probs.data() + h * offset[n] + offset[i];
      const std::size_t s0 = starts[i];
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = s0; j <= i; ++j) {
        a[j - s0] = dot(Q + i * dim + c0, K + j * dim + c0, dh) * inv_sqrt;
        mx = std::max(mx, a[j - s0]);
      }
      double z = 0.0;
      for (std::size_t j = s0; j <= i; ++j) z += (a[j - s0] = std::exp(a[j - s0] - mx));
      for (std::size_t j = s0; j <= i; ++j) a[j - s0] /= z;
      double* o = out.data() + i * dim + c0;
      for (std::size_t j = s0; j <= i; ++j) {
        const double w = a[j - s0];
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * V[j * dim + c0 + c];
      }
    }
  }
  return make_result(
      "attention", {n, dim}, std::move(out), {&q, &k, &v},
      [probs = std::move(probs), offset = std::move(offset), starts = std::move(starts), n, dim,
       dh, heads, inv_sqrt](Node& self) {
        const double* Q = self.inputs[0]->value.data();
        const double* K = self.inputs[1]->value.data();
        const double* V = self.inputs[2]->value.data();
        const double* G = self.grad.data();
        std::vector<double> scratch_q, scratch_k, scratch_v;
        double* gQ = wants(self, 0) ? grad_of(self, 0).data() : nullptr;
        double* gK = wants(self, 1) ? grad_of(self, 1).data() : nullptr;
        double* gV = wants(self, 2) ? grad_of(self, 2).data() : nullptr;
        std::vector<double> dA;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const double* a = probs.data() + h * offset[n] + offset[i];
            const std::size_t s0 = starts[i];
            const std::size_t len = i - s0 + 1;
            const double* gi = G + i * dim + c0;
            dA.assign(len, 0.0);
            double s = 0.0;
            for (std::size_t j = s0; j <= i; ++j) {
              dA[j - s0] = dot(gi, V + j * dim + c0, dh);
              s += a[j - s0] * dA[j - s0];
              if (gV) {
                const double w = a[j - s0];
                for (std::size_t c = 0; c < dh; ++c) gV[j * dim + c0 + c] += w * gi[c];
              }
            }
            for (std::size_t j = s0; j <= i; ++j) {
              const double ds = a[j - s0] * (dA[j - s0] - s) * inv_sqrt;
              if (gQ)
                for (std::size_t c = 0; c < dh; ++c) gQ[i * dim + c0 + c] += ds * K[j * dim + c0 + c];
              if (gK)
                for (std::size_t c = 0; c < dh; ++c) gK[j * dim + c0 + c] += ds * Q[i * dim + c0 + c];
            }
          }
        }
      });
}

Backprop::Backprop(const Tensor& output) : output_(output.node().get()), keep_alive_(output) {
  if (!output.defined()) throw ContractViolation("backprop: undefined output");
  // Iterative post-order DFS.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{output_, 0}};
  visited.insert(output_);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Backprop::run(std::span<const double> seed) {
  if (seed.size() != output_->value.size())
    throw ContractViolation("backprop: seed of " + std::to_string(seed.size()) +
                            " values for output of " + std::to_string(output_->value.size()));
  for (Node* node : order_) node->grad.assign(node->value.size(), 0.0);
  std::copy(seed.begin(), seed.end(), output_->grad.begin());
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->backward(*node);
      for (const auto& in : node->inputs) {
        if (in->requires_grad) check_finite(node->op, in->grad);
      }
    }
  }
}

void Backprop::run_one_hot(std::size_t index) {
  std::vector<double> seed(output_->value.size(), 0.0);
  seed.at(index) = 1.0;
  run(seed);
}

}  // namespace fb
