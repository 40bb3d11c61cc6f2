#ifndef FORGETBENCH_PARAMS_HPP
#define FORGETBENCH_PARAMS_HPP

// Flat parameter vectors and the perturbation / probe utilities that live in
// parameter space.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "forgetbench/tensor.hpp"

namespace fb {

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  Shape shape;
  std::size_t size() const { return shape_size(shape); }
};

/// Ordered, contiguous segments of a flat parameter vector.
class ParamLayout {
 public:
  ParamLayout() = default;

  /// Appends a segment directly after the last one.
  void add(std::string name, Shape shape);

  std::size_t dimension() const { return dimension_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }
  const ParamSegment& segment(std::string_view name) const;
  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamSegment> segments_;
  std::size_t dimension_ = 0;
};

/// The flattened model parameters theta. Layout is shared between vectors
/// derived from the same model configuration.
struct ParamVector {
  std::vector<double> values;
  std::shared_ptr<const ParamLayout> layout;

  ParamVector() = default;
  /// Zero vector with the given layout.
  explicit ParamVector(std::shared_ptr<const ParamLayout> l);
  /// Single anonymous segment of length values.size().
  static ParamVector flat(std::vector<double> values);

  std::size_t dimension() const { return values.size(); }
  std::span<const double> segment(std::string_view name) const;
  std::span<double> segment(std::string_view name);
};

/// Gaussian perturbation delta ~ N(0, sigma^2 I), reproducible from its seed.
struct Perturbation {
  std::vector<double> delta;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t dimension() const { return delta.size(); }
};

Perturbation gaussian_perturbation(std::size_t d, double sigma, std::uint64_t seed);

/// Entries i.i.d. uniform on {-1, +1}.
std::vector<double> rademacher_probe(std::size_t d, std::uint64_t seed);

/// theta + scale * delta; theta is not modified.
ParamVector apply_perturbation(const ParamVector& theta, const Perturbation& delta, double scale);
ParamVector apply_perturbation(const ParamVector& theta, std::span<const double> direction,
                               double scale);

double l2_norm(std::span<const double> v);

/// Graph leaves bound to the segments of a parameter vector.
class ParamBinding {
 public:
  /// Leaves require gradients unless `trainable` is false.
  explicit ParamBinding(const ParamVector& params, bool trainable = true);
  ParamBinding(std::span<const double> values, std::shared_ptr<const ParamLayout> layout,
               bool trainable = true);

  const Tensor& operator[](std::string_view name) const;
  const ParamLayout& layout() const { return *layout_; }

  /// Gathers leaf gradients after a backward pass (zeros for untouched leaves).
  ParamVector gradient() const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<Tensor> leaves_;
};

struct ValueAndGradient {
  double value = 0.0;
  ParamVector gradient;
};

/// Evaluates a scalar expression and its gradient w.r.t. every bound parameter.
ValueAndGradient forward_backward(const Tensor& scalar_output, const ParamBinding& binding);

}  // namespace fb

#endif  // FORGETBENCH_PARAMS_HPP
