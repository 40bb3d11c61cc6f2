#include "forgetbench/params.hpp"

#include <algorithm>
#include <cmath>

#include "forgetbench/error.hpp"
#include "forgetbench/rng.hpp"

namespace fb {

void ParamLayout::add(std::string name, Shape shape) {
  for (const auto& s : segments_)
    if (s.name == name) throw ContractViolation("layout: duplicate segment " + name);
  ParamSegment seg{std::move(name), dimension_, std::move(shape)};
  dimension_ += seg.size();
  segments_.push_back(std::move(seg));
}

const ParamSegment& ParamLayout::segment(std::string_view name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw ContractViolation("layout: no segment named " + std::string(name));
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (segments_.size() != other.segments_.size() || dimension_ != other.dimension_) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.name != b.name || a.offset != b.offset || a.shape != b.shape) return false;
  }
  return true;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> l)
    : values(l->dimension(), 0.0), layout(std::move(l)) {}

ParamVector ParamVector::flat(std::vector<double> values) {
  auto layout = std::make_shared<ParamLayout>();
  layout->add("theta", {values.size()});
  ParamVector p;
  p.values = std::move(values);
  p.layout = std::move(layout);
  return p;
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const auto& s = layout->segment(name);
  return std::span<const double>(values).subspan(s.offset, s.size());
}

std::span<double> ParamVector::segment(std::string_view name) {
  const auto& s = layout->segment(name);
  return std::span<double>(values).subspan(s.offset, s.size());
}

Perturbation gaussian_perturbation(std::size_t d, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_perturbation: sigma must be > 0");
  if (d == 0) throw InvalidArgument("gaussian_perturbation: dimension must be >= 1");
  Perturbation p;
  p.sigma = sigma;
  p.seed = seed;
  p.delta.resize(d);
  CounterRng rng(seed);
  for (std::size_t i = 0; i < d; i += 2) {
    const auto [z0, z1] = rng.normal_pair();
    p.delta[i] = sigma * z0;
    if (i + 1 < d) p.delta[i + 1] = sigma * z1;
  }
  return p;
}

std::vector<double> rademacher_probe(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw InvalidArgument("rademacher_probe: dimension must be >= 1");
  std::vector<double> v(d);
  CounterRng rng(seed);
  for (double& x : v) x = rng.rademacher();
  return v;
}

ParamVector apply_perturbation(const ParamVector& theta, std::span<const double> direction,
                               double scale) {
  if (direction.size() != theta.dimension())
    throw ContractViolation("apply_perturbation: dimension " + std::to_string(direction.size()) +
                            " vs " + std::to_string(theta.dimension()));
  ParamVector out = theta;
  if (scale == 0.0) return out;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += scale * direction[i];
  return out;
}

ParamVector apply_perturbation(const ParamVector& theta, const Perturbation& delta, double scale) {
  return apply_perturbation(theta, std::span<const double>(delta.delta), scale);
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ParamBinding::ParamBinding(const ParamVector& params, bool trainable)
    : ParamBinding(params.values, params.layout, trainable) {}

ParamBinding::ParamBinding(std::span<const double> values,
                           std::shared_ptr<const ParamLayout> layout, bool trainable)
    : layout_(std::move(layout)) {
  if (!layout_) throw ContractViolation("binding: missing layout");
  if (values.size() != layout_->dimension())
    throw ContractViolation("binding: " + std::to_string(values.size()) +
                            " values for layout of dimension " +
                            std::to_string(layout_->dimension()));
  leaves_.reserve(layout_->segments().size());
  for (const auto& s : layout_->segments()) {
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                          values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()));
    leaves_.push_back(trainable ? Tensor::parameter(s.shape, std::move(v))
                                : Tensor::constant(s.shape, std::move(v)));
  }
}

const Tensor& ParamBinding::operator[](std::string_view name) const {
  const auto& segs = layout_->segments();
  for (std::size_t i = 0; i < segs.size(); ++i)
    if (segs[i].name == name) return leaves_[i];
  throw ContractViolation("binding: no parameter named " + std::string(name));
}

ParamVector ParamBinding::gradient() const {
  ParamVector g(layout_);
  const auto& segs = layout_->segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto grad = leaves_[i].grad();
    if (!grad.empty()) std::copy(grad.begin(), grad.end(), g.values.begin() + segs[i].offset);
  }
  return g;
}

ValueAndGradient forward_backward(const Tensor& scalar_output, const ParamBinding& binding) {
  if (scalar_output.size() != 1)
    throw ContractViolation("forward_backward: output of shape " +
                            shape_string(scalar_output.shape()) + " is not a scalar");
  Backprop bp(scalar_output);
  bp.run();
  return {scalar_output.item(), binding.gradient()};
}

}  // namespace fb
