#include "forgetbench/mrd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "forgetbench/error.hpp"
#include "forgetbench/rng.hpp"
#include "forgetbench/stats.hpp"

namespace fb {

using nlohmann::json;

std::vector<double> LmScorer::log_probs(std::span<const double> theta,
                                        const TokenSequence& x) const {
  return token_log_probs_at(model_->config, model_->params.layout, theta, x.tokens);
}

std::vector<std::vector<double>> LmScorer::log_prob_gradients(std::span<const double> theta,
                                                              const TokenSequence& x) const {
  return token_log_prob_gradients_at(model_->config, model_->params.layout, theta, x.tokens);
}

std::string_view to_string(MrdEstimator e) {
  switch (e) {
    case MrdEstimator::naive: return "naive";
    case MrdEstimator::monte_carlo: return "monte_carlo";
    case MrdEstimator::hessian_approx: return "hessian_approx";
  }
  return "?";
}

MrdEstimator mrd_estimator_from_string(std::string_view s) {
  if (s == "naive") return MrdEstimator::naive;
  if (s == "monte_carlo") return MrdEstimator::monte_carlo;
  if (s == "hessian_approx") return MrdEstimator::hessian_approx;
  throw InvalidArgument("unknown MRD estimator '" + std::string(s) + "'");
}

std::string_view to_string(MrdForm f) {
  return f == MrdForm::per_draw_absolute ? "per_draw_absolute" : "absolute_of_mean";
}

MrdForm mrd_form_from_string(std::string_view s) {
  if (s == "per_draw_absolute") return MrdForm::per_draw_absolute;
  if (s == "absolute_of_mean") return MrdForm::absolute_of_mean;
  throw InvalidArgument("unknown MRD form '" + std::string(s) + "'");
}

namespace {

std::vector<double> shifted(std::span<const double> theta, std::span<const double> direction,
                            double scale) {
  std::vector<double> out(theta.begin(), theta.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * direction[i];
  return out;
}

// Positions whose reference log-likelihood is usable as a divisor.
std::vector<bool> usable_positions(std::span<const double> p_ref, double p_floor,
                                   FloorPolicy policy, std::size_t& excluded) {
  std::vector<bool> keep(p_ref.size(), true);
  excluded = 0;
  for (std::size_t t = 0; t < p_ref.size(); ++t) {
    if (std::abs(p_ref[t]) >= p_floor) continue;
    if (policy == FloorPolicy::error)
      throw DegenerateToken("scored position " + std::to_string(t + 1) + " has |P_t| = " +
                                std::to_string(std::abs(p_ref[t])) + " below floor " +
                                std::to_string(p_floor),
                            t + 1);
    keep[t] = false;
    ++excluded;
  }
  return keep;
}

double relative_sum(std::span<const double> p_ref, std::span<const double> p_new,
                    const std::vector<bool>& keep) {
  double s = 0.0;
  for (std::size_t t = 0; t < p_ref.size(); ++t)
    if (keep[t]) s += (p_ref[t] - p_new[t]) / p_ref[t];
  return s;
}

}  // namespace

double mrd_naive(const TokenScorer& scorer, const TokenSequence& x, const Perturbation& delta) {
  const auto theta = scorer.parameters();
  if (delta.dimension() != theta.size())
    throw ContractViolation("mrd_naive: perturbation dimension " +
                            std::to_string(delta.dimension()) + " vs " +
                            std::to_string(theta.size()));
  const auto p_ref = scorer.log_probs(theta, x);
  const auto p_new = scorer.log_probs(shifted(theta, delta.delta, 1.0), x);
  double s = 0.0;
  for (std::size_t t = 0; t < p_ref.size(); ++t) s += p_ref[t] - p_new[t];
  return std::abs(s);
}

MrdEstimate mrd_monte_carlo(const TokenScorer& scorer, const TokenSequence& x,
                            const MonteCarloOptions& o) {
  if (!(o.sigma > 0.0)) throw InvalidArgument("mrd_monte_carlo: sigma must be > 0");
  if (o.K < 1) throw InvalidArgument("mrd_monte_carlo: K must be >= 1");
  const auto theta = scorer.parameters();
  const auto p_ref = scorer.log_probs(theta, x);
  MrdEstimate est;
  est.estimator = MrdEstimator::monte_carlo;
  est.sigma = o.sigma;
  est.K = o.K;
  est.seed = o.seed;
  const auto keep = usable_positions(p_ref, o.p_floor, o.floor, est.excluded_positions);

  std::vector<double> draws(static_cast<std::size_t>(o.K));
  for (int k = 0; k < o.K; ++k) {
    const auto delta = gaussian_perturbation(theta.size(), o.sigma, derive_seed(o.seed, static_cast<std::uint64_t>(k)));
    double s = relative_sum(p_ref, scorer.log_probs(shifted(theta, delta.delta, 1.0), x), keep);
    if (o.antithetic)
      s = 0.5 * (s + relative_sum(p_ref, scorer.log_probs(shifted(theta, delta.delta, -1.0), x), keep));
    draws[static_cast<std::size_t>(k)] = s;
  }
  const double root_k = std::sqrt(static_cast<double>(o.K));
  if (o.form == MrdForm::per_draw_absolute) {
    for (double& d : draws) d = std::abs(d);
    est.value = stats::mean(draws);
  } else {
    est.value = std::abs(stats::mean(draws));
  }
  est.std_error = stats::stddev(draws) / root_k;
  return est;
}

TraceEstimate hutchinson_trace(const TokenScorer& scorer, const TokenSequence& x, int probes,
                               double fd_step, std::uint64_t seed) {
  if (probes < 1) throw InvalidArgument("hutchinson_trace: probes must be >= 1");
  if (!(fd_step > 0.0)) throw InvalidArgument("hutchinson_trace: fd_step must be > 0");
  const auto theta = scorer.parameters();
  TraceEstimate tr;
  tr.probes = probes;
  tr.fd_step = fd_step;
  tr.seed = seed;
  for (int j = 0; j < probes; ++j) {
    const auto v = rademacher_probe(theta.size(), derive_seed(seed, static_cast<std::uint64_t>(j)));
    std::vector<std::vector<double>> g_plus, g_minus;
    try {
      g_plus = scorer.log_prob_gradients(shifted(theta, v, fd_step), x);
      g_minus = scorer.log_prob_gradients(shifted(theta, v, -fd_step), x);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("hutchinson_trace: probe " + std::to_string(j) + ": " + e.what());
    }
    std::vector<double> row(g_plus.size());
    for (std::size_t t = 0; t < g_plus.size(); ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * (g_plus[t][i] - g_minus[t][i]);
      row[t] = s / (2.0 * fd_step);
      if (!std::isfinite(row[t]))
        throw NumericalFailure("hutchinson_trace: non-finite curvature at position " +
                               std::to_string(t + 1) + ", probe " + std::to_string(j));
    }
    tr.probe_values.push_back(std::move(row));
  }
  const std::size_t n = tr.probe_values.front().size();
  tr.per_token.assign(n, 0.0);
  tr.per_token_std_error.assign(n, 0.0);
  std::vector<double> column(static_cast<std::size_t>(probes));
  for (std::size_t t = 0; t < n; ++t) {
    for (int j = 0; j < probes; ++j) column[static_cast<std::size_t>(j)] = tr.probe_values[static_cast<std::size_t>(j)][t];
    tr.per_token[t] = stats::mean(column);
    tr.per_token_std_error[t] = stats::stddev(column) / std::sqrt(static_cast<double>(probes));
  }
  return tr;
}

MrdEstimate mrd_hessian_approx(const TokenScorer& scorer, const TokenSequence& x, double sigma,
                               const TraceEstimate& trace, double p_floor, FloorPolicy floor) {
  if (!(sigma > 0.0)) throw InvalidArgument("mrd_hessian_approx: sigma must be > 0");
  const auto p_ref = scorer.log_probs(scorer.parameters(), x);
  if (trace.per_token.size() != p_ref.size())
    throw ContractViolation("mrd_hessian_approx: trace covers " +
                            std::to_string(trace.per_token.size()) + " positions, sequence has " +
                            std::to_string(p_ref.size()));
  MrdEstimate est;
  est.estimator = MrdEstimator::hessian_approx;
  est.sigma = sigma;
  est.seed = trace.seed;
  est.probes = trace.probes;
  est.fd_step = trace.fd_step;
  const auto keep = usable_positions(p_ref, p_floor, floor, est.excluded_positions);
  const double half_var = 0.5 * sigma * sigma;
  double s = 0.0;
  for (std::size_t t = 0; t < p_ref.size(); ++t)
    if (keep[t]) s += trace.per_token[t] / p_ref[t];
  est.value = std::abs(half_var * s);
  if (trace.probe_values.size() >= 2) {
    std::vector<double> per_probe;
    for (const auto& row : trace.probe_values) {
      double r = 0.0;
      for (std::size_t t = 0; t < p_ref.size(); ++t)
        if (keep[t]) r += row[t] / p_ref[t];
      per_probe.push_back(half_var * r);
    }
    est.std_error = stats::stddev(per_probe) / std::sqrt(static_cast<double>(per_probe.size()));
  }
  return est;
}

MrdEstimate estimate_mrd(const TokenScorer& scorer, const TokenSequence& x,
                         const EstimatorConfig& c) {
  const std::uint64_t seed = derive_seed(c.master_seed, x.sample_id);
  switch (c.kind) {
    case MrdEstimator::naive: {
      const auto delta = gaussian_perturbation(scorer.dimension(), c.sigma, derive_seed(seed, 0));
      MrdEstimate est;
      est.estimator = MrdEstimator::naive;
      est.value = mrd_naive(scorer, x, delta);
      est.sigma = c.sigma;
      est.seed = seed;
      return est;
    }
    case MrdEstimator::monte_carlo: {
      MonteCarloOptions o;
      o.sigma = c.sigma;
      o.K = c.K;
      o.seed = seed;
      o.p_floor = c.p_floor;
      o.floor = c.floor;
      o.form = c.form;
      o.antithetic = c.antithetic;
      return mrd_monte_carlo(scorer, x, o);
    }
    case MrdEstimator::hessian_approx: {
      const auto trace = hutchinson_trace(scorer, x, c.probes, c.fd_step, seed);
      return mrd_hessian_approx(scorer, x, c.sigma, trace, c.p_floor, c.floor);
    }
  }
  throw ContractViolation("estimate_mrd: unknown estimator");
}

std::vector<RankedSample> rank_by_mrd(const TokenScorer& scorer,
                                      std::span<const TokenSequence> samples,
                                      const EstimatorConfig& config) {
  if (samples.empty()) throw InvalidArgument("rank_by_mrd: no samples");
  std::vector<RankedSample> rows(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  auto work = [&](std::size_t i) {
    try {
      rows[i] = {samples[i].sample_id, estimate_mrd(scorer, samples[i], config)};
    } catch (const DegenerateToken& e) {
      errors[i] = std::make_exception_ptr(DegenerateToken(
          "sample " + std::to_string(samples[i].sample_id) + ": " + e.what(), e.position()));
    } catch (const NumericalFailure& e) {
      errors[i] = std::make_exception_ptr(
          NumericalFailure("sample " + std::to_string(samples[i].sample_id) + ": " + e.what()));
    } catch (const std::exception& e) {
      errors[i] = std::make_exception_ptr(
          std::runtime_error("sample " + std::to_string(samples[i].sample_id) + ": " + e.what()));
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, config.workers));
  if (workers == 1 || samples.size() == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, samples.size()); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) work(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::sort(rows.begin(), rows.end(), [](const RankedSample& a, const RankedSample& b) {
    if (a.estimate.value != b.estimate.value) return a.estimate.value > b.estimate.value;
    return a.sample_id < b.sample_id;
  });
  return rows;
}

json to_json(const RankedSample& r) {
  const auto& e = r.estimate;
  return {{"sample_id", r.sample_id},
          {"estimator", to_string(e.estimator)},
          {"value", e.value},
          {"std_error", e.std_error},
          {"sigma", e.sigma},
          {"K", e.K},
          {"excluded_positions", e.excluded_positions},
          {"probes", e.probes},
          {"fd_step", e.fd_step},
          {"seed", e.seed}};
}

RankedSample ranked_sample_from_json(const json& j) {
  RankedSample r;
  r.sample_id = j.at("sample_id").get<std::size_t>();
  auto& e = r.estimate;
  e.estimator = mrd_estimator_from_string(j.at("estimator").get<std::string>());
  e.value = j.at("value").get<double>();
  e.std_error = j.at("std_error").get<double>();
  e.sigma = j.at("sigma").get<double>();
  e.K = j.at("K").get<int>();
  e.excluded_positions = j.at("excluded_positions").get<std::size_t>();
  e.probes = j.value("probes", 0);
  e.fd_step = j.value("fd_step", 0.0);
  e.seed = j.value("seed", std::uint64_t{0});
  return r;
}

json to_json(const EstimatorConfig& c) {
  return {{"kind", to_string(c.kind)},   {"sigma", c.sigma},
          {"K", c.K},                    {"probes", c.probes},
          {"fd_step", c.fd_step},        {"master_seed", c.master_seed},
          {"p_floor", c.p_floor},        {"floor", c.floor == FloorPolicy::exclude ? "exclude" : "error"},
          {"form", to_string(c.form)},   {"antithetic", c.antithetic}};
}

EstimatorConfig estimator_config_from_json(const json& j) {
  EstimatorConfig c;
  if (j.contains("kind")) c.kind = mrd_estimator_from_string(j.at("kind").get<std::string>());
  c.sigma = j.value("sigma", c.sigma);
  c.K = j.value("K", c.K);
  c.probes = j.value("probes", c.probes);
  c.fd_step = j.value("fd_step", c.fd_step);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.p_floor = j.value("p_floor", c.p_floor);
  if (j.contains("floor")) {
    const auto f = j.at("floor").get<std::string>();
    if (f == "exclude") c.floor = FloorPolicy::exclude;
    else if (f == "error") c.floor = FloorPolicy::error;
    else throw InvalidArgument("unknown floor policy '" + f + "'");
  }
  if (j.contains("form")) c.form = mrd_form_from_string(j.at("form").get<std::string>());
  c.antithetic = j.value("antithetic", c.antithetic);
  return c;
}

void write_mrd_report(const std::filesystem::path& path, std::span<const RankedSample> rows) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("write_mrd_report: cannot open " + path.string());
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

std::vector<RankedSample> read_mrd_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("read_mrd_report: cannot open " + path.string());
  std::vector<RankedSample> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(ranked_sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace fb
