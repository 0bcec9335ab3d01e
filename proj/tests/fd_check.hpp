#pragma once

#include <functional>
#include <vector>

#include "afn/graph.hpp"
#include "doctest.h"

namespace afn::testutil {

/// Builds a scalar loss from freshly recorded input Vars. Called repeatedly
/// with perturbed inputs, so it must be a pure function of the tensors.
using BuildFn = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

inline double eval_loss(const BuildFn& build, const std::vector<Tensor<double>>& inputs) {
  Graph<double> g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.input(t));
  Var loss = build(g, vars);
  return static_cast<double>(g.value(loss).v[0]);
}

/// Central-difference gradient check: every element of every input, h=1e-5,
/// |analytic - fd| / max(1, |fd|) <= tol.
inline void check_gradients(const BuildFn& build, std::vector<Tensor<double>> inputs,
                            double tol = 1e-4, double h = 1e-5) {
  Graph<double> g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.input(t));
  Var loss = build(g, vars);
  REQUIRE(g.value(loss).numel() == 1);
  g.backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(vars.size());
  for (Var v : vars) analytic.push_back(g.grad_or_zero(v));

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].v.size(); ++i) {
      const double keep = inputs[t].v[i];
      inputs[t].v[i] = keep + h;
      const double lp = eval_loss(build, inputs);
      inputs[t].v[i] = keep - h;
      const double lm = eval_loss(build, inputs);
      inputs[t].v[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[t].v[i];
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(fd));
      INFO("input " << t << " element " << i << ": analytic " << an << " vs fd " << fd);
      CHECK(rel <= tol);
    }
  }
}

/// Central-difference check for every parameter in a Graph's registry.
/// `rebuild` must reset-and-rerecord the loss as a pure function of the
/// current parameter values.
inline void check_param_gradients(Graph<double>& g, const std::function<Var()>& rebuild,
                                  double tol = 1e-4, double h = 1e-5) {
  g.reset();
  Var loss = rebuild();
  REQUIRE(g.value(loss).numel() == 1);
  g.zero_grads();
  g.backward(loss);
  std::vector<Tensor<double>> analytic;
  for (const auto& p : g.param_entries()) analytic.push_back(p.grad);

  auto eval = [&]() {
    g.reset();
    return static_cast<double>(g.value(rebuild()).v[0]);
  };
  for (std::size_t pi = 0; pi < g.num_params(); ++pi) {
    auto& val = g.param_entry(static_cast<int>(pi)).value;
    for (std::size_t i = 0; i < val.v.size(); ++i) {
      const double keep = val.v[i];
      val.v[i] = keep + h;
      const double lp = eval();
      val.v[i] = keep - h;
      const double lm = eval();
      val.v[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[pi].v[i];
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(fd));
      INFO("param " << g.param_entry(static_cast<int>(pi)).name << " element " << i
                    << ": analytic " << an << " vs fd " << fd);
      CHECK(rel <= tol);
    }
  }
  g.reset();
}

/// Random tensor with entries in [lo, hi).
inline Tensor<double> rand_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0,
                                  double hi = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& e : t.v) e = rng.uniform(lo, hi);
  return t;
}

/// Random tensor with |entry| in [margin, hi) — keeps clear of kinks at 0.
inline Tensor<double> rand_tensor_away_from_zero(Rng& rng, std::vector<std::int64_t> shape,
                                                 double margin = 0.1, double hi = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& e : t.v) {
    double m = rng.uniform(margin, hi);
    e = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

}  // namespace afn::testutil
