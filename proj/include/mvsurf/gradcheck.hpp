#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvsurf/ops.hpp"

namespace mvsurf {

struct GradCheckReport {
  double max_err = 0;       // worst |analytic - numeric|
  double max_rel_err = 0;   // worst relative error after the absolute floor
  bool pass = true;
  std::string worst;        // "input 2, flat 17"
};

// Central finite differences as the independent oracle for reverse-mode
// gradients. fn must map the given inputs to a scalar tensor and be free of
// internal randomness.
template <class R, class Fn>
inline GradCheckReport check_gradients(Fn fn, std::vector<Tensor<R>> inputs,
                                       double eps = 1e-5, double rel_tol = 1e-4,
                                       double abs_floor = 1e-7) {
  GradCheckReport rep;

  // analytic pass
  std::vector<Tensor<R>> tracked;
  tracked.reserve(inputs.size());
  for (auto& in : inputs) {
    Tensor<R> t = in.clone();
    make_leaf(t);
    tracked.push_back(t);
  }
  std::vector<Tensor<R>> analytic;
  {
    Graph<R> graph;
    typename Graph<R>::Activate act(graph);
    Tensor<R> loss = fn(tracked);
    graph.backward(loss);
    for (auto& t : tracked) analytic.push_back(leaf_grad(t));
  }

  // numeric pass
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<R> probe = inputs[k].clone();
    std::vector<Tensor<R>> args = tracked;
    args[k] = probe;
    for (std::int64_t i = 0; i < probe.numel(); ++i) {
      const R saved = probe[i];
      probe[i] = saved + static_cast<R>(eps);
      const double fp = static_cast<double>(fn(args).item());
      probe[i] = saved - static_cast<R>(eps);
      const double fm = static_cast<double>(fn(args).item());
      probe[i] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = static_cast<double>(analytic[k][i]);
      const double err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = err / std::max(scale, abs_floor / rel_tol);
      if (err > rep.max_err) rep.max_err = err;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(k) + ", flat " + std::to_string(i);
      }
      if (err > abs_floor && rel > rel_tol) rep.pass = false;
    }
  }
  return rep;
}

}  // namespace mvsurf
