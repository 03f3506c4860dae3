#pragma once

#include <cmath>

#include "mvsurf/nn.hpp"

namespace mvsurf {

// Standard Adam with bias correction. A parameter whose gradient contains a
// non-finite entry is skipped for that step (moments untouched); the return
// value reports how many were skipped. Gradients are cleared afterwards.
template <class R>
class Adam {
 public:
  R lr = R(1e-4);
  R beta1 = R(0.9);
  R beta2 = R(0.999);
  R eps = R(1e-8);

  explicit Adam(R lr_ = R(1e-4)) : lr(lr_) {}

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  int step(ParamStore<R>& ps) {
    ++t_;
    const R bc1 = R(1) - static_cast<R>(std::pow(static_cast<double>(beta1), static_cast<double>(t_)));
    const R bc2 = R(1) - static_cast<R>(std::pow(static_cast<double>(beta2), static_cast<double>(t_)));
    int skipped = 0;
    for (auto& p : ps.all()) {
      if (!p->has_grad()) continue;  // unreachable this step
      const Tensor<R> g = p->grad();
      bool finite = true;
      for (std::int64_t i = 0; i < g.numel() && finite; ++i)
        finite = std::isfinite(static_cast<double>(g[i]));
      if (!finite) {
        ++skipped;
        p->zero_grad();
        continue;
      }
      R* val = p->value.data();
      R* m = p->m.data();
      R* v = p->v.data();
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        m[i] = beta1 * m[i] + (R(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (R(1) - beta2) * g[i] * g[i];
        const R mhat = m[i] / bc1;
        const R vhat = v[i] / bc2;
        val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      p->zero_grad();
    }
    return skipped;
  }

 private:
  std::int64_t t_ = 0;
};

}  // namespace mvsurf
