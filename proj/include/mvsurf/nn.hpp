#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mvsurf/ops.hpp"
#include "mvsurf/rng.hpp"

namespace mvsurf {

// A named trainable tensor. The value tensor carries a persistent leaf node;
// gradients accumulate there during backward and are consumed by the optimizer.
template <class R>
struct Parameter {
  std::string name;
  Tensor<R> value;
  Tensor<R> m, v;  // Adam moment buffers

  Tensor<R> grad() const { return leaf_grad(value); }
  bool has_grad() const { return value.tracked() && value.node()->grad.defined(); }
  void zero_grad() {
    if (value.tracked()) value.node()->grad = Tensor<R>();
  }
};

// Owns every parameter of one model. Registration order is deterministic, so
// seeded initialization is reproducible.
template <class R>
class ParamStore {
 public:
  std::shared_ptr<Parameter<R>> create(const std::string& name, Tensor<R> init) {
    if (by_name_.count(name))
      throw std::invalid_argument("parameter name not unique: " + name);
    auto p = std::make_shared<Parameter<R>>();
    p->name = name;
    p->value = std::move(init);
    make_leaf(p->value);
    p->m = Tensor<R>::zeros(p->value.shape());
    p->v = Tensor<R>::zeros(p->value.shape());
    by_name_[name] = p;
    params_.push_back(p);
    return p;
  }

  const std::vector<std::shared_ptr<Parameter<R>>>& all() const { return params_; }

  std::shared_ptr<Parameter<R>> find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::int64_t count_scalars() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::map<std::string, std::shared_ptr<Parameter<R>>> by_name_;
  std::vector<std::shared_ptr<Parameter<R>>> params_;
};

namespace init {

// Fan-in scaled uniform weights, zero biases.
template <class R>
inline Tensor<R> uniform_fan_in(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<R> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<R>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace init

// ---------------------------------------------------------------------------
// layers

template <class R>
struct Linear {
  std::shared_ptr<Parameter<R>> w, b;

  Linear() = default;
  Linear(ParamStore<R>& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
         bool bias = true) {
    w = ps.create(name + ".w", init::uniform_fan_in<R>({in, out}, in, rng));
    if (bias) b = ps.create(name + ".b", Tensor<R>::zeros({out}));
  }

  Tensor<R> operator()(const Tensor<R>& x) const {
    Tensor<R> y = matmul(x, w->value);
    return b ? add(y, b->value) : y;
  }
};

template <class R>
struct Conv2d {
  std::shared_ptr<Parameter<R>> w, b;
  std::int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<R>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
         std::int64_t k, std::int64_t stride_, std::int64_t pad_, Rng& rng) {
    w = ps.create(name + ".w", init::uniform_fan_in<R>({cout, cin, k, k}, cin * k * k, rng));
    b = ps.create(name + ".b", Tensor<R>::zeros({cout}));
    stride = stride_;
    pad = pad_;
  }

  Tensor<R> operator()(const Tensor<R>& x) const {
    return conv2d(x, w->value, b->value, stride, pad);
  }
};

template <class R>
struct Conv3d {
  std::shared_ptr<Parameter<R>> w, b;
  std::int64_t stride = 1, pad = 0;

  Conv3d() = default;
  Conv3d(ParamStore<R>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
         std::int64_t k, std::int64_t stride_, std::int64_t pad_, Rng& rng) {
    w = ps.create(name + ".w",
                  init::uniform_fan_in<R>({cout, cin, k, k, k}, cin * k * k * k, rng));
    b = ps.create(name + ".b", Tensor<R>::zeros({cout}));
    stride = stride_;
    pad = pad_;
  }

  Tensor<R> operator()(const Tensor<R>& x) const {
    return conv3d(x, w->value, b->value, stride, pad);
  }
};

template <class R>
struct ConvT3d {
  std::shared_ptr<Parameter<R>> w, b;
  std::int64_t stride = 1, pad = 0, out_pad = 0;

  ConvT3d() = default;
  ConvT3d(ParamStore<R>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
          std::int64_t k, std::int64_t stride_, std::int64_t pad_, std::int64_t out_pad_,
          Rng& rng) {
    w = ps.create(name + ".w",
                  init::uniform_fan_in<R>({cin, cout, k, k, k}, cin * k * k * k, rng));
    b = ps.create(name + ".b", Tensor<R>::zeros({cout}));
    stride = stride_;
    pad = pad_;
    out_pad = out_pad_;
  }

  Tensor<R> operator()(const Tensor<R>& x) const {
    return conv_transpose3d(x, w->value, b->value, stride, pad, out_pad);
  }
};

template <class R>
struct LayerNorm {
  std::shared_ptr<Parameter<R>> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<R>& ps, const std::string& name, std::int64_t n) {
    gamma = ps.create(name + ".gamma", Tensor<R>::ones({n}));
    beta = ps.create(name + ".beta", Tensor<R>::zeros({n}));
  }

  Tensor<R> operator()(const Tensor<R>& x) const {
    return layer_norm(x, gamma->value, beta->value);
  }
};

}  // namespace mvsurf
