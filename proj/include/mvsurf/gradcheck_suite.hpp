#pragma once

#include <utility>

#include "mvsurf/gradcheck.hpp"
#include "mvsurf/rng.hpp"

namespace mvsurf {

// Finite-difference coverage for each differentiable op kind on small random
// inputs. Shapes are chosen to exercise broadcasting, strides and padding.
template <class R>
inline std::vector<std::pair<std::string, GradCheckReport>> run_op_gradient_suite(
    std::uint64_t seed = 7, double eps = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-7) {
  Rng rng(seed);
  auto rand_t = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor<R> t(std::move(s));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<R>(rng.uniform(lo, hi));
    return t;
  };
  std::vector<std::pair<std::string, GradCheckReport>> results;
  auto run = [&](const std::string& name, auto fn, std::vector<Tensor<R>> inputs) {
    results.emplace_back(name, check_gradients<R>(fn, std::move(inputs), eps, rel_tol, abs_floor));
  };

  using V = std::vector<Tensor<R>>;

  run("add(broadcast)", [](const V& in) { return sum(add(in[0], in[1])); },
      {rand_t({2, 3, 4}), rand_t({3, 1})});
  run("sub", [](const V& in) { return sum(sub(in[0], in[1])); },
      {rand_t({4, 5}), rand_t({4, 5})});
  run("mul(broadcast)", [](const V& in) { return sum(mul(in[0], in[1])); },
      {rand_t({2, 3, 4}), rand_t({4})});
  run("div", [](const V& in) { return sum(div(in[0], in[1])); },
      {rand_t({3, 4}), rand_t({3, 4}, 0.5, 2.0)});
  run("scalar-mul", [](const V& in) { return sum(mul_scalar(in[0], R(2.5))); }, {rand_t({3, 3})});
  run("neg", [](const V& in) { return sum(mul(neg(in[0]), in[0])); }, {rand_t({5})});
  run("relu", [](const V& in) { return sum(relu(in[0])); }, {rand_t({17}, 0.05, 1.0)});
  run("elu", [](const V& in) { return sum(elu(in[0])); }, {rand_t({17})});
  run("sigmoid", [](const V& in) { return sum(sigmoid(in[0])); }, {rand_t({9}, -3.0, 3.0)});
  run("tanh", [](const V& in) { return sum(square(tanh_t(in[0]))); }, {rand_t({9}, -2.0, 2.0)});
  run("exp", [](const V& in) { return sum(exp_t(in[0])); }, {rand_t({9})});
  run("log", [](const V& in) { return sum(log_t(in[0])); }, {rand_t({9}, 0.5, 2.0)});
  run("sqrt", [](const V& in) { return sum(sqrt_t(in[0])); }, {rand_t({9}, 0.5, 2.0)});
  run("abs", [](const V& in) { return sum(abs_t(in[0])); }, {rand_t({9}, 0.1, 1.0)});
  run("matmul", [](const V& in) { return sum(matmul(in[0], in[1])); },
      {rand_t({3, 4}), rand_t({4, 2})});
  run("matmul(batched)", [](const V& in) { return sum(square(matmul(in[0], in[1]))); },
      {rand_t({2, 3, 4}), rand_t({2, 4, 2})});
  run("matmul(batched-lhs)", [](const V& in) { return sum(matmul(in[0], in[1])); },
      {rand_t({2, 3, 4}), rand_t({4, 2})});
  run("softmax", [](const V& in) { return sum(square(softmax(in[0], 1))); },
      {rand_t({3, 5}, -2.0, 2.0)});
  run("layer-normalization",
      [](const V& in) { return sum(square(layer_norm(in[0], in[1], in[2]))); },
      {rand_t({4, 6}), rand_t({6}, 0.5, 1.5), rand_t({6})});
  run("sum(axis)", [](const V& in) { return sum(square(sum(in[0], {1}, true))); },
      {rand_t({3, 4, 2})});
  run("mean(axis)", [](const V& in) { return sum(square(mean(in[0], {0, 2}))); },
      {rand_t({3, 4, 2})});
  run("max(axis)", [](const V& in) { return sum(max_axis(in[0], 1).values); },
      {rand_t({3, 7})});
  run("concatenate", [](const V& in) { return sum(square(concat<R>({in[0], in[1]}, 1))); },
      {rand_t({2, 3}), rand_t({2, 2})});
  run("slice", [](const V& in) { return sum(square(slice(in[0], 1, 1, 2))); },
      {rand_t({3, 5})});
  run("reshape", [](const V& in) { return sum(square(reshape(in[0], {6, 2}))); },
      {rand_t({3, 4})});
  run("permute", [](const V& in) { return sum(square(permute(in[0], {2, 0, 1}))); },
      {rand_t({2, 3, 4})});
  run("conv2d", [](const V& in) { return sum(square(conv2d(in[0], in[1], in[2], 2, 1))); },
      {rand_t({2, 3, 5, 6}), rand_t({4, 3, 3, 3}), rand_t({4})});
  run("conv3d", [](const V& in) { return sum(square(conv3d(in[0], in[1], in[2], 2, 1))); },
      {rand_t({1, 2, 4, 5, 4}), rand_t({3, 2, 3, 3, 3}), rand_t({3})});
  run("transpose-conv3d",
      [](const V& in) { return sum(square(conv_transpose3d(in[0], in[1], in[2], 2, 1, 1))); },
      {rand_t({1, 3, 2, 3, 3}), rand_t({3, 2, 3, 3, 3}), rand_t({2})});
  {
    auto xs = std::make_shared<std::vector<double>>(std::vector<double>{0.3, 1.7, 2.0, -0.4, 3.6});
    auto ys = std::make_shared<std::vector<double>>(std::vector<double>{1.2, 0.5, 2.9, 1.0, 0.2});
    run("bilinear-sample-2d",
        [xs, ys](const V& in) { return sum(square(bilinear_sample2d(in[0], xs, ys).values)); },
        {rand_t({2, 4, 4})});
  }
  {
    auto xs = std::make_shared<std::vector<double>>(std::vector<double>{0.3, 1.7, 2.2});
    auto ys = std::make_shared<std::vector<double>>(std::vector<double>{1.2, 0.5, 1.9});
    auto zs = std::make_shared<std::vector<double>>(std::vector<double>{0.4, 1.1, 0.9});
    run("trilinear-sample-3d",
        [xs, ys, zs](const V& in) {
          return sum(square(trilinear_sample3d(in[0], xs, ys, zs).values));
        },
        {rand_t({2, 3, 3, 4})});
  }
  run("cosine-similarity",
      [](const V& in) { return sum(square(cosine_similarity(in[0], in[1], 1))); },
      {rand_t({3, 5}, 0.2, 1.0), rand_t({3, 5}, 0.2, 1.0)});

  return results;
}

}  // namespace mvsurf
