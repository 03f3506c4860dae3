#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "mvsurf/tensor.hpp"

namespace mvsurf {

// One recorded operation output (or a leaf). Holds the accumulated gradient
// and a closure that pushes it to the inputs' nodes. Saved activations live
// inside the closure captures.
template <class R>
struct Node {
  Shape shape;
  Tensor<R> grad;  // lazily allocated
  std::function<void(const Tensor<R>&)> backprop;  // empty for leaves

  explicit Node(Shape s) : shape(std::move(s)) {}

  Tensor<R>& grad_buffer() {
    if (!grad.defined()) grad = Tensor<R>::zeros(shape);
    return grad;
  }

  void accumulate(const Tensor<R>& g) {
    Tensor<R>& buf = grad_buffer();
    R* dst = buf.data();
    const R* src = g.data();
    const std::int64_t n = buf.numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }
};

// Tape of nodes in creation order (a topological order of the data flow).
// Single-writer: one thread records and runs backward.
template <class R>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  ~Graph() {
    if (active_ == this) active_ = nullptr;
  }

  static Graph* active() { return active_; }
  static bool recording() { return active_ != nullptr && !active_->paused_; }

  void record(std::shared_ptr<Node<R>> n) { nodes_.push_back(std::move(n)); }

  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(x) into every reachable node, leaves included.
  // Each recorded node is visited exactly once, in reverse recording order.
  void backward(const Tensor<R>& loss) {
    if (loss.numel() != 1)
      throw std::logic_error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.tracked())
      throw std::logic_error("backward: loss was not recorded on a graph");
    if (consumed_)
      throw std::logic_error("backward: graph already consumed");
    consumed_ = true;
    loss.node()->grad_buffer()[0] = R(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<R>& n = **it;
      if (!n.grad.defined() || !n.backprop) continue;  // off the loss path
      n.backprop(n.grad);
    }
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

  bool consumed() const { return consumed_; }

  // RAII activation for the recording scope.
  class Activate {
   public:
    explicit Activate(Graph& g) : prev_(active_) { active_ = &g; }
    ~Activate() { active_ = prev_; }

   private:
    Graph* prev_;
  };

  // Temporarily suspends recording (sampling passes, hypothesis updates).
  class Pause {
   public:
    Pause() : graph_(active_) {
      if (graph_) {
        prev_ = graph_->paused_;
        graph_->paused_ = true;
      }
    }
    ~Pause() {
      if (graph_) graph_->paused_ = prev_;
    }

   private:
    Graph* graph_;
    bool prev_ = false;
  };

 private:
  static inline thread_local Graph* active_ = nullptr;
  std::vector<std::shared_ptr<Node<R>>> nodes_;
  bool consumed_ = false;
  bool paused_ = false;
};

// Marks a tensor as a differentiation root (leaf); its gradient can be read
// from the node after backward.
template <class R>
inline void make_leaf(Tensor<R>& t) {
  if (!t.tracked()) t.set_node(std::make_shared<Node<R>>(t.shape()));
}

template <class R>
inline Tensor<R> leaf_grad(const Tensor<R>& t) {
  if (!t.tracked() || !t.node()->grad.defined()) return Tensor<R>::zeros(t.shape());
  return t.node()->grad;
}

}  // namespace mvsurf
