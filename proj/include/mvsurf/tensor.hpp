#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvsurf {

template <class R>
struct Node;

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline Shape row_major_strides(const Shape& s) {
  Shape st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Dense row-major N-d array. Copies share the underlying buffer; recorded
// buffers are never mutated in place, new values always go to fresh storage.
// A rank-0 tensor is a scalar with one element.
template <class R>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = std::make_shared<std::vector<R>>(shape_numel(shape_), R(0));
  }

  Tensor(Shape shape, std::vector<R> values) : shape_(std::move(shape)) {
    check_shape();
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<R>>(std::move(values));
  }

  static Tensor scalar(R v) { return Tensor({}, {v}); }

  static Tensor full(Shape shape, R v) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), R(1)); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i >= 0 ? i : rank() + i)]; }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

  R* data() { return data_->data(); }
  const R* data() const { return data_->data(); }
  R& operator[](std::int64_t i) { return (*data_)[i]; }
  const R& operator[](std::int64_t i) const { return (*data_)[i]; }

  R item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor with shape " + shape_str(shape_));
    return (*data_)[0];
  }

  R at(std::initializer_list<std::int64_t> idx) const {
    return (*data_)[flat_index(idx)];
  }
  R& at(std::initializer_list<std::int64_t> idx) {
    return (*data_)[flat_index(idx)];
  }

  // Shares the buffer; only the shape changes.
  Tensor view(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
      throw std::invalid_argument("view: cannot reshape " + shape_str(shape_) + " to " +
                                  shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<R>>(*data_);
    return t;
  }

  template <class R2>
  Tensor<R2> cast() const {
    std::vector<R2> v(static_cast<std::size_t>(numel()));
    for (std::int64_t i = 0; i < numel(); ++i) v[static_cast<std::size_t>(i)] = static_cast<R2>((*data_)[i]);
    return Tensor<R2>(shape_, std::move(v));
  }

  // -- autograd hooks ----------------------------------------------------

  const std::shared_ptr<Node<R>>& node() const { return node_; }
  void set_node(std::shared_ptr<Node<R>> n) { node_ = std::move(n); }
  bool tracked() const { return node_ != nullptr; }

 private:
  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw std::invalid_argument("at(): rank mismatch");
    std::int64_t flat = 0, i = 0;
    const Shape st = row_major_strides(shape_);
    for (auto v : idx) flat += v * st[static_cast<std::size_t>(i++)];
    return flat;
  }

  void check_shape() const {
    for (auto e : shape_)
      if (e < 1) throw std::invalid_argument("tensor: extent < 1 in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<R>> data_;
  std::shared_ptr<Node<R>> node_;
};

}  // namespace mvsurf
