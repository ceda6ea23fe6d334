#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "hetddi/error.hpp"

namespace hetddi {

class Tape;

/// Dense n-dimensional array of doubles, row-major. Tensors are immutable
/// once handed to an op; the data buffer is shared on copy. A tensor that
/// participates in gradient computation carries the id of its tape node.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<int> shape);

  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(std::vector<int> shape, double v);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const {
    return buf_ ? static_cast<std::int64_t>(buf_->size()) : 0;
  }
  bool empty() const { return !buf_; }

  const double* data() const { return buf_->data(); }
  const std::vector<double>& values() const { return *buf_; }

  /// Direct write access, valid only while this tensor owns the sole
  /// reference to its buffer (i.e. during construction, before any op sees
  /// it).
  double* mutableData();

  double operator[](std::int64_t i) const {
    return (*buf_)[static_cast<std::size_t>(i)];
  }

  /// Value of the single element of a scalar (size-1) tensor.
  double item() const;

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }

  static std::string shapeString(const std::vector<int>& shape);
  std::string shapeString() const { return shapeString(shape_); }

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> buf_;
  int node_ = -1;
};

/// Throws NumericError if any element of t is NaN or Inf.
void checkFinite(const Tensor& t, const char* opName);

/// Record of executed ops. Each op appends one node holding a backward
/// closure; backward() replays them in exact reverse execution order,
/// accumulating gradient contributions additively.
class Tape {
 public:
  /// A backward closure receives the tape and the gradient of the loss
  /// w.r.t. the op's output, and accumulates into the input gradients via
  /// gradBuf().
  using BackFn = std::function<void(Tape&, const std::vector<double>&)>;

  /// Registers t as a leaf (typically a parameter or an input that needs a
  /// gradient) and returns a tracked view of it.
  Tensor leaf(const Tensor& t);

  /// Marks out as the result of an op with the given backward closure.
  void record(Tensor& out, BackFn back);

  /// Runs reverse-mode accumulation from a scalar loss. Throws
  /// DimensionError if loss is not a size-1 tensor.
  void backward(const Tensor& loss);

  /// Gradient of the loss w.r.t. t. A tensor the loss never touched gets a
  /// zero gradient of matching size.
  std::vector<double> grad(const Tensor& t) const;

  /// Gradient buffer of a node, allocated (zeroed) on first touch. For use
  /// by backward closures.
  std::vector<double>& gradBuf(int node);

  std::size_t nodeCount() const { return nodes_.size(); }

 private:
  struct Node {
    std::int64_t size;
    BackFn back;
  };
  const std::vector<double>* gradIfAny(int node) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// ---------------------------------------------------------------------------
// Elementwise / reduction primitives. Every op validates shapes, computes the
// forward value, checks it for non-finite entries, and (when any input is
// tracked on the given tape) records its backward closure. Pass tape=nullptr
// for pure inference.
// ---------------------------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor sum(Tape* tape, const Tensor& a);
Tensor mean(Tape* tape, const Tensor& a);

/// Shape change without data movement; gradients flow through unchanged.
Tensor reshape(Tape* tape, const Tensor& a, std::vector<int> shape);

}  // namespace hetddi
