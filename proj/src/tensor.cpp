#include "hetddi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hetddi {

namespace {

std::int64_t shapeProduct(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw DimensionError("tensor extents must be positive, got shape " +
                           Tensor::shapeString(shape));
    }
    n *= d;
  }
  return n;
}

void requireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         a.shapeString() + " vs " + b.shapeString());
  }
}

void accumulate(std::vector<double>& dst, const std::vector<double>& src,
                double factor) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      buf_(std::make_shared<std::vector<double>>(
          static_cast<std::size_t>(shapeProduct(shape_)), 0.0)) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)),
      buf_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shapeProduct(shape_) != static_cast<std::int64_t>(buf_->size())) {
    throw DimensionError("value count " + std::to_string(buf_->size()) +
                         " does not match shape " + shapeString());
  }
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.buf_->begin(), t.buf_->end(), v);
  return t;
}

double* Tensor::mutableData() {
  if (!buf_) throw Error("mutableData on empty tensor");
  return buf_->data();
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() requires a scalar tensor, got shape " +
                         shapeString());
  }
  return (*buf_)[0];
}

std::string Tensor::shapeString(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void checkFinite(const Tensor& t, const char* opName) {
  const double* p = t.data();
  for (std::int64_t i = 0, n = t.size(); i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string(opName) +
                         " produced a non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

Tensor Tape::leaf(const Tensor& t) {
  Tensor out = t;
  nodes_.push_back(Node{t.size(), nullptr});
  grads_.emplace_back();
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

void Tape::record(Tensor& out, BackFn back) {
  nodes_.push_back(Node{out.size(), std::move(back)});
  grads_.emplace_back();
  out.node_ = static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::gradBuf(int node) {
  auto& g = grads_[static_cast<std::size_t>(node)];
  if (g.empty()) {
    g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size),
             0.0);
  }
  return g;
}

const std::vector<double>* Tape::gradIfAny(int node) const {
  const auto& g = grads_[static_cast<std::size_t>(node)];
  return g.empty() ? nullptr : &g;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         loss.shapeString());
  }
  if (!loss.tracked()) return;  // loss independent of everything on the tape
  gradBuf(loss.node_)[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    const auto* g = gradIfAny(i);
    if (node.back && g) node.back(*this, *g);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (t.tracked()) {
    if (const auto* g = gradIfAny(t.node_)) return *g;
  }
  return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  requireSameShape(a, b, "add");
  Tensor out(a.shape());
  double* o = out.mutableData();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a[i] + b[i];
  checkFinite(out, "add");
  if (tape && (a.tracked() || b.tracked())) {
    int an = a.node(), bn = b.node();
    tape->record(out, [an, bn](Tape& tp, const std::vector<double>& go) {
      if (an >= 0) accumulate(tp.gradBuf(an), go, 1.0);
      if (bn >= 0) accumulate(tp.gradBuf(bn), go, 1.0);
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  requireSameShape(a, b, "sub");
  Tensor out(a.shape());
  double* o = out.mutableData();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a[i] - b[i];
  checkFinite(out, "sub");
  if (tape && (a.tracked() || b.tracked())) {
    int an = a.node(), bn = b.node();
    tape->record(out, [an, bn](Tape& tp, const std::vector<double>& go) {
      if (an >= 0) accumulate(tp.gradBuf(an), go, 1.0);
      if (bn >= 0) accumulate(tp.gradBuf(bn), go, -1.0);
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  requireSameShape(a, b, "mul");
  Tensor out(a.shape());
  double* o = out.mutableData();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a[i] * b[i];
  checkFinite(out, "mul");
  if (tape && (a.tracked() || b.tracked())) {
    int an = a.node(), bn = b.node();
    Tensor av = a, bv = b;  // shared buffers, cheap
    tape->record(out, [an, bn, av, bv](Tape& tp, const std::vector<double>& go) {
      if (an >= 0) {
        auto& ga = tp.gradBuf(an);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[static_cast<std::int64_t>(i)];
      }
      if (bn >= 0) {
        auto& gb = tp.gradBuf(bn);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[static_cast<std::int64_t>(i)];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  Tensor out(a.shape());
  double* o = out.mutableData();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a[i] * s;
  checkFinite(out, "scale");
  if (tape && a.tracked()) {
    int an = a.node();
    tape->record(out, [an, s](Tape& tp, const std::vector<double>& go) {
      accumulate(tp.gradBuf(an), go, s);
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i];
  Tensor out = Tensor::scalar(acc);
  checkFinite(out, "sum");
  if (tape && a.tracked()) {
    int an = a.node();
    tape->record(out, [an](Tape& tp, const std::vector<double>& go) {
      auto& ga = tp.gradBuf(an);
      for (auto& g : ga) g += go[0];
    });
  }
  return out;
}

Tensor mean(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i];
  double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(acc * inv);
  checkFinite(out, "mean");
  if (tape && a.tracked()) {
    int an = a.node();
    tape->record(out, [an, inv](Tape& tp, const std::vector<double>& go) {
      auto& ga = tp.gradBuf(an);
      for (auto& g : ga) g += go[0] * inv;
    });
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& a, std::vector<int> shape) {
  if (shapeProduct(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + a.shapeString() + " as " +
                         Tensor::shapeString(shape));
  }
  Tensor out(std::move(shape), a.values());
  if (tape && a.tracked()) {
    int an = a.node();
    tape->record(out, [an](Tape& tp, const std::vector<double>& go) {
      accumulate(tp.gradBuf(an), go, 1.0);
    });
  }
  return out;
}

}  // namespace hetddi
