#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rgin {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op produces NaN/Inf while finite-checking is enabled.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on misuse of the tape (double backward, non-scalar loss, ...).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
///
/// A tensor that requires grad owns a same-shape gradient accumulator. Values are
/// treated as immutable once an op has consumed them; only parameters are updated
/// in place (by the optimizer or checkpoint loader), outside any live tape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->data.size(), T(0));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  const T* raw() const { return node_->data.data(); }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::span<const T> grad() const {
    if (!requires_grad()) throw TapeError("tensor does not track gradients");
    return node_->grad;
  }
  std::span<T> mutable_grad() const {
    if (!requires_grad()) throw TapeError("tensor does not track gradients");
    return node_->grad;
  }
  void zero_grad() {
    if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  /// Deep copy of values; the copy is detached (no gradient tracking unless requested).
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->data, requires_grad);
  }

  /// Value copy in another precision.
  template <class U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(node_->shape, std::move(out), requires_grad);
  }

  bool same_storage(const Tensor& o) const { return node_ == o.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Ordered record of executed ops. Each entry is the adjoint of one forward op;
/// entries are appended in execution order, so inputs always precede consumers.
/// backward() replays them once, in exact reverse order.
template <class T>
class Tape {
 public:
#ifdef NDEBUG
  static constexpr bool kCheckFiniteDefault = false;
#else
  static constexpr bool kCheckFiniteDefault = true;
#endif

  explicit Tape(bool grad_enabled = true, bool check_finite = kCheckFiniteDefault)
      : grad_enabled_(grad_enabled), check_finite_(check_finite) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  bool check_finite() const { return check_finite_; }
  void set_check_finite(bool on) { check_finite_ = on; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& op_names() const { return names_; }

  /// Appends the adjoint of an op that has just produced a grad-tracking output.
  void record(std::string name, std::function<void()> adjoint) {
    if (consumed_) throw TapeError("cannot record onto a consumed tape");
    names_.push_back(std::move(name));
    entries_.push_back(std::move(adjoint));
  }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw TapeError("backward called twice on the same tape");
    if (loss.size() != 1)
      throw TapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw TapeError("loss does not depend on any tracked tensor");
    loss.mutable_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    consumed_ = true;
    entries_.clear();
    entries_.shrink_to_fit();
  }

  /// Branch tracing: piecewise ops fold which side of each kink their inputs fell on
  /// into a running signature. Off unless a caller asks for it.
  void set_trace_branches(bool on) { trace_branches_ = on; }
  bool trace_branches() const { return trace_branches_; }
  std::uint64_t branch_signature() const { return signature_; }
  template <class Pred>
  void note_branches(std::size_t n, Pred&& side) {
    if (!trace_branches_) return;
    for (std::size_t i = 0; i < n; ++i) signature_ = (signature_ ^ (static_cast<std::uint64_t>(side(i)) + 1)) * 0x100000001b3ull;
  }

  /// Drops the recorded graph so the tape can be reused for a fresh forward pass.
  void reset() {
    entries_.clear();
    names_.clear();
    consumed_ = false;
  }

 private:
  bool grad_enabled_;
  bool check_finite_;
  bool consumed_ = false;
  bool trace_branches_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ull;
  std::vector<std::function<void()>> entries_;
  std::vector<std::string> names_;
};

}  // namespace rgin
