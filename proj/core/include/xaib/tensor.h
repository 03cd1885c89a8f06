#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xaib {

using Shape = std::vector<std::int64_t>;

std::int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<float>> data;
  std::vector<float> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float32 array. Copies are cheap handles onto the same
// storage (like a framework tensor); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor FromValues(std::initializer_list<float> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();

  // Same storage, no gradient tracking.
  Tensor detached() const;
  Tensor clone() const;
  // View with a new shape over the same storage; not recorded on a tape.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const;

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Records operations so that backward() can replay their gradient rules in
// reverse order. One tape per forward/backward pass; tapes are not shared
// between threads.
class Tape {
 public:
  // Accumulates contributions into the input gradients given the output's.
  using BackwardFn = std::function<void(std::span<const float> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records `output = op(inputs)` when any input requires a gradient.
  // Returns true when the entry was recorded.
  bool record(std::string op, std::initializer_list<Tensor> inputs, const Tensor& output,
              BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once in reverse.
  // The tape is cleared afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Gradient accumulation buffer for `t`, allocated (zeroed) on first use.
  static std::span<float> GradBuffer(const Tensor& t);

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

}  // namespace xaib
