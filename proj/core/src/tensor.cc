#include "xaib/tensor.h"

#include <algorithm>
#include <sstream>

#include "xaib/error.h"

namespace xaib {

std::int64_t NumElements(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw Error("negative dimension in shape " + ShapeToString(shape));
    n *= d;
  }
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) {
  const auto n = static_cast<std::size_t>(NumElements(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<std::vector<float>>(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  const auto n = static_cast<std::size_t>(NumElements(shape));
  if (n != values.size()) {
    throw Error("tensor: shape " + ShapeToString(shape) + " needs " + std::to_string(n) +
                " values, got " + std::to_string(values.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<std::vector<float>>(std::move(values));
}

Tensor Tensor::FromValues(std::initializer_list<float> values) {
  return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<float>(values));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw Error("axis " + std::to_string(axis) + " out of range for shape " + ShapeToString(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data->size() : 0; }

std::span<float> Tensor::data() {
  if (!impl_) throw Error("use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw Error("use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

float Tensor::item() const {
  if (numel() != 1) throw Error("item() on tensor of shape " + ShapeToString(shape()));
  return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw Error("use of undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!impl_) throw Error("use of undefined tensor");
  return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detached() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = std::make_shared<std::vector<float>>(*impl_->data);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (static_cast<std::size_t>(NumElements(new_shape)) != numel()) {
    throw Error("reshape: cannot view " + ShapeToString(shape()) + " as " +
                ShapeToString(new_shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(new_shape);
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool Tensor::same_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->data == other.impl_->data;
}

std::span<float> Tape::GradBuffer(const Tensor& t) {
  auto& impl = *t.impl_;
  if (impl.grad.empty()) impl.grad.assign(impl.data->size(), 0.0f);
  return {impl.grad.data(), impl.grad.size()};
}

bool Tape::record(std::string op, std::initializer_list<Tensor> inputs, const Tensor& output,
                  BackwardFn fn) {
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return false;
  output.impl_->requires_grad = true;
  entries_.push_back(Entry{std::move(op), output.impl_, std::move(fn)});
  return true;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error("backward: loss must be a scalar, got shape " +
                (loss.defined() ? ShapeToString(loss.shape()) : std::string("<undefined>")));
  }
  const auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                               [&](const Entry& e) { return e.output == loss.impl_; });
  if (it == entries_.rend()) {
    throw Error("backward: loss tensor is not recorded on this tape (detached?)");
  }
  auto& seed = loss.impl_->grad;
  seed.assign(1, 1.0f);
  // Entries after the loss cannot contribute to it.
  for (auto e = it; e != entries_.rend(); ++e) {
    auto& out = *e->output;
    if (out.grad.empty()) continue;  // not on a path to the loss
    e->fn(std::span<const float>(out.grad.data(), out.grad.size()));
  }
  entries_.clear();
}

}  // namespace xaib
