#include "hiera/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "hiera/error.hpp"

namespace hiera {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw InputError("tensor: rank must be 1..4, got " + shape_str(shape));
  }
  for (int d : shape) {
    if (d <= 0) throw InputError("tensor: non-positive dimension in " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> data(shape_numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (data.size() != shape_numel(shape)) {
    throw InputError("tensor: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::dim(int i) const {
  const auto& s = impl_->shape;
  if (i < 0) i += static_cast<int>(s.size());
  return s.at(i);
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw InputError("tensor: item() on " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(int b, int c, int y, int x) const {
  const auto& s = impl_->shape;
  if (s.size() != 4) throw InputError("tensor: at() requires a 4-D tensor");
  return impl_->data[((static_cast<std::size_t>(b) * s[1] + c) * s[2] + y) * s[3] + x];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (on && impl_->frozen) throw InputError("tensor: cannot enable grad on a frozen tensor");
  impl_->requires_grad = on;
}

bool Tensor::frozen() const { return impl_->frozen; }

void Tensor::freeze() {
  impl_->frozen = true;
  impl_->requires_grad = false;
  impl_->grad.clear();
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.clear(); }

void Tensor::backward() {
  if (numel() != 1) throw InputError("backward: root must be a single-element tensor");
  if (!impl_->requires_grad) throw InputError("backward: root does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::TensorImpl* node : order) {
    if (!node->parents.empty() || node->backward) {
      node->parents.clear();
      node->backward = nullptr;
      if (node != impl_.get()) node->grad.clear();
    }
  }
}

Tensor Tensor::detach() const { return from_data(shape(), impl_->data, false); }

Tensor Tensor::clone() const {
  Tensor t = from_data(shape(), impl_->data, impl_->requires_grad);
  t.impl_->frozen = impl_->frozen;
  return t;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data,
                           std::initializer_list<Tensor> parents, detail::BackwardFn fn) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor>(parents),
                     std::move(fn));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data,
                           const std::vector<Tensor>& parents, detail::BackwardFn fn) {
  Tensor out = from_data(std::move(shape), std::move(data), false);
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (any) {
    out.impl_->requires_grad = true;
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) out.impl_->parents.push_back(p.impl_);
    }
    out.impl_->backward = std::move(fn);
  }
  return out;
}

}  // namespace hiera
