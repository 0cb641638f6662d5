#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hiera {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

struct TensorImpl;
using BackwardFn = std::function<void(TensorImpl& self)>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool frozen = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward;

  std::span<double> grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

// Dense float64 array of up to 4 dims (B x C x H x W by convention) with
// reverse-mode gradient tracking. Copies share storage; use clone() for a
// deep copy and detach() for a graph-free copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int dim(int i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writes bypass the graph; only use on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(int b, int c, int y, int x) const;  // 4-D only

  bool requires_grad() const;
  void set_requires_grad(bool on);
  // Frozen tensors never require grad and are rejected by optimizers.
  bool frozen() const;
  void freeze();

  bool has_grad() const;
  std::span<const double> grad() const;  // empty span when no gradient
  void zero_grad();
  void clear_grad();

  // Reverse-mode sweep from a single-element tensor. The graph is released
  // afterwards; leaf gradients accumulate.
  void backward();

  Tensor detach() const;
  Tensor clone() const;  // deep copy, keeps requires_grad, no graph

  const void* id() const { return impl_.get(); }

  // Graph construction hook used by ops: result requires grad when any
  // parent does; `fn` is kept only in that case.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::initializer_list<Tensor> parents,
                            detail::BackwardFn fn);
  static Tensor make_result(Shape shape, std::vector<double> data,
                            const std::vector<Tensor>& parents, detail::BackwardFn fn);
  detail::TensorImpl& impl() const { return *impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace hiera
