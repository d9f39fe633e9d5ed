#pragma once

// Reverse-mode autodiff over dense row-major arrays. Tensors are cheap
// handles onto a shared buffer; any op whose inputs require gradients
// records a tape node, and backward() replays the tape in reverse
// topological order, accumulating d(loss)/d(leaf) into leaf .grad buffers.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "crnl/common.hpp"

namespace crnl {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

// During a backward pass every tensor's upstream gradient lives in a
// scratch map; only leaves fold it into their persistent buffer, so
// running backward twice accumulates exactly twice the gradient.
struct BackContext {
    std::unordered_map<const TensorImpl*, std::vector<real>> slots;
    std::vector<real>& slot_for(const TensorImpl* t);
    const std::vector<real>* find(const TensorImpl* t) const;
};

struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    const TensorImpl* out = nullptr;
    // accumulate input gradients given the output gradient
    std::function<void(const std::vector<real>& gout, BackContext& ctx)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // leaves only; allocated on first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> producer;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool is_leaf() const { return producer == nullptr; }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);
    static Tensor uniform(Shape shape, real lo, real hi, Rng& rng, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(int axis) const;
    int ndim() const;

    real* data();
    const real* data() const;
    std::vector<real>& vec();
    const std::vector<real>& vec() const;
    real item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool rg);  // leaves only
    // leaf gradient; null until a backward pass reached this tensor
    const std::vector<real>* grad() const;
    std::vector<real>& grad_ref();  // allocates zeros if absent
    void zero_grad();

    Tensor detach() const;  // shares data, drops graph and requires_grad

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Creates the output tensor for an op: allocates data, wires the tape node
// when gradients are live. Layer modules use this to register custom ops.
Tensor make_op_output(const std::string& op, Shape shape, std::vector<real> data,
                      std::vector<Tensor> inputs,
                      std::function<void(const std::vector<real>&, BackContext&)> backward);
// Fetch the gradient slot of one input inside a custom backward closure.
std::vector<real>& grad_slot(BackContext& ctx, const Tensor& input);

// --- forward suite ---------------------------------------------------------
// b may either match a's shape or be a suffix of it (broadcast over the
// leading dimensions); nothing fancier.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real s);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, const std::vector<int>& perm);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor mean_over_axis(const Tensor& a, int axis);  // squeezes the axis
Tensor sum_all(const Tensor& a);                   // -> shape {1}
Tensor mean_all(const Tensor& a);                  // -> shape {1}
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softmax_over_axis(const Tensor& a, int axis);
Tensor log_softmax_over_axis(const Tensor& a, int axis);
Tensor clip(const Tensor& a, real lo, real hi);

// Reverse pass from a scalar loss. Leaf .grad accumulates additively.
void backward(const Tensor& loss);

// Central-finite-difference check of d f / d x against the autodiff value.
// Returns max over coordinates of |analytic-numeric| / max(1,|a|,|n|).
// Coordinates where the one-sided differences disagree (a kink under the
// step, e.g. ReLU at 0) are excluded.
real grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, real eps = 1e-4);

}  // namespace crnl
