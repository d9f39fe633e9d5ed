#include "crnl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "crnl/kernels.hpp"

namespace crnl {

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::vector<real>& BackContext::slot_for(const TensorImpl* t) {
    auto it = slots.find(t);
    if (it == slots.end())
        it = slots.emplace(t, std::vector<real>(t->data.size(), real(0))).first;
    return it->second;
}

const std::vector<real>* BackContext::find(const TensorImpl* t) const {
    auto it = slots.find(t);
    return it == slots.end() ? nullptr : &it->second;
}

// --- Tensor ----------------------------------------------------------------

static thread_local bool t_grad_enabled = true;
bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(numel_of(shape), real(0));
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<real> data, bool requires_grad) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, real lo, real hi, Rng& rng, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = static_cast<real>(rng.next_uniform(lo, hi));
    return t;
}

static const TensorImpl& deref(const std::shared_ptr<TensorImpl>& p) {
    if (!p) throw ContractError("use of undefined tensor");
    return *p;
}

const Shape& Tensor::shape() const { return deref(impl_).shape; }
int64_t Tensor::numel() const { return deref(impl_).numel(); }
int Tensor::ndim() const { return static_cast<int>(deref(impl_).shape.size()); }
int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    return s[axis];
}

real* Tensor::data() { return deref(impl_).data.empty() ? nullptr : impl_->data.data(); }
const real* Tensor::data() const {
    return deref(impl_).data.empty() ? nullptr : impl_->data.data();
}
std::vector<real>& Tensor::vec() {
    deref(impl_);
    return impl_->data;
}
const std::vector<real>& Tensor::vec() const { return deref(impl_).data; }

real Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor " + shape_str(shape()) + " is not scalar");
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return deref(impl_).requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    deref(impl_);
    if (impl_->producer)
        throw ContractError("set_requires_grad: only leaf tensors can change this flag");
    impl_->requires_grad = rg;
}

const std::vector<real>* Tensor::grad() const {
    deref(impl_);
    return impl_->grad.empty() && impl_->numel() > 0 ? nullptr : &impl_->grad;
}

std::vector<real>& Tensor::grad_ref() {
    deref(impl_);
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), real(0));
    return impl_->grad;
}

void Tensor::zero_grad() {
    deref(impl_);
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
}

Tensor Tensor::detach() const {
    deref(impl_);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = false;
    return Tensor(std::move(impl));
}

// --- op plumbing -----------------------------------------------------------

static void check_finite(const std::string& op, const std::vector<real>& data) {
    for (real v : data)
        if (std::isnan(v)) throw ContractError(op + ": NaN in forward result");
}

Tensor make_op_output(const std::string& op, Shape shape, std::vector<real> data,
                      std::vector<Tensor> inputs,
                      std::function<void(const std::vector<real>&, BackContext&)> backward) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError(op + ": output buffer does not match shape " + shape_str(shape));
    if (debug_checks()) check_finite(op, data);

    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);

    bool needs = false;
    if (grad_enabled())
        for (const auto& in : inputs)
            if (in.requires_grad()) needs = true;
    if (needs) {
        impl->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = op;
        node->out = impl.get();
        for (auto& in : inputs) node->inputs.push_back(in.impl());
        node->backward = std::move(backward);
        impl->producer = std::move(node);
    }
    return Tensor(std::move(impl));
}

std::vector<real>& grad_slot(BackContext& ctx, const Tensor& input) {
    return ctx.slot_for(input.impl().get());
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined loss");
    if (loss.numel() != 1)
        throw ContractError("backward: loss has shape " + shape_str(loss.shape()) +
                            ", expected a scalar");

    BackContext ctx;
    ctx.slot_for(loss.impl().get()).assign(1, real(1));

    if (!loss.impl()->producer) {
        if (loss.requires_grad()) {
            auto& g = loss.impl()->grad;
            if (g.size() != 1) g.assign(1, real(0));
            g[0] += real(1);
        }
        return;
    }

    // reverse topological order via iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_map<Node*, int> state;  // 0 new, 1 open, 2 done
    std::vector<Node*> stack{loss.impl()->producer.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        int& st = state[n];
        if (st == 0) {
            st = 1;
            for (auto& in : n->inputs)
                if (in->producer && state[in->producer.get()] == 0)
                    stack.push_back(in->producer.get());
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                order.push_back(n);
            }
        }
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        const auto* gout = ctx.find(n->out);
        if (!gout) continue;  // unreachable from loss
        n->backward(*gout, ctx);
    }

    // fold scratch gradients into persistent buffers of the leaves
    for (auto& [impl, g] : ctx.slots) {
        if (!impl->requires_grad || !impl->is_leaf()) continue;
        auto* mut = const_cast<TensorImpl*>(impl);
        if (mut->grad.size() != mut->data.size()) mut->grad.assign(mut->data.size(), real(0));
        for (size_t i = 0; i < g.size(); ++i) mut->grad[i] += g[i];
    }
}

// --- elementwise and structural ops ----------------------------------------

// broadcast check: b equals a or a suffix of a's shape
static int64_t broadcast_repeat(const std::string& op, const Shape& a, const Shape& b) {
    if (b.size() > a.size())
        throw ShapeError(op + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
    size_t off = a.size() - b.size();
    for (size_t i = 0; i < b.size(); ++i)
        if (a[off + i] != b[i])
            throw ShapeError(op + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                             " are incompatible");
    int64_t rep = 1;
    for (size_t i = 0; i < off; ++i) rep *= a[i];
    return rep;
}

Tensor add(const Tensor& a, const Tensor& b) {
    int64_t rep = broadcast_repeat("add", a.shape(), b.shape());
    int64_t bn = b.numel();
    std::vector<real> out(a.numel());
    if (rep == 1) {
        kernels::add(a.data(), b.data(), out.data(), a.numel());
    } else {
        const real* ap = a.data();
        const real* bp = b.data();
        kernels::for_range(rep, [&](int64_t lo, int64_t hi) {
            for (int64_t r = lo; r < hi; ++r)
                for (int64_t i = 0; i < bn; ++i) out[r * bn + i] = ap[r * bn + i] + bp[i];
        });
    }
    auto ai = a, bi = b;
    return make_op_output("add", a.shape(), std::move(out), {a, b},
                          [ai, bi, rep, bn](const std::vector<real>& g, BackContext& ctx) {
                              if (ai.requires_grad()) {
                                  auto& ga = ctx.slot_for(ai.impl().get());
                                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                              }
                              if (bi.requires_grad()) {
                                  auto& gb = ctx.slot_for(bi.impl().get());
                                  for (int64_t r = 0; r < rep; ++r)
                                      for (int64_t i = 0; i < bn; ++i) gb[i] += g[r * bn + i];
                              }
                          });
}

static void check_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(op + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<real> out(a.numel());
    const real* ap = a.data();
    const real* bp = b.data();
    kernels::for_range(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out[i] = ap[i] - bp[i];
    });
    auto ai = a, bi = b;
    return make_op_output("sub", a.shape(), std::move(out), {a, b},
                          [ai, bi](const std::vector<real>& g, BackContext& ctx) {
                              if (ai.requires_grad()) {
                                  auto& ga = ctx.slot_for(ai.impl().get());
                                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                              }
                              if (bi.requires_grad()) {
                                  auto& gb = ctx.slot_for(bi.impl().get());
                                  for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                              }
                          });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<real> out(a.numel());
    kernels::mul(a.data(), b.data(), out.data(), a.numel());
    auto ai = a, bi = b;
    return make_op_output("mul", a.shape(), std::move(out), {a, b},
                          [ai, bi](const std::vector<real>& g, BackContext& ctx) {
                              if (ai.requires_grad()) {
                                  auto& ga = ctx.slot_for(ai.impl().get());
                                  const real* bp = bi.data();
                                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bp[i];
                              }
                              if (bi.requires_grad()) {
                                  auto& gb = ctx.slot_for(bi.impl().get());
                                  const real* ap = ai.data();
                                  for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ap[i];
                              }
                          });
}

Tensor scale(const Tensor& a, real s) {
    std::vector<real> out(a.numel());
    const real* ap = a.data();
    kernels::for_range(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out[i] = ap[i] * s;
    });
    auto ai = a;
    return make_op_output("scale", a.shape(), std::move(out), {a},
                          [ai, s](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                          });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<real> out(m * n);
    kernels::gemm(a.data(), b.data(), out.data(), m, k, n, false);
    auto ai = a, bi = b;
    return make_op_output("matmul", {m, n}, std::move(out), {a, b},
                          [ai, bi, m, k, n](const std::vector<real>& g, BackContext& ctx) {
                              if (ai.requires_grad()) {
                                  auto& ga = ctx.slot_for(ai.impl().get());
                                  kernels::gemm_bt(g.data(), bi.data(), ga.data(), m, n, k, true);
                              }
                              if (bi.requires_grad()) {
                                  auto& gb = ctx.slot_for(bi.impl().get());
                                  kernels::gemm_at(ai.data(), g.data(), gb.data(), k, m, n, true);
                              }
                          });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    auto ai = a;
    return make_op_output("reshape", std::move(shape), a.vec(), {a},
                          [ai](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          });
}

static std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

static void permute_copy(const Shape& in_shape, const std::vector<int>& perm, const real* src,
                         real* dst, bool accumulate_back) {
    // dst[j] <- src at permuted coordinates (or += when accumulating grads)
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[perm[i]];
    auto in_strides = strides_of(in_shape);
    auto out_strides = strides_of(out_shape);
    int64_t n = numel_of(in_shape);
    int nd = static_cast<int>(perm.size());
    kernels::for_range(n, [&](int64_t lo, int64_t hi) {
        for (int64_t j = lo; j < hi; ++j) {
            int64_t rem = j, src_off = 0;
            for (int d = 0; d < nd; ++d) {
                int64_t c = rem / out_strides[d];
                rem -= c * out_strides[d];
                src_off += c * in_strides[perm[d]];
            }
            if (accumulate_back)
                dst[src_off] += src[j];
            else
                dst[j] = src[src_off];
        }
    });
}

Tensor transpose(const Tensor& a, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != a.ndim())
        throw ShapeError("transpose: permutation size " + std::to_string(perm.size()) +
                         " vs tensor " + shape_str(a.shape()));
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || p >= a.ndim() || seen[p])
            throw ShapeError("transpose: invalid permutation for " + shape_str(a.shape()));
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
    std::vector<real> out(a.numel());
    permute_copy(a.shape(), perm, a.data(), out.data(), false);
    auto ai = a;
    auto in_shape = a.shape();
    return make_op_output("transpose", std::move(out_shape), std::move(out), {a},
                          [ai, in_shape, perm](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              // grads flow back through the same index map
                              permute_copy(in_shape, perm, g.data(), ga.data(), true);
                          });
}

struct AxisSplit {
    int64_t outer = 1, axis = 1, inner = 1;
};
static AxisSplit split_at(const std::string& op, const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError(op + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.axis = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    auto sp = split_at("slice", a.shape(), axis);
    if (start < 0 || len <= 0 || start + len > sp.axis)
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds axis " +
                         std::to_string(sp.axis) + " of " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::vector<real> out(sp.outer * len * sp.inner);
    const real* ap = a.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(out.data() + o * len * sp.inner, ap + (o * sp.axis + start) * sp.inner,
                    sizeof(real) * len * sp.inner);
    auto ai = a;
    return make_op_output(
        "slice", std::move(out_shape), std::move(out), {a},
        [ai, sp, start, len](const std::vector<real>& g, BackContext& ctx) {
            if (!ai.requires_grad()) return;
            auto& ga = ctx.slot_for(ai.impl().get());
            for (int64_t o = 0; o < sp.outer; ++o) {
                real* dst = ga.data() + (o * sp.axis + start) * sp.inner;
                const real* src = g.data() + o * len * sp.inner;
                for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
            }
        });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    Shape base = parts[0].shape();
    auto sp0 = split_at("concat", base, axis);
    int64_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.ndim() != static_cast<int>(base.size()))
            throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(base));
        for (int d = 0; d < p.ndim(); ++d)
            if (d != axis && p.shape()[d] != base[d])
                throw ShapeError("concat: shapes " + shape_str(p.shape()) + " and " +
                                 shape_str(base) + " differ off-axis");
        total_axis += p.shape()[axis];
    }
    Shape out_shape = base;
    out_shape[axis] = total_axis;
    std::vector<real> out(sp0.outer * total_axis * sp0.inner);
    int64_t at = 0;
    for (const auto& p : parts) {
        int64_t alen = p.shape()[axis];
        const real* src = p.data();
        for (int64_t o = 0; o < sp0.outer; ++o)
            std::memcpy(out.data() + (o * total_axis + at) * sp0.inner,
                        src + o * alen * sp0.inner, sizeof(real) * alen * sp0.inner);
        at += alen;
    }
    auto parts_copy = parts;
    return make_op_output(
        "concat", std::move(out_shape), std::move(out), parts,
        [parts_copy, sp0, total_axis, axis](const std::vector<real>& g, BackContext& ctx) {
            int64_t at = 0;
            for (const auto& p : parts_copy) {
                int64_t alen = p.shape()[axis];
                if (p.requires_grad()) {
                    auto& gp = ctx.slot_for(p.impl().get());
                    for (int64_t o = 0; o < sp0.outer; ++o) {
                        const real* src = g.data() + (o * total_axis + at) * sp0.inner;
                        real* dst = gp.data() + o * alen * sp0.inner;
                        for (int64_t i = 0; i < alen * sp0.inner; ++i) dst[i] += src[i];
                    }
                }
                at += alen;
            }
        });
}

Tensor mean_over_axis(const Tensor& a, int axis) {
    auto sp = split_at("mean_over_axis", a.shape(), axis);
    Shape out_shape;
    for (int d = 0; d < a.ndim(); ++d)
        if (d != axis) out_shape.push_back(a.shape()[d]);
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<real> out(sp.outer * sp.inner);
    kernels::mean_axis(a.data(), sp.outer, sp.axis, sp.inner, out.data());
    auto ai = a;
    return make_op_output("mean_over_axis", std::move(out_shape), std::move(out), {a},
                          [ai, sp](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              real inv = real(1) / static_cast<real>(sp.axis);
                              for (int64_t o = 0; o < sp.outer; ++o)
                                  for (int64_t k = 0; k < sp.axis; ++k)
                                      for (int64_t i = 0; i < sp.inner; ++i)
                                          ga[(o * sp.axis + k) * sp.inner + i] +=
                                              g[o * sp.inner + i] * inv;
                          });
}

static Tensor reduce_all(const Tensor& a, bool mean) {
    const real* ap = a.data();
    real s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) s += ap[i];
    real factor = mean ? real(1) / static_cast<real>(a.numel()) : real(1);
    auto ai = a;
    return make_op_output(mean ? "mean_all" : "sum_all", {1}, {s * factor}, {a},
                          [ai, factor](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              real gv = g[0] * factor;
                              for (auto& v : ga) v += gv;
                          });
}
Tensor sum_all(const Tensor& a) { return reduce_all(a, false); }
Tensor mean_all(const Tensor& a) { return reduce_all(a, true); }

Tensor relu(const Tensor& a) {
    std::vector<real> out(a.numel());
    const real* ap = a.data();
    kernels::for_range(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out[i] = ap[i] > 0 ? ap[i] : real(0);
    });
    auto ai = a;
    return make_op_output("relu", a.shape(), std::move(out), {a},
                          [ai](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              const real* ap = ai.data();
                              // subgradient at 0 is defined as 0
                              for (size_t i = 0; i < g.size(); ++i)
                                  if (ap[i] > 0) ga[i] += g[i];
                          });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<real> out(a.numel());
    const real* ap = a.data();
    kernels::for_range(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            real x = ap[i];
            out[i] = x >= 0 ? real(1) / (real(1) + std::exp(-x))
                            : std::exp(x) / (real(1) + std::exp(x));
        }
    });
    Tensor y = make_op_output("sigmoid", a.shape(), std::move(out), {a}, nullptr);
    if (y.impl()->producer) {
        auto ai = a;
        const TensorImpl* yraw = y.impl().get();  // node is owned by y; raw avoids a cycle
        y.impl()->producer->backward = [ai, yraw](const std::vector<real>& g, BackContext& ctx) {
            if (!ai.requires_grad()) return;
            auto& ga = ctx.slot_for(ai.impl().get());
            const auto& yv = yraw->data;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (real(1) - yv[i]);
        };
    }
    return y;
}

Tensor tanh(const Tensor& a) {
    std::vector<real> out(a.numel());
    const real* ap = a.data();
    kernels::for_range(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out[i] = std::tanh(ap[i]);
    });
    Tensor y = make_op_output("tanh", a.shape(), std::move(out), {a}, nullptr);
    if (y.impl()->producer) {
        auto ai = a;
        const TensorImpl* yraw = y.impl().get();
        y.impl()->producer->backward = [ai, yraw](const std::vector<real>& g, BackContext& ctx) {
            if (!ai.requires_grad()) return;
            auto& ga = ctx.slot_for(ai.impl().get());
            const auto& yv = yraw->data;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (real(1) - yv[i] * yv[i]);
        };
    }
    return y;
}

static void softmax_rows(const real* a, real* out, int64_t outer, int64_t axis, int64_t inner,
                         bool log_space) {
    kernels::for_range(outer * inner, [&](int64_t lo, int64_t hi) {
        for (int64_t j = lo; j < hi; ++j) {
            int64_t o = j / inner, in = j % inner;
            const real* src = a + o * axis * inner + in;
            real* dst = out + o * axis * inner + in;
            real mx = src[0];
            for (int64_t k = 1; k < axis; ++k) mx = std::max(mx, src[k * inner]);
            real denom = 0;
            for (int64_t k = 0; k < axis; ++k) denom += std::exp(src[k * inner] - mx);
            if (log_space) {
                real lden = std::log(denom) + mx;
                for (int64_t k = 0; k < axis; ++k) dst[k * inner] = src[k * inner] - lden;
            } else {
                for (int64_t k = 0; k < axis; ++k)
                    dst[k * inner] = std::exp(src[k * inner] - mx) / denom;
            }
        }
    });
}

Tensor softmax_over_axis(const Tensor& a, int axis) {
    auto sp = split_at("softmax_over_axis", a.shape(), axis);
    std::vector<real> out(a.numel());
    softmax_rows(a.data(), out.data(), sp.outer, sp.axis, sp.inner, false);
    Tensor y = make_op_output("softmax_over_axis", a.shape(), std::move(out), {a}, nullptr);
    if (y.impl()->producer) {
        auto ai = a;
        const TensorImpl* yraw = y.impl().get();
        y.impl()->producer->backward = [ai, yraw, sp](const std::vector<real>& g,
                                                      BackContext& ctx) {
            if (!ai.requires_grad()) return;
            auto& ga = ctx.slot_for(ai.impl().get());
            const auto& yv = yraw->data;
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    int64_t base = o * sp.axis * sp.inner + in;
                    real dot = 0;
                    for (int64_t k = 0; k < sp.axis; ++k)
                        dot += g[base + k * sp.inner] * yv[base + k * sp.inner];
                    for (int64_t k = 0; k < sp.axis; ++k) {
                        int64_t idx = base + k * sp.inner;
                        ga[idx] += yv[idx] * (g[idx] - dot);
                    }
                }
        };
    }
    return y;
}

Tensor log_softmax_over_axis(const Tensor& a, int axis) {
    auto sp = split_at("log_softmax_over_axis", a.shape(), axis);
    std::vector<real> out(a.numel());
    softmax_rows(a.data(), out.data(), sp.outer, sp.axis, sp.inner, true);
    Tensor y = make_op_output("log_softmax_over_axis", a.shape(), std::move(out), {a}, nullptr);
    if (y.impl()->producer) {
        auto ai = a;
        const TensorImpl* yraw = y.impl().get();
        y.impl()->producer->backward = [ai, yraw, sp](const std::vector<real>& g,
                                                      BackContext& ctx) {
            if (!ai.requires_grad()) return;
            auto& ga = ctx.slot_for(ai.impl().get());
            const auto& yv = yraw->data;
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    int64_t base = o * sp.axis * sp.inner + in;
                    real gsum = 0;
                    for (int64_t k = 0; k < sp.axis; ++k) gsum += g[base + k * sp.inner];
                    for (int64_t k = 0; k < sp.axis; ++k) {
                        int64_t idx = base + k * sp.inner;
                        ga[idx] += g[idx] - std::exp(yv[idx]) * gsum;
                    }
                }
        };
    }
    return y;
}

Tensor clip(const Tensor& a, real lo, real hi) {
    if (!(lo <= hi)) throw ContractError("clip: lo > hi");
    std::vector<real> out(a.numel());
    const real* ap = a.data();
    kernels::for_range(a.numel(), [&](int64_t l, int64_t h) {
        for (int64_t i = l; i < h; ++i) out[i] = std::min(hi, std::max(lo, ap[i]));
    });
    auto ai = a;
    return make_op_output("clip", a.shape(), std::move(out), {a},
                          [ai, lo, hi](const std::vector<real>& g, BackContext& ctx) {
                              if (!ai.requires_grad()) return;
                              auto& ga = ctx.slot_for(ai.impl().get());
                              const real* ap = ai.data();
                              for (size_t i = 0; i < g.size(); ++i)
                                  if (ap[i] > lo && ap[i] < hi) ga[i] += g[i];
                          });
}

// --- gradient check ---------------------------------------------------------

real grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, real eps) {
    if (!x.requires_grad()) throw ContractError("grad_check: x must require gradients");
    x.zero_grad();
    Tensor loss = f(x);
    if (loss.numel() != 1) throw ContractError("grad_check: f must return a scalar");
    backward(loss);
    std::vector<real> analytic = x.grad() ? *x.grad() : std::vector<real>(x.numel(), real(0));

    auto eval = [&](void) -> real {
        NoGradGuard ng;
        return f(x).item();
    };
    real f0 = eval();

    real max_rel = 0;
    auto& xv = x.vec();
    for (int64_t i = 0; i < x.numel(); ++i) {
        real keep = xv[i];
        xv[i] = keep + eps;
        real fp = eval();
        xv[i] = keep - eps;
        real fm = eval();
        xv[i] = keep;

        real dplus = (fp - f0) / eps;
        real dminus = (f0 - fm) / eps;
        // one-sided slopes disagreeing flags a kink under the step; skip it
        if (std::abs(dplus - dminus) > real(1e-3) + real(0.05) * std::max(std::abs(dplus),
                                                                          std::abs(dminus)))
            continue;
        real numeric = (fp - fm) / (2 * eps);
        real denom = std::max<real>(1, std::max(std::abs(analytic[i]), std::abs(numeric)));
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace crnl
