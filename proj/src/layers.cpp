#include "crnl/layers.hpp"

#include <cmath>
#include <cstring>

#include "crnl/kernels.hpp"

namespace crnl {

static int64_t conv_out_dim(int64_t in, int64_t k, int64_t s, int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t sh, int64_t sw,
              int64_t ph, int64_t pw) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d: expected x[b,cin,H,W] and w[cout,cin,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    int64_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw ShapeError("conv2d: input channels " + std::to_string(cin) +
                         " do not match weight " + shape_str(w.shape()));
    if (h + 2 * ph < kh || wd + 2 * pw < kw)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    if (bias.defined() && bias.numel() != cout)
        throw ShapeError("conv2d: bias size " + std::to_string(bias.numel()) + " vs out channels " +
                         std::to_string(cout));
    int64_t oh = conv_out_dim(h, kh, sh, ph), ow = conv_out_dim(wd, kw, sw, pw);
    int64_t kdim = cin * kh * kw, n = oh * ow;

    std::vector<real> out(b * cout * n);
    std::vector<real> col(kdim * n);
    for (int64_t i = 0; i < b; ++i) {
        kernels::im2col(x.data() + i * cin * h * wd, cin, h, wd, kh, kw, sh, sw, ph, pw, oh, ow,
                        col.data());
        kernels::gemm(w.data(), col.data(), out.data() + i * cout * n, cout, kdim, n, false);
        if (bias.defined()) {
            const real* bp = bias.data();
            real* op = out.data() + i * cout * n;
            for (int64_t c = 0; c < cout; ++c)
                for (int64_t j = 0; j < n; ++j) op[c * n + j] += bp[c];
        }
    }

    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    auto xi = x, wi = w, bi = bias;
    return make_op_output(
        "conv2d", {b, cout, oh, ow}, std::move(out), std::move(inputs),
        [xi, wi, bi, b, cin, h, wd, cout, kh, kw, sh, sw, ph, pw, oh,
         ow](const std::vector<real>& g, BackContext& ctx) {
            int64_t kdim = cin * kh * kw, n = oh * ow;
            std::vector<real> col(kdim * n);
            std::vector<real>* gw = wi.requires_grad() ? &ctx.slot_for(wi.impl().get()) : nullptr;
            std::vector<real>* gx = xi.requires_grad() ? &ctx.slot_for(xi.impl().get()) : nullptr;
            std::vector<real>* gb = bi.defined() && bi.requires_grad()
                                        ? &ctx.slot_for(bi.impl().get())
                                        : nullptr;
            std::vector<real> dcol(gx ? kdim * n : 0);
            for (int64_t i = 0; i < b; ++i) {
                const real* gout = g.data() + i * cout * n;
                if (gw) {
                    kernels::im2col(xi.data() + i * cin * h * wd, cin, h, wd, kh, kw, sh, sw, ph,
                                    pw, oh, ow, col.data());
                    kernels::gemm_bt(gout, col.data(), gw->data(), cout, n, kdim, true);
                }
                if (gx) {
                    kernels::gemm_at(wi.data(), gout, dcol.data(), kdim, cout, n, false);
                    kernels::col2im_acc(dcol.data(), cin, h, wd, kh, kw, sh, sw, ph, pw, oh, ow,
                                        gx->data() + i * cin * h * wd);
                }
                if (gb)
                    for (int64_t c = 0; c < cout; ++c) {
                        real s = 0;
                        for (int64_t j = 0; j < n; ++j) s += gout[c * n + j];
                        (*gb)[c] += s;
                    }
            }
        });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.ndim() != 3 || w.ndim() != 3)
        throw ShapeError("conv1d: expected x[b,ch,L] and w[out,in,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (x.dim(2) < w.dim(2))
        throw ShapeError("conv1d: sequence length " + std::to_string(x.dim(2)) +
                         " shorter than kernel " + std::to_string(w.dim(2)));
    Tensor x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
    Tensor w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
    Tensor y = conv2d(x4, w4, bias, 1, 1, 0, 0);
    return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t sh,
                        int64_t sw, int64_t ph, int64_t pw) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv_transpose2d: expected x[b,cin,H,W] and w[cin,cout,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    int64_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int64_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(0) != cin)
        throw ShapeError("conv_transpose2d: input channels " + std::to_string(cin) +
                         " do not match weight " + shape_str(w.shape()));
    int64_t oh = (h - 1) * sh + kh - 2 * ph;
    int64_t ow = (wd - 1) * sw + kw - 2 * pw;
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv_transpose2d: empty output for input " + shape_str(x.shape()));
    if (bias.defined() && bias.numel() != cout)
        throw ShapeError("conv_transpose2d: bias size " + std::to_string(bias.numel()) +
                         " vs out channels " + std::to_string(cout));
    int64_t kdim = cout * kh * kw, n = h * wd;

    // out = col2im(w^T x): exactly the input-gradient of conv2d(out-sized, w)
    std::vector<real> out(b * cout * oh * ow, real(0));
    std::vector<real> dcol(kdim * n);
    for (int64_t i = 0; i < b; ++i) {
        kernels::gemm_at(w.data(), x.data() + i * cin * n, dcol.data(), kdim, cin, n, false);
        kernels::col2im_acc(dcol.data(), cout, oh, ow, kh, kw, sh, sw, ph, pw, h, wd,
                            out.data() + i * cout * oh * ow);
        if (bias.defined()) {
            const real* bp = bias.data();
            real* op = out.data() + i * cout * oh * ow;
            for (int64_t c = 0; c < cout; ++c)
                for (int64_t j = 0; j < oh * ow; ++j) op[c * oh * ow + j] += bp[c];
        }
    }

    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    auto xi = x, wi = w, bi = bias;
    return make_op_output(
        "conv_transpose2d", {b, cout, oh, ow}, std::move(out), std::move(inputs),
        [xi, wi, bi, b, cin, h, wd, cout, kh, kw, sh, sw, ph, pw, oh,
         ow](const std::vector<real>& g, BackContext& ctx) {
            int64_t kdim = cout * kh * kw, n = h * wd;
            std::vector<real> colg(kdim * n);
            std::vector<real>* gw = wi.requires_grad() ? &ctx.slot_for(wi.impl().get()) : nullptr;
            std::vector<real>* gx = xi.requires_grad() ? &ctx.slot_for(xi.impl().get()) : nullptr;
            std::vector<real>* gb = bi.defined() && bi.requires_grad()
                                        ? &ctx.slot_for(bi.impl().get())
                                        : nullptr;
            for (int64_t i = 0; i < b; ++i) {
                const real* gout = g.data() + i * cout * oh * ow;
                kernels::im2col(gout, cout, oh, ow, kh, kw, sh, sw, ph, pw, h, wd, colg.data());
                if (gx)
                    kernels::gemm(wi.data(), colg.data(), gx->data() + i * cin * n, cin, kdim, n,
                                  true);
                if (gw)
                    kernels::gemm_bt(xi.data() + i * cin * n, colg.data(), gw->data(), cin, n,
                                     kdim, true);
                if (gb)
                    for (int64_t c = 0; c < cout; ++c) {
                        real s = 0;
                        for (int64_t j = 0; j < oh * ow; ++j) s += gout[c * oh * ow + j];
                        (*gb)[c] += s;
                    }
            }
        });
}

Tensor maxpool2d(const Tensor& x, int64_t ph, int64_t pw, int64_t sh, int64_t sw) {
    if (x.ndim() != 4)
        throw ShapeError("maxpool2d: expected x[b,c,H,W], got " + shape_str(x.shape()));
    int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    if (ph > h || pw > wd)
        throw ShapeError("maxpool2d: window " + std::to_string(ph) + "x" + std::to_string(pw) +
                         " larger than input " + shape_str(x.shape()));
    int64_t oh = (h - ph) / sh + 1, ow = (wd - pw) / sw + 1;

    std::vector<real> out(b * c * oh * ow);
    auto argmax = std::make_shared<std::vector<int64_t>>(b * c * oh * ow);
    const real* xp = x.data();
    kernels::for_range(b * c, [&](int64_t lo, int64_t hi) {
        for (int64_t bc = lo; bc < hi; ++bc) {
            const real* plane = xp + bc * h * wd;
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    int64_t best = (oy * sh) * wd + ox * sw;
                    real bv = plane[best];
                    for (int64_t ky = 0; ky < ph; ++ky)
                        for (int64_t kx = 0; kx < pw; ++kx) {
                            int64_t idx = (oy * sh + ky) * wd + ox * sw + kx;
                            if (plane[idx] > bv) {  // strict: ties keep the first scanned
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    int64_t o = bc * oh * ow + oy * ow + ox;
                    out[o] = bv;
                    (*argmax)[o] = bc * h * wd + best;
                }
        }
    });
    auto xi = x;
    return make_op_output("maxpool2d", {b, c, oh, ow}, std::move(out), {x},
                          [xi, argmax, b, c, h, wd, oh, ow](const std::vector<real>& g,
                                                            BackContext& ctx) {
                              if (!xi.requires_grad()) return;
                              auto& gx = ctx.slot_for(xi.impl().get());
                              // per-plane scatter stays single-owner under overlap
                              kernels::for_range(b * c, [&](int64_t lo, int64_t hi) {
                                  for (int64_t bc = lo; bc < hi; ++bc)
                                      for (int64_t j = 0; j < oh * ow; ++j) {
                                          int64_t o = bc * oh * ow + j;
                                          gx[(*argmax)[o]] += g[o];
                                      }
                              });
                          });
}

Tensor upsample_nearest(const Tensor& x, int64_t factor) {
    if (x.ndim() != 4)
        throw ShapeError("upsample_nearest: expected x[b,c,H,W], got " + shape_str(x.shape()));
    if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
    int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int64_t oh = h * factor, ow = wd * factor;
    std::vector<real> out(b * c * oh * ow);
    const real* xp = x.data();
    kernels::for_range(b * c, [&](int64_t lo, int64_t hi) {
        for (int64_t bc = lo; bc < hi; ++bc) {
            const real* plane = xp + bc * h * wd;
            real* oplane = out.data() + bc * oh * ow;
            for (int64_t y = 0; y < oh; ++y) {
                const real* row = plane + (y / factor) * wd;
                real* orow = oplane + y * ow;
                for (int64_t xx = 0; xx < ow; ++xx) orow[xx] = row[xx / factor];
            }
        }
    });
    auto xi = x;
    return make_op_output(
        "upsample_nearest", {b, c, oh, ow}, std::move(out), {x},
        [xi, factor, b, c, h, wd, oh, ow](const std::vector<real>& g, BackContext& ctx) {
            if (!xi.requires_grad()) return;
            auto& gx = ctx.slot_for(xi.impl().get());
            kernels::for_range(b * c * h * wd, [&](int64_t lo, int64_t hi) {
                for (int64_t p = lo; p < hi; ++p) {
                    int64_t ix = p % wd, iy = (p / wd) % h, bc = p / (wd * h);
                    const real* gplane = g.data() + bc * oh * ow;
                    real s = 0;
                    for (int64_t dy = 0; dy < factor; ++dy)
                        for (int64_t dx = 0; dx < factor; ++dx)
                            s += gplane[(iy * factor + dy) * ow + ix * factor + dx];
                    gx[p] += s;
                }
            });
        });
}

// --- layer constructors ------------------------------------------------------

static Tensor init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    real s = static_cast<real>(std::sqrt(1.0 / static_cast<double>(fan_in)));
    return Tensor::uniform(std::move(shape), -s, s, rng, true);
}

Conv2d Conv2d::make(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw, int64_t sh, int64_t sw,
                    int64_t ph, int64_t pw, Rng& rng) {
    Conv2d l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kh = kh;
    l.kw = kw;
    l.sh = sh;
    l.sw = sw;
    l.ph = ph;
    l.pw = pw;
    l.w = init_uniform({out_ch, in_ch, kh, kw}, in_ch * kh * kw, rng);
    l.b = Tensor::zeros({out_ch}, true);
    return l;
}
void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

Conv1d Conv1d::make(int64_t in_ch, int64_t out_ch, int64_t k, Rng& rng) {
    Conv1d l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.k = k;
    l.w = init_uniform({out_ch, in_ch, k}, in_ch * k, rng);
    l.b = Tensor::zeros({out_ch}, true);
    return l;
}
void Conv1d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

ConvTranspose2d ConvTranspose2d::make(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw,
                                      int64_t sh, int64_t sw, int64_t ph, int64_t pw, Rng& rng) {
    ConvTranspose2d l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kh = kh;
    l.kw = kw;
    l.sh = sh;
    l.sw = sw;
    l.ph = ph;
    l.pw = pw;
    l.w = init_uniform({in_ch, out_ch, kh, kw}, in_ch * kh * kw, rng);
    l.b = Tensor::zeros({out_ch}, true);
    return l;
}
void ConvTranspose2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

Dense Dense::make(int64_t in, int64_t out, Rng& rng) {
    Dense l;
    l.in = in;
    l.out = out;
    l.w = init_uniform({in, out}, in, rng);
    l.b = Tensor::zeros({out}, true);
    return l;
}
Tensor Dense::forward(const Tensor& x) const {
    if (x.ndim() != 2 || x.dim(1) != in)
        throw ShapeError("dense: expected x[b," + std::to_string(in) + "], got " +
                         shape_str(x.shape()));
    return add(matmul(x, w), b);
}
void Dense::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

BiLstm BiLstm::make(int64_t input, int64_t hidden, int layers, Rng& rng) {
    if (layers < 1) throw ContractError("bilstm: needs at least one layer");
    BiLstm l;
    l.input = input;
    l.hidden = hidden;
    l.layers = layers;
    for (int layer = 0; layer < layers; ++layer) {
        int64_t in = layer == 0 ? input : 2 * hidden;
        for (int dir = 0; dir < 2; ++dir) {
            DirParams p;
            p.wx = init_uniform({in, 4 * hidden}, in, rng);
            p.wh = init_uniform({hidden, 4 * hidden}, hidden, rng);
            p.b = Tensor::zeros({4 * hidden}, true);
            // forget-gate bias 1 stabilizes early training
            for (int64_t j = hidden; j < 2 * hidden; ++j) p.b.vec()[j] = real(1);
            l.dirs.push_back(std::move(p));
        }
    }
    return l;
}

Tensor BiLstm::Out::last_h_cat() const {
    size_t n = last_states.size();
    return concat({last_states[n - 2].h, last_states[n - 1].h}, 1);
}
Tensor BiLstm::Out::last_c_cat() const {
    size_t n = last_states.size();
    return concat({last_states[n - 2].c, last_states[n - 1].c}, 1);
}

BiLstm::Out BiLstm::forward(const Tensor& x) const {
    if (x.ndim() != 3)
        throw ShapeError("bilstm: expected x[T,b,f], got " + shape_str(x.shape()));
    if (x.dim(2) != input)
        throw ShapeError("bilstm: feature size " + std::to_string(x.dim(2)) + " vs expected " +
                         std::to_string(input));
    int64_t T = x.dim(0), b = x.dim(1);
    if (T < 1) throw ContractError("bilstm: empty sequence");

    Out result;
    std::vector<Tensor> steps(T);
    for (int64_t t = 0; t < T; ++t)
        steps[t] = reshape(slice(x, 0, t, 1), {b, x.dim(2)});

    for (int layer = 0; layer < layers; ++layer) {
        std::vector<Tensor> fwd_h(T), bwd_h(T);
        for (int dir = 0; dir < 2; ++dir) {
            const DirParams& p = dirs[layer * 2 + dir];
            Tensor h = Tensor::zeros({b, hidden});
            Tensor c = Tensor::zeros({b, hidden});
            for (int64_t step = 0; step < T; ++step) {
                int64_t t = dir == 0 ? step : T - 1 - step;
                Tensor gates = add(add(matmul(steps[t], p.wx), matmul(h, p.wh)), p.b);
                Tensor gi = sigmoid(slice(gates, 1, 0, hidden));
                Tensor gf = sigmoid(slice(gates, 1, hidden, hidden));
                Tensor gg = tanh(slice(gates, 1, 2 * hidden, hidden));
                Tensor go = sigmoid(slice(gates, 1, 3 * hidden, hidden));
                c = add(mul(gf, c), mul(gi, gg));
                h = mul(go, tanh(c));
                (dir == 0 ? fwd_h : bwd_h)[t] = h;
            }
            result.last_states.push_back({h, c});
        }
        std::vector<Tensor> ys(T);
        for (int64_t t = 0; t < T; ++t)
            ys[t] = reshape(concat({fwd_h[t], bwd_h[t]}, 1), {1, b, 2 * hidden});
        Tensor y = concat(ys, 0);
        if (layer + 1 < layers)
            for (int64_t t = 0; t < T; ++t)
                steps[t] = reshape(concat({fwd_h[t], bwd_h[t]}, 1), {b, 2 * hidden});
        result.y = y;
    }
    return result;
}

void BiLstm::collect(const std::string& prefix, ParamList& out) const {
    for (int layer = 0; layer < layers; ++layer)
        for (int dir = 0; dir < 2; ++dir) {
            const auto& p = dirs[layer * 2 + dir];
            std::string base =
                prefix + ".l" + std::to_string(layer) + (dir == 0 ? ".fwd" : ".bwd");
            out.push_back({base + ".wx", p.wx});
            out.push_back({base + ".wh", p.wh});
            out.push_back({base + ".b", p.b});
        }
}

void BiLstm::collect_recurrent(ParamList& out) const { collect("lstm", out); }

}  // namespace crnl
