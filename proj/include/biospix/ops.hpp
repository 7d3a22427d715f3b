#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "biospix/tensor.hpp"

// Differentiable tensor operations. Every op computes its result eagerly and,
// when a Tape is active and an input requires gradients, records a backward
// closure. Reductions accumulate sequentially in row-major order so repeated
// runs are bit-identical; loops are arranged so the per-element accumulation
// order never depends on how the compiler vectorizes them.

namespace biospix {

namespace detail {

template <typename S>
ArrayX<S>& grad_buf(const std::shared_ptr<TensorData<S>>& d) {
    if (d->grad.size() != d->values.size()) d->grad = ArrayX<S>::Zero(d->values.size());
    return d->grad;
}

// True ceil/floor division for possibly negative numerators, positive b.
inline int ceil_div(int a, int b) {
    int q = a / b, r = a % b;
    return q + ((r != 0 && r > 0) ? 1 : 0);
}
inline int floor_div(int a, int b) {
    int q = a / b, r = a % b;
    return q - ((r != 0 && r < 0) ? 1 : 0);
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename S>
void check_4d(const Tensor<S>& t, const char* op) {
    if (t.ndim() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    out.array() = a.array() + b.array();
    if (recording<S>({&a, &b})) {
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape<S>::current()->record(out, [ad, bd, od] {
            if (od->grad.size() == 0) return;
            if (ad->requires_grad) detail::grad_buf(ad) += od->grad;
            if (bd->requires_grad) detail::grad_buf(bd) += od->grad;
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    out.array() = a.array() - b.array();
    if (recording<S>({&a, &b})) {
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape<S>::current()->record(out, [ad, bd, od] {
            if (od->grad.size() == 0) return;
            if (ad->requires_grad) detail::grad_buf(ad) += od->grad;
            if (bd->requires_grad) detail::grad_buf(bd) -= od->grad;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    out.array() = a.array() * b.array();
    if (recording<S>({&a, &b})) {
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape<S>::current()->record(out, [ad, bd, od] {
            if (od->grad.size() == 0) return;
            if (ad->requires_grad) detail::grad_buf(ad) += od->grad * bd->values;
            if (bd->requires_grad) detail::grad_buf(bd) += od->grad * ad->values;
        });
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S k) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    out.array() = x.array() * k;
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, k] {
            if (od->grad.size() == 0) return;
            if (xd->requires_grad) detail::grad_buf(xd) += od->grad * k;
        });
    }
    return out;
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    out.array() = (x.array() > S(0)).select(x.array(), x.array() * slope);
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, slope] {
            if (od->grad.size() == 0) return;
            if (xd->requires_grad)
                detail::grad_buf(xd) += (xd->values > S(0)).select(od->grad, od->grad * slope);
        });
    }
    return out;
}

// ln(max(x, eps)); gradient is 1/x above the floor and 0 below it.
template <typename S>
Tensor<S> log_floor(const Tensor<S>& x, S eps) {
    if (!(eps > S(0))) throw ParamError("log_floor: eps must be positive");
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    out.array() = x.array().max(eps).log();
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, eps] {
            if (od->grad.size() == 0) return;
            if (xd->requires_grad)
                detail::grad_buf(xd) +=
                    (xd->values >= eps).select(od->grad / xd->values, ArrayX<S>::Zero(od->grad.size()));
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_4d(a, "concat_channels");
    detail::check_4d(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: non-channel extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor<S> out = Tensor<S>::zeros({n, ca + cb, h, w});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
        std::copy_n(b.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
    }
    if (recording<S>({&a, &b})) {
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape<S>::current()->record(out, [ad, bd, od, n, ca, cb, plane] {
            if (od->grad.size() == 0) return;
            for (int i = 0; i < n; ++i) {
                if (ad->requires_grad)
                    detail::grad_buf(ad).segment(i * ca * plane, ca * plane) +=
                        od->grad.segment(i * (ca + cb) * plane, ca * plane);
                if (bd->requires_grad)
                    detail::grad_buf(bd).segment(i * cb * plane, cb * plane) +=
                        od->grad.segment((i * (ca + cb) + ca) * plane, cb * plane);
            }
        });
    }
    return out;
}

// Softmax over the channel axis, independently at every (n, y, x).
template <typename S>
Tensor<S> softmax_channels(const Tensor<S>& x) {
    detail::check_4d(x, "softmax_channels");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* xs = x.data();
    S* ys = out.data();
    for (int i = 0; i < n; ++i) {
        const S* xb = xs + i * c * plane;
        S* yb = ys + i * c * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
            S mx = xb[p];
            for (int j = 1; j < c; ++j) mx = std::max(mx, xb[j * plane + p]);
            S z = S(0);
            for (int j = 0; j < c; ++j) {
                const S e = std::exp(xb[j * plane + p] - mx);
                yb[j * plane + p] = e;
                z += e;
            }
            for (int j = 0; j < c; ++j) yb[j * plane + p] /= z;
        }
    }
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, n, c, plane] {
            if (od->grad.size() == 0) return;
            if (!xd->requires_grad) return;
            auto& gx = detail::grad_buf(xd);
            for (int i = 0; i < n; ++i) {
                const std::int64_t base = i * c * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    S dot = S(0);
                    for (int j = 0; j < c; ++j)
                        dot += od->grad[base + j * plane + p] * od->values[base + j * plane + p];
                    for (int j = 0; j < c; ++j) {
                        const std::int64_t k = base + j * plane + p;
                        gx[k] += od->values[k] * (od->grad[k] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// N x C x H x W -> N x 1 x H x W, summing channels in index order.
template <typename S>
Tensor<S> channel_sum(const Tensor<S>& x) {
    detail::check_4d(x, "channel_sum");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor<S> out = Tensor<S>::zeros({n, 1, h, w});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            out.array().segment(i * plane, plane) += x.array().segment((i * c + j) * plane, plane);
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, n, c, plane] {
            if (od->grad.size() == 0) return;
            if (!xd->requires_grad) return;
            auto& gx = detail::grad_buf(xd);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    gx.segment((i * c + j) * plane, plane) += od->grad.segment(i * plane, plane);
        });
    }
    return out;
}

// Per-location L2 norm over channels: N x C x H x W -> N x 1 x H x W.
template <typename S>
Tensor<S> channel_l2norm(const Tensor<S>& x) {
    detail::check_4d(x, "channel_l2norm");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor<S> out = Tensor<S>::zeros({n, 1, h, w});
    for (int i = 0; i < n; ++i) {
        for (std::int64_t p = 0; p < plane; ++p) {
            S ss = S(0);
            for (int j = 0; j < c; ++j) {
                const S v = x.data()[(i * c + j) * plane + p];
                ss += v * v;
            }
            out.data()[i * plane + p] = std::sqrt(ss);
        }
    }
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, n, c, plane] {
            if (od->grad.size() == 0) return;
            if (!xd->requires_grad) return;
            auto& gx = detail::grad_buf(xd);
            for (int i = 0; i < n; ++i) {
                for (std::int64_t p = 0; p < plane; ++p) {
                    const S r = od->values[i * plane + p];
                    if (r <= S(0)) continue;  // subgradient 0 at the origin
                    const S g = od->grad[i * plane + p] / r;
                    for (int j = 0; j < c; ++j) gx[(i * c + j) * plane + p] += g * xd->values[(i * c + j) * plane + p];
                }
            }
        });
    }
    return out;
}

// Full reduction to a scalar tensor, sequential in flat (row-major) order.
template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = S(0);
    const S* p = x.data();
    const std::int64_t m = x.size();
    for (std::int64_t i = 0; i < m; ++i) acc += p[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od] {
            if (od->grad.size() == 0) return;
            if (xd->requires_grad) detail::grad_buf(xd) += od->grad[0];
        });
    }
    return out;
}

// 2-d cross-correlation. input N x Cin x H x W, weight Cout x Cin x k x k,
// bias Cout. The kernel loop is the innermost accumulation for every output
// element, so the summation order is the (ic, ky, kx) tap order regardless of
// stride or padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
                 int padding) {
    detail::check_4d(input, "conv2d");
    detail::check_4d(weight, "conv2d");
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin)
        throw ShapeError("conv2d: input channels " + std::to_string(cin) + " vs weight in-channels " +
                         std::to_string(weight.dim(1)));
    if (weight.dim(3) != k || k % 2 == 0) throw ParamError("conv2d: kernel must be square with odd size");
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
        throw ShapeError("conv2d: bias shape must be [Cout]");
    const int oh = (h + 2 * padding - k) / stride + 1;
    const int ow = (w + 2 * padding - k) / stride + 1;
    if (h + 2 * padding - k < 0 || w + 2 * padding - k < 0 || oh < 1 || ow < 1)
        throw GeometryError("conv2d: non-positive output extent for input " + shape_str(input.shape()));

    Tensor<S> out = Tensor<S>::zeros({n, cout, oh, ow});
    const S* xs = input.data();
    const S* ws = weight.data();
    S* ys = out.data();
    for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < cout; ++oc) {
            S* yb = ys + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
            if (bias.defined()) {
                const S bv = bias.data()[oc];
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) yb[i] = bv;
            }
            for (int ic = 0; ic < cin; ++ic) {
                const S* xb = xs + (static_cast<std::int64_t>(b) * cin + ic) * h * w;
                const S* wb = ws + ((static_cast<std::int64_t>(oc) * cin + ic) * k) * k;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const S wv = wb[ky * k + kx];
                        const int oy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                        const int oy_hi = std::min(oh - 1, detail::floor_div(h - 1 + padding - ky, stride));
                        const int ox_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                        const int ox_hi = std::min(ow - 1, detail::floor_div(w - 1 + padding - kx, stride));
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride + ky - padding;
                            S* yr = yb + static_cast<std::int64_t>(oy) * ow;
                            const S* xr = xb + static_cast<std::int64_t>(iy) * w + (kx - padding);
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) yr[ox] += wv * xr[ox * stride];
                        }
                    }
                }
            }
        }
    }

    if (recording<S>({&input, &weight, &bias})) {
        auto xd = input.node(), wd = weight.node(), od = out.node();
        auto bd = bias.defined() ? bias.node() : nullptr;
        Tape<S>::current()->record(out, [xd, wd, bd, od, n, cin, cout, h, w, k, oh, ow, stride, padding] {
            if (od->grad.size() == 0) return;
            const S* go = od->grad.data();
            if (bd && bd->requires_grad) {
                auto& gb = detail::grad_buf(bd);
                for (int b = 0; b < n; ++b)
                    for (int oc = 0; oc < cout; ++oc) {
                        const S* gr = go + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
                        S acc = S(0);
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) acc += gr[i];
                        gb[oc] += acc;
                    }
            }
            if (wd->requires_grad) {
                auto& gw = detail::grad_buf(wd);
                const S* xs = xd->values.data();
                for (int b = 0; b < n; ++b)
                    for (int oc = 0; oc < cout; ++oc) {
                        const S* gr = go + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
                        for (int ic = 0; ic < cin; ++ic) {
                            const S* xb = xs + (static_cast<std::int64_t>(b) * cin + ic) * h * w;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int oy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                    const int oy_hi =
                                        std::min(oh - 1, detail::floor_div(h - 1 + padding - ky, stride));
                                    const int ox_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ox_hi =
                                        std::min(ow - 1, detail::floor_div(w - 1 + padding - kx, stride));
                                    S acc = S(0);
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        const int iy = oy * stride + ky - padding;
                                        const S* xr = xb + static_cast<std::int64_t>(iy) * w + (kx - padding);
                                        const S* gr2 = gr + static_cast<std::int64_t>(oy) * ow;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += xr[ox * stride] * gr2[ox];
                                    }
                                    gw[((static_cast<std::int64_t>(oc) * cin + ic) * k + ky) * k + kx] += acc;
                                }
                        }
                    }
            }
            if (xd->requires_grad) {
                auto& gx = detail::grad_buf(xd);
                const S* ws = wd->values.data();
                for (int b = 0; b < n; ++b)
                    for (int ic = 0; ic < cin; ++ic) {
                        S* gxb = gx.data() + (static_cast<std::int64_t>(b) * cin + ic) * h * w;
                        for (int oc = 0; oc < cout; ++oc) {
                            const S* gr = go + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
                            const S* wb = ws + ((static_cast<std::int64_t>(oc) * cin + ic) * k) * k;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const S wv = wb[ky * k + kx];
                                    const int oy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                    const int oy_hi =
                                        std::min(oh - 1, detail::floor_div(h - 1 + padding - ky, stride));
                                    const int ox_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ox_hi =
                                        std::min(ow - 1, detail::floor_div(w - 1 + padding - kx, stride));
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        const int iy = oy * stride + ky - padding;
                                        S* gxr = gxb + static_cast<std::int64_t>(iy) * w + (kx - padding);
                                        const S* gr2 = gr + static_cast<std::int64_t>(oy) * ow;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox) gxr[ox * stride] += wv * gr2[ox];
                                    }
                                }
                        }
                    }
            }
        });
    }
    return out;
}

// Transposed convolution (scatter-accumulate). weight Cin x Cout x k x k,
// output spatial extent (H-1)*stride - 2*padding + k. With k == stride and
// padding 0 this exactly upsamples by the stride factor.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& input, const Tensor<S>& weight, int stride, int padding,
                           const Tensor<S>& bias = Tensor<S>()) {
    detail::check_4d(input, "conv_transpose2d");
    detail::check_4d(weight, "conv_transpose2d");
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != cin)
        throw ShapeError("conv_transpose2d: input channels " + std::to_string(cin) +
                         " vs weight in-channels " + std::to_string(weight.dim(0)));
    if (weight.dim(3) != k) throw ParamError("conv_transpose2d: kernel must be square");
    if (stride < 1) throw ParamError("conv_transpose2d: stride must be >= 1");
    const int oh = (h - 1) * stride - 2 * padding + k;
    const int ow = (w - 1) * stride - 2 * padding + k;
    if (oh < 1 || ow < 1) throw GeometryError("conv_transpose2d: non-positive output extent");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
        throw ShapeError("conv_transpose2d: bias shape must be [Cout]");

    Tensor<S> out = Tensor<S>::zeros({n, cout, oh, ow});
    const S* xs = input.data();
    const S* ws = weight.data();
    S* ys = out.data();
    for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < cout; ++oc) {
            S* yb = ys + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
            if (bias.defined()) {
                const S bv = bias.data()[oc];
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) yb[i] = bv;
            }
            for (int ic = 0; ic < cin; ++ic) {
                const S* xb = xs + (static_cast<std::int64_t>(b) * cin + ic) * h * w;
                const S* wb = ws + ((static_cast<std::int64_t>(ic) * cout + oc) * k) * k;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const S wv = wb[ky * k + kx];
                        // iy range with oy = iy*stride + ky - padding in [0, oh)
                        const int iy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                        const int iy_hi = std::min(h - 1, detail::floor_div(oh - 1 + padding - ky, stride));
                        const int ix_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                        const int ix_hi = std::min(w - 1, detail::floor_div(ow - 1 + padding - kx, stride));
                        for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                            const int oy = iy * stride + ky - padding;
                            const S* xr = xb + static_cast<std::int64_t>(iy) * w;
                            S* yr = yb + static_cast<std::int64_t>(oy) * ow + (kx - padding);
                            for (int ix = ix_lo; ix <= ix_hi; ++ix) yr[ix * stride] += wv * xr[ix];
                        }
                    }
                }
            }
        }
    }

    if (recording<S>({&input, &weight, &bias})) {
        auto xd = input.node(), wd = weight.node(), od = out.node();
        auto bd = bias.defined() ? bias.node() : nullptr;
        Tape<S>::current()->record(out, [xd, wd, bd, od, n, cin, cout, h, w, k, oh, ow, stride, padding] {
            if (od->grad.size() == 0) return;
            const S* go = od->grad.data();
            if (bd && bd->requires_grad) {
                auto& gb = detail::grad_buf(bd);
                for (int b = 0; b < n; ++b)
                    for (int oc = 0; oc < cout; ++oc) {
                        const S* gr = go + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
                        S acc = S(0);
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) acc += gr[i];
                        gb[oc] += acc;
                    }
            }
            if (wd->requires_grad) {
                auto& gw = detail::grad_buf(wd);
                const S* xs = xd->values.data();
                for (int b = 0; b < n; ++b)
                    for (int ic = 0; ic < cin; ++ic) {
                        const S* xb = xs + (static_cast<std::int64_t>(b) * cin + ic) * h * w;
                        for (int oc = 0; oc < cout; ++oc) {
                            const S* gr = go + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int iy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                    const int iy_hi =
                                        std::min(h - 1, detail::floor_div(oh - 1 + padding - ky, stride));
                                    const int ix_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ix_hi =
                                        std::min(w - 1, detail::floor_div(ow - 1 + padding - kx, stride));
                                    S acc = S(0);
                                    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                                        const int oy = iy * stride + ky - padding;
                                        const S* xr = xb + static_cast<std::int64_t>(iy) * w;
                                        const S* gr2 = gr + static_cast<std::int64_t>(oy) * ow + (kx - padding);
                                        for (int ix = ix_lo; ix <= ix_hi; ++ix) acc += xr[ix] * gr2[ix * stride];
                                    }
                                    gw[((static_cast<std::int64_t>(ic) * cout + oc) * k + ky) * k + kx] += acc;
                                }
                        }
                    }
            }
            if (xd->requires_grad) {
                auto& gx = detail::grad_buf(xd);
                const S* ws = wd->values.data();
                for (int b = 0; b < n; ++b)
                    for (int ic = 0; ic < cin; ++ic) {
                        S* gxb = gx.data() + (static_cast<std::int64_t>(b) * cin + ic) * h * w;
                        for (int oc = 0; oc < cout; ++oc) {
                            const S* gr = go + (static_cast<std::int64_t>(b) * cout + oc) * oh * ow;
                            const S* wb = ws + ((static_cast<std::int64_t>(ic) * cout + oc) * k) * k;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const S wv = wb[ky * k + kx];
                                    const int iy_lo = std::max(0, detail::ceil_div(padding - ky, stride));
                                    const int iy_hi =
                                        std::min(h - 1, detail::floor_div(oh - 1 + padding - ky, stride));
                                    const int ix_lo = std::max(0, detail::ceil_div(padding - kx, stride));
                                    const int ix_hi =
                                        std::min(w - 1, detail::floor_div(ow - 1 + padding - kx, stride));
                                    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                                        const int oy = iy * stride + ky - padding;
                                        S* gxr = gxb + static_cast<std::int64_t>(iy) * w;
                                        const S* gr2 = gr + static_cast<std::int64_t>(oy) * ow + (kx - padding);
                                        for (int ix = ix_lo; ix <= ix_hi; ++ix) gxr[ix] += wv * gr2[ix * stride];
                                    }
                                }
                        }
                    }
            }
        });
    }
    return out;
}

template <typename S>
struct BatchNormState {
    ArrayX<S> running_mean;
    ArrayX<S> running_var;
    S momentum = S(0.1);

    void init(int channels) {
        running_mean = ArrayX<S>::Zero(channels);
        running_var = ArrayX<S>::Ones(channels);
    }
};

// Batch normalization over (N, H, W) per channel. Train mode normalizes by
// biased batch statistics and updates the running buffers; eval mode uses the
// running buffers. Differentiable in both modes.
template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       BatchNormState<S>& state, S eps, bool training) {
    detail::check_4d(x, "batch_norm2d");
    if (!(eps > S(0))) throw ParamError("batch_norm2d: eps must be positive");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.size() != c || beta.size() != c) throw ShapeError("batch_norm2d: gamma/beta must have C entries");
    if (state.running_mean.size() != c) state.init(c);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t m = static_cast<std::int64_t>(n) * plane;
    if (training && m < 2) throw ParamError("batch_norm2d: train mode needs population >= 2 per channel");

    ArrayX<S> mean(c), var(c);
    if (training) {
        for (int j = 0; j < c; ++j) {
            S acc = S(0);
            for (int b = 0; b < n; ++b) {
                const S* xb = x.data() + (static_cast<std::int64_t>(b) * c + j) * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += xb[i];
            }
            mean[j] = acc / S(m);
            S vacc = S(0);
            for (int b = 0; b < n; ++b) {
                const S* xb = x.data() + (static_cast<std::int64_t>(b) * c + j) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const S d = xb[i] - mean[j];
                    vacc += d * d;
                }
            }
            var[j] = vacc / S(m);
        }
        state.running_mean = (S(1) - state.momentum) * state.running_mean + state.momentum * mean;
        state.running_var = (S(1) - state.momentum) * state.running_var + state.momentum * var;
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    ArrayX<S> inv_std = (var + eps).sqrt().inverse();
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (int b = 0; b < n; ++b)
        for (int j = 0; j < c; ++j) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * c + j) * plane;
            out.array().segment(off, plane) =
                (x.array().segment(off, plane) - mean[j]) * inv_std[j] * gamma.data()[j] + beta.data()[j];
        }

    if (recording<S>({&x, &gamma, &beta})) {
        auto xd = x.node(), gd = gamma.node(), bd = beta.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, gd, bd, od, mean, inv_std, n, c, plane, training] {
            if (od->grad.size() == 0) return;
            const std::int64_t m = static_cast<std::int64_t>(n) * plane;
            for (int j = 0; j < c; ++j) {
                // xhat and the per-channel reductions of the incoming gradient
                S sum_g = S(0), sum_gx = S(0);
                for (int b = 0; b < n; ++b) {
                    const std::int64_t off = (static_cast<std::int64_t>(b) * c + j) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        const S g = od->grad[off + i];
                        const S xh = (xd->values[off + i] - mean[j]) * inv_std[j];
                        sum_g += g;
                        sum_gx += g * xh;
                    }
                }
                if (gd->requires_grad) detail::grad_buf(gd)[j] += sum_gx;
                if (bd->requires_grad) detail::grad_buf(bd)[j] += sum_g;
                if (xd->requires_grad) {
                    auto& gx = detail::grad_buf(xd);
                    const S gam = gd->values[j];
                    if (training) {
                        const S mg = sum_g / S(m), mgx = sum_gx / S(m);
                        for (int b = 0; b < n; ++b) {
                            const std::int64_t off = (static_cast<std::int64_t>(b) * c + j) * plane;
                            for (std::int64_t i = 0; i < plane; ++i) {
                                const S xh = (xd->values[off + i] - mean[j]) * inv_std[j];
                                gx[off + i] += gam * inv_std[j] * (od->grad[off + i] - mg - xh * mgx);
                            }
                        }
                    } else {
                        for (int b = 0; b < n; ++b) {
                            const std::int64_t off = (static_cast<std::int64_t>(b) * c + j) * plane;
                            for (std::int64_t i = 0; i < plane; ++i)
                                gx[off + i] += gam * inv_std[j] * od->grad[off + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Factor-2 bilinear upsampling (half-pixel centers, edge-replicated).
template <typename S>
Tensor<S> upsample_bilinear2x(const Tensor<S>& x) {
    detail::check_4d(x, "upsample_bilinear2x");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    // Precompute the two source indices and weight per output coordinate.
    std::vector<int> y0(oh), y1(oh), x0(ow), x1(ow);
    std::vector<S> wy(oh), wx(ow);
    auto setup = [](int out_len, int in_len, std::vector<int>& i0, std::vector<int>& i1, std::vector<S>& wt) {
        for (int o = 0; o < out_len; ++o) {
            const double src = (o + 0.5) / 2.0 - 0.5;
            int lo = static_cast<int>(std::floor(src));
            const double f = src - lo;
            int hi = lo + 1;
            lo = std::clamp(lo, 0, in_len - 1);
            hi = std::clamp(hi, 0, in_len - 1);
            i0[o] = lo;
            i1[o] = hi;
            wt[o] = static_cast<S>(f);
        }
    };
    setup(oh, h, y0, y1, wy);
    setup(ow, w, x0, x1, wx);

    Tensor<S> out = Tensor<S>::zeros({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int j = 0; j < c; ++j) {
            const S* xb = x.data() + (static_cast<std::int64_t>(b) * c + j) * h * w;
            S* yb = out.data() + (static_cast<std::int64_t>(b) * c + j) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const S fy = wy[oy];
                const S* r0 = xb + static_cast<std::int64_t>(y0[oy]) * w;
                const S* r1 = xb + static_cast<std::int64_t>(y1[oy]) * w;
                S* yr = yb + static_cast<std::int64_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const S fx = wx[ox];
                    yr[ox] = (S(1) - fy) * ((S(1) - fx) * r0[x0[ox]] + fx * r0[x1[ox]]) +
                             fy * ((S(1) - fx) * r1[x0[ox]] + fx * r1[x1[ox]]);
                }
            }
        }

    if (recording<S>({&x})) {
        auto xd = x.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, n, c, h, w, oh, ow, y0, y1, x0, x1, wy, wx] {
            if (od->grad.size() == 0) return;
            if (!xd->requires_grad) return;
            auto& gx = detail::grad_buf(xd);
            for (int b = 0; b < n; ++b)
                for (int j = 0; j < c; ++j) {
                    S* gxb = gx.data() + (static_cast<std::int64_t>(b) * c + j) * h * w;
                    const S* gb = od->grad.data() + (static_cast<std::int64_t>(b) * c + j) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const S fy = wy[oy];
                        const S* gr = gb + static_cast<std::int64_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            const S fx = wx[ox];
                            const S g = gr[ox];
                            gxb[y0[oy] * w + x0[ox]] += (S(1) - fy) * (S(1) - fx) * g;
                            gxb[y0[oy] * w + x1[ox]] += (S(1) - fy) * fx * g;
                            gxb[y1[oy] * w + x0[ox]] += fy * (S(1) - fx) * g;
                            gxb[y1[oy] * w + x1[ox]] += fy * fx * g;
                        }
                    }
                }
        });
    }
    return out;
}

}  // namespace biospix
