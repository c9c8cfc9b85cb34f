#pragma once

#include <algorithm>
#include <cmath>

#include "tdseg/tensor.hpp"

namespace tdseg {

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    Tensor out = detail::make_result(x.shape(), {x});
    const double* xv = x.data();
    double* ov = out.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), n](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            const double* xv = xi->value.data();
            double* gx = xi->grad.data();
            // subgradient at 0 fixed to 0
            for (std::size_t i = 0; i < n; ++i)
                if (xv[i] > 0.0) gx[i] += g[i];
        };
    }
    return out;
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out = detail::make_result(x.shape(), {x});
    const double* xv = x.data();
    double* ov = out.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), n](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            const double* y = self.value.data();
            double* gx = xi->grad.data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        };
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = detail::make_result(a.shape(), {a, b});
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    if (out.requires_grad()) {
        out.impl()->backward_fn = [ai = a.impl().get(), bi = b.impl().get(), n](const TensorImpl& self) {
            const double* g = self.grad.data();
            if (ai->requires_grad) {
                double* ga = ai->grad.data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bi->requires_grad) {
                double* gb = bi->grad.data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        };
    }
    return out;
}

// y = alpha*x + beta, elementwise with scalar constants.
inline Tensor affine(const Tensor& x, double alpha, double beta) {
    Tensor out = detail::make_result(x.shape(), {x});
    const double* xv = x.data();
    double* ov = out.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = alpha * xv[i] + beta;
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), alpha, n](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            double* gx = xi->grad.data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += alpha * g[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// Dilated 2-d cross-correlation with "same" zero padding.
// input [Cin,H,W], kernel [Cout,Cin,k,k] (k odd), bias [Cout] -> [Cout,H,W].
// Input taps are spaced `dilation` apart; padding dilation*(k-1)/2 keeps H,W.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int dilation = 1) {
    if (input.ndim() != 3)
        throw ShapeError("conv2d: input " + shape_str(input.shape()) + ", want [C,H,W]");
    if (kernel.ndim() != 4)
        throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + ", want [Co,Ci,k,k]");
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(2) != kernel.dim(3))
        throw ShapeError("conv2d: non-square kernel " + shape_str(kernel.shape()));
    if (k % 2 == 0)
        throw ShapeError("conv2d: even kernel size " + std::to_string(k));
    if (kernel.dim(1) != cin)
        throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
    if (bias.ndim() != 1 || bias.dim(0) != cout)
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + ", want [" +
                         std::to_string(cout) + "]");
    if (dilation < 1)
        throw ShapeError("conv2d: dilation " + std::to_string(dilation));

    Tensor out = detail::make_result({cout, h, w}, {input, kernel, bias});
    const int c = (k - 1) / 2, hw = h * w, d = dilation;
    const double* in = input.data();
    const double* kv = kernel.data();
    const double* bv = bias.data();
    double* ov = out.data();
    for (int co = 0; co < cout; ++co) {
        double* plane = ov + co * hw;
        std::fill(plane, plane + hw, bv[co]);
        for (int ci = 0; ci < cin; ++ci) {
            const double* src_plane = in + ci * hw;
            const double* kk = kv + (co * cin + ci) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int oy = d * (ky - c);
                const int y0 = std::max(0, -oy), y1 = std::min(h, h - oy);
                for (int kx = 0; kx < k; ++kx) {
                    const double wgt = kk[ky * k + kx];
                    const int ox = d * (kx - c);
                    const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
                    for (int y = y0; y < y1; ++y) {
                        double* dst = plane + y * w;
                        const double* src = src_plane + (y + oy) * w + ox;
                        for (int x = x0; x < x1; ++x) dst[x] += wgt * src[x];
                    }
                }
            }
        }
    }

    if (out.requires_grad()) {
        out.impl()->backward_fn = [ii = input.impl().get(), ki = kernel.impl().get(),
                                   bi = bias.impl().get(), cin, cout, h, w, k, c,
                                   d](const TensorImpl& self) {
            const int hw = h * w;
            const double* g = self.grad.data();
            if (bi->requires_grad) {
                double* gb = bi->grad.data();
                for (int co = 0; co < cout; ++co) {
                    const double* gp = g + co * hw;
                    double s = 0.0;
                    for (int i = 0; i < hw; ++i) s += gp[i];
                    gb[co] += s;
                }
            }
            const bool need_in = ii->requires_grad;
            const bool need_k = ki->requires_grad;
            if (!need_in && !need_k) return;
            const double* in = ii->value.data();
            const double* kv = ki->value.data();
            double* gin = need_in ? ii->grad.data() : nullptr;
            double* gk = need_k ? ki->grad.data() : nullptr;
            for (int co = 0; co < cout; ++co) {
                const double* gp = g + co * hw;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* src_plane = in + ci * hw;
                    double* gin_plane = need_in ? gin + ci * hw : nullptr;
                    const std::size_t kbase = static_cast<std::size_t>(co * cin + ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int oy = d * (ky - c);
                        const int y0 = std::max(0, -oy), y1 = std::min(h, h - oy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int ox = d * (kx - c);
                            const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
                            const double wgt = kv[kbase + ky * k + kx];
                            double acc = 0.0;
                            for (int y = y0; y < y1; ++y) {
                                const double* grow = gp + y * w;
                                const double* srow = src_plane + (y + oy) * w + ox;
                                double* girow = need_in ? gin_plane + (y + oy) * w + ox : nullptr;
                                if (need_k)
                                    for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
                                if (need_in)
                                    for (int x = x0; x < x1; ++x) girow[x] += wgt * grow[x];
                            }
                            if (need_k) gk[kbase + ky * k + kx] += acc;
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

// 2x2 average pooling; requires even H and W.
inline Tensor avg_pool2(const Tensor& x) {
    if (x.ndim() != 3)
        throw ShapeError("avg_pool2: input " + shape_str(x.shape()) + ", want [C,H,W]");
    const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("avg_pool2: odd spatial size " + shape_str(x.shape()));
    const int oh = h / 2, ow = w / 2;
    Tensor out = detail::make_result({ch, oh, ow}, {x});
    const double* xv = x.data();
    double* ov = out.data();
    for (int cc = 0; cc < ch; ++cc)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                const double* p = xv + (cc * h + 2 * y) * w + 2 * xx;
                ov[(cc * oh + y) * ow + xx] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
            }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), ch, h, w, oh, ow](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            double* gx = xi->grad.data();
            for (int cc = 0; cc < ch; ++cc)
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx) {
                        const double q = 0.25 * g[(cc * oh + y) * ow + xx];
                        double* p = gx + (cc * h + 2 * y) * w + 2 * xx;
                        p[0] += q;
                        p[1] += q;
                        p[w] += q;
                        p[w + 1] += q;
                    }
        };
    }
    return out;
}

// Nearest-neighbor upsampling by an integer factor.
inline Tensor upsample_nearest(const Tensor& x, int factor) {
    if (x.ndim() != 3)
        throw ShapeError("upsample_nearest: input " + shape_str(x.shape()) + ", want [C,h,w]");
    if (factor < 1)
        throw ShapeError("upsample_nearest: factor " + std::to_string(factor));
    const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int oh = h * factor, ow = w * factor;
    Tensor out = detail::make_result({ch, oh, ow}, {x});
    const double* xv = x.data();
    double* ov = out.data();
    for (int cc = 0; cc < ch; ++cc)
        for (int y = 0; y < oh; ++y) {
            const double* src = xv + (cc * h + y / factor) * w;
            double* dst = ov + (cc * oh + y) * ow;
            for (int xx = 0; xx < ow; ++xx) dst[xx] = src[xx / factor];
        }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), ch, h, w, factor, oh,
                                   ow](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            double* gx = xi->grad.data();
            for (int cc = 0; cc < ch; ++cc)
                for (int y = 0; y < oh; ++y) {
                    const double* grow = g + (cc * oh + y) * ow;
                    double* gxrow = gx + (cc * h + y / factor) * w;
                    for (int xx = 0; xx < ow; ++xx) gxrow[xx / factor] += grow[xx];
                }
        };
    }
    return out;
}

// [C,H,W] -> [C], mean over the spatial extent.
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 3)
        throw ShapeError("global_avg_pool: input " + shape_str(x.shape()) + ", want [C,H,W]");
    const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int hw = h * w;
    Tensor out = detail::make_result({ch}, {x});
    const double* xv = x.data();
    double* ov = out.data();
    for (int cc = 0; cc < ch; ++cc) {
        const double* p = xv + cc * hw;
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += p[i];
        ov[cc] = s / hw;
    }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), ch, hw](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            double* gx = xi->grad.data();
            for (int cc = 0; cc < ch; ++cc) {
                const double q = g[cc] / hw;
                double* p = gx + cc * hw;
                for (int i = 0; i < hw; ++i) p[i] += q;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense / concat / softmax
// ---------------------------------------------------------------------------

// x [n], weight [m,n], bias [m] -> [m].
inline Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.ndim() != 1)
        throw ShapeError("dense: input " + shape_str(x.shape()) + ", want [n]");
    if (weight.ndim() != 2 || weight.dim(1) != x.dim(0))
        throw ShapeError("dense: weight " + shape_str(weight.shape()) + " vs input " +
                         shape_str(x.shape()));
    const int m = weight.dim(0), n = weight.dim(1);
    if (bias.ndim() != 1 || bias.dim(0) != m)
        throw ShapeError("dense: bias " + shape_str(bias.shape()) + ", want [" + std::to_string(m) + "]");
    Tensor out = detail::make_result({m}, {x, weight, bias});
    const double* xv = x.data();
    const double* wv = weight.data();
    const double* bv = bias.data();
    double* ov = out.data();
    for (int i = 0; i < m; ++i) {
        const double* row = wv + i * n;
        double s = bv[i];
        for (int j = 0; j < n; ++j) s += row[j] * xv[j];
        ov[i] = s;
    }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), wi = weight.impl().get(),
                                   bi = bias.impl().get(), m, n](const TensorImpl& self) {
            const double* g = self.grad.data();
            if (bi->requires_grad) {
                double* gb = bi->grad.data();
                for (int i = 0; i < m; ++i) gb[i] += g[i];
            }
            if (wi->requires_grad) {
                double* gw = wi->grad.data();
                const double* xv = xi->value.data();
                for (int i = 0; i < m; ++i) {
                    double* row = gw + i * n;
                    const double gi = g[i];
                    for (int j = 0; j < n; ++j) row[j] += gi * xv[j];
                }
            }
            if (xi->requires_grad) {
                double* gx = xi->grad.data();
                const double* wv = wi->value.data();
                for (int i = 0; i < m; ++i) {
                    const double* row = wv + i * n;
                    const double gi = g[i];
                    for (int j = 0; j < n; ++j) gx[j] += gi * row[j];
                }
            }
        };
    }
    return out;
}

// Stacks [C_i,H,W] inputs along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const int h = xs[0].dim(1), w = xs[0].dim(2);
    int ctotal = 0;
    for (const Tensor& t : xs) {
        if (t.ndim() != 3 || t.dim(1) != h || t.dim(2) != w)
            throw ShapeError("concat_channels: mismatched input " + shape_str(t.shape()));
        ctotal += t.dim(0);
    }
    Tensor out = detail::make_result({ctotal, h, w}, xs);
    double* ov = out.data();
    std::size_t off = 0;
    for (const Tensor& t : xs) {
        std::copy(t.data(), t.data() + t.size(), ov + off);
        off += t.size();
    }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [](const TensorImpl& self) {
            const double* g = self.grad.data();
            std::size_t off = 0;
            for (const auto& p : self.parents) {
                const std::size_t n = p->value.size();
                if (p->requires_grad) {
                    double* gp = p->grad.data();
                    for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                }
                off += n;
            }
        };
    }
    return out;
}

// Per-pixel softmax over the channel axis of [K,H,W].
inline Tensor softmax_channels(const Tensor& x) {
    if (x.ndim() != 3)
        throw ShapeError("softmax_channels: input " + shape_str(x.shape()) + ", want [K,H,W]");
    const int kch = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int hw = h * w;
    Tensor out = detail::make_result(x.shape(), {x});
    const double* xv = x.data();
    double* ov = out.data();
    for (int px = 0; px < hw; ++px) {
        double m = xv[px];
        for (int k = 1; k < kch; ++k) m = std::max(m, xv[k * hw + px]);
        double z = 0.0;
        for (int k = 0; k < kch; ++k) {
            const double e = std::exp(xv[k * hw + px] - m);
            ov[k * hw + px] = e;
            z += e;
        }
        const double inv = 1.0 / z;
        for (int k = 0; k < kch; ++k) ov[k * hw + px] *= inv;
    }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), kch, hw](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double* g = self.grad.data();
            const double* p = self.value.data();
            double* gx = xi->grad.data();
            for (int px = 0; px < hw; ++px) {
                double dot = 0.0;
                for (int k = 0; k < kch; ++k) dot += g[k * hw + px] * p[k * hw + px];
                for (int k = 0; k < kch; ++k)
                    gx[k * hw + px] += p[k * hw + px] * (g[k * hw + px] - dot);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Sum of scalar tensors -> scalar.
inline Tensor sum_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("sum_scalars: no inputs");
    for (const Tensor& t : xs)
        if (t.size() != 1) throw ShapeError("sum_scalars: non-scalar input " + shape_str(t.shape()));
    Tensor out = detail::make_result({1}, xs);
    double s = 0.0;
    for (const Tensor& t : xs) s += t[0];
    out[0] = s;
    if (out.requires_grad()) {
        out.impl()->backward_fn = [](const TensorImpl& self) {
            const double g = self.grad[0];
            for (const auto& p : self.parents)
                if (p->requires_grad) p->grad[0] += g;
        };
    }
    return out;
}

// Fixed linear functional sum_i coeffs[i]*x[i] -> scalar.
inline Tensor reduce_weighted(const Tensor& x, std::vector<double> coeffs) {
    if (coeffs.size() != x.size())
        throw ShapeError("reduce_weighted: " + std::to_string(coeffs.size()) + " coeffs for " +
                         shape_str(x.shape()));
    Tensor out = detail::make_result({1}, {x});
    const double* xv = x.data();
    double s = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * xv[i];
    out[0] = s;
    if (out.requires_grad()) {
        out.impl()->backward_fn = [xi = x.impl().get(), cs = std::move(coeffs)](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double g = self.grad[0];
            double* gx = xi->grad.data();
            for (std::size_t i = 0; i < cs.size(); ++i) gx[i] += cs[i] * g;
        };
    }
    return out;
}

}  // namespace tdseg
