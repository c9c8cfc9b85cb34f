#pragma once

#include <span>

#include "tdseg/ops.hpp"

namespace tdseg {

// Probabilities are clamped to [kLogEps, 1-kLogEps] before any log.
inline constexpr double kLogEps = 1e-7;
// Union denominator guard in the soft IoU.
inline constexpr double kIouEps = 1e-7;

// Thrown when an input value (not its shape) violates an op's contract.
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class ProjectionMode { hard_detached, soft };

inline const char* to_string(ProjectionMode m) {
    return m == ProjectionMode::hard_detached ? "hard_detached" : "soft";
}

// Task weights of the total loss: total = seg + w1*cla + w2*scene + w3*sync.
struct LossWeights {
    double w1 = 1.0;
    double w2 = 1.0;
    double w3 = 1.0;
    ProjectionMode projection = ProjectionMode::hard_detached;

    void validate() const {
        if (w1 < 0 || w2 < 0 || w3 < 0)
            throw ValueError("loss weights must be non-negative");
    }
};

struct LossBreakdown {
    double l_seg = 0.0;
    double l_cla = 0.0;
    double l_scene = 0.0;
    double l_sync = 0.0;
    double total = 0.0;
};

// ---------------------------------------------------------------------------
// Target helpers
// ---------------------------------------------------------------------------

// Integer mask [H,W] -> one-hot [K,H,W] constant tensor.
inline Tensor onehot_mask(std::span<const std::uint8_t> mask, int num_classes, int h, int w) {
    if (static_cast<std::size_t>(h) * w != mask.size())
        throw ShapeError("onehot_mask: mask size " + std::to_string(mask.size()) + " vs " +
                         std::to_string(h) + "x" + std::to_string(w));
    Tensor out({num_classes, h, w});
    const int hw = h * w;
    double* ov = out.data();
    for (int px = 0; px < hw; ++px) {
        const int lbl = mask[px];
        if (lbl >= num_classes)
            throw ValueError("onehot_mask: label " + std::to_string(lbl) + " >= K=" +
                             std::to_string(num_classes));
        ov[lbl * hw + px] = 1.0;
    }
    return out;
}

inline Tensor onehot_vector(int index, int n) {
    if (index < 0 || index >= n)
        throw ValueError("onehot_vector: index " + std::to_string(index) + " out of [0," +
                         std::to_string(n) + ")");
    Tensor out({n});
    out[index] = 1.0;
    return out;
}

inline Tensor presence_targets(std::span<const std::uint8_t> bits) {
    Tensor out({static_cast<int>(bits.size())});
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] > 1)
            throw ValueError("presence_targets: bit value " + std::to_string(int(bits[i])));
        out[i] = bits[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation loss (Eq. 1): pixel cross-entropy + (1 - soft IoU)
// ---------------------------------------------------------------------------

// Mean over pixels of -log softmax-probability of the true label.
// The probability is clamped below at kLogEps before the log; clamped pixels
// contribute no gradient.
inline Tensor pixel_cross_entropy(const Tensor& seg_logits, std::span<const std::uint8_t> gt_mask) {
    if (seg_logits.ndim() != 3)
        throw ShapeError("pixel_cross_entropy: logits " + shape_str(seg_logits.shape()));
    const int kch = seg_logits.dim(0), h = seg_logits.dim(1), w = seg_logits.dim(2);
    const int hw = h * w;
    if (kch < 2) throw ShapeError("pixel_cross_entropy: need K >= 2 classes");
    if (gt_mask.size() != static_cast<std::size_t>(hw))
        throw ShapeError("pixel_cross_entropy: mask size " + std::to_string(gt_mask.size()) +
                         " vs logits " + shape_str(seg_logits.shape()));
    for (int px = 0; px < hw; ++px)
        if (gt_mask[px] >= kch)
            throw ValueError("pixel_cross_entropy: mask value " + std::to_string(int(gt_mask[px])) +
                             " >= K=" + std::to_string(kch) + " at pixel " + std::to_string(px));

    Tensor out = detail::make_result({1}, {seg_logits});
    const double* x = seg_logits.data();
    double acc = 0.0;
    for (int px = 0; px < hw; ++px) {
        double m = x[px];
        for (int k = 1; k < kch; ++k) m = std::max(m, x[k * hw + px]);
        double z = 0.0;
        for (int k = 0; k < kch; ++k) z += std::exp(x[k * hw + px] - m);
        const double logp = x[gt_mask[px] * hw + px] - m - std::log(z);
        acc += -std::log(std::max(std::exp(logp), kLogEps));
    }
    out[0] = acc / hw;

    if (out.requires_grad()) {
        std::vector<std::uint8_t> mask(gt_mask.begin(), gt_mask.end());
        out.impl()->backward_fn = [xi = seg_logits.impl().get(), mask = std::move(mask), kch,
                                   hw](const TensorImpl& self) {
            if (!xi->requires_grad) return;
            const double g = self.grad[0] / hw;
            const double* x = xi->value.data();
            double* gx = xi->grad.data();
            for (int px = 0; px < hw; ++px) {
                double m = x[px];
                for (int k = 1; k < kch; ++k) m = std::max(m, x[k * hw + px]);
                double z = 0.0;
                for (int k = 0; k < kch; ++k) z += std::exp(x[k * hw + px] - m);
                const int t = mask[px];
                const double ptrue = std::exp(x[t * hw + px] - m) / z;
                if (ptrue < kLogEps) continue;  // clamped: flat region
                for (int k = 0; k < kch; ++k) {
                    const double pk = std::exp(x[k * hw + px] - m) / z;
                    gx[k * hw + px] += g * (pk - (k == t ? 1.0 : 0.0));
                }
            }
        };
    }
    return out;
}

// Probabilistic IoU, averaged over the classes present in the ground truth:
//   I_k = sum_px p_k*y_k,  U_k = sum_px p_k + sum_px y_k - I_k,
//   iou = mean_k I_k/(U_k + eps).
// Differentiable in seg_probs; gt_onehot is treated as a constant.
inline Tensor soft_iou(const Tensor& seg_probs, const Tensor& gt_onehot) {
    if (seg_probs.ndim() != 3)
        throw ShapeError("soft_iou: probs " + shape_str(seg_probs.shape()));
    if (seg_probs.shape() != gt_onehot.shape())
        throw ShapeError("soft_iou: probs " + shape_str(seg_probs.shape()) + " vs gt " +
                         shape_str(gt_onehot.shape()));
    const int kch = seg_probs.dim(0);
    const int hw = seg_probs.dim(1) * seg_probs.dim(2);

    Tensor out = detail::make_result({1}, {seg_probs, gt_onehot});
    const double* p = seg_probs.data();
    const double* y = gt_onehot.data();
    double acc = 0.0;
    int present = 0;
    for (int k = 0; k < kch; ++k) {
        const double* pk = p + k * hw;
        const double* yk = y + k * hw;
        double inter = 0.0, psum = 0.0, ysum = 0.0;
        for (int i = 0; i < hw; ++i) {
            inter += pk[i] * yk[i];
            psum += pk[i];
            ysum += yk[i];
        }
        if (ysum <= 0.0) continue;
        acc += inter / (psum + ysum - inter + kIouEps);
        ++present;
    }
    out[0] = present > 0 ? acc / present : 0.0;

    if (out.requires_grad() && present > 0) {
        out.impl()->backward_fn = [pi = seg_probs.impl().get(), yi = gt_onehot.impl().get(), kch,
                                   hw, present](const TensorImpl& self) {
            if (!pi->requires_grad) return;
            const double g = self.grad[0] / present;
            const double* p = pi->value.data();
            const double* y = yi->value.data();
            double* gp = pi->grad.data();
            for (int k = 0; k < kch; ++k) {
                const double* pk = p + k * hw;
                const double* yk = y + k * hw;
                double inter = 0.0, psum = 0.0, ysum = 0.0;
                for (int i = 0; i < hw; ++i) {
                    inter += pk[i] * yk[i];
                    psum += pk[i];
                    ysum += yk[i];
                }
                if (ysum <= 0.0) continue;
                const double u = psum + ysum - inter + kIouEps;
                double* gpk = gp + k * hw;
                // d(I/U)/dp_i = (y_i*U - I*(1 - y_i)) / U^2
                for (int i = 0; i < hw; ++i)
                    gpk[i] += g * (yk[i] * u - inter * (1.0 - yk[i])) / (u * u);
            }
        };
    }
    return out;
}

// Hybrid segmentation loss: CE + (1 - soft IoU of the softmaxed logits).
inline Tensor seg_loss(const Tensor& seg_logits, std::span<const std::uint8_t> gt_mask) {
    const Tensor ce = pixel_cross_entropy(seg_logits, gt_mask);
    const Tensor probs = softmax_channels(seg_logits);
    const Tensor onehot = onehot_mask(gt_mask, seg_logits.dim(0), seg_logits.dim(1), seg_logits.dim(2));
    const Tensor iou = soft_iou(probs, onehot);
    return add(ce, affine(iou, -1.0, 1.0));
}

// ---------------------------------------------------------------------------
// Binary cross-entropy from logits (Eq. 2)
// ---------------------------------------------------------------------------

// mean_i -[t_i*log s_i + (1-t_i)*log(1-s_i)] with s = sigmoid(z) clamped to
// [kLogEps, 1-kLogEps]. Targets must be exactly 0/1 unless allow_soft, which
// admits [0,1] and lets gradient flow into the targets as well.
inline Tensor binary_cross_entropy(const Tensor& pred_logits, const Tensor& targets,
                                   bool allow_soft = false) {
    if (pred_logits.shape() != targets.shape())
        throw ShapeError("binary_cross_entropy: logits " + shape_str(pred_logits.shape()) +
                         " vs targets " + shape_str(targets.shape()));
    const std::size_t n = pred_logits.size();
    const double* t = targets.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (allow_soft ? (t[i] < 0.0 || t[i] > 1.0) : (t[i] != 0.0 && t[i] != 1.0))
            throw ValueError("binary_cross_entropy: target " + std::to_string(t[i]) +
                             " at index " + std::to_string(i));
    }

    Tensor out = detail::make_result({1}, {pred_logits, targets});
    const double* z = pred_logits.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::clamp(1.0 / (1.0 + std::exp(-z[i])), kLogEps, 1.0 - kLogEps);
        acc += -(t[i] * std::log(s) + (1.0 - t[i]) * std::log(1.0 - s));
    }
    out[0] = acc / static_cast<double>(n);

    if (out.requires_grad()) {
        out.impl()->backward_fn = [zi = pred_logits.impl().get(), ti = targets.impl().get(),
                                   n](const TensorImpl& self) {
            const double g = self.grad[0] / static_cast<double>(n);
            const double* z = zi->value.data();
            const double* t = ti->value.data();
            if (zi->requires_grad) {
                double* gz = zi->grad.data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double s = 1.0 / (1.0 + std::exp(-z[i]));
                    if (s <= kLogEps || s >= 1.0 - kLogEps) continue;  // clamped: flat
                    gz[i] += g * (s - t[i]);
                }
            }
            if (ti->requires_grad) {
                double* gt = ti->grad.data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double s = std::clamp(1.0 / (1.0 + std::exp(-z[i])), kLogEps, 1.0 - kLogEps);
                    gt[i] += g * (std::log(1.0 - s) - std::log(s));
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sync-regularization (Eq. 3)
// ---------------------------------------------------------------------------

// Class-presence projection of a segmentation map, background excluded.
//   hard_detached: seg_output is logits; P_k = 1 iff any pixel argmax == k.
//                  The result is a constant (carries no gradient).
//   soft:          seg_output is channel-softmax probabilities;
//                  P_k = max over pixels of p_k, differentiable.
inline Tensor project_classes(const Tensor& seg_output, ProjectionMode mode) {
    if (seg_output.ndim() != 3)
        throw ShapeError("project_classes: input " + shape_str(seg_output.shape()));
    const int kch = seg_output.dim(0);
    if (kch < 2) throw ShapeError("project_classes: need K >= 2 classes");
    const int hw = seg_output.dim(1) * seg_output.dim(2);
    const double* v = seg_output.data();

    if (mode == ProjectionMode::hard_detached) {
        Tensor out({kch - 1});
        for (int px = 0; px < hw; ++px) {
            int arg = 0;
            double best = v[px];
            for (int k = 1; k < kch; ++k)
                if (v[k * hw + px] > best) {
                    best = v[k * hw + px];
                    arg = k;
                }
            if (arg > 0) out[arg - 1] = 1.0;
        }
        return out;
    }

    // soft: per-foreground-channel spatial max (first maximal pixel on ties)
    Tensor out = detail::make_result({kch - 1}, {seg_output});
    std::vector<int> argpx(kch - 1, 0);
    for (int k = 1; k < kch; ++k) {
        const double* vk = v + k * hw;
        int arg = 0;
        double best = vk[0];
        for (int px = 1; px < hw; ++px)
            if (vk[px] > best) {
                best = vk[px];
                arg = px;
            }
        out[k - 1] = best;
        argpx[k - 1] = arg;
    }
    if (out.requires_grad()) {
        out.impl()->backward_fn = [si = seg_output.impl().get(), argpx = std::move(argpx),
                                   hw](const TensorImpl& self) {
            if (!si->requires_grad) return;
            const double* g = self.grad.data();
            double* gs = si->grad.data();
            for (std::size_t k = 0; k < argpx.size(); ++k)
                gs[(k + 1) * hw + argpx[k]] += g[k];
        };
    }
    return out;
}

// BCE between the class head's logits and the projection of the segmentation
// output. In hard_detached mode the projection is a constant target, so the
// gradient reaches only the class branch; in soft mode it flows through both.
inline Tensor sync_loss(const Tensor& seg_logits, const Tensor& class_logits, ProjectionMode mode) {
    if (class_logits.size() != static_cast<std::size_t>(seg_logits.dim(0) - 1))
        throw ShapeError("sync_loss: class logits " + shape_str(class_logits.shape()) +
                         " vs K-1=" + std::to_string(seg_logits.dim(0) - 1));
    if (mode == ProjectionMode::hard_detached) {
        const Tensor target = project_classes(seg_logits, mode);
        return binary_cross_entropy(class_logits, target, false);
    }
    const Tensor probs = softmax_channels(seg_logits);
    const Tensor target = project_classes(probs, ProjectionMode::soft);
    return binary_cross_entropy(class_logits, target, true);
}

// ---------------------------------------------------------------------------
// Total loss (Eq. 4)
// ---------------------------------------------------------------------------

struct LossParts {
    Tensor seg;
    Tensor cla;
    Tensor scene;
    Tensor sync;
};

// total = seg + w1*cla + w2*scene + w3*sync. Zero-weight terms are skipped,
// so weights (0,0,0) reproduce the bare segmentation loss bit-for-bit.
inline std::pair<Tensor, LossBreakdown> total_loss(const LossParts& parts, const LossWeights& w) {
    w.validate();
    const auto check = [](const Tensor& t, const char* name) {
        if (!t.defined() || t.size() != 1)
            throw ShapeError(std::string("total_loss: ") + name + " is not a scalar");
        if (!std::isfinite(t[0]))
            throw NumericError(name, std::string("total_loss: non-finite component ") + name +
                                         " = " + std::to_string(t[0]));
    };
    check(parts.seg, "l_seg");
    check(parts.cla, "l_cla");
    check(parts.scene, "l_scene");
    check(parts.sync, "l_sync");

    Tensor total = parts.seg;
    if (w.w1 > 0.0) total = add(total, affine(parts.cla, w.w1, 0.0));
    if (w.w2 > 0.0) total = add(total, affine(parts.scene, w.w2, 0.0));
    if (w.w3 > 0.0) total = add(total, affine(parts.sync, w.w3, 0.0));

    LossBreakdown b;
    b.l_seg = parts.seg[0];
    b.l_cla = parts.cla[0];
    b.l_scene = parts.scene[0];
    b.l_sync = parts.sync[0];
    b.total = total[0];
    return {total, b};
}

}  // namespace tdseg
