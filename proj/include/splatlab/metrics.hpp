#pragma once

#include <cstdint>

#include "splatlab/image.hpp"

namespace splatlab {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }
};

struct EvalConfig {
    double depth_threshold = 0.5; // on min-max normalized depth
    double alpha_bg_eps = kAlphaBackgroundEps;
    uint64_t seed = 0;            // random embedding policy
};

// Min-max normalizes the depth map and thresholds it: object = nearer half.
// A constant depth image yields an all-zero mask. Pixels below the alpha
// background epsilon are background by definition.
ImageBuffer depth_to_mask(const ImageBuffer& depth, const ImageBuffer& alpha,
                          const EvalConfig& cfg = {});

ConfusionCounts confusion(const ImageBuffer& pred_mask, const ImageBuffer& gt_mask);

struct GeometricRates {
    double iou = 0.0, tpr = 0.0, fpr = 0.0, fdr = 0.0;
    // Set when the corresponding denominator was empty and the optimal value
    // was substituted.
    bool iou_degenerate = false, tpr_degenerate = false;
    bool fpr_degenerate = false, fdr_degenerate = false;
};

GeometricRates rates(const ConfusionCounts& c);

// 10*log10(1/MSE) for [0,1] images, capped at 100 dB for near-zero MSE.
double psnr(const ImageBuffer& pred, const ImageBuffer& gt);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), C1=0.01^2, C2=0.03^2.
// Windows are truncated and renormalized at image borders. When grad is
// non-null it receives d(ssim)/d(pred).
double ssim(const ImageBuffer& pred, const ImageBuffer& gt, ImageBuffer* grad = nullptr);

} // namespace splatlab
