#include "splatlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace splatlab {

ImageBuffer depth_to_mask(const ImageBuffer& depth, const ImageBuffer& alpha,
                          const EvalConfig& cfg) {
    depth.require_shape(alpha, "depth_to_mask");
    ImageBuffer mask(depth.width, depth.height, 1);
    double lo = 1e300, hi = -1e300;
    for (double v : depth.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) return mask; // constant depth: all background
    double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        bool object = (depth.values[i] - lo) * inv < cfg.depth_threshold &&
                      alpha.values[i] >= cfg.alpha_bg_eps;
        mask.values[i] = object ? 1.0 : 0.0;
    }
    return mask;
}

ConfusionCounts confusion(const ImageBuffer& pred_mask, const ImageBuffer& gt_mask) {
    pred_mask.require_shape(gt_mask, "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred_mask.values.size(); ++i) {
        bool p = pred_mask.values[i] > 0.5;
        bool g = gt_mask.values[i] > 0.5;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

GeometricRates rates(const ConfusionCounts& c) {
    GeometricRates r;
    if (c.tp + c.fp + c.fn > 0) {
        r.iou = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
    } else {
        r.iou = 1.0;
        r.iou_degenerate = true;
    }
    if (c.tp + c.fn > 0) {
        r.tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    } else {
        r.tpr = 1.0;
        r.tpr_degenerate = true;
    }
    if (c.fp + c.tn > 0) {
        r.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
    } else {
        r.fpr = 0.0;
        r.fpr_degenerate = true;
    }
    if (c.fp + c.tp > 0) {
        r.fdr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tp);
    } else {
        r.fdr = 0.0;
        r.fdr_degenerate = true;
    }
    return r;
}

double psnr(const ImageBuffer& pred, const ImageBuffer& gt) {
    pred.require_shape(gt, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        double d = pred.values[i] - gt.values[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.values.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// 1D Gaussian taps normalized to sum 1; the 2D window is the outer product.
const double* window_taps() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kWindow);
        double sum = 0.0;
        for (int d = -kHalf; d <= kHalf; ++d) {
            double g = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
            v[d + kHalf] = g;
            sum += g;
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return w.data();
}

// Sum of in-bounds taps for every coordinate along one axis; the per-pixel
// window normalizer factors into the product of these.
std::vector<double> axis_norms(int extent, const double* taps) {
    std::vector<double> n(extent, 0.0);
    for (int k = 0; k < extent; ++k) {
        int lo = std::max(0, k - kHalf), hi = std::min(extent - 1, k + kHalf);
        for (int t = lo; t <= hi; ++t) n[k] += taps[t - k + kHalf];
    }
    return n;
}

} // namespace

double ssim(const ImageBuffer& pred, const ImageBuffer& gt, ImageBuffer* grad) {
    pred.require_shape(gt, "ssim");
    const double* taps = window_taps();
    const int width = pred.width, height = pred.height, channels = pred.channels;
    const double n_total = static_cast<double>(pred.values.size());
    const std::vector<double> norm_x = axis_norms(width, taps);
    const std::vector<double> norm_y = axis_norms(height, taps);

    ImageBuffer c_mu, c_exx, c_exy;
    if (grad) {
        *grad = ImageBuffer(width, height, channels);
        c_mu = ImageBuffer(width, height, channels);
        c_exx = ImageBuffer(width, height, channels);
        c_exy = ImageBuffer(width, height, channels);
    }

    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        for (int py = 0; py < height; ++py) {
            for (int px = 0; px < width; ++px) {
                double mu_x = 0, mu_y = 0, exx = 0, eyy = 0, exy = 0;
                int x0 = std::max(0, px - kHalf), x1 = std::min(width - 1, px + kHalf);
                int y0 = std::max(0, py - kHalf), y1 = std::min(height - 1, py + kHalf);
                for (int qy = y0; qy <= y1; ++qy) {
                    double wy = taps[qy - py + kHalf];
                    for (int qx = x0; qx <= x1; ++qx) {
                        double wt = wy * taps[qx - px + kHalf];
                        double xv = pred.at(qx, qy, c), yv = gt.at(qx, qy, c);
                        mu_x += wt * xv;
                        mu_y += wt * yv;
                        exx += wt * xv * xv;
                        eyy += wt * yv * yv;
                        exy += wt * xv * yv;
                    }
                }
                double inv_norm = 1.0 / (norm_x[px] * norm_y[py]);
                mu_x *= inv_norm;
                mu_y *= inv_norm;
                exx *= inv_norm;
                eyy *= inv_norm;
                exy *= inv_norm;

                double sxx = exx - mu_x * mu_x;
                double syy = eyy - mu_y * mu_y;
                double sxy = exy - mu_x * mu_y;
                double a1 = 2.0 * mu_x * mu_y + kC1;
                double a2 = 2.0 * sxy + kC2;
                double b1 = mu_x * mu_x + mu_y * mu_y + kC1;
                double b2 = sxx + syy + kC2;
                double val = (a1 * a2) / (b1 * b2);
                total += val;
                if (grad) {
                    double inv_bb = 1.0 / (b1 * b2);
                    double ds_dexy = 2.0 * a1 * inv_bb;
                    double ds_dexx = -val / b2;
                    double ds_dmu = 2.0 * mu_y * a2 * inv_bb - 2.0 * mu_x * val / b1 +
                                    2.0 * mu_x * val / b2 - mu_y * ds_dexy;
                    c_mu.at(px, py, c) = ds_dmu;
                    c_exx.at(px, py, c) = ds_dexx;
                    c_exy.at(px, py, c) = ds_dexy;
                }
            }
        }
    }

    if (grad) {
        // d(ssim)/dx(q) gathers the coefficients of every window containing q,
        // weighted by that window's (border-renormalized) tap at q.
        for (int c = 0; c < channels; ++c) {
            for (int py = 0; py < height; ++py) {
                for (int px = 0; px < width; ++px) {
                    double xq = pred.at(px, py, c), yq = gt.at(px, py, c);
                    double acc = 0.0;
                    int x0 = std::max(0, px - kHalf), x1 = std::min(width - 1, px + kHalf);
                    int y0 = std::max(0, py - kHalf), y1 = std::min(height - 1, py + kHalf);
                    for (int qy = y0; qy <= y1; ++qy) {
                        double wy = taps[py - qy + kHalf];
                        for (int qx = x0; qx <= x1; ++qx) {
                            double eff =
                                wy * taps[px - qx + kHalf] / (norm_x[qx] * norm_y[qy]);
                            acc += eff * (c_mu.at(qx, qy, c) + 2.0 * xq * c_exx.at(qx, qy, c) +
                                          yq * c_exy.at(qx, qy, c));
                        }
                    }
                    grad->at(px, py, c) = acc / n_total;
                }
            }
        }
    }
    return total / n_total;
}

} // namespace splatlab
