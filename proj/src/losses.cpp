#include "splatlab/losses.hpp"

#include <cmath>

#include "splatlab/metrics.hpp"

namespace splatlab {

LossResult photometric_loss(const ImageBuffer& pred, const ImageBuffer& gt, double lambda,
                            bool with_grad) {
    pred.require_shape(gt, "photometric_loss");
    LossResult out;
    double n = static_cast<double>(pred.values.size());

    double l1 = 0.0;
    if (with_grad) out.grad = ImageBuffer(pred.width, pred.height, pred.channels);
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        double d = pred.values[i] - gt.values[i];
        l1 += std::abs(d);
        if (with_grad)
            out.grad.values[i] = (1.0 - lambda) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
    l1 /= n;

    double s = 1.0;
    if (lambda > 0.0) {
        ImageBuffer ssim_grad;
        s = ssim(pred, gt, with_grad ? &ssim_grad : nullptr);
        if (with_grad)
            for (std::size_t i = 0; i < pred.values.size(); ++i)
                out.grad.values[i] += lambda * -0.5 * ssim_grad.values[i];
    }
    out.loss = (1.0 - lambda) * l1 + lambda * 0.5 * (1.0 - s);
    return out;
}

} // namespace splatlab
