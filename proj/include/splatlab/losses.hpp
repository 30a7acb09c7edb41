#pragma once

#include "splatlab/image.hpp"

namespace splatlab {

struct LossResult {
    double loss = 0.0;
    ImageBuffer grad; // d(loss)/d(pred)
};

// loss = (1 - lambda) * L1 + lambda * (1 - SSIM) / 2. Zero iff pred == gt.
LossResult photometric_loss(const ImageBuffer& pred, const ImageBuffer& gt, double lambda,
                            bool with_grad = true);

} // namespace splatlab
