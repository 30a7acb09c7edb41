#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

#include "splatlab/common.hpp"

namespace splatlab {

// Row-major planar-interleaved image. Values are normalized [0,1] scalars for
// color/alpha, meters for depth, {0,1} for masks; 8-bit only at file
// boundaries.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> values;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          values(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c = 0) {
        assert(x >= 0 && x < width && y >= 0 && y < height && c >= 0 && c < channels);
        return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        assert(x >= 0 && x < width && y >= 0 && y < height && c >= 0 && c < channels);
        return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    bool same_shape(const ImageBuffer& other) const {
        return width == other.width && height == other.height && channels == other.channels;
    }

    void require_shape(const ImageBuffer& other, const char* what) const {
        if (!same_shape(other))
            throw Error(ErrorKind::DimensionMismatch, std::string("image shape mismatch in ") + what);
    }
};

// A full render: color, compositing-weight-expected depth, accumulated
// opacity. Pixels with alpha below the background epsilon carry the camera
// far value in the depth channel.
struct RenderOutput {
    ImageBuffer color; // 3 channels
    ImageBuffer depth; // 1 channel, meters
    ImageBuffer alpha; // 1 channel, [0,1]
};

inline constexpr double kAlphaBackgroundEps = 1e-3;

} // namespace splatlab
