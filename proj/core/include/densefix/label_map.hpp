#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "densefix/tensor.hpp"

namespace densefix {

/// Reserved per-pixel value marking locations with no defined label:
/// outside a crop, below the confidence threshold, or masked ground truth.
/// Fixed at 255 to interoperate with common segmentation label encodings.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel integer class map. Valid values are {0..K-1} plus kIgnoreLabel.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;  // row-major

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = kIgnoreLabel)
        : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

    std::uint8_t at(int y, int x) const {
        return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
    }
    std::uint8_t& at(int y, int x) {
        return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
    }

    bool same_shape(const LabelMap& o) const { return height == o.height && width == o.width; }
};

/// Number of non-ignore pixels.
int valid_count(const LabelMap& lm);

/// Per-pixel class probability field for one sample, layout [K][H][W].
struct ProbMap {
    int num_classes = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ProbMap() = default;
    ProbMap(int k, int h, int w)
        : num_classes(k),
          height(h),
          width(w),
          values(static_cast<std::size_t>(k) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0) {}

    double at(int k, int y, int x) const {
        return values[(static_cast<std::size_t>(k) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) *
                          static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    double& at(int k, int y, int x) {
        return values[(static_cast<std::size_t>(k) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) *
                          static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
};

/// Extracts sample n of a [N,K,H,W] probability tensor.
ProbMap probmap_from_tensor(const Tensor& probs, int n);

/// PGM (P5, single channel, maxval 255) dump for debugging; ignore pixels
/// come out white. Round-trips exactly for 8-bit label values.
void write_pgm(std::ostream& os, const LabelMap& lm);
LabelMap read_pgm(std::istream& is);

}  // namespace densefix
