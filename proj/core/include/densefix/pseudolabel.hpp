#pragma once

#include "densefix/augment.hpp"
#include "densefix/label_map.hpp"

namespace densefix {

/// Hard, confidence-filtered pseudo-label: per pixel, the argmax class when
/// the max probability reaches tau, otherwise ignore. Argmax ties break to
/// the lowest class index. tau must lie in [0, 1]; at tau = 0 no pixel is
/// ever thresholded out (max probability is at least 1/K).
LabelMap pseudolabel(const ProbMap& probs, double tau);

/// Spatially aligns a pseudo-label produced in the weak view's frame into
/// the strong view's frame: the pseudo-label is warped once by the strong
/// geometric transform composed with the inverse of the weak one. Pixels
/// that fall outside the pseudo-label's frame, or that read an ignore
/// pixel, stay ignore. Photometric and cutout components of both records
/// play no part; no gradient path exists (hard labels carry no tape).
LabelMap match(const LabelMap& pl, const AugRecord& alpha_rec, const AugRecord& strong_rec);

}  // namespace densefix
