#include "densefix/pseudolabel.hpp"

#include <stdexcept>

namespace densefix {

LabelMap pseudolabel(const ProbMap& probs, double tau) {
    if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("pseudolabel: tau must be in [0,1]");
    LabelMap out(probs.height, probs.width, kIgnoreLabel);
    for (int y = 0; y < probs.height; ++y) {
        for (int x = 0; x < probs.width; ++x) {
            int best = 0;
            double best_p = probs.at(0, y, x);
            for (int k = 1; k < probs.num_classes; ++k) {
                const double p = probs.at(k, y, x);
                if (p > best_p) {  // strict: ties keep the lowest index
                    best_p = p;
                    best = k;
                }
            }
            if (best_p >= tau) out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

LabelMap match(const LabelMap& pl, const AugRecord& alpha_rec, const AugRecord& strong_rec) {
    if (pl.height != alpha_rec.geometric.out_h || pl.width != alpha_rec.geometric.out_w)
        throw std::invalid_argument("match: pseudo-label does not have the weak view's spatial size");
    const GeomTransform warp = compose(strong_rec.geometric, invert(alpha_rec.geometric));
    return apply_geom_to_labels(warp, pl);
}

}  // namespace densefix
