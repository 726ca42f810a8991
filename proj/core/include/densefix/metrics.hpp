#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "densefix/label_map.hpp"
#include "densefix/model.hpp"
#include "densefix/synth_data.hpp"

namespace densefix {

/// K x K pixel counts; entry (gt, pred) counts pixels with ground truth gt
/// predicted as pred. Only gt-valid pixels are counted, so the total equals
/// the number of evaluated non-ignore pixels. Accumulation is
/// order-independent and per-image matrices sum exactly (integer counts).
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    /// pred must be a full prediction (no ignore values below K); gt ignore
    /// pixels are skipped. Shape mismatch throws.
    void accumulate(const LabelMap& pred, const LabelMap& gt);

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    std::uint64_t at(int gt, int pred) const;
    std::uint64_t& at(int gt, int pred);
    int num_classes() const { return k_; }
    std::uint64_t total() const;
    std::uint64_t gt_count(int cls) const;  // row sum: pixels of this ground-truth class

private:
    int k_;
    std::vector<std::uint64_t> counts_;
};

/// IoU_c = cm[c,c] / (row_c + col_c - cm[c,c]); nullopt (not zero) when the
/// class appears in neither prediction nor ground truth.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);

struct MiouResult {
    double mean = 0.0;
    double stddev = 0.0;  // population std over defined classes
    int defined_classes = 0;
};

/// Mean and cross-class dispersion over defined IoUs only. Throws when no
/// class has a defined IoU.
MiouResult miou(const ConfusionMatrix& cm);

struct EvalReport {
    MiouResult miou;
    std::vector<std::optional<double>> per_class_iou;
    std::vector<double> pixel_fraction;  // share of evaluated pixels per gt class
};

/// Full-resolution, single-scale, single-pass evaluation: one forward per
/// image, argmax prediction (ties to the lowest class index), accumulated
/// confusion matrix. Pass teacher (EMA) params for the headline number.
/// An empty evaluation set throws.
EvalReport evaluate_model(const ParamSet& params, const Dataset& eval_set);

/// Argmax class map from one sample's probabilities (no ignore pixels).
LabelMap argmax_map(const ProbMap& probs);

}  // namespace densefix
