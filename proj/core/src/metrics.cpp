#include "densefix/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace densefix {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (k_ < 2) throw std::invalid_argument("ConfusionMatrix: need at least two classes");
    counts_.assign(static_cast<std::size_t>(k_) * static_cast<std::size_t>(k_), 0);
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument("ConfusionMatrix::accumulate: prediction and ground truth shapes differ");
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        const std::uint8_t g = gt.values[i];
        if (g == kIgnoreLabel) continue;
        const std::uint8_t p = pred.values[i];
        if (g >= k_ || p >= k_)
            throw std::invalid_argument("ConfusionMatrix::accumulate: label value out of class range");
        ++counts_[static_cast<std::size_t>(g) * static_cast<std::size_t>(k_) + p];
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix::operator+=: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(pred)];
}

std::uint64_t& ConfusionMatrix::at(int gt, int pred) {
    return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(pred)];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::gt_count(int cls) const {
    std::uint64_t t = 0;
    for (int p = 0; p < k_; ++p) t += at(cls, p);
    return t;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    std::vector<std::optional<double>> ious(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        std::uint64_t row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const std::uint64_t inter = cm.at(c, c);
        const std::uint64_t uni = row + col - inter;
        if (uni > 0) ious[static_cast<std::size_t>(c)] = static_cast<double>(inter) / static_cast<double>(uni);
    }
    return ious;
}

MiouResult miou(const ConfusionMatrix& cm) {
    const auto ious = iou_per_class(cm);
    MiouResult r;
    double sum = 0.0;
    for (const auto& iou : ious) {
        if (!iou) continue;
        sum += *iou;
        ++r.defined_classes;
    }
    if (r.defined_classes == 0) throw std::runtime_error("miou: no class has a defined IoU");
    r.mean = sum / r.defined_classes;
    double sq = 0.0;
    for (const auto& iou : ious)
        if (iou) sq += (*iou - r.mean) * (*iou - r.mean);
    r.stddev = std::sqrt(sq / r.defined_classes);
    return r;
}

LabelMap argmax_map(const ProbMap& probs) {
    LabelMap out(probs.height, probs.width, 0);
    for (int y = 0; y < probs.height; ++y) {
        for (int x = 0; x < probs.width; ++x) {
            int best = 0;
            double best_p = probs.at(0, y, x);
            for (int k = 1; k < probs.num_classes; ++k) {
                const double p = probs.at(k, y, x);
                if (p > best_p) {
                    best_p = p;
                    best = k;
                }
            }
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

EvalReport evaluate_model(const ParamSet& params, const Dataset& eval_set) {
    if (eval_set.size() == 0) throw std::invalid_argument("evaluate_model: empty evaluation set");
    const int k = params.spec.num_classes();
    ConfusionMatrix cm(k);
    for (const auto& sample : eval_set.samples()) {
        const int h = sample.image.extent(1), w = sample.image.extent(2);
        Tensor batch = Tensor::from({1, 3, h, w},
                                    {sample.image.values().begin(), sample.image.values().end()});
        const Tensor probs = predict(params, batch);
        cm.accumulate(argmax_map(probmap_from_tensor(probs, 0)), sample.labels);
    }
    EvalReport report;
    report.miou = miou(cm);
    report.per_class_iou = iou_per_class(cm);
    const double total = static_cast<double>(cm.total());
    report.pixel_fraction.resize(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c)
        report.pixel_fraction[static_cast<std::size_t>(c)] = static_cast<double>(cm.gt_count(c)) / total;
    return report;
}

}  // namespace densefix
