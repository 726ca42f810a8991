#include "densefix/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "densefix/io.hpp"

namespace densefix {

namespace {

using nlohmann::json;

void hue_to_rgb(double hue, double sat, double val, double& r, double& g, double& b) {
    const double h = std::fmod(hue, 1.0) * 6.0;
    const int i = static_cast<int>(h);
    const double f = h - i;
    const double p = val * (1.0 - sat);
    const double q = val * (1.0 - sat * f);
    const double t = val * (1.0 - sat * (1.0 - f));
    switch (i % 6) {
        case 0: r = val; g = t; b = p; break;
        case 1: r = q; g = val; b = p; break;
        case 2: r = p; g = val; b = t; break;
        case 3: r = p; g = q; b = val; break;
        case 4: r = t; g = p; b = val; break;
        default: r = val; g = p; b = q; break;
    }
}

std::array<double, 3> class_anchor(int cls, int num_classes) {
    std::array<double, 3> rgb{};
    hue_to_rgb(static_cast<double>(cls - 1) / std::max(1, num_classes - 1), 0.75, 0.85, rgb[0],
               rgb[1], rgb[2]);
    return rgb;
}

std::vector<int> epoch_perm(const std::vector<int>& pool, std::uint64_t seed, const char* tag,
                            std::int64_t epoch) {
    std::vector<int> p = pool;
    Rng rng(derive_seed(seed, tag, static_cast<std::uint64_t>(epoch)));
    for (int i = static_cast<int>(p.size()) - 1; i > 0; --i)
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    return p;
}

}  // namespace

int sample_shape_class(Rng& rng, int num_classes, double imbalance) {
    const int n_fg = num_classes - 1;
    std::vector<double> weights(static_cast<std::size_t>(n_fg));
    double total = 0.0;
    for (int c = 1; c <= n_fg; ++c) {
        weights[static_cast<std::size_t>(c - 1)] = std::pow(imbalance, -static_cast<double>(c));
        total += weights[static_cast<std::size_t>(c - 1)];
    }
    double u = rng.uniform() * total;
    for (int c = 1; c <= n_fg; ++c) {
        u -= weights[static_cast<std::size_t>(c - 1)];
        if (u < 0.0) return c;
    }
    return n_fg;
}

Dataset Dataset::generate(const DatasetParams& params) {
    if (params.num_classes < 3)
        throw std::invalid_argument("Dataset::generate: need at least three classes");
    if (params.imbalance < 1.0)
        throw std::invalid_argument("Dataset::generate: imbalance must be >= 1");

    Dataset ds;
    ds.params_ = params;
    ds.samples_.reserve(static_cast<std::size_t>(params.n));
    const int h = params.height, w = params.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    for (int i = 0; i < params.n; ++i) {
        Rng rng(derive_seed(params.seed, "image", static_cast<std::uint64_t>(i)));
        std::vector<double> img(3 * plane);
        LabelMap labels(h, w, 0);

        for (int attempt = 0;; ++attempt) {
            // Near-gray background so foreground stands out by saturation,
            // while foreground classes overlap with each other in color.
            const double gray = rng.uniform(0.25, 0.75);
            std::array<double, 3> bg{};
            for (auto& c : bg) c = std::clamp(gray + rng.uniform(-0.06, 0.06), 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
                std::fill(img.begin() + static_cast<std::ptrdiff_t>(c * plane),
                          img.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane), bg[static_cast<std::size_t>(c)]);
            std::fill(labels.values.begin(), labels.values.end(), std::uint8_t{0});

            const int n_shapes = rng.uniform_int(2, 5);
            for (int s = 0; s < n_shapes; ++s) {
                const int cls = sample_shape_class(rng, params.num_classes, params.imbalance);
                const auto anchor = class_anchor(cls, params.num_classes);
                std::array<double, 3> color{};
                for (int c = 0; c < 3; ++c)
                    color[static_cast<std::size_t>(c)] =
                        std::clamp(anchor[static_cast<std::size_t>(c)] + rng.normal(0.0, 0.2), 0.05, 0.95);

                const int half = rng.uniform_int(4, 10);
                const int cy = rng.uniform_int(half, h - 1 - half);
                const int cx = rng.uniform_int(half, w - 1 - half);
                auto put = [&](int y, int x) {
                    labels.at(y, x) = static_cast<std::uint8_t>(cls);
                    for (int c = 0; c < 3; ++c)
                        img[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w +
                            static_cast<std::size_t>(x)] = color[static_cast<std::size_t>(c)];
                };
                switch ((cls - 1) % 3) {
                    case 0: {  // axis-aligned rectangle
                        const int half_w = rng.uniform_int(4, std::min(10, std::min(cx, w - 1 - cx)));
                        for (int y = cy - half; y <= cy + half; ++y)
                            for (int x = cx - half_w; x <= cx + half_w; ++x) put(y, x);
                        break;
                    }
                    case 1: {  // circle
                        for (int y = cy - half; y <= cy + half; ++y)
                            for (int x = cx - half; x <= cx + half; ++x)
                                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= half * half) put(y, x);
                        break;
                    }
                    default: {  // upward isoceles triangle
                        for (int y = cy - half; y <= cy + half; ++y) {
                            const double span = half * (static_cast<double>(y - (cy - half)) / (2.0 * half));
                            for (int x = cx - static_cast<int>(span); x <= cx + static_cast<int>(span); ++x)
                                put(y, x);
                        }
                        break;
                    }
                }
            }

            const int fg = valid_count(labels) -
                           static_cast<int>(std::count(labels.values.begin(), labels.values.end(), std::uint8_t{0}));
            const int bg_count = static_cast<int>(std::count(labels.values.begin(), labels.values.end(), std::uint8_t{0}));
            if (fg > 0 && bg_count > 0) break;
            if (attempt > 32)
                throw std::runtime_error("Dataset::generate: could not satisfy the fg/bg constraint");
        }

        for (auto& v : img) v = std::clamp(v + rng.normal(0.0, 0.05), 0.0, 1.0);

        Sample sample;
        sample.id = i;
        sample.image = Tensor::from({3, h, w}, std::move(img));
        sample.labels = std::move(labels);
        ds.samples_.push_back(std::move(sample));
    }
    return ds;
}

Dataset Dataset::from_parts(DatasetParams params, std::vector<Sample> samples) {
    Dataset ds;
    ds.params_ = std::move(params);
    ds.samples_ = std::move(samples);
    return ds;
}

const Sample& Dataset::sample(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Dataset::sample: bad id");
    return samples_[static_cast<std::size_t>(id)];
}

void Dataset::replace_labels_for_test(int id, LabelMap labels) {
    if (id < 0 || id >= size()) throw std::out_of_range("Dataset::replace_labels_for_test: bad id");
    samples_[static_cast<std::size_t>(id)].labels = std::move(labels);
}

std::vector<SplitSpec> make_splits(int n_total, int n_labeled, int n_splits,
                                   std::uint64_t base_seed) {
    if (n_labeled > n_total) throw std::invalid_argument("make_splits: n_labeled > n_total");
    std::vector<SplitSpec> splits;
    splits.reserve(static_cast<std::size_t>(n_splits));
    for (int s = 0; s < n_splits; ++s) {
        SplitSpec spec;
        spec.seed = derive_seed(base_seed, "split", static_cast<std::uint64_t>(s));
        std::vector<int> ids(static_cast<std::size_t>(n_total));
        for (int i = 0; i < n_total; ++i) ids[static_cast<std::size_t>(i)] = i;
        Rng rng(spec.seed);
        for (int i = n_total - 1; i > 0; --i)
            std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        spec.labeled.assign(ids.begin(), ids.begin() + n_labeled);
        spec.unlabeled.assign(ids.begin() + n_labeled, ids.end());
        std::sort(spec.labeled.begin(), spec.labeled.end());
        std::sort(spec.unlabeled.begin(), spec.unlabeled.end());
        splits.push_back(std::move(spec));
    }
    return splits;
}

TrainingView::TrainingView(const Dataset& dataset, const SplitSpec& split) : dataset_(&dataset) {
    labeled_.assign(static_cast<std::size_t>(dataset.size()), false);
    for (int id : split.labeled) labeled_[static_cast<std::size_t>(id)] = true;
}

const Tensor& TrainingView::image(int id) const { return dataset_->sample(id).image; }

const LabelMap& TrainingView::labels(int id) const {
    if (!is_labeled(id))
        throw std::logic_error("TrainingView::labels: sample " + std::to_string(id) +
                               " is unlabeled; ground truth is off limits to the training path");
    return dataset_->sample(id).labels;
}

bool TrainingView::is_labeled(int id) const {
    return id >= 0 && id < static_cast<int>(labeled_.size()) && labeled_[static_cast<std::size_t>(id)];
}

ExplicitBatchStream::ExplicitBatchStream(const SplitSpec& split, int batch_labeled,
                                         int batch_unlabeled, std::uint64_t seed)
    : labeled_(split.labeled), unlabeled_(split.unlabeled), b_l_(batch_labeled),
      b_u_(batch_unlabeled), seed_(seed) {
    if (b_l_ < 1 || b_u_ < 1)
        throw std::invalid_argument("ExplicitBatchStream: batch sizes must be at least 1");
    if (labeled_.empty()) throw std::invalid_argument("ExplicitBatchStream: empty labeled pool");
    if (unlabeled_.empty())
        throw std::invalid_argument(
            "ExplicitBatchStream: empty unlabeled pool; run the supervised baseline instead");
}

int cycled_id(const std::vector<int>& pool, std::uint64_t seed, const char* tag,
              std::int64_t pos) {
    if (pool.empty()) throw std::invalid_argument("cycled_id: empty pool");
    const auto n = static_cast<std::int64_t>(pool.size());
    const auto perm = epoch_perm(pool, seed, tag, pos / n);
    return perm[static_cast<std::size_t>(pos % n)];
}

BatchPlan ExplicitBatchStream::batch(std::int64_t step) const {
    BatchPlan plan;
    plan.reserve(static_cast<std::size_t>(b_l_ + b_u_));
    for (int j = 0; j < b_l_; ++j)
        plan.push_back({cycled_id(labeled_, seed_, "batches/labeled", step * b_l_ + j), true});
    for (int j = 0; j < b_u_; ++j)
        plan.push_back({cycled_id(unlabeled_, seed_, "batches/unlabeled", step * b_u_ + j), false});
    return plan;
}

ImplicitBatchStream::ImplicitBatchStream(const SplitSpec& split, int batch_size, std::uint64_t seed)
    : b_(batch_size), seed_(seed) {
    if (b_ < 1) throw std::invalid_argument("ImplicitBatchStream: batch size must be at least 1");
    ids_.reserve(split.labeled.size() + split.unlabeled.size());
    for (int id : split.labeled) ids_.push_back(id);
    for (int id : split.unlabeled) ids_.push_back(id);
    std::sort(ids_.begin(), ids_.end());
    const int max_id = ids_.empty() ? 0 : *std::max_element(ids_.begin(), ids_.end());
    labeled_.assign(static_cast<std::size_t>(max_id) + 1, false);
    for (int id : split.labeled) labeled_[static_cast<std::size_t>(id)] = true;
}

BatchPlan ImplicitBatchStream::batch(std::int64_t step) const {
    BatchPlan plan;
    plan.reserve(static_cast<std::size_t>(b_));
    for (int j = 0; j < b_; ++j) {
        const int id = cycled_id(ids_, seed_, "batches/implicit", step * b_ + j);
        plan.push_back({id, labeled_[static_cast<std::size_t>(id)]});
    }
    return plan;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "densefix-dataset";
    manifest["version"] = 1;
    const auto& p = dataset.params();
    manifest["params"] = {{"n", p.n},          {"height", p.height},
                          {"width", p.width},  {"num_classes", p.num_classes},
                          {"imbalance", p.imbalance}, {"seed", p.seed}};
    manifest["samples"] = json::array();
    char name[64];
    for (const auto& s : dataset.samples()) {
        std::snprintf(name, sizeof(name), "sample_%05d", s.id);
        const std::string image_file = std::string(name) + ".npy";
        const std::string label_file = std::string(name) + ".pgm";
        write_npy_file(dir / image_file, s.image);
        write_pgm_file(dir / label_file, s.labels);
        manifest["samples"].push_back({{"id", s.id}, {"image", image_file}, {"labels", label_file}});
    }
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
}

Dataset import_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("import_dataset: missing manifest.json in " + dir.string());
    json manifest = json::parse(is);
    if (manifest.value("format", "") != "densefix-dataset")
        throw std::runtime_error("import_dataset: not a dataset directory");

    DatasetParams params;
    params.n = manifest["params"]["n"].get<int>();
    params.height = manifest["params"]["height"].get<int>();
    params.width = manifest["params"]["width"].get<int>();
    params.num_classes = manifest["params"]["num_classes"].get<int>();
    params.imbalance = manifest["params"]["imbalance"].get<double>();
    params.seed = manifest["params"]["seed"].get<std::uint64_t>();
    std::vector<Sample> samples;
    for (const auto& entry : manifest["samples"]) {
        Sample s;
        s.id = entry["id"].get<int>();
        s.image = read_npy_file(dir / entry["image"].get<std::string>());
        s.labels = read_pgm_file(dir / entry["labels"].get<std::string>());
        samples.push_back(std::move(s));
    }
    return Dataset::from_parts(std::move(params), std::move(samples));
}

}  // namespace densefix
