#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "densefix/label_map.hpp"
#include "densefix/rng.hpp"
#include "densefix/tensor.hpp"

namespace densefix {

/// One generated training/evaluation sample. Every pixel is labeled at
/// generation time (no ignore values).
struct Sample {
    int id = 0;
    Tensor image;     // [3,H,W] in [0,1]
    LabelMap labels;  // [H,W]
};

struct DatasetParams {
    int n = 512;
    int height = 48, width = 48;
    int num_classes = 4;    // background plus num_classes-1 shape classes
    double imbalance = 1.0; // class c drawn with probability proportional to imbalance^(-c)
    std::uint64_t seed = 0;
};

/// Foreground class in {1..K-1}, drawn with probability proportional to
/// imbalance^(-c). imbalance = 1 is uniform over the foreground classes.
int sample_shape_class(Rng& rng, int num_classes, double imbalance);

/// Deterministic synthetic dense-segmentation set: noisy random background
/// (class 0) plus 2-5 foreground shapes per image. Class determines the
/// shape family (rectangle / circle / triangle, cycling) while per-class
/// color distributions overlap, so color alone does not identify a class.
class Dataset {
public:
    static Dataset generate(const DatasetParams& params);
    static Dataset from_parts(DatasetParams params, std::vector<Sample> samples);

    int size() const { return static_cast<int>(samples_.size()); }
    const DatasetParams& params() const { return params_; }

    /// Full access, for the evaluation and diagnostic paths.
    const Sample& sample(int id) const;
    const std::vector<Sample>& samples() const { return samples_; }

    /// Test hook: overwrites a sample's labels in place (used to prove the
    /// training path never reads unlabeled ground truth).
    void replace_labels_for_test(int id, LabelMap labels);

private:
    DatasetParams params_;
    std::vector<Sample> samples_;
};

/// Labeled/unlabeled id split; disjoint, union covers the training set.
struct SplitSpec {
    std::vector<int> labeled;
    std::vector<int> unlabeled;
    std::uint64_t seed = 0;
};

/// n_splits independent draws of n_labeled ids without replacement (no
/// class-balance guarantee), remainder unlabeled; seeds derived per split.
std::vector<SplitSpec> make_splits(int n_total, int n_labeled, int n_splits,
                                   std::uint64_t base_seed);

/// Label barrier for the training path: images of every sample, labels of
/// labeled samples only. Reading an unlabeled sample's labels throws.
class TrainingView {
public:
    TrainingView(const Dataset& dataset, const SplitSpec& split);

    const Tensor& image(int id) const;
    const LabelMap& labels(int id) const;  // hard error if id is not labeled
    bool is_labeled(int id) const;

private:
    const Dataset* dataset_;
    std::vector<bool> labeled_;
};

struct BatchItem {
    int id = 0;
    bool labeled = false;
};
using BatchPlan = std::vector<BatchItem>;

/// The id at global position pos of shuffled cycling over pool: position
/// pos falls in epoch pos/|pool|, and each epoch is an independent
/// Fisher-Yates permutation seeded by (seed, tag, epoch). Every sampler
/// emits through this single function, so any two consumers of the same
/// (pool, seed, tag) see the same sequence.
int cycled_id(const std::vector<int>& pool, std::uint64_t seed, const char* tag,
              std::int64_t pos);

/// Separate shuffled cycling over the labeled and unlabeled pools; every
/// batch holds exactly B_L labeled then B_U unlabeled items. Small labeled
/// pools are revisited as often as needed. Pure function of (seed, step).
class ExplicitBatchStream {
public:
    ExplicitBatchStream(const SplitSpec& split, int batch_labeled, int batch_unlabeled,
                        std::uint64_t seed);
    BatchPlan batch(std::int64_t step) const;
    int batch_labeled() const { return b_l_; }
    int batch_unlabeled() const { return b_u_; }

private:
    std::vector<int> labeled_, unlabeled_;
    int b_l_ = 0, b_u_ = 0;
    std::uint64_t seed_ = 0;
};

/// Shuffled cycling over the union, each element tagged by its split side;
/// a batch may contain zero labeled samples. Every epoch visits each id
/// exactly once. Pure function of (seed, step).
class ImplicitBatchStream {
public:
    ImplicitBatchStream(const SplitSpec& split, int batch_size, std::uint64_t seed);
    BatchPlan batch(std::int64_t step) const;
    int batch_size() const { return b_; }

private:
    std::vector<int> ids_;
    std::vector<bool> labeled_;
    int b_ = 0;
    std::uint64_t seed_ = 0;
};

/// Directory of per-sample NPY images and PGM labels plus a JSON manifest
/// carrying the generator parameters. Re-import reproduces bit-identical
/// tensors.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace densefix
