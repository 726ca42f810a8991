#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "densefix/augment.hpp"
#include "densefix/losses.hpp"
#include "densefix/metrics.hpp"
#include "densefix/model.hpp"
#include "densefix/synth_data.hpp"

namespace densefix {

enum class Method { Supervised, DenseFixmatch };
enum class SamplingMode { Explicit, Implicit };

std::string to_string(Method m);
std::string to_string(SamplingMode s);
std::string to_string(CropRelation c);
Method method_from_string(const std::string& s);
SamplingMode sampling_from_string(const std::string& s);
CropRelation crop_relation_from_string(const std::string& s);

/// Every knob of a run. All randomness derives from `seed` through
/// documented sub-seed derivations (dataset, eval set, splits, per-run
/// init/batches/augmentation), so a config fully determines a trajectory.
struct TrainConfig {
    Method method = Method::DenseFixmatch;

    // Objective.
    double tau = 0.5;
    double lambda_max = 1.0;
    int warmup_steps = 300;
    double ema_decay = 0.99;
    bool consistency_on_labeled = false;  // explicit mode only; implicit always includes them

    // Augmentation.
    CropRelation crop_relation = CropRelation::MinOverlap;
    double min_overlap = 0.25;
    bool aug_color = true;
    bool aug_geom = true;
    bool aug_cutout = true;
    double flip_prob = 0.5;
    int rand_ops = 2;
    double mag_lo = 0.1, mag_hi = 1.0;

    // Mini-batch sampling.
    SamplingMode sampling = SamplingMode::Explicit;
    int batch_labeled = 4;
    int batch_unlabeled = 4;
    int batch_size = 8;  // implicit mode

    // Data.
    DatasetParams dataset;  // dataset.seed is ignored; derived from seed
    int crop = 32;
    int n_labeled = 16;
    int n_splits = 4;
    int split_index = 0;
    int eval_images = 64;

    // Optimization.
    int steps = 1500;
    int eval_interval = 200;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    // Model.
    std::vector<int> hidden_channels = {16, 16, 16};
    int kernel = 3;

    // Run control (excluded from the config hash).
    std::uint64_t seed = 1;
    std::string out_dir;
    int threads = 2;
    bool resume = true;
};

/// Lossless JSON round trip; unknown keys are rejected.
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

/// Hash of the trajectory-determining fields (out_dir/threads/resume are
/// excluded). Used to key checkpoints and grid-cell results.
std::uint64_t config_hash(const TrainConfig& cfg);

struct RunResult {
    double best_teacher_miou = 0.0;
    std::int64_t best_step = -1;
    double final_teacher_miou = 0.0;
    double final_student_miou = 0.0;
    std::vector<std::optional<double>> best_per_class_iou;
    std::uint64_t config_hash = 0;
    double wall_seconds = 0.0;
    std::int64_t steps_completed = 0;
};

std::string run_result_to_json(const RunResult& r);
RunResult run_result_from_json(const std::string& json_text);

/// Mutable per-run state. Batch streams and augmentation draws are pure
/// functions of (config, step), so this is the whole of it; serializing
/// these fields checkpoints the run exactly.
struct TrainState {
    std::int64_t step = 0;
    ParamSet student;
    TeacherState teacher;
    SgdState opt;
    double best_miou = -1.0;
    std::int64_t best_step = -1;
    std::vector<std::optional<double>> best_per_class_iou;
};

void save_checkpoint(std::ostream& os, const TrainState& state, std::uint64_t cfg_hash);
TrainState load_checkpoint(std::istream& is, std::uint64_t expected_cfg_hash);

/// Wires the modules into the full method: weak/strong views, tape-free
/// teacher pseudo-labels, matching, the combined objective, one optimizer
/// step and the EMA update.
class Trainer {
public:
    explicit Trainer(TrainConfig cfg);
    /// Injection constructor for tests (label-leak and determinism checks).
    Trainer(TrainConfig cfg, Dataset train_data, Dataset eval_data);

    const TrainConfig& config() const { return cfg_; }
    const Dataset& train_data() const { return data_; }
    const Dataset& eval_data() const { return eval_; }
    const SplitSpec& split() const;

    TrainState make_initial_state() const;

    /// Per-run sub-seed root: derive_seed(seed, "run", split_index).
    /// Children: "init" (weights), "batches" (streams), "augment" (views);
    /// per-element augmentation generators are seeded by
    /// derive_seed(augment_child, role, step * batch + slot) with role one
    /// of "aug/labeled", "aug/unlabeled" (explicit) or "aug/element"
    /// (implicit).
    std::uint64_t run_seed() const { return run_seed_; }

    /// The mini-batch at a step; pure function of (config, step).
    BatchPlan plan_for_step(std::int64_t step) const;

    /// Advances state by one step at state.step; deterministic given the
    /// config. A non-finite loss throws after writing a diagnostic dump.
    LossBreakdown train_step(TrainState& state) const;

    EvalReport evaluate_teacher(const TrainState& state) const;
    EvalReport evaluate_student(const TrainState& state) const;

    /// Full protocol: trains, evaluates the teacher every eval_interval
    /// steps, checkpoints best-by-mIoU and last, writes the loss CSV and
    /// report JSON when out_dir is set, resumes from last.ckpt when present
    /// and compatible.
    RunResult run();

private:
    void init_common();

    TrainConfig cfg_;
    Dataset data_;
    Dataset eval_;
    std::vector<SplitSpec> splits_;
    std::optional<TrainingView> view_;
    StrongAugConfig strong_cfg_;
    std::uint64_t run_seed_ = 0;
    std::uint64_t hash_ = 0;
};

RunResult train_run(const TrainConfig& cfg);

/// Grid of config overrides; every cell runs n_splits runs (one per split,
/// each with its own derived seed) and reports mean and population std of
/// the best teacher mIoU. Cells and runs are resumable: existing per-run
/// reports with a matching config hash are reused, not recomputed.
struct GridSpec {
    TrainConfig base;
    // Axis: config field name (as in the JSON form) -> values (JSON literals).
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::string out_dir;
};

struct GridCell {
    std::vector<std::pair<std::string, std::string>> assignment;
    std::vector<double> split_mious;
    double mean = 0.0;
    double stddev = 0.0;
};

struct GridResult {
    std::vector<GridCell> cells;
};

GridResult run_grid(const GridSpec& spec);

}  // namespace densefix
