#include "densefix/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "densefix/io.hpp"
#include "densefix/pseudolabel.hpp"
#include "densefix/rng.hpp"
#include "kernels.hpp"

namespace densefix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCkptMagic[4] = {'D', 'F', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("load_checkpoint: truncated stream");
    return v;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor stack_images(const std::vector<Tensor>& images) {
    const int h = images.front().extent(1), w = images.front().extent(2);
    std::vector<double> data;
    data.reserve(images.size() * static_cast<std::size_t>(3) * h * w);
    for (const auto& img : images) data.insert(data.end(), img.values().begin(), img.values().end());
    return Tensor::from({static_cast<int>(images.size()), 3, h, w}, std::move(data));
}

json dataset_params_to_json(const DatasetParams& p) {
    return json{{"n", p.n},
                {"height", p.height},
                {"width", p.width},
                {"num_classes", p.num_classes},
                {"imbalance", p.imbalance}};
}

void check_known_keys(const json& obj, std::initializer_list<const char*> known,
                      const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        if (!ok) throw std::invalid_argument("unknown config key '" + key + "' in " + where);
    }
}

}  // namespace

std::string to_string(Method m) {
    return m == Method::Supervised ? "supervised" : "dense_fixmatch";
}
std::string to_string(SamplingMode s) {
    return s == SamplingMode::Explicit ? "explicit" : "implicit";
}
std::string to_string(CropRelation c) {
    switch (c) {
        case CropRelation::Same: return "same";
        case CropRelation::MinOverlap: return "min_overlap";
        default: return "any";
    }
}

Method method_from_string(const std::string& s) {
    if (s == "supervised") return Method::Supervised;
    if (s == "dense_fixmatch") return Method::DenseFixmatch;
    throw std::invalid_argument("unknown method '" + s + "' (expected supervised|dense_fixmatch)");
}
SamplingMode sampling_from_string(const std::string& s) {
    if (s == "explicit") return SamplingMode::Explicit;
    if (s == "implicit") return SamplingMode::Implicit;
    throw std::invalid_argument("unknown sampling mode '" + s + "' (expected explicit|implicit)");
}
CropRelation crop_relation_from_string(const std::string& s) {
    if (s == "same") return CropRelation::Same;
    if (s == "min_overlap") return CropRelation::MinOverlap;
    if (s == "any") return CropRelation::Any;
    throw std::invalid_argument("unknown crop relation '" + s + "' (expected same|min_overlap|any)");
}

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["method"] = to_string(c.method);
    j["tau"] = c.tau;
    j["lambda_max"] = c.lambda_max;
    j["warmup_steps"] = c.warmup_steps;
    j["ema_decay"] = c.ema_decay;
    j["consistency_on_labeled"] = c.consistency_on_labeled;
    j["crop_relation"] = to_string(c.crop_relation);
    j["min_overlap"] = c.min_overlap;
    j["aug_color"] = c.aug_color;
    j["aug_geom"] = c.aug_geom;
    j["aug_cutout"] = c.aug_cutout;
    j["flip_prob"] = c.flip_prob;
    j["rand_ops"] = c.rand_ops;
    j["mag_lo"] = c.mag_lo;
    j["mag_hi"] = c.mag_hi;
    j["sampling"] = to_string(c.sampling);
    j["batch_labeled"] = c.batch_labeled;
    j["batch_unlabeled"] = c.batch_unlabeled;
    j["batch_size"] = c.batch_size;
    j["dataset"] = dataset_params_to_json(c.dataset);
    j["crop"] = c.crop;
    j["n_labeled"] = c.n_labeled;
    j["n_splits"] = c.n_splits;
    j["split_index"] = c.split_index;
    j["eval_images"] = c.eval_images;
    j["steps"] = c.steps;
    j["eval_interval"] = c.eval_interval;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["hidden_channels"] = c.hidden_channels;
    j["kernel"] = c.kernel;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    j["resume"] = c.resume;
    return j.dump(2);
}

TrainConfig parse_train_config(const std::string& json_text) {
    json j = json::parse(json_text);
    check_known_keys(
        j,
        {"method", "tau", "lambda_max", "warmup_steps", "ema_decay", "consistency_on_labeled",
         "crop_relation", "min_overlap", "aug_color", "aug_geom", "aug_cutout", "flip_prob",
         "rand_ops", "mag_lo", "mag_hi", "sampling", "batch_labeled", "batch_unlabeled",
         "batch_size", "dataset", "crop", "n_labeled", "n_splits", "split_index", "eval_images",
         "steps", "eval_interval", "lr", "momentum", "weight_decay", "hidden_channels", "kernel",
         "seed", "out_dir", "threads", "resume"},
        "train config");
    TrainConfig c;
    if (j.contains("method")) c.method = method_from_string(j["method"].get<std::string>());
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("lambda_max")) c.lambda_max = j["lambda_max"].get<double>();
    if (j.contains("warmup_steps")) c.warmup_steps = j["warmup_steps"].get<int>();
    if (j.contains("ema_decay")) c.ema_decay = j["ema_decay"].get<double>();
    if (j.contains("consistency_on_labeled"))
        c.consistency_on_labeled = j["consistency_on_labeled"].get<bool>();
    if (j.contains("crop_relation"))
        c.crop_relation = crop_relation_from_string(j["crop_relation"].get<std::string>());
    if (j.contains("min_overlap")) c.min_overlap = j["min_overlap"].get<double>();
    if (j.contains("aug_color")) c.aug_color = j["aug_color"].get<bool>();
    if (j.contains("aug_geom")) c.aug_geom = j["aug_geom"].get<bool>();
    if (j.contains("aug_cutout")) c.aug_cutout = j["aug_cutout"].get<bool>();
    if (j.contains("flip_prob")) c.flip_prob = j["flip_prob"].get<double>();
    if (j.contains("rand_ops")) c.rand_ops = j["rand_ops"].get<int>();
    if (j.contains("mag_lo")) c.mag_lo = j["mag_lo"].get<double>();
    if (j.contains("mag_hi")) c.mag_hi = j["mag_hi"].get<double>();
    if (j.contains("sampling")) c.sampling = sampling_from_string(j["sampling"].get<std::string>());
    if (j.contains("batch_labeled")) c.batch_labeled = j["batch_labeled"].get<int>();
    if (j.contains("batch_unlabeled")) c.batch_unlabeled = j["batch_unlabeled"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        check_known_keys(d, {"n", "height", "width", "num_classes", "imbalance"}, "dataset");
        if (d.contains("n")) c.dataset.n = d["n"].get<int>();
        if (d.contains("height")) c.dataset.height = d["height"].get<int>();
        if (d.contains("width")) c.dataset.width = d["width"].get<int>();
        if (d.contains("num_classes")) c.dataset.num_classes = d["num_classes"].get<int>();
        if (d.contains("imbalance")) c.dataset.imbalance = d["imbalance"].get<double>();
    }
    if (j.contains("crop")) c.crop = j["crop"].get<int>();
    if (j.contains("n_labeled")) c.n_labeled = j["n_labeled"].get<int>();
    if (j.contains("n_splits")) c.n_splits = j["n_splits"].get<int>();
    if (j.contains("split_index")) c.split_index = j["split_index"].get<int>();
    if (j.contains("eval_images")) c.eval_images = j["eval_images"].get<int>();
    if (j.contains("steps")) c.steps = j["steps"].get<int>();
    if (j.contains("eval_interval")) c.eval_interval = j["eval_interval"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("hidden_channels")) c.hidden_channels = j["hidden_channels"].get<std::vector<int>>();
    if (j.contains("kernel")) c.kernel = j["kernel"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("resume")) c.resume = j["resume"].get<bool>();
    return c;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    json j = json::parse(train_config_to_json(cfg));
    j.erase("out_dir");
    j.erase("threads");
    j.erase("resume");
    const std::string canon = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string run_result_to_json(const RunResult& r) {
    json j;
    j["best_teacher_miou"] = r.best_teacher_miou;
    j["best_step"] = r.best_step;
    j["final_teacher_miou"] = r.final_teacher_miou;
    j["final_student_miou"] = r.final_student_miou;
    j["best_per_class_iou"] = json::array();
    for (const auto& iou : r.best_per_class_iou) {
        if (iou)
            j["best_per_class_iou"].push_back(*iou);
        else
            j["best_per_class_iou"].push_back(nullptr);
    }
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(r.config_hash));
    j["config_hash"] = hex;
    j["wall_seconds"] = r.wall_seconds;
    j["steps_completed"] = r.steps_completed;
    return j.dump(2);
}

RunResult run_result_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    RunResult r;
    r.best_teacher_miou = j["best_teacher_miou"].get<double>();
    r.best_step = j["best_step"].get<std::int64_t>();
    r.final_teacher_miou = j["final_teacher_miou"].get<double>();
    r.final_student_miou = j["final_student_miou"].get<double>();
    for (const auto& v : j["best_per_class_iou"]) {
        if (v.is_null())
            r.best_per_class_iou.push_back(std::nullopt);
        else
            r.best_per_class_iou.push_back(v.get<double>());
    }
    r.config_hash = std::stoull(j["config_hash"].get<std::string>(), nullptr, 16);
    r.wall_seconds = j["wall_seconds"].get<double>();
    r.steps_completed = j["steps_completed"].get<std::int64_t>();
    return r;
}

void save_checkpoint(std::ostream& os, const TrainState& state, std::uint64_t cfg_hash) {
    os.write(kCkptMagic, 4);
    write_pod(os, kCkptVersion);
    write_pod(os, cfg_hash);
    write_pod(os, state.step);
    write_pod(os, state.best_miou);
    write_pod(os, state.best_step);
    write_pod(os, static_cast<std::uint32_t>(state.best_per_class_iou.size()));
    for (const auto& iou : state.best_per_class_iou)
        write_pod(os, iou ? *iou : std::nan(""));
    save_params(os, state.student);
    write_pod(os, state.teacher.decay);
    save_params(os, state.teacher.params);
    write_pod(os, static_cast<std::uint32_t>(state.opt.velocity.size()));
    for (const auto& v : state.opt.velocity) {
        write_pod(os, static_cast<std::uint64_t>(v.size()));
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
}

TrainState load_checkpoint(std::istream& is, std::uint64_t expected_cfg_hash) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != std::string_view(kCkptMagic, 4))
        throw std::runtime_error("load_checkpoint: bad magic");
    if (read_pod<std::uint32_t>(is) != kCkptVersion)
        throw std::runtime_error("load_checkpoint: unsupported version");
    const auto hash = read_pod<std::uint64_t>(is);
    if (hash != expected_cfg_hash)
        throw std::runtime_error("load_checkpoint: checkpoint belongs to a different config");
    TrainState state;
    state.step = read_pod<std::int64_t>(is);
    state.best_miou = read_pod<double>(is);
    state.best_step = read_pod<std::int64_t>(is);
    const auto n_iou = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_iou; ++i) {
        const double v = read_pod<double>(is);
        state.best_per_class_iou.push_back(std::isnan(v) ? std::nullopt : std::optional<double>(v));
    }
    state.student = load_params(is);
    state.teacher.decay = read_pod<double>(is);
    state.teacher.params = load_params(is);
    const auto n_vel = read_pod<std::uint32_t>(is);
    state.opt.velocity.resize(n_vel);
    for (auto& v : state.opt.velocity) {
        v.resize(static_cast<std::size_t>(read_pod<std::uint64_t>(is)));
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated velocity");
    }
    return state;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    DatasetParams dp = cfg_.dataset;
    dp.seed = derive_seed(cfg_.seed, "dataset");
    data_ = Dataset::generate(dp);
    DatasetParams ep = cfg_.dataset;
    ep.n = cfg_.eval_images;
    ep.seed = derive_seed(cfg_.seed, "evalset");
    eval_ = Dataset::generate(ep);
    init_common();
}

Trainer::Trainer(TrainConfig cfg, Dataset train_data, Dataset eval_data)
    : cfg_(std::move(cfg)), data_(std::move(train_data)), eval_(std::move(eval_data)) {
    init_common();
}

void Trainer::init_common() {
    if (cfg_.split_index < 0 || cfg_.split_index >= cfg_.n_splits)
        throw std::invalid_argument("Trainer: split_index out of range");
    if (cfg_.crop > cfg_.dataset.height || cfg_.crop > cfg_.dataset.width)
        throw std::invalid_argument("Trainer: crop larger than generated images");
    if (cfg_.n_labeled < 1 || cfg_.n_labeled > data_.size())
        throw std::invalid_argument("Trainer: n_labeled out of range");
    if (cfg_.method == Method::DenseFixmatch && cfg_.sampling == SamplingMode::Explicit &&
        cfg_.n_labeled == data_.size())
        throw std::invalid_argument(
            "Trainer: explicit semi-supervised sampling needs a non-empty unlabeled pool; "
            "run the supervised baseline instead");
    splits_ = make_splits(data_.size(), cfg_.n_labeled, cfg_.n_splits,
                          derive_seed(cfg_.seed, "splits"));
    view_.emplace(data_, splits_[static_cast<std::size_t>(cfg_.split_index)]);
    strong_cfg_.pool = default_pool(cfg_.aug_geom, cfg_.aug_color);
    if (strong_cfg_.pool.size() == 0)
        throw std::invalid_argument("Trainer: augmentation subset must keep at least one op pool");
    strong_cfg_.n_ops = cfg_.rand_ops;
    strong_cfg_.mag_lo = cfg_.mag_lo;
    strong_cfg_.mag_hi = cfg_.mag_hi;
    strong_cfg_.crop_relation = cfg_.crop_relation;
    strong_cfg_.min_overlap = cfg_.min_overlap;
    strong_cfg_.cutout = cfg_.aug_cutout;
    run_seed_ = derive_seed(cfg_.seed, "run", static_cast<std::uint64_t>(cfg_.split_index));
    hash_ = config_hash(cfg_);
}

const SplitSpec& Trainer::split() const {
    return splits_[static_cast<std::size_t>(cfg_.split_index)];
}

TrainState Trainer::make_initial_state() const {
    TrainState state;
    state.student = init_model(derive_seed(run_seed_, "init"), cfg_.hidden_channels,
                               cfg_.dataset.num_classes, cfg_.kernel);
    state.teacher.params = state.student;
    state.teacher.decay = cfg_.ema_decay;
    return state;
}

BatchPlan Trainer::plan_for_step(std::int64_t step) const {
    const std::uint64_t stream_seed = derive_seed(run_seed_, "batches");
    const auto& sp = split();
    if (cfg_.sampling == SamplingMode::Implicit) {
        ImplicitBatchStream stream(sp, cfg_.batch_size, stream_seed);
        return stream.batch(step);
    }
    if (cfg_.method == Method::Supervised) {
        // Labeled half of the explicit stream only; same cycling function and
        // tag, so a lambda=0 run reproduces this stream exactly.
        BatchPlan plan;
        for (int j = 0; j < cfg_.batch_labeled; ++j)
            plan.push_back({cycled_id(sp.labeled, stream_seed, "batches/labeled",
                                      step * cfg_.batch_labeled + j),
                            true});
        return plan;
    }
    ExplicitBatchStream stream(sp, cfg_.batch_labeled, cfg_.batch_unlabeled, stream_seed);
    return stream.batch(step);
}

LossBreakdown Trainer::train_step(TrainState& state) const {
    const std::int64_t step = state.step;
    const BatchPlan plan = plan_for_step(step);
    const int gen_h = cfg_.dataset.height, gen_w = cfg_.dataset.width;
    const int crop = cfg_.crop;
    const bool fixmatch = cfg_.method == Method::DenseFixmatch;
    const std::uint64_t aug_seed = derive_seed(run_seed_, "augment");

    Tape tape;
    const auto watched = watch_params(tape, state.student);

    LossBreakdown bd;
    bd.lambda = fixmatch ? lambda_schedule(step, cfg_.warmup_steps, cfg_.lambda_max) : 0.0;

    std::vector<Tensor> sup_images;
    std::vector<LabelMap> sup_labels;
    struct ConsItem {
        AugRecord weak, strong;
        Tensor weak_image, strong_image;
    };
    std::vector<ConsItem> cons;

    auto process_element = [&](int id, bool labeled, const char* tag, std::int64_t index) {
        Rng rng(derive_seed(aug_seed, tag, static_cast<std::uint64_t>(index)));
        const AugRecord weak = sample_weak(rng, gen_h, gen_w, crop, crop, cfg_.flip_prob);
        const Tensor& source = view_->image(id);
        Tensor weak_image;
        const bool wants_consistency =
            fixmatch && (!labeled || cfg_.sampling == SamplingMode::Implicit ||
                         cfg_.consistency_on_labeled);
        if (labeled || wants_consistency) weak_image = apply_to_image(weak, source);
        if (labeled) {
            sup_images.push_back(weak_image);
            sup_labels.push_back(apply_geom_to_labels(weak.geometric, view_->labels(id)));
        }
        if (wants_consistency) {
            const AugRecord strong =
                sample_strong(rng, gen_h, gen_w, crop, crop, strong_cfg_, weak);
            cons.push_back({weak, strong, weak_image, apply_to_image(strong, source)});
        }
    };

    if (cfg_.sampling == SamplingMode::Explicit) {
        std::int64_t li = 0, ui = 0;
        for (const auto& item : plan) {
            if (item.labeled)
                process_element(item.id, true, "aug/labeled", step * cfg_.batch_labeled + li++);
            else
                process_element(item.id, false, "aug/unlabeled", step * cfg_.batch_unlabeled + ui++);
        }
    } else {
        std::int64_t slot = 0;
        for (const auto& item : plan) {
            const std::int64_t index = step * cfg_.batch_size + slot++;
            if (!item.labeled && !fixmatch) continue;  // supervised implicit: labeled only
            process_element(item.id, item.labeled, "aug/element", index);
        }
    }

    Tensor l_s = Tensor::scalar(0.0);
    bd.supervised_all_invalid = true;
    if (!sup_images.empty()) {
        const Tensor logits =
            forward_logits(state.student.spec, watched, stack_images(sup_images), tape);
        l_s = supervised_loss(tape, logits, sup_labels);
        for (const auto& lm : sup_labels)
            if (valid_count(lm) > 0) bd.supervised_all_invalid = false;
    }

    Tensor l_u = Tensor::scalar(0.0);
    bd.consistency_all_invalid = true;
    if (!cons.empty()) {
        std::vector<Tensor> weak_batch, strong_batch;
        weak_batch.reserve(cons.size());
        strong_batch.reserve(cons.size());
        for (const auto& item : cons) {
            weak_batch.push_back(item.weak_image);
            strong_batch.push_back(item.strong_image);
        }
        const Tensor teacher_probs = predict(state.teacher.params, stack_images(weak_batch));
        std::vector<LabelMap> matched;
        matched.reserve(cons.size());
        std::int64_t valid_total = 0;
        for (std::size_t j = 0; j < cons.size(); ++j) {
            const LabelMap pl =
                pseudolabel(probmap_from_tensor(teacher_probs, static_cast<int>(j)), cfg_.tau);
            matched.push_back(match(pl, cons[j].weak, cons[j].strong));
            valid_total += valid_count(matched.back());
        }
        const Tensor logits_u =
            forward_logits(state.student.spec, watched, stack_images(strong_batch), tape);
        l_u = consistency_loss(tape, logits_u, matched);
        bd.valid_pixel_fraction = static_cast<double>(valid_total) /
                                  (static_cast<double>(cons.size()) * crop * crop);
        bd.consistency_all_invalid = valid_total == 0;
    }

    const Tensor total = total_loss(tape, l_s, l_u, bd.lambda);
    bd.supervised = l_s.value();
    bd.consistency = l_u.value();
    bd.total = total.value();
    if (!std::isfinite(bd.total)) {
        if (!cfg_.out_dir.empty()) {
            std::ofstream dump(fs::path(cfg_.out_dir) /
                               ("diagnostic_step_" + std::to_string(step) + ".txt"));
            dump << "non-finite loss at step " << step << "\nL_s=" << bd.supervised
                 << " L_u=" << bd.consistency << " lambda=" << bd.lambda << "\n";
        }
        throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(step));
    }

    tape.backward(total);
    GradList grads;
    grads.reserve(watched.size());
    for (const auto& w : watched) {
        const auto g = tape.grad(w);
        grads.emplace_back(g.begin(), g.end());
    }
    SgdConfig opt_cfg{cfg_.lr, cfg_.momentum, cfg_.weight_decay};
    state.student = sgd_step(state.student, grads, state.opt, opt_cfg);
    state.teacher = ema_update(state.teacher, state.student);
    state.step += 1;
    return bd;
}

EvalReport Trainer::evaluate_teacher(const TrainState& state) const {
    return evaluate_model(state.teacher.params, eval_);
}

EvalReport Trainer::evaluate_student(const TrainState& state) const {
    return evaluate_model(state.student, eval_);
}

RunResult Trainer::run() {
    kernels::set_threads(cfg_.threads);
    const auto t0 = std::chrono::steady_clock::now();
    const bool has_out = !cfg_.out_dir.empty();
    const fs::path out(cfg_.out_dir);
    if (has_out) fs::create_directories(out);

    TrainState state = make_initial_state();
    bool resumed = false;
    if (has_out && cfg_.resume && fs::exists(out / "last.ckpt")) {
        std::ifstream is(out / "last.ckpt", std::ios::binary);
        state = load_checkpoint(is, hash_);
        resumed = true;
    }

    if (has_out) {
        std::ofstream cfg_file(out / "config.json");
        cfg_file << train_config_to_json(cfg_) << "\n";
    }

    // Loss CSV: on resume, drop rows at or past the checkpoint step so the
    // continued run rewrites them identically.
    const fs::path csv_path = out / "loss.csv";
    std::string kept_rows;
    if (has_out && resumed && fs::exists(csv_path)) {
        std::ifstream old_csv(csv_path);
        std::string line;
        bool first = true;
        while (std::getline(old_csv, line)) {
            if (first) {
                first = false;
                continue;  // header is rewritten below
            }
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            if (std::stoll(line.substr(0, comma)) < state.step) kept_rows += line + "\n";
        }
    }
    std::ofstream csv;
    if (has_out) {
        csv.open(csv_path, std::ios::trunc);
        csv << "step,L_s,L_u,lambda_t,total,valid_pixel_fraction\n" << kept_rows;
    }

    auto run_eval = [&]() {
        const EvalReport report = evaluate_teacher(state);
        if (report.miou.mean > state.best_miou) {
            state.best_miou = report.miou.mean;
            state.best_step = state.step;
            state.best_per_class_iou = report.per_class_iou;
            if (has_out) {
                std::ofstream os(out / "best.ckpt", std::ios::binary);
                save_checkpoint(os, state, hash_);
            }
        }
        if (has_out) {
            std::ofstream os(out / "last.ckpt", std::ios::binary);
            save_checkpoint(os, state, hash_);
        }
        return report;
    };

    EvalReport last_report;
    bool evaluated = false;
    if (cfg_.steps == 0 || state.step >= cfg_.steps) {
        last_report = run_eval();
        evaluated = true;
    }
    while (state.step < cfg_.steps) {
        const LossBreakdown bd = train_step(state);
        if (has_out) {
            csv << state.step - 1 << ',' << fmt_double(bd.supervised) << ','
                << fmt_double(bd.consistency) << ',' << fmt_double(bd.lambda) << ','
                << fmt_double(bd.total) << ',' << fmt_double(bd.valid_pixel_fraction) << "\n";
        }
        if (state.step % cfg_.eval_interval == 0 || state.step == cfg_.steps) {
            last_report = run_eval();
            evaluated = true;
        }
    }
    if (!evaluated) last_report = run_eval();

    RunResult result;
    result.best_teacher_miou = state.best_miou;
    result.best_step = state.best_step;
    result.final_teacher_miou = last_report.miou.mean;
    result.final_student_miou = evaluate_student(state).miou.mean;
    result.best_per_class_iou = state.best_per_class_iou;
    result.config_hash = hash_;
    result.steps_completed = state.step;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (has_out) {
        std::ofstream report_file(out / "report.json");
        report_file << run_result_to_json(result) << "\n";
    }
    return result;
}

RunResult train_run(const TrainConfig& cfg) { return Trainer(cfg).run(); }

namespace {

json parse_grid_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return json(text);  // bare words become strings, e.g. method names
    }
}

}  // namespace

GridResult run_grid(const GridSpec& spec) {
    const json base = json::parse(train_config_to_json(spec.base));
    std::size_t n_cells = 1;
    for (const auto& [field, values] : spec.axes) {
        if (values.empty()) throw std::invalid_argument("run_grid: axis '" + field + "' has no values");
        n_cells *= values.size();
    }

    GridResult result;
    const fs::path out(spec.out_dir);
    if (!spec.out_dir.empty()) fs::create_directories(out);

    for (std::size_t cell_idx = 0; cell_idx < n_cells; ++cell_idx) {
        json cfg_json = base;
        GridCell cell;
        std::size_t rem = cell_idx;
        for (const auto& [field, values] : spec.axes) {
            const std::string& chosen = values[rem % values.size()];
            rem /= values.size();
            cfg_json[json::json_pointer("/" + field)] = parse_grid_value(chosen);
            cell.assignment.emplace_back(field, chosen);
        }
        TrainConfig cell_cfg = parse_train_config(cfg_json.dump());

        for (int split = 0; split < cell_cfg.n_splits; ++split) {
            TrainConfig run_cfg = cell_cfg;
            run_cfg.split_index = split;
            char dir_name[64];
            std::snprintf(dir_name, sizeof(dir_name), "cell_%03zu/split_%d", cell_idx, split);
            run_cfg.out_dir = spec.out_dir.empty() ? "" : (out / dir_name).string();

            RunResult rr;
            bool reused = false;
            if (!run_cfg.out_dir.empty()) {
                const fs::path report = fs::path(run_cfg.out_dir) / "report.json";
                if (fs::exists(report)) {
                    std::ifstream is(report);
                    std::stringstream ss;
                    ss << is.rdbuf();
                    rr = run_result_from_json(ss.str());
                    reused = rr.config_hash == config_hash(run_cfg) &&
                             rr.steps_completed >= run_cfg.steps;
                }
            }
            if (!reused) rr = train_run(run_cfg);
            cell.split_mious.push_back(rr.best_teacher_miou);
        }

        double mean = 0.0;
        for (double v : cell.split_mious) mean += v;
        mean /= static_cast<double>(cell.split_mious.size());
        double sq = 0.0;
        for (double v : cell.split_mious) sq += (v - mean) * (v - mean);
        cell.mean = mean;
        cell.stddev = std::sqrt(sq / static_cast<double>(cell.split_mious.size()));
        result.cells.push_back(std::move(cell));
    }

    if (!spec.out_dir.empty()) {
        std::ofstream csv(out / "grid_results.csv");
        for (std::size_t i = 0; i < spec.axes.size(); ++i) csv << spec.axes[i].first << ',';
        for (int s = 0; s < spec.base.n_splits; ++s) csv << "split_" << s << ',';
        csv << "mean,std\n";
        json jcells = json::array();
        for (const auto& cell : result.cells) {
            for (const auto& [field, value] : cell.assignment) csv << value << ',';
            for (double v : cell.split_mious) csv << fmt_double(v) << ',';
            csv << fmt_double(cell.mean) << ',' << fmt_double(cell.stddev) << "\n";
            json jc;
            for (const auto& [field, value] : cell.assignment) jc["assignment"][field] = value;
            jc["split_mious"] = cell.split_mious;
            jc["mean"] = cell.mean;
            jc["std"] = cell.stddev;
            jcells.push_back(jc);
        }
        std::ofstream js(out / "grid_results.json");
        js << jcells.dump(2) << "\n";
    }
    return result;
}

}  // namespace densefix
