// Command-line front end: dataset generation, training, ablation grids,
// checkpoint evaluation, and augmentation inspection dumps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "densefix/io.hpp"
#include "densefix/pseudolabel.hpp"
#include "densefix/rng.hpp"
#include "densefix/trainer.hpp"

namespace fs = std::filesystem;
using namespace densefix;

namespace {

TrainConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw CLI::ValidationError("--config", "cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return parse_train_config(ss.str());
    } catch (const std::exception& e) {
        throw CLI::ValidationError("--config", e.what());
    }
}

struct CommonFlags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config, "JSON config file; flags override its values");
    cmd->add_option("--seed", flags.seed, "root seed for all derived randomness");
    cmd->add_option("--out", flags.out, "output directory");
}

TrainConfig resolve_config(const CommonFlags& flags) {
    TrainConfig cfg = flags.config ? load_config(*flags.config) : TrainConfig{};
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.out_dir = *flags.out;
    return cfg;
}

int run_gen_data(const CommonFlags& flags, int n, int size, int classes, double imbalance) {
    TrainConfig cfg = resolve_config(flags);
    if (cfg.out_dir.empty()) throw CLI::ValidationError("--out", "gen-data needs an output directory");
    DatasetParams p = cfg.dataset;
    if (n > 0) p.n = n;
    if (size > 0) p.height = p.width = size;
    if (classes > 0) p.num_classes = classes;
    if (imbalance > 0) p.imbalance = imbalance;
    p.seed = derive_seed(cfg.seed, "dataset");
    const Dataset ds = Dataset::generate(p);
    export_dataset(ds, cfg.out_dir);
    std::cout << "wrote " << ds.size() << " samples to " << cfg.out_dir << "\n";
    return 0;
}

int run_train(TrainConfig cfg) {
    const RunResult r = train_run(cfg);
    std::cout << "steps: " << r.steps_completed << "\n"
              << "best teacher mIoU: " << r.best_teacher_miou << " (step " << r.best_step << ")\n"
              << "final teacher mIoU: " << r.final_teacher_miou << "\n"
              << "final student mIoU: " << r.final_student_miou << "\n";
    if (!cfg.out_dir.empty()) std::cout << "report: " << (fs::path(cfg.out_dir) / "report.json").string() << "\n";
    return 0;
}

int run_grid_cmd(const CommonFlags& flags, const std::vector<std::string>& params) {
    GridSpec spec;
    spec.base = resolve_config(flags);
    spec.out_dir = spec.base.out_dir;
    spec.base.out_dir.clear();
    for (const auto& p : params) {
        const auto eq = p.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--param", "expected field=v1,v2,... got '" + p + "'");
        std::vector<std::string> values;
        std::stringstream ss(p.substr(eq + 1));
        std::string item;
        while (std::getline(ss, item, ',')) values.push_back(item);
        if (values.empty()) throw CLI::ValidationError("--param", "no values in '" + p + "'");
        spec.axes.emplace_back(p.substr(0, eq), std::move(values));
    }
    const GridResult result = run_grid(spec);
    for (const auto& cell : result.cells) {
        for (const auto& [field, value] : cell.assignment) std::cout << field << "=" << value << " ";
        std::cout << "mean=" << cell.mean << " std=" << cell.stddev << "\n";
    }
    if (!spec.out_dir.empty())
        std::cout << "grid results: " << (fs::path(spec.out_dir) / "grid_results.csv").string() << "\n";
    return 0;
}

int run_eval(const CommonFlags& flags, const std::string& ckpt_path, bool use_student) {
    // The run's config.json (next to the checkpoint by default) rebuilds the
    // evaluation dataset and keys the checkpoint hash.
    std::string config_path = flags.config.value_or("");
    if (config_path.empty()) {
        const fs::path sibling = fs::path(ckpt_path).parent_path() / "config.json";
        if (!fs::exists(sibling))
            throw CLI::ValidationError("--config", "no config given and " + sibling.string() + " not found");
        config_path = sibling.string();
    }
    CommonFlags cfg_flags = flags;
    cfg_flags.config = config_path;
    const TrainConfig cfg = resolve_config(cfg_flags);

    std::ifstream is(ckpt_path, std::ios::binary);
    if (!is) throw CLI::ValidationError("--checkpoint", "cannot open " + ckpt_path);
    const TrainState state = load_checkpoint(is, config_hash(cfg));

    DatasetParams ep = cfg.dataset;
    ep.n = cfg.eval_images;
    ep.seed = derive_seed(cfg.seed, "evalset");
    const Dataset eval_set = Dataset::generate(ep);
    const EvalReport report =
        evaluate_model(use_student ? state.student : state.teacher.params, eval_set);

    nlohmann::json j;
    j["miou"] = report.miou.mean;
    j["miou_class_std"] = report.miou.stddev;
    j["per_class_iou"] = nlohmann::json::array();
    for (const auto& iou : report.per_class_iou)
        j["per_class_iou"].push_back(iou ? nlohmann::json(*iou) : nlohmann::json(nullptr));
    j["pixel_percentage"] = nlohmann::json::array();
    for (double f : report.pixel_fraction) j["pixel_percentage"].push_back(100.0 * f);
    j["checkpoint"] = ckpt_path;
    j["checkpoint_step"] = state.step;
    j["weights"] = use_student ? "student" : "teacher";
    j["split_index"] = cfg.split_index;
    j["seed"] = cfg.seed;

    const std::string text = j.dump(2);
    if (flags.out) {
        fs::path out(*flags.out);
        if (fs::is_directory(out) || out.extension().empty()) {
            fs::create_directories(out);
            out /= "eval_report.json";
        }
        std::ofstream os(out);
        os << text << "\n";
        std::cout << "report: " << out.string() << "\n";
    } else {
        std::cout << text << "\n";
    }
    return 0;
}

int run_inspect_aug(const CommonFlags& flags, int sample_id, const std::string& ckpt_path) {
    TrainConfig cfg = resolve_config(flags);
    if (cfg.out_dir.empty())
        throw CLI::ValidationError("--out", "inspect-aug needs an output directory");
    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);

    DatasetParams dp = cfg.dataset;
    dp.seed = derive_seed(cfg.seed, "dataset");
    const Dataset ds = Dataset::generate(dp);
    if (sample_id < 0 || sample_id >= ds.size())
        throw CLI::ValidationError("--sample", "sample index out of range");

    ParamSet teacher;
    if (!ckpt_path.empty()) {
        std::ifstream is(ckpt_path, std::ios::binary);
        if (!is) throw CLI::ValidationError("--checkpoint", "cannot open " + ckpt_path);
        teacher = load_checkpoint(is, config_hash(cfg)).teacher.params;
    } else {
        teacher = init_model(derive_seed(derive_seed(cfg.seed, "run", 0), "init"),
                             cfg.hidden_channels, cfg.dataset.num_classes, cfg.kernel);
    }

    Rng rng(derive_seed(cfg.seed, "inspect-aug", static_cast<std::uint64_t>(sample_id)));
    const AugRecord weak =
        sample_weak(rng, dp.height, dp.width, cfg.crop, cfg.crop, cfg.flip_prob);
    StrongAugConfig strong_cfg;
    strong_cfg.pool = default_pool(cfg.aug_geom, cfg.aug_color);
    strong_cfg.n_ops = cfg.rand_ops;
    strong_cfg.mag_lo = cfg.mag_lo;
    strong_cfg.mag_hi = cfg.mag_hi;
    strong_cfg.crop_relation = cfg.crop_relation;
    strong_cfg.min_overlap = cfg.min_overlap;
    strong_cfg.cutout = cfg.aug_cutout;
    const AugRecord strong =
        sample_strong(rng, dp.height, dp.width, cfg.crop, cfg.crop, strong_cfg, weak);

    const Tensor& image = ds.sample(sample_id).image;
    const Tensor weak_img = apply_to_image(weak, image);
    const Tensor strong_img = apply_to_image(strong, image);
    const Tensor weak_batch = Tensor::from({1, 3, cfg.crop, cfg.crop},
                                           {weak_img.values().begin(), weak_img.values().end()});
    const LabelMap pl = pseudolabel(probmap_from_tensor(predict(teacher, weak_batch), 0), cfg.tau);
    const LabelMap matched = match(pl, weak, strong);

    write_ppm_file(out / "weak.ppm", weak_img);
    write_ppm_file(out / "strong.ppm", strong_img);
    write_pgm_file(out / "pseudo_label.pgm", pl);
    write_pgm_file(out / "matched_pseudo_label.pgm", matched);
    std::ofstream records(out / "records.txt");
    records << "weak:\n" << to_text(weak) << "strong:\n" << to_text(strong);
    records << "matched valid pixels: " << valid_count(matched) << " / "
            << cfg.crop * cfg.crop << "\n";
    std::cout << "wrote view pair to " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised dense prediction training kit"};
    app.require_subcommand(1);

    CommonFlags gen_flags;
    int gen_n = 0, gen_size = 0, gen_classes = 0;
    double gen_imbalance = 0.0;
    auto* gen = app.add_subcommand("gen-data", "generate and export a synthetic dataset");
    add_common(gen, gen_flags);
    gen->add_option("--n", gen_n, "number of samples");
    gen->add_option("--size", gen_size, "image height and width");
    gen->add_option("--classes", gen_classes, "number of classes incl. background");
    gen->add_option("--imbalance", gen_imbalance, "foreground class imbalance factor (>= 1)");

    CommonFlags train_flags;
    std::optional<std::string> opt_method, opt_sampling;
    std::optional<int> opt_steps, opt_n_labeled, opt_split, opt_threads;
    std::optional<double> opt_tau, opt_lambda;
    bool no_resume = false;
    auto* train = app.add_subcommand("train", "run one training run");
    add_common(train, train_flags);
    train->add_option("--method", opt_method, "supervised | dense_fixmatch");
    train->add_option("--sampling", opt_sampling, "explicit | implicit");
    train->add_option("--steps", opt_steps, "optimizer steps");
    train->add_option("--n-labeled", opt_n_labeled, "labeled samples in the split");
    train->add_option("--split-index", opt_split, "which of the n_splits splits to train on");
    train->add_option("--tau", opt_tau, "pseudo-label confidence threshold");
    train->add_option("--lambda", opt_lambda, "consistency loss weight");
    train->add_option("--threads", opt_threads, "compute threads");
    train->add_flag("--no-resume", no_resume, "ignore an existing last.ckpt");

    CommonFlags grid_flags;
    std::vector<std::string> grid_params;
    auto* grid = app.add_subcommand("grid", "run a config grid with n_splits runs per cell");
    add_common(grid, grid_flags);
    grid->add_option("--param", grid_params, "axis as field=v1,v2,... (repeatable)");

    CommonFlags eval_flags;
    std::string eval_ckpt;
    bool eval_student = false;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write a report");
    add_common(eval, eval_flags);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_flag("--student", eval_student, "evaluate student weights instead of the teacher");

    CommonFlags inspect_flags;
    int inspect_sample = 0;
    std::string inspect_ckpt;
    auto* inspect = app.add_subcommand("inspect-aug",
                                       "dump a weak/strong view pair with pseudo-labels");
    add_common(inspect, inspect_flags);
    inspect->add_option("--sample", inspect_sample, "dataset sample index");
    inspect->add_option("--checkpoint", inspect_ckpt, "teacher checkpoint (default: fresh init)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) return run_gen_data(gen_flags, gen_n, gen_size, gen_classes, gen_imbalance);
        if (*train) {
            TrainConfig cfg = resolve_config(train_flags);
            if (opt_method) cfg.method = method_from_string(*opt_method);
            if (opt_sampling) cfg.sampling = sampling_from_string(*opt_sampling);
            if (opt_steps) cfg.steps = *opt_steps;
            if (opt_n_labeled) cfg.n_labeled = *opt_n_labeled;
            if (opt_split) cfg.split_index = *opt_split;
            if (opt_tau) cfg.tau = *opt_tau;
            if (opt_lambda) cfg.lambda_max = *opt_lambda;
            if (opt_threads) cfg.threads = *opt_threads;
            if (no_resume) cfg.resume = false;
            return run_train(std::move(cfg));
        }
        if (*grid) return run_grid_cmd(grid_flags, grid_params);
        if (*eval) return run_eval(eval_flags, eval_ckpt, eval_student);
        if (*inspect) return run_inspect_aug(inspect_flags, inspect_sample, inspect_ckpt);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
