// Exercises the installed command-line surface through real subprocesses.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "densefix/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DENSEFIX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "densefix_cli_test";
    return dir;
}

std::string tiny_config_file() {
    densefix::TrainConfig cfg;
    cfg.dataset.n = 16;
    cfg.dataset.height = cfg.dataset.width = 24;
    cfg.crop = 16;
    cfg.n_labeled = 4;
    cfg.n_splits = 2;
    cfg.eval_images = 4;
    cfg.hidden_channels = {6};
    cfg.batch_labeled = 2;
    cfg.batch_unlabeled = 2;
    cfg.batch_size = 4;
    cfg.steps = 2;
    cfg.eval_interval = 2;
    cfg.threads = 1;
    const fs::path path = work_dir() / "tiny.json";
    std::ofstream os(path);
    os << densefix::train_config_to_json(cfg);
    return path.string();
}

}  // namespace

TEST_CASE("cli exit codes") {
    fs::create_directories(work_dir());
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("train --definitely-not-a-flag") == 2);
    CHECK(run_cli("not-a-subcommand") == 2);
    CHECK(run_cli("gen-data") == 2);  // missing --out
}

TEST_CASE("gen-data exports a loadable dataset") {
    const fs::path dir = work_dir() / "data";
    fs::remove_all(dir);
    CHECK(run_cli("gen-data --seed 3 --n 5 --size 24 --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "manifest.json"));
    const densefix::Dataset ds = densefix::import_dataset(dir);
    CHECK(ds.size() == 5);
}

TEST_CASE("train runs from a config file and writes a report") {
    fs::create_directories(work_dir());
    const std::string cfg = tiny_config_file();
    const fs::path out = work_dir() / "run_sup";
    fs::remove_all(out);
    CHECK(run_cli("train --config " + cfg + " --method supervised --out " + out.string()) == 0);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "loss.csv"));
    CHECK(fs::exists(out / "best.ckpt"));
    const auto result = densefix::run_result_from_json(slurp(out / "report.json"));
    CHECK(result.steps_completed == 2);
}

TEST_CASE("eval reads a checkpoint back") {
    fs::create_directories(work_dir());
    const std::string cfg = tiny_config_file();
    const fs::path out = work_dir() / "run_eval";
    fs::remove_all(out);
    REQUIRE(run_cli("train --config " + cfg + " --out " + out.string()) == 0);
    const fs::path report = work_dir() / "eval_report.json";
    fs::remove(report);
    CHECK(run_cli("eval --checkpoint " + (out / "best.ckpt").string() + " --out " +
                  report.string()) == 0);
    const std::string text = slurp(report);
    CHECK(text.find("per_class_iou") != std::string::npos);
    CHECK(text.find("pixel_percentage") != std::string::npos);
}

TEST_CASE("inspect-aug dumps are byte-identical for the same seed") {
    fs::create_directories(work_dir());
    const std::string cfg = tiny_config_file();
    const fs::path a = work_dir() / "aug_a";
    const fs::path b = work_dir() / "aug_b";
    fs::remove_all(a);
    fs::remove_all(b);
    REQUIRE(run_cli("inspect-aug --config " + cfg + " --seed 7 --out " + a.string()) == 0);
    REQUIRE(run_cli("inspect-aug --config " + cfg + " --seed 7 --out " + b.string()) == 0);
    for (const char* name :
         {"weak.ppm", "strong.ppm", "pseudo_label.pgm", "matched_pseudo_label.pgm", "records.txt"}) {
        CHECK(fs::exists(a / name));
        CHECK(slurp(a / name) == slurp(b / name));
    }
    const fs::path c = work_dir() / "aug_c";
    fs::remove_all(c);
    REQUIRE(run_cli("inspect-aug --config " + cfg + " --seed 8 --out " + c.string()) == 0);
    CHECK(slurp(a / "records.txt") != slurp(c / "records.txt"));
}

TEST_CASE("grid sweeps an axis") {
    fs::create_directories(work_dir());
    const std::string cfg = tiny_config_file();
    const fs::path out = work_dir() / "grid";
    fs::remove_all(out);
    CHECK(run_cli("grid --config " + cfg + " --param tau=0,0.5,0.8,0.95 --out " + out.string()) ==
          0);
    const std::string csv = slurp(out / "grid_results.csv");
    int lines = 0;
    for (char ch : csv)
        if (ch == '\n') ++lines;
    CHECK(lines == 5);  // header + one row per tau value
}
