#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "densefix/synth_data.hpp"

using namespace densefix;
namespace fs = std::filesystem;

namespace {

DatasetParams small_params(std::uint64_t seed) {
    DatasetParams p;
    p.n = 24;
    p.height = p.width = 48;
    p.num_classes = 4;
    p.imbalance = 1.0;
    p.seed = seed;
    return p;
}

SplitSpec toy_split() {
    SplitSpec s;
    s.labeled = {0, 1, 2, 3};
    s.unlabeled = {4, 5, 6, 7, 8, 9};
    return s;
}

}  // namespace

TEST_CASE("generation is a pure function of the seed") {
    const Dataset a = Dataset::generate(small_params(11));
    const Dataset b = Dataset::generate(small_params(11));
    const Dataset c = Dataset::generate(small_params(12));
    REQUIRE(a.size() == b.size());
    bool identical = true, differs = false;
    for (int i = 0; i < a.size(); ++i) {
        if (a.sample(i).labels.values != b.sample(i).labels.values) identical = false;
        const auto av = a.sample(i).image.values();
        const auto bv = b.sample(i).image.values();
        for (std::size_t j = 0; j < av.size(); ++j)
            if (av[j] != bv[j]) identical = false;
        if (a.sample(i).labels.values != c.sample(i).labels.values) differs = true;
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("every image keeps background and foreground pixels") {
    const Dataset ds = Dataset::generate(small_params(21));
    for (int i = 0; i < ds.size(); ++i) {
        int bg = 0, fg = 0;
        for (std::uint8_t v : ds.sample(i).labels.values) {
            if (v == 0)
                ++bg;
            else {
                CHECK(v < 4);
                ++fg;
            }
        }
        CHECK(bg > 0);
        CHECK(fg > 0);
    }
}

TEST_CASE("balanced class sampling passes a chi-square test at p > 0.001") {
    Rng rng(31);
    const int k = 4, draws = 10000;
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_shape_class(rng, k, 1.0))];
    CHECK(counts[0] == 0);  // class 0 is background, never drawn
    const double expected = draws / 3.0;
    double chi2 = 0.0;
    for (int c = 1; c < k; ++c) {
        const double d = counts[static_cast<std::size_t>(c)] - expected;
        chi2 += d * d / expected;
    }
    // df = 2; the p = 0.001 critical value is -2 ln(0.001) = 13.8155.
    CHECK(chi2 < 13.8155);
}

TEST_CASE("imbalance skews class frequencies geometrically") {
    Rng rng(32);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 30000; ++i) ++counts[static_cast<std::size_t>(sample_shape_class(rng, 4, 2.0))];
    CHECK(counts[1] > counts[2]);
    CHECK(counts[2] > counts[3]);
    CHECK(static_cast<double>(counts[1]) / counts[2] == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("make_splits properties") {
    SUBCASE("full labeling leaves the unlabeled pool empty") {
        const auto splits = make_splits(10, 10, 4, 1);
        for (const auto& s : splits) {
            CHECK(s.labeled.size() == 10);
            CHECK(s.unlabeled.empty());
        }
    }
    SUBCASE("splits are disjoint, covering, and not all identical") {
        const auto splits = make_splits(16, 4, 4, 7);
        bool all_same = true;
        for (const auto& s : splits) {
            CHECK(s.labeled.size() == 4);
            CHECK(s.unlabeled.size() == 12);
            std::set<int> uni(s.labeled.begin(), s.labeled.end());
            CHECK(uni.size() == 4);  // unique ids
            uni.insert(s.unlabeled.begin(), s.unlabeled.end());
            CHECK(uni.size() == 16);  // disjoint union covers everything
            if (s.labeled != splits[0].labeled) all_same = false;
        }
        CHECK_FALSE(all_same);
    }
    SUBCASE("n_labeled above n_total is rejected") {
        CHECK_THROWS_AS(make_splits(4, 5, 1, 1), std::invalid_argument);
    }
}

TEST_CASE("explicit batches cycle both pools") {
    const SplitSpec split = toy_split();
    const ExplicitBatchStream stream(split, 2, 2, 99);

    SUBCASE("every batch holds exactly B_L labeled then B_U unlabeled") {
        for (int step = 0; step < 20; ++step) {
            const BatchPlan plan = stream.batch(step);
            REQUIRE(plan.size() == 4);
            CHECK(plan[0].labeled);
            CHECK(plan[1].labeled);
            CHECK_FALSE(plan[2].labeled);
            CHECK_FALSE(plan[3].labeled);
        }
    }
    SUBCASE("each labeled id appears exactly once per two batches") {
        for (int pair = 0; pair < 10; ++pair) {
            std::multiset<int> seen;
            for (int b = 0; b < 2; ++b)
                for (const auto& item : stream.batch(2 * pair + b))
                    if (item.labeled) seen.insert(item.id);
            CHECK(seen == std::multiset<int>{0, 1, 2, 3});
        }
    }
    SUBCASE("long-run labeled frequencies are uniform within 1%") {
        std::map<int, int> counts;
        const int batches = 10000;
        for (int step = 0; step < batches; ++step)
            for (const auto& item : stream.batch(step))
                if (item.labeled) ++counts[item.id];
        const double expected = batches * 2.0 / 4.0;
        for (const auto& [id, c] : counts)
            CHECK(std::abs(c - expected) / expected < 0.01);
    }
    SUBCASE("empty unlabeled pool is a hard error") {
        SplitSpec full;
        full.labeled = {0, 1, 2};
        CHECK_THROWS_AS(ExplicitBatchStream(full, 1, 1, 1), std::invalid_argument);
    }
}

TEST_CASE("implicit batches cycle the union") {
    SUBCASE("zero unlabeled makes every batch fully labeled") {
        SplitSpec split;
        split.labeled = {0, 1, 2, 3, 4};
        const ImplicitBatchStream stream(split, 3, 5);
        for (int step = 0; step < 10; ++step)
            for (const auto& item : stream.batch(step)) CHECK(item.labeled);
    }
    SUBCASE("every epoch visits each id exactly once") {
        const SplitSpec split = toy_split();  // 10 ids
        const ImplicitBatchStream stream(split, 5, 7);
        for (int epoch = 0; epoch < 6; ++epoch) {
            std::multiset<int> seen;
            for (int b = 0; b < 2; ++b)
                for (const auto& item : stream.batch(epoch * 2 + b)) seen.insert(item.id);
            CHECK(seen == std::multiset<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
        }
    }
    SUBCASE("labeled fraction matches the split ratio within 1%") {
        const SplitSpec split = toy_split();  // 4 of 10 labeled
        const ImplicitBatchStream stream(split, 4, 13);
        std::int64_t labeled = 0, total = 0;
        for (int step = 0; step < 10000; ++step)
            for (const auto& item : stream.batch(step)) {
                labeled += item.labeled ? 1 : 0;
                ++total;
            }
        CHECK(std::abs(static_cast<double>(labeled) / total - 0.4) < 0.01);
    }
}

TEST_CASE("training view enforces the label barrier") {
    const Dataset ds = Dataset::generate(small_params(41));
    SplitSpec split;
    split.labeled = {0, 2};
    for (int i = 0; i < ds.size(); ++i)
        if (i != 0 && i != 2) split.unlabeled.push_back(i);
    const TrainingView view(ds, split);
    CHECK(view.is_labeled(2));
    CHECK_FALSE(view.is_labeled(1));
    CHECK_NOTHROW(view.labels(0));
    CHECK_NOTHROW(view.image(1));
    CHECK_THROWS_AS(view.labels(1), std::logic_error);
}

TEST_CASE("export/import round trip is bit-exact") {
    DatasetParams p = small_params(51);
    p.n = 6;
    const Dataset ds = Dataset::generate(p);
    const fs::path dir = fs::temp_directory_path() / "densefix_test_export";
    fs::remove_all(dir);
    export_dataset(ds, dir);
    const Dataset back = import_dataset(dir);
    REQUIRE(back.size() == ds.size());
    CHECK(back.params().seed == p.seed);
    for (int i = 0; i < ds.size(); ++i) {
        CHECK(back.sample(i).labels.values == ds.sample(i).labels.values);
        const auto av = ds.sample(i).image.values();
        const auto bv = back.sample(i).image.values();
        REQUIRE(av.size() == bv.size());
        bool equal = true;
        for (std::size_t j = 0; j < av.size(); ++j)
            if (av[j] != bv[j]) equal = false;
        CHECK(equal);
    }
    fs::remove_all(dir);
}
