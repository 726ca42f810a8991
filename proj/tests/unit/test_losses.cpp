#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "densefix/losses.hpp"
#include "densefix/rng.hpp"

using namespace densefix;

namespace {

Tensor random_logits(int n, int k, int h, int w, Rng& rng) {
    std::vector<double> data(static_cast<std::size_t>(n) * k * h * w);
    for (auto& v : data) v = rng.uniform(-3.0, 3.0);
    return Tensor::from({n, k, h, w}, std::move(data));
}

std::vector<LabelMap> random_label_batch(int n, int h, int w, int k, Rng& rng,
                                         double ignore_prob) {
    std::vector<LabelMap> batch;
    for (int i = 0; i < n; ++i) {
        LabelMap lm(h, w, 0);
        for (auto& v : lm.values)
            v = rng.bernoulli(ignore_prob) ? kIgnoreLabel
                                           : static_cast<std::uint8_t>(rng.uniform_int(0, k - 1));
        batch.push_back(std::move(lm));
    }
    return batch;
}

// Naive-loop oracle for Eq. 2/3 arithmetic: per-sample mean of pixel CE over
// valid pixels, then mean over samples with any valid pixel. Independent of
// the tape path (own softmax, own loops).
double naive_masked_ce(const Tensor& logits, const std::vector<LabelMap>& labels) {
    const int n = logits.extent(0), k = logits.extent(1), h = logits.extent(2), w = logits.extent(3);
    double batch_sum = 0.0;
    int contributing = 0;
    for (int i = 0; i < n; ++i) {
        double sample_sum = 0.0;
        int valid = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::uint8_t lab = labels[static_cast<std::size_t>(i)].at(y, x);
                if (lab == kIgnoreLabel) continue;
                double zmax = -1e300;
                for (int c = 0; c < k; ++c) zmax = std::max(zmax, logits.at({i, c, y, x}));
                double denom = 0.0;
                for (int c = 0; c < k; ++c) denom += std::exp(logits.at({i, c, y, x}) - zmax);
                const double logp = logits.at({i, lab, y, x}) - zmax - std::log(denom);
                sample_sum -= logp;
                ++valid;
            }
        if (valid > 0) {
            batch_sum += sample_sum / valid;
            ++contributing;
        }
    }
    return contributing > 0 ? batch_sum / contributing : 0.0;
}

ParamSet tiny_params(std::uint64_t seed) { return init_model(seed, {4}, 3); }

}  // namespace

TEST_CASE("supervised_loss closed forms") {
    SUBCASE("uniform predictions, K=4, all valid -> ln 4") {
        Tape tape;
        const Tensor z = Tensor::zeros({3, 4, 5, 5});
        std::vector<LabelMap> labels{LabelMap(5, 5, 0), LabelMap(5, 5, 2), LabelMap(5, 5, 3)};
        CHECK(supervised_loss(tape, z, labels).value() ==
              doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("two samples with per-sample means 1.0 and 2.0 -> 1.5") {
        // Single-pixel samples; invert the two-class CE for exact targets.
        auto logit_for_loss = [](double loss) {
            const double p = std::exp(-loss);
            return std::log(p / (1.0 - p));
        };
        const Tensor z = Tensor::from({2, 2, 1, 1},
                                      {logit_for_loss(1.0), 0.0, logit_for_loss(2.0), 0.0});
        std::vector<LabelMap> labels{LabelMap(1, 1, 0), LabelMap(1, 1, 0)};
        Tape tape;
        CHECK(supervised_loss(tape, z, labels).value() == doctest::Approx(1.5).epsilon(1e-12));
    }
}

TEST_CASE("losses equal the naive-loop oracle on random batches") {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor z = random_logits(3, 4, 5, 6, rng);
        auto labels = random_label_batch(3, 5, 6, 4, rng, 0.3);
        if (trial % 3 == 0)  // exercise an all-invalid sample
            labels[1] = LabelMap(5, 6, kIgnoreLabel);
        Tape tape;
        const double got = supervised_loss(tape, z, labels).value();
        CHECK(got == doctest::Approx(naive_masked_ce(z, labels)).epsilon(1e-9));
    }
}

TEST_CASE("consistency_loss with all-ignore targets is zero with zero gradient") {
    Rng rng(2);
    Tape tape;
    const Tensor z = tape.watch(random_logits(2, 3, 4, 4, rng));
    std::vector<LabelMap> matched{LabelMap(4, 4, kIgnoreLabel), LabelMap(4, 4, kIgnoreLabel)};
    const Tensor loss = consistency_loss(tape, z, matched);
    CHECK(loss.value() == 0.0);
    tape.backward(loss);
    for (double g : tape.grad(z)) CHECK(g == 0.0);
}

TEST_CASE("consistency loss on matched argmax targets decreases with confidence") {
    const int k = 3;
    auto confident_logits = [&](double scale) {
        std::vector<double> data(static_cast<std::size_t>(k) * 4, 0.0);
        for (int j = 0; j < 4; ++j) data[static_cast<std::size_t>(j)] = scale;  // class 0 everywhere
        return Tensor::from({1, k, 2, 2}, std::move(data));
    };
    std::vector<LabelMap> matched{LabelMap(2, 2, 0)};
    Tape t1, t2;
    const double weak_conf = consistency_loss(t1, confident_logits(1.0), matched).value();
    const double strong_conf = consistency_loss(t2, confident_logits(2.0), matched).value();
    CHECK(weak_conf < std::log(static_cast<double>(k)));
    CHECK(strong_conf < weak_conf);
}

TEST_CASE("lambda schedule") {
    CHECK(lambda_schedule(50, 100, 2.0) == doctest::Approx(1.0).epsilon(1e-15));  // sigma(0)=1/2
    CHECK(lambda_schedule(100, 100, 2.0) == 2.0);
    CHECK(lambda_schedule(5000, 100, 2.0) == 2.0);
    CHECK(lambda_schedule(0, 0, 0.7) == 0.7);
    CHECK(lambda_schedule(0, 100, 1.0) == doctest::Approx(1.0 / (1.0 + std::exp(5.0))));
    double prev = -1.0;
    for (int s = 0; s <= 120; ++s) {
        const double cur = lambda_schedule(s, 100, 1.0);
        CHECK(cur >= prev);
        prev = cur;
    }
}

TEST_CASE("total_loss arithmetic and gradient additivity") {
    SUBCASE("values") {
        Tape tape;
        CHECK(total_loss(tape, Tensor::scalar(1.0), Tensor::scalar(2.0), 0.5).value() == 2.0);
        CHECK(total_loss(tape, Tensor::scalar(1.3), Tensor::scalar(99.0), 0.0).value() == 1.3);
        CHECK(total_loss(tape, Tensor::scalar(0.0), Tensor::scalar(3.0), 2.0).value() == 6.0);
    }
    SUBCASE("gradient equals dL_s/dz + lambda * dL_u/dz") {
        Rng rng(3);
        const Tensor z = random_logits(1, 3, 4, 4, rng);
        const auto labels_s = random_label_batch(1, 4, 4, 3, rng, 0.2);
        const auto labels_u = random_label_batch(1, 4, 4, 3, rng, 0.5);
        const double lambda = 0.7;

        Tape ts;
        const Tensor zs = ts.watch(z);
        ts.backward(supervised_loss(ts, zs, labels_s));
        Tape tu;
        const Tensor zu = tu.watch(z);
        tu.backward(consistency_loss(tu, zu, labels_u));

        Tape tt;
        const Tensor zt = tt.watch(z);
        const Tensor both = total_loss(tt, supervised_loss(tt, zt, labels_s),
                                       consistency_loss(tt, zt, labels_u), lambda);
        tt.backward(both);

        const auto gs = ts.grad(zs), gu = tu.grad(zu), gt = tt.grad(zt);
        for (std::size_t i = 0; i < gt.size(); ++i)
            CHECK(gt[i] == doctest::Approx(gs[i] + lambda * gu[i]).epsilon(1e-12));
    }
}

TEST_CASE("ema_update identities and contraction") {
    const ParamSet student = tiny_params(1);
    const ParamSet other = tiny_params(2);

    SUBCASE("m = 0 copies the student") {
        TeacherState t{other, 0.0};
        const TeacherState next = ema_update(t, student);
        for (std::size_t i = 0; i < student.tensors.size(); ++i) {
            const auto sv = student.tensors[i].second.values();
            const auto tv = next.params.tensors[i].second.values();
            for (std::size_t j = 0; j < sv.size(); ++j) CHECK(tv[j] == sv[j]);
        }
    }
    SUBCASE("m = 1 freezes the teacher") {
        TeacherState t{other, 1.0};
        const TeacherState next = ema_update(t, student);
        for (std::size_t i = 0; i < other.tensors.size(); ++i) {
            const auto ov = other.tensors[i].second.values();
            const auto tv = next.params.tensors[i].second.values();
            for (std::size_t j = 0; j < ov.size(); ++j) CHECK(tv[j] == ov[j]);
        }
    }
    SUBCASE("scalar arithmetic: m=0.9, teacher 1, student 0 -> 0.9") {
        ParamSet one, zero;
        one.spec = zero.spec = LayerSpec{{1, 1}, 1};
        one.tensors.emplace_back("w", Tensor::full({1}, 1.0));
        zero.tensors.emplace_back("w", Tensor::full({1}, 0.0));
        const TeacherState next = ema_update(TeacherState{one, 0.9}, zero);
        CHECK(next.params.tensors[0].second.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
    }
    SUBCASE("contraction toward the student") {
        TeacherState t{other, 0.6};
        const TeacherState next = ema_update(t, student);
        for (std::size_t i = 0; i < student.tensors.size(); ++i) {
            const auto sv = student.tensors[i].second.values();
            const auto before = other.tensors[i].second.values();
            const auto after = next.params.tensors[i].second.values();
            for (std::size_t j = 0; j < sv.size(); ++j)
                CHECK(std::abs(after[j] - sv[j]) ==
                      doctest::Approx(0.6 * std::abs(before[j] - sv[j])).epsilon(1e-12));
        }
    }
    SUBCASE("spec mismatch throws") {
        TeacherState t{init_model(1, {8}, 3), 0.9};
        CHECK_THROWS_AS(ema_update(t, init_model(1, {4}, 3)), std::invalid_argument);
    }
}

TEST_CASE("sgd_step") {
    ParamSet p;
    p.spec = LayerSpec{{1, 1}, 1};
    p.tensors.emplace_back("w", Tensor::full({1}, 1.0));

    SUBCASE("plain step: lr 0.1, grad 1 on value 1 -> 0.9") {
        SgdState st;
        const ParamSet next = sgd_step(p, {{1.0}}, st, {0.1, 0.0, 0.0});
        CHECK(next.tensors[0].second.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
    }
    SUBCASE("zero gradients leave parameters unchanged") {
        SgdState st;
        const ParamSet next = sgd_step(p, {{0.0}}, st, {0.1, 0.9, 0.0});
        CHECK(next.tensors[0].second.values()[0] == 1.0);
    }
    SUBCASE("two momentum steps match the hand recurrence") {
        // v1 = 1, w1 = 1 - 0.1*1 = 0.9; v2 = 0.9 + 0.5 = 1.4, w2 = 0.9 - 0.14 = 0.76.
        SgdState st;
        ParamSet w1 = sgd_step(p, {{1.0}}, st, {0.1, 0.9, 0.0});
        CHECK(w1.tensors[0].second.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
        ParamSet w2 = sgd_step(w1, {{0.5}}, st, {0.1, 0.9, 0.0});
        CHECK(w2.tensors[0].second.values()[0] == doctest::Approx(0.76).epsilon(1e-15));
    }
    SUBCASE("decoupled weight decay") {
        SgdState st;
        const ParamSet next = sgd_step(p, {{0.0}}, st, {0.1, 0.9, 0.01});
        CHECK(next.tensors[0].second.values()[0] == doctest::Approx(1.0 - 0.1 * 0.01).epsilon(1e-15));
    }
    SUBCASE("non-finite gradient names the parameter") {
        SgdState st;
        CHECK_THROWS_WITH_AS(sgd_step(p, {{std::nan("")}}, st, {0.1, 0.0, 0.0}),
                             doctest::Contains("w"), std::runtime_error);
    }
}
