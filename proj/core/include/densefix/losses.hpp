#pragma once

#include <span>
#include <vector>

#include "densefix/label_map.hpp"
#include "densefix/model.hpp"
#include "densefix/tape.hpp"

namespace densefix {

/// Weights tracked as an exponential moving average of the student's, plus
/// the decay rate. Always element-wise combinable with the student.
struct TeacherState {
    ParamSet params;
    double decay = 0.99;
};

struct LossBreakdown {
    double supervised = 0.0;         // L_s
    double consistency = 0.0;        // L_u
    double lambda = 0.0;             // lambda_t at this step
    double total = 0.0;              // L_s + lambda_t * L_u
    double valid_pixel_fraction = 0.0;
    bool supervised_all_invalid = false;
    bool consistency_all_invalid = false;
};

/// Mean over labeled samples of the per-sample mean cross-entropy at valid
/// locations. Samples with no valid pixel are skipped and the batch divisor
/// shrinks accordingly; an entirely invalid batch gives 0 with zero
/// gradient (flag it via masked_ce's semantics).
Tensor supervised_loss(Tape& tape, const Tensor& logits, std::span<const LabelMap> labels);

/// Same form with matched pseudo-labels as targets; S_i counts valid
/// matched pixels. The teacher never appears on the tape, so it can
/// receive no gradient.
Tensor consistency_loss(Tape& tape, const Tensor& strong_logits,
                        std::span<const LabelMap> matched_pls);

/// Logistic warm-up: lambda_max * sigmoid(10 * step/warmup - 5) while
/// step < warmup_steps, exactly lambda_max afterwards (and for warmup 0).
/// Nondecreasing in step.
double lambda_schedule(std::int64_t step, std::int64_t warmup_steps, double lambda_max);

/// L = L_s + lambda_t * L_u on the tape, so one backward pass accumulates
/// dL_s/dtheta + lambda_t * dL_u/dtheta.
Tensor total_loss(Tape& tape, const Tensor& l_s, const Tensor& l_u, double lambda_t);

/// theta_bar <- m * theta_bar + (1 - m) * theta, element-wise, after each
/// optimizer step. m = 0 copies the student; m = 1 freezes the teacher.
/// Spec mismatch throws.
TeacherState ema_update(const TeacherState& teacher, const ParamSet& student);

/// Gradients in ParamSet order, as produced by Tape::grad on watched params.
using GradList = std::vector<std::vector<double>>;

struct SgdConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// Heavy-ball velocity buffers, one per parameter tensor.
struct SgdState {
    std::vector<std::vector<double>> velocity;
};

/// Heavy-ball momentum with decoupled weight decay:
///   v <- momentum * v + g;  theta <- theta - lr * v - lr * wd * theta.
/// Deterministic. A non-finite gradient throws, naming the parameter.
ParamSet sgd_step(const ParamSet& params, const GradList& grads, SgdState& state,
                  const SgdConfig& cfg);

}  // namespace densefix
