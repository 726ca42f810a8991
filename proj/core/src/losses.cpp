#include "densefix/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace densefix {

Tensor supervised_loss(Tape& tape, const Tensor& logits, std::span<const LabelMap> labels) {
    return tape.masked_ce(logits, labels);
}

Tensor consistency_loss(Tape& tape, const Tensor& strong_logits,
                        std::span<const LabelMap> matched_pls) {
    return tape.masked_ce(strong_logits, matched_pls);
}

double lambda_schedule(std::int64_t step, std::int64_t warmup_steps, double lambda_max) {
    if (warmup_steps < 0) throw std::invalid_argument("lambda_schedule: negative warmup");
    if (warmup_steps == 0 || step >= warmup_steps) return lambda_max;
    const double z = 10.0 * (static_cast<double>(step) / static_cast<double>(warmup_steps)) - 5.0;
    return lambda_max / (1.0 + std::exp(-z));
}

Tensor total_loss(Tape& tape, const Tensor& l_s, const Tensor& l_u, double lambda_t) {
    return tape.add(l_s, tape.scale(l_u, lambda_t));
}

TeacherState ema_update(const TeacherState& teacher, const ParamSet& student) {
    if (!teacher.params.same_spec(student))
        throw std::invalid_argument("ema_update: teacher and student specs differ");
    const double m = teacher.decay;
    TeacherState next;
    next.decay = m;
    next.params.spec = student.spec;
    next.params.tensors.reserve(student.tensors.size());
    for (std::size_t i = 0; i < student.tensors.size(); ++i) {
        const auto& [name, s] = student.tensors[i];
        const auto t = teacher.params.tensors[i].second.values();
        const auto sv = s.values();
        std::vector<double> out(sv.size());
        for (std::size_t j = 0; j < sv.size(); ++j) out[j] = m * t[j] + (1.0 - m) * sv[j];
        next.params.tensors.emplace_back(name, Tensor::from(s.shape(), std::move(out)));
    }
    return next;
}

ParamSet sgd_step(const ParamSet& params, const GradList& grads, SgdState& state,
                  const SgdConfig& cfg) {
    if (grads.size() != params.tensors.size())
        throw std::invalid_argument("sgd_step: gradient list does not match parameter list");
    if (state.velocity.empty()) {
        state.velocity.resize(params.tensors.size());
        for (std::size_t i = 0; i < params.tensors.size(); ++i)
            state.velocity[i].assign(static_cast<std::size_t>(params.tensors[i].second.size()), 0.0);
    }

    ParamSet next;
    next.spec = params.spec;
    next.tensors.reserve(params.tensors.size());
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const auto& [name, t] = params.tensors[i];
        const auto& g = grads[i];
        if (g.size() != static_cast<std::size_t>(t.size()))
            throw std::invalid_argument("sgd_step: gradient shape mismatch for " + name);
        auto& v = state.velocity[i];
        const auto tv = t.values();
        std::vector<double> out(tv.size());
        for (std::size_t j = 0; j < tv.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw std::runtime_error("sgd_step: non-finite gradient in " + name);
            v[j] = cfg.momentum * v[j] + g[j];
            out[j] = tv[j] - cfg.lr * v[j] - cfg.lr * cfg.weight_decay * tv[j];
        }
        next.tensors.emplace_back(name, Tensor::from(t.shape(), std::move(out)));
    }
    return next;
}

}  // namespace densefix
