#pragma once

#include <functional>
#include <span>
#include <vector>

#include "densefix/label_map.hpp"
#include "densefix/tensor.hpp"

namespace densefix {

/// Reverse-mode gradient tape over Tensor operations.
///
/// Nodes are appended in forward order, forming a DAG by construction;
/// backward() walks them in reverse creation order (a reverse topological
/// order), visiting each node exactly once. A tape belongs to one forward
/// pass and one owner; it is not shared between concurrent training steps.
///
/// Operations with no tape-attached input are constant-folded: they return
/// a detached result and record nothing.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a leaf whose gradient will be accumulated during backward.
    Tensor watch(const Tensor& t);

    /// "Same" cross-correlation: kh == kw odd, padding == (kh-1)/2, so the
    /// output spatial shape equals the input's. Gradients flow to input,
    /// kernel, and bias. Shape mismatches throw, naming the dimension.
    Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding);

    /// Elementwise max(0, x); subgradient at 0 is 0.
    Tensor relu(const Tensor& x);

    /// Per-pixel softmax over the channel axis of [N,K,H,W].
    Tensor softmax_channel(const Tensor& logits);

    /// Per-sample mean of -log softmax(logits)[label] over non-ignore pixels,
    /// then mean over samples with at least one valid pixel. Samples with no
    /// valid pixel are excluded from the batch mean; an entirely invalid
    /// batch gives loss 0 with zero gradient. Gradient flows to logits only.
    Tensor masked_ce(const Tensor& logits, std::span<const LabelMap> labels);

    /// Elementwise sum of two same-shape tensors.
    Tensor add(const Tensor& a, const Tensor& b);

    /// Scalar inner product of two same-shape tensors.
    Tensor dot(const Tensor& a, const Tensor& b);

    /// Multiplication by a constant.
    Tensor scale(const Tensor& a, double factor);

    /// Accumulates gradients of all watched leaves reachable from a scalar
    /// root. Resets previously computed gradients first.
    void backward(const Tensor& root);

    /// Gradient of a tape-attached tensor after backward(); zeros if the
    /// tensor was not reached.
    std::span<const double> grad(const Tensor& t) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::int64_t size = 0;
        std::function<void(Tape&, const double*)> backward;  // empty for leaves
    };

    int push_node(std::int64_t out_size, std::function<void(Tape&, const double*)> fn);
    double* grad_buffer(int node);
    Tensor attach(Tensor t, int node) const;

    std::vector<Node> nodes_;
    mutable std::vector<std::vector<double>> grads_;
};

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences, coordinate by coordinate. Returns the worst
/// relative error with denominator max(|analytic|, |numeric|, 1e-8).
/// The function receives a fresh tape and the point (already watched).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn, const Tensor& x,
                  double eps);

}  // namespace densefix
