#include "densefix/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace densefix {

namespace {

std::vector<double> run_conv_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                                     const kernels::Conv2dShape& s) {
    std::vector<double> out(static_cast<std::size_t>(s.n) * s.cout * s.h * s.w);
    kernels::conv2d_forward(input.values().data(), kernel.values().data(), bias.values().data(),
                            out.data(), s);
    return out;
}

}  // namespace

int Tape::push_node(std::int64_t out_size, std::function<void(Tape&, const double*)> fn) {
    nodes_.push_back(Node{out_size, std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

double* Tape::grad_buffer(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size), 0.0);
    return g.data();
}

Tensor Tape::attach(Tensor t, int node) const {
    t.node_ = node;
    return t;
}

Tensor Tape::watch(const Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("Tape::watch: undefined tensor");
    return attach(t, push_node(t.size(), nullptr));
}

Tensor Tape::conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding) {
    if (input.ndim() != 4) throw std::invalid_argument("conv2d: input must be [N,Cin,H,W]");
    if (kernel.ndim() != 4) throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,kh,kw]");
    if (bias.ndim() != 1) throw std::invalid_argument("conv2d: bias must be [Cout]");
    kernels::Conv2dShape s;
    s.n = input.extent(0);
    s.cin = input.extent(1);
    s.h = input.extent(2);
    s.w = input.extent(3);
    s.cout = kernel.extent(0);
    s.kh = kernel.extent(2);
    s.kw = kernel.extent(3);
    s.pad = padding;
    if (kernel.extent(1) != s.cin)
        throw std::invalid_argument("conv2d: kernel input-channel dimension is " +
                                    std::to_string(kernel.extent(1)) + ", input has Cin=" +
                                    std::to_string(s.cin));
    if (bias.extent(0) != s.cout)
        throw std::invalid_argument("conv2d: bias dimension is " + std::to_string(bias.extent(0)) +
                                    ", kernel has Cout=" + std::to_string(s.cout));
    if (s.kh % 2 == 0 || s.kw % 2 == 0 || s.kh != s.kw)
        throw std::invalid_argument("conv2d: kernel window must be square with odd extent, got " +
                                    std::to_string(s.kh) + "x" + std::to_string(s.kw));
    if (padding != (s.kh - 1) / 2)
        throw std::invalid_argument("conv2d: padding " + std::to_string(padding) +
                                    " does not give same-size output for kernel extent " +
                                    std::to_string(s.kh));

    Tensor out = Tensor::from({s.n, s.cout, s.h, s.w},
                              run_conv_forward(input, kernel, bias, s));
    if (!input.requires_grad() && !kernel.requires_grad() && !bias.requires_grad()) return out;

    const int in_node = input.node(), k_node = kernel.node(), b_node = bias.node();
    const Tensor in_saved = input.detached(), k_saved = kernel.detached();
    const int id = push_node(out.size(), [=](Tape& tape, const double* gout) {
        if (in_node >= 0)
            kernels::conv2d_backward_input(gout, k_saved.values().data(), tape.grad_buffer(in_node), s);
        if (k_node >= 0)
            kernels::conv2d_backward_kernel(gout, in_saved.values().data(), tape.grad_buffer(k_node), s);
        if (b_node >= 0) kernels::conv2d_backward_bias(gout, tape.grad_buffer(b_node), s);
    });
    return attach(std::move(out), id);
}

Tensor Tape::relu(const Tensor& x) {
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    kernels::relu_forward(x.values().data(), out.data(), x.size());
    Tensor result = Tensor::from(x.shape(), std::move(out));
    if (!x.requires_grad()) return result;

    const int x_node = x.node();
    const Tensor x_saved = x.detached();
    const int id = push_node(result.size(), [=](Tape& tape, const double* gout) {
        kernels::relu_backward(gout, x_saved.values().data(), tape.grad_buffer(x_node), x_saved.size());
    });
    return attach(std::move(result), id);
}

Tensor Tape::softmax_channel(const Tensor& logits) {
    if (logits.ndim() != 4) throw std::invalid_argument("softmax_channel: expected [N,K,H,W]");
    const int n = logits.extent(0), k = logits.extent(1);
    const std::int64_t hw = static_cast<std::int64_t>(logits.extent(2)) * logits.extent(3);
    if (k < 2) throw std::invalid_argument("softmax_channel: needs at least two classes");
    std::vector<double> probs(static_cast<std::size_t>(logits.size()));
    kernels::softmax_channel_forward(logits.values().data(), probs.data(), n, k, hw);
    Tensor result = Tensor::from(logits.shape(), std::move(probs));
    if (!logits.requires_grad()) return result;

    const int z_node = logits.node();
    const Tensor p_saved = result.detached();
    const int id = push_node(result.size(), [=](Tape& tape, const double* gout) {
        kernels::softmax_channel_backward(gout, p_saved.values().data(), tape.grad_buffer(z_node), n,
                                          k, hw);
    });
    return attach(std::move(result), id);
}

Tensor Tape::masked_ce(const Tensor& logits, std::span<const LabelMap> labels) {
    if (logits.ndim() != 4) throw std::invalid_argument("masked_ce: expected [N,K,H,W] logits");
    const int n = logits.extent(0), k = logits.extent(1), h = logits.extent(2), w = logits.extent(3);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("masked_ce: batch size mismatch between logits and labels");

    auto saved = kernels::masked_ce_forward(logits.values().data(), labels.data(), n, k, h, w);
    Tensor result = Tensor::scalar(saved.loss);
    if (!logits.requires_grad()) return result;

    const int z_node = logits.node();
    auto saved_ptr = std::make_shared<kernels::MaskedCeForward>(std::move(saved));
    auto labels_copy = std::make_shared<std::vector<LabelMap>>(labels.begin(), labels.end());
    const int id = push_node(1, [=](Tape& tape, const double* gout) {
        kernels::masked_ce_backward(gout[0], *saved_ptr, labels_copy->data(),
                                    tape.grad_buffer(z_node), n, k, h, w);
    });
    return attach(std::move(result), id);
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Tensor result = Tensor::from(a.shape(), std::move(out));
    if (!a.requires_grad() && !b.requires_grad()) return result;

    const int a_node = a.node(), b_node = b.node();
    const std::int64_t n = a.size();
    const int id = push_node(n, [=](Tape& tape, const double* gout) {
        if (a_node >= 0) {
            double* ga = tape.grad_buffer(a_node);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += gout[i];
        }
        if (b_node >= 0) {
            double* gb = tape.grad_buffer(b_node);
            for (std::int64_t i = 0; i < n; ++i) gb[i] += gout[i];
        }
    });
    return attach(std::move(result), id);
}

Tensor Tape::dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
    const auto av = a.values();
    const auto bv = b.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) sum += av[i] * bv[i];
    Tensor result = Tensor::scalar(sum);
    if (!a.requires_grad() && !b.requires_grad()) return result;

    const int a_node = a.node(), b_node = b.node();
    const Tensor a_saved = a.detached(), b_saved = b.detached();
    const std::int64_t n = a.size();
    const int id = push_node(1, [=](Tape& tape, const double* gout) {
        const double g = gout[0];
        if (a_node >= 0) {
            double* ga = tape.grad_buffer(a_node);
            const auto bvals = b_saved.values();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g * bvals[static_cast<std::size_t>(i)];
        }
        if (b_node >= 0) {
            double* gb = tape.grad_buffer(b_node);
            const auto avals = a_saved.values();
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g * avals[static_cast<std::size_t>(i)];
        }
    });
    return attach(std::move(result), id);
}

Tensor Tape::scale(const Tensor& a, double factor) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = factor * av[i];
    Tensor result = Tensor::from(a.shape(), std::move(out));
    if (!a.requires_grad()) return result;

    const int a_node = a.node();
    const std::int64_t n = a.size();
    const int id = push_node(n, [=](Tape& tape, const double* gout) {
        double* ga = tape.grad_buffer(a_node);
        for (std::int64_t i = 0; i < n; ++i) ga[i] += factor * gout[i];
    });
    return attach(std::move(result), id);
}

void Tape::backward(const Tensor& root) {
    if (root.node() < 0 || root.node() >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape::backward: root is not on this tape");
    if (root.size() != 1) throw std::invalid_argument("Tape::backward: root must be a scalar");
    grads_.assign(nodes_.size(), {});
    grad_buffer(root.node())[0] = 1.0;
    for (int i = root.node(); i >= 0; --i) {
        const auto& g = grads_[static_cast<std::size_t>(i)];
        if (g.empty()) continue;  // not reached from the root
        if (nodes_[static_cast<std::size_t>(i)].backward)
            nodes_[static_cast<std::size_t>(i)].backward(*this, g.data());
    }
}

std::span<const double> Tape::grad(const Tensor& t) const {
    const int node = t.node();
    if (node < 0 || node >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape::grad: tensor is not on this tape");
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size), 0.0);
    return {g.data(), g.size()};
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn, const Tensor& x,
                  double eps) {
    Tape tape;
    Tensor watched = tape.watch(x);
    Tensor out = fn(tape, watched);
    if (out.size() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
    tape.backward(out);
    const auto analytic = tape.grad(watched);

    const auto base = x.values();
    std::vector<double> perturbed(base.begin(), base.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
        const double orig = perturbed[i];
        perturbed[i] = orig + eps;
        Tape tp;
        const double up = fn(tp, tp.watch(Tensor::from(x.shape(), perturbed))).value();
        perturbed[i] = orig - eps;
        Tape tm;
        const double down = fn(tm, tm.watch(Tensor::from(x.shape(), perturbed))).value();
        perturbed[i] = orig;

        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace densefix
