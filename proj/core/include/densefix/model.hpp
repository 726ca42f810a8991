#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "densefix/tape.hpp"
#include "densefix/tensor.hpp"

namespace densefix {

/// Conv stack description: full channel chain (input channels first, class
/// count last) and the square kernel extent. Parameter count and names are
/// a pure function of this.
struct LayerSpec {
    std::vector<int> channels;  // e.g. {3, 32, 32, 32, K}
    int kernel = 3;

    int num_layers() const { return static_cast<int>(channels.size()) - 1; }
    int num_classes() const { return channels.back(); }
    bool operator==(const LayerSpec&) const = default;
};

/// Ordered named parameter tensors (kernel and bias per layer). Two
/// ParamSets with the same spec are element-wise combinable.
struct ParamSet {
    LayerSpec spec;
    std::vector<std::pair<std::string, Tensor>> tensors;

    std::int64_t parameter_count() const;
    bool same_spec(const ParamSet& other) const { return spec == other.spec; }
};

/// Fan-in-scaled normal initialization (std = sqrt(2/fan_in)) for kernels,
/// zero biases. Deterministic given the seed.
ParamSet init_model(std::uint64_t seed, const std::vector<int>& hidden_channels, int num_classes,
                    int kernel = 3, int in_channels = 3);

/// Parameters registered on a tape as gradient leaves, in ParamSet order.
/// The same watched tensors can feed several forward passes on one tape.
std::vector<Tensor> watch_params(Tape& tape, const ParamSet& params);

/// Conv-relu stack with same padding, ending in raw logits [N,K,H,W].
/// The tape overload records gradients; the ParamSet overload is tape-free.
Tensor forward_logits(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& images,
                      Tape& tape);
Tensor forward_logits(const ParamSet& params, const Tensor& images);

/// Tape-free class probabilities [N,K,H,W] at input resolution (softmax over
/// channels of forward_logits). Used by the teacher and by evaluation; no
/// gradient can flow through this path.
Tensor predict(const ParamSet& params, const Tensor& images);

/// Bit-exact binary round trip of named tensors with shapes.
void save_params(std::ostream& os, const ParamSet& params);
ParamSet load_params(std::istream& is);

}  // namespace densefix
