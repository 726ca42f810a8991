#include "densefix/model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "densefix/rng.hpp"
#include "kernels.hpp"

namespace densefix {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("load_params: truncated stream");
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_pod(os, static_cast<std::int32_t>(t.extent(i)));
    const auto vals = t.values();
    os.write(reinterpret_cast<const char*>(vals.data()),
             static_cast<std::streamsize>(vals.size() * sizeof(double)));
}

std::pair<std::string, Tensor> read_tensor(std::istream& is) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto ndim = read_pod<std::uint32_t>(is);
    std::vector<int> shape(ndim);
    for (auto& e : shape) e = read_pod<std::int32_t>(is);
    std::vector<double> data(static_cast<std::size_t>(shape_size(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("load_params: truncated tensor data");
    return {std::move(name), Tensor::from(std::move(shape), std::move(data))};
}

}  // namespace

std::int64_t ParamSet::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

ParamSet init_model(std::uint64_t seed, const std::vector<int>& hidden_channels, int num_classes,
                    int kernel, int in_channels) {
    if (num_classes < 2) throw std::invalid_argument("init_model: need at least two classes");
    if (kernel % 2 == 0) throw std::invalid_argument("init_model: kernel extent must be odd");
    ParamSet params;
    params.spec.kernel = kernel;
    params.spec.channels.push_back(in_channels);
    for (int c : hidden_channels) params.spec.channels.push_back(c);
    params.spec.channels.push_back(num_classes);

    Rng rng(seed);
    for (int layer = 0; layer < params.spec.num_layers(); ++layer) {
        const int cin = params.spec.channels[static_cast<std::size_t>(layer)];
        const int cout = params.spec.channels[static_cast<std::size_t>(layer) + 1];
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(cin) * kernel * kernel));
        std::vector<double> w(static_cast<std::size_t>(cout) * cin * kernel * kernel);
        for (auto& v : w) v = rng.normal(0.0, std_dev);
        const std::string base = "conv" + std::to_string(layer + 1);
        params.tensors.emplace_back(base + ".weight",
                                    Tensor::from({cout, cin, kernel, kernel}, std::move(w)));
        params.tensors.emplace_back(base + ".bias", Tensor::zeros({cout}));
    }
    return params;
}

std::vector<Tensor> watch_params(Tape& tape, const ParamSet& params) {
    std::vector<Tensor> watched;
    watched.reserve(params.tensors.size());
    for (const auto& [name, t] : params.tensors) watched.push_back(tape.watch(t));
    return watched;
}

Tensor forward_logits(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& images,
                      Tape& tape) {
    if (images.ndim() != 4 || images.extent(1) != spec.channels.front())
        throw std::invalid_argument("forward_logits: image channel count does not match the spec");
    if (static_cast<int>(params.size()) != 2 * spec.num_layers())
        throw std::invalid_argument("forward_logits: parameter list does not match the spec");
    const int pad = (spec.kernel - 1) / 2;
    Tensor x = images;
    for (int layer = 0; layer < spec.num_layers(); ++layer) {
        x = tape.conv2d(x, params[static_cast<std::size_t>(2 * layer)],
                        params[static_cast<std::size_t>(2 * layer) + 1], pad);
        if (layer + 1 < spec.num_layers()) x = tape.relu(x);
    }
    return x;
}

Tensor forward_logits(const ParamSet& params, const Tensor& images) {
    if (images.ndim() != 4 || images.extent(1) != params.spec.channels.front())
        throw std::invalid_argument("forward_logits: image channel count does not match the spec");
    const auto& spec = params.spec;
    const int pad = (spec.kernel - 1) / 2;
    const int n = images.extent(0), h = images.extent(2), w = images.extent(3);

    std::vector<double> cur(images.values().begin(), images.values().end());
    for (int layer = 0; layer < spec.num_layers(); ++layer) {
        kernels::Conv2dShape s;
        s.n = n;
        s.cin = spec.channels[static_cast<std::size_t>(layer)];
        s.h = h;
        s.w = w;
        s.cout = spec.channels[static_cast<std::size_t>(layer) + 1];
        s.kh = s.kw = spec.kernel;
        s.pad = pad;
        const auto& weight = params.tensors[static_cast<std::size_t>(2 * layer)].second;
        const auto& bias = params.tensors[static_cast<std::size_t>(2 * layer) + 1].second;
        std::vector<double> next(static_cast<std::size_t>(n) * s.cout * h * w);
        kernels::conv2d_forward(cur.data(), weight.values().data(), bias.values().data(),
                                next.data(), s);
        if (layer + 1 < spec.num_layers())
            kernels::relu_forward(next.data(), next.data(), static_cast<std::int64_t>(next.size()));
        cur = std::move(next);
    }
    return Tensor::from({n, spec.num_classes(), h, w}, std::move(cur));
}

Tensor predict(const ParamSet& params, const Tensor& images) {
    Tensor logits = forward_logits(params, images);
    const int n = logits.extent(0), k = logits.extent(1);
    const std::int64_t hw = static_cast<std::int64_t>(logits.extent(2)) * logits.extent(3);
    std::vector<double> probs(static_cast<std::size_t>(logits.size()));
    kernels::softmax_channel_forward(logits.values().data(), probs.data(), n, k, hw);
    return Tensor::from(logits.shape(), std::move(probs));
}

void save_params(std::ostream& os, const ParamSet& params) {
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::int32_t>(params.spec.kernel));
    write_pod(os, static_cast<std::uint32_t>(params.spec.channels.size()));
    for (int c : params.spec.channels) write_pod(os, static_cast<std::int32_t>(c));
    write_pod(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) write_tensor(os, name, t);
}

ParamSet load_params(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4))
        throw std::runtime_error("load_params: bad magic");
    if (read_pod<std::uint32_t>(is) != kVersion)
        throw std::runtime_error("load_params: unsupported version");
    ParamSet params;
    params.spec.kernel = read_pod<std::int32_t>(is);
    const auto n_channels = read_pod<std::uint32_t>(is);
    params.spec.channels.resize(n_channels);
    for (auto& c : params.spec.channels) c = read_pod<std::int32_t>(is);
    const auto n_tensors = read_pod<std::uint32_t>(is);
    params.tensors.reserve(n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) params.tensors.push_back(read_tensor(is));
    return params;
}

}  // namespace densefix
