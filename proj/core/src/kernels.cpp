#include "kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <thread>

namespace densefix::kernels {

namespace {

std::atomic<int> g_threads{2};

// Runs fn(task) for task in [0, tasks) on up to threads() OS threads.
// Each task owns a disjoint output region, so scheduling cannot change
// results. Small task counts run inline.
void run_tasks(int tasks, const std::function<void(int)>& fn) {
    const int want = std::min(threads(), tasks);
    if (want <= 1) {
        for (int t = 0; t < tasks; ++t) fn(t);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int t = next.fetch_add(1); t < tasks; t = next.fetch_add(1)) fn(t);
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(want - 1));
    for (int i = 0; i < want - 1; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

}  // namespace

void set_threads(int n) { g_threads.store(n < 1 ? 1 : n); }
int threads() { return g_threads.load(); }

void conv2d_forward(const double* in, const double* kernel, const double* bias, double* out,
                    const Conv2dShape& s) {
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t in_img = static_cast<std::int64_t>(s.cin) * hw;
    const std::int64_t out_img = static_cast<std::int64_t>(s.cout) * hw;
    run_tasks(s.n * s.cout, [&](int task) {
        const int n = task / s.cout;
        const int co = task % s.cout;
        double* dst = out + n * out_img + co * hw;
        std::fill(dst, dst + hw, bias[co]);
        for (int ci = 0; ci < s.cin; ++ci) {
            const double* src = in + n * in_img + ci * hw;
            const double* kslice = kernel + ((static_cast<std::int64_t>(co) * s.cin + ci) * s.kh) * s.kw;
            for (int dy = 0; dy < s.kh; ++dy) {
                const int ylo = std::max(0, s.pad - dy);
                const int yhi = std::min(s.h, s.h + s.pad - dy);
                for (int dx = 0; dx < s.kw; ++dx) {
                    const double wk = kslice[dy * s.kw + dx];
                    const int xlo = std::max(0, s.pad - dx);
                    const int xhi = std::min(s.w, s.w + s.pad - dx);
                    const int xshift = dx - s.pad;
                    for (int y = ylo; y < yhi; ++y) {
                        const double* srow = src + static_cast<std::int64_t>(y + dy - s.pad) * s.w + xshift;
                        double* drow = dst + static_cast<std::int64_t>(y) * s.w;
                        for (int x = xlo; x < xhi; ++x) drow[x] += wk * srow[x];
                    }
                }
            }
        }
    });
}

void conv2d_backward_input(const double* gout, const double* kernel, double* gin,
                           const Conv2dShape& s) {
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t in_img = static_cast<std::int64_t>(s.cin) * hw;
    const std::int64_t out_img = static_cast<std::int64_t>(s.cout) * hw;
    run_tasks(s.n * s.cin, [&](int task) {
        const int n = task / s.cin;
        const int ci = task % s.cin;
        double* dst = gin + n * in_img + ci * hw;
        for (int co = 0; co < s.cout; ++co) {
            const double* g = gout + n * out_img + co * hw;
            const double* kslice = kernel + ((static_cast<std::int64_t>(co) * s.cin + ci) * s.kh) * s.kw;
            for (int dy = 0; dy < s.kh; ++dy) {
                const int ylo = std::max(0, s.pad - dy);
                const int yhi = std::min(s.h, s.h + s.pad - dy);
                for (int dx = 0; dx < s.kw; ++dx) {
                    const double wk = kslice[dy * s.kw + dx];
                    const int xlo = std::max(0, s.pad - dx);
                    const int xhi = std::min(s.w, s.w + s.pad - dx);
                    const int xshift = dx - s.pad;
                    for (int y = ylo; y < yhi; ++y) {
                        double* drow = dst + static_cast<std::int64_t>(y + dy - s.pad) * s.w + xshift;
                        const double* grow = g + static_cast<std::int64_t>(y) * s.w;
                        for (int x = xlo; x < xhi; ++x) drow[x] += wk * grow[x];
                    }
                }
            }
        }
    });
}

void conv2d_backward_kernel(const double* gout, const double* in, double* gkernel,
                            const Conv2dShape& s) {
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t in_img = static_cast<std::int64_t>(s.cin) * hw;
    const std::int64_t out_img = static_cast<std::int64_t>(s.cout) * hw;
    run_tasks(s.cout, [&](int co) {
        for (int n = 0; n < s.n; ++n) {
            const double* g = gout + n * out_img + static_cast<std::int64_t>(co) * hw;
            for (int ci = 0; ci < s.cin; ++ci) {
                const double* src = in + n * in_img + ci * hw;
                double* kslice = gkernel + ((static_cast<std::int64_t>(co) * s.cin + ci) * s.kh) * s.kw;
                for (int dy = 0; dy < s.kh; ++dy) {
                    const int ylo = std::max(0, s.pad - dy);
                    const int yhi = std::min(s.h, s.h + s.pad - dy);
                    for (int dx = 0; dx < s.kw; ++dx) {
                        const int xlo = std::max(0, s.pad - dx);
                        const int xhi = std::min(s.w, s.w + s.pad - dx);
                        const int xshift = dx - s.pad;
                        double acc = 0.0;
                        for (int y = ylo; y < yhi; ++y) {
                            const double* srow = src + static_cast<std::int64_t>(y + dy - s.pad) * s.w + xshift;
                            const double* grow = g + static_cast<std::int64_t>(y) * s.w;
                            for (int x = xlo; x < xhi; ++x) acc += grow[x] * srow[x];
                        }
                        kslice[dy * s.kw + dx] += acc;
                    }
                }
            }
        }
    });
}

void conv2d_backward_bias(const double* gout, double* gbias, const Conv2dShape& s) {
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t out_img = static_cast<std::int64_t>(s.cout) * hw;
    for (int co = 0; co < s.cout; ++co) {
        double acc = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* g = gout + n * out_img + co * hw;
            for (std::int64_t i = 0; i < hw; ++i) acc += g[i];
        }
        gbias[co] += acc;
    }
}

void relu_forward(const double* in, double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* gout, const double* in, double* gin, std::int64_t n) {
    // Subgradient at exactly 0 is 0.
    for (std::int64_t i = 0; i < n; ++i)
        if (in[i] > 0.0) gin[i] += gout[i];
}

void softmax_channel_forward(const double* logits, double* probs, int n, int k, std::int64_t hw) {
    for (int b = 0; b < n; ++b) {
        const double* z = logits + static_cast<std::int64_t>(b) * k * hw;
        double* p = probs + static_cast<std::int64_t>(b) * k * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
            double zmax = z[j];
            for (int c = 1; c < k; ++c) zmax = std::max(zmax, z[c * hw + j]);
            double sum = 0.0;
            for (int c = 0; c < k; ++c) {
                const double e = std::exp(z[c * hw + j] - zmax);
                p[c * hw + j] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int c = 0; c < k; ++c) p[c * hw + j] *= inv;
        }
    }
}

void softmax_channel_backward(const double* gout, const double* probs, double* glogits, int n,
                              int k, std::int64_t hw) {
    for (int b = 0; b < n; ++b) {
        const double* g = gout + static_cast<std::int64_t>(b) * k * hw;
        const double* p = probs + static_cast<std::int64_t>(b) * k * hw;
        double* gl = glogits + static_cast<std::int64_t>(b) * k * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
            double dot = 0.0;
            for (int c = 0; c < k; ++c) dot += g[c * hw + j] * p[c * hw + j];
            for (int c = 0; c < k; ++c) gl[c * hw + j] += p[c * hw + j] * (g[c * hw + j] - dot);
        }
    }
}

MaskedCeForward masked_ce_forward(const double* logits, const LabelMap* labels, int n, int k,
                                  int h, int w) {
    if (k < 2) throw std::invalid_argument("masked_ce: needs at least two classes");
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    MaskedCeForward saved;
    saved.valid_counts.assign(static_cast<std::size_t>(n), 0);
    saved.probs.assign(static_cast<std::size_t>(n) * k * hw, 0.0);
    softmax_channel_forward(logits, saved.probs.data(), n, k, hw);

    double batch_sum = 0.0;
    for (int b = 0; b < n; ++b) {
        const LabelMap& lm = labels[b];
        if (lm.height != h || lm.width != w)
            throw std::invalid_argument("masked_ce: label map shape does not match logits");
        const double* z = logits + static_cast<std::int64_t>(b) * k * hw;
        int valid = 0;
        double sample_sum = 0.0;
        for (std::int64_t j = 0; j < hw; ++j) {
            const std::uint8_t lab = lm.values[static_cast<std::size_t>(j)];
            if (lab == kIgnoreLabel) continue;
            if (lab >= k) throw std::invalid_argument("masked_ce: label value out of class range");
            double zmax = z[j];
            for (int c = 1; c < k; ++c) zmax = std::max(zmax, z[c * hw + j]);
            double sum = 0.0;
            for (int c = 0; c < k; ++c) sum += std::exp(z[c * hw + j] - zmax);
            sample_sum += std::log(sum) + zmax - z[static_cast<std::int64_t>(lab) * hw + j];
            ++valid;
        }
        saved.valid_counts[static_cast<std::size_t>(b)] = valid;
        if (valid > 0) {
            batch_sum += sample_sum / valid;
            ++saved.samples_with_valid;
        }
    }
    saved.loss = saved.samples_with_valid > 0 ? batch_sum / saved.samples_with_valid : 0.0;
    return saved;
}

void masked_ce_backward(double gscale, const MaskedCeForward& saved, const LabelMap* labels,
                        double* glogits, int n, int k, int h, int w) {
    if (saved.samples_with_valid == 0) return;
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const double binv = 1.0 / saved.samples_with_valid;
    for (int b = 0; b < n; ++b) {
        const int valid = saved.valid_counts[static_cast<std::size_t>(b)];
        if (valid == 0) continue;
        const double scale = gscale * binv / valid;
        const LabelMap& lm = labels[b];
        const double* p = saved.probs.data() + static_cast<std::int64_t>(b) * k * hw;
        double* gl = glogits + static_cast<std::int64_t>(b) * k * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
            const std::uint8_t lab = lm.values[static_cast<std::size_t>(j)];
            if (lab == kIgnoreLabel) continue;
            for (int c = 0; c < k; ++c) gl[c * hw + j] += scale * p[c * hw + j];
            gl[static_cast<std::int64_t>(lab) * hw + j] -= scale;
        }
    }
}

}  // namespace densefix::kernels
