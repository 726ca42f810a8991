#pragma once

// Forward and backward compute kernels shared by the gradient tape and the
// tape-free prediction path. Backward kernels accumulate (+=) into their
// output buffers; callers zero-initialize.
//
// Determinism contract: all kernels produce bit-identical results for
// identical inputs regardless of the configured thread count. Parallel
// kernels partition work into fixed disjoint output regions with a fixed
// in-task reduction order.

#include <cstdint>
#include <vector>

#include "densefix/label_map.hpp"

namespace densefix::kernels {

void set_threads(int n);
int threads();

struct Conv2dShape {
    int n = 0, cin = 0, h = 0, w = 0;
    int cout = 0, kh = 0, kw = 0;
    int pad = 0;  // same padding: pad == (kh-1)/2 == (kw-1)/2
};

void conv2d_forward(const double* in, const double* kernel, const double* bias, double* out,
                    const Conv2dShape& s);
void conv2d_backward_input(const double* gout, const double* kernel, double* gin,
                           const Conv2dShape& s);
void conv2d_backward_kernel(const double* gout, const double* in, double* gkernel,
                            const Conv2dShape& s);
void conv2d_backward_bias(const double* gout, double* gbias, const Conv2dShape& s);

void relu_forward(const double* in, double* out, std::int64_t n);
void relu_backward(const double* gout, const double* in, double* gin, std::int64_t n);

// Per-pixel softmax over the channel axis of [N,K,H,W], max-subtracted.
void softmax_channel_forward(const double* logits, double* probs, int n, int k, std::int64_t hw);
void softmax_channel_backward(const double* gout, const double* probs, double* glogits, int n,
                              int k, std::int64_t hw);

struct MaskedCeForward {
    double loss = 0.0;
    int samples_with_valid = 0;        // B_eff: samples contributing to the mean
    std::vector<int> valid_counts;     // S_i per sample
    std::vector<double> probs;         // softmax of logits, saved for backward
};

// Mean over samples with >=1 valid pixel of the per-sample mean of
// -log softmax(logits)[label] over non-ignore pixels. All reductions in
// 64-bit. Empty valid set -> loss 0.
MaskedCeForward masked_ce_forward(const double* logits, const LabelMap* labels, int n, int k,
                                  int h, int w);
void masked_ce_backward(double gscale, const MaskedCeForward& saved, const LabelMap* labels,
                        double* glogits, int n, int k, int h, int w);

}  // namespace densefix::kernels
