#pragma once

#include <cstdint>
#include <utility>

#include "dssdn/tensor.hpp"

namespace dssdn::ops {

// Conv invocation counter, used by instrumented tests to verify branch sharing.
extern int64_t conv2d_call_count;

struct IntPair {
    int h = 0;
    int w = 0;
};

// Grouped 2-D convolution over (batch, channels, h, w) feature maps.
// weight: (c_out, c_in/groups, kh, kw); bias: (c_out) or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              IntPair stride = {1, 1}, IntPair padding = {0, 0}, int groups = 1);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double s);
Tensor sum(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
std::pair<Tensor, Tensor> split(const Tensor& x, int axis, int point);

inline Tensor concat_channels(const Tensor& a, const Tensor& b) { return concat(a, b, 1); }
inline Tensor concat_frequency(const Tensor& a, const Tensor& b) { return concat(a, b, 3); }
inline std::pair<Tensor, Tensor> split_channels(const Tensor& x, int point) {
    return split(x, 1, point);
}
inline std::pair<Tensor, Tensor> split_frequency(const Tensor& x, int point) {
    return split(x, 3, point);
}

Tensor reshape(const Tensor& x, const Shape& shape);

// (b, c, t, f) -> (b, c)
Tensor global_avg_pool(const Tensor& x);
// Non-overlapping 2x2 mean pooling, floor semantics on odd dims.
Tensor avg_pool_2x2(const Tensor& x);
// Mean pooling onto an (out_h, out_w) grid with proportional bin edges.
Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w);

// x: (b, in), weight: (out, in), bias: (out)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Mean over the batch of -sum(target * log softmax(logits)). Target rows must
// sum to 1 within 1e-5 (soft labels allowed).
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets);

// ||W W^T - I||_F^2 with W the weight viewed as (c_out, c_in) rows.
Tensor ortho_penalty(const Tensor& weight);

// out[b,c,:,:] = a[b,c] * x[b,c,:,:]
Tensor scale_channels(const Tensor& x, const Tensor& a);

}  // namespace dssdn::ops
