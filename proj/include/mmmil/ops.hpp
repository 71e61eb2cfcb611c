#pragma once

#include <vector>

#include "mmmil/tensor.hpp"

namespace mmmil {

enum class Activation { relu, tanh, sigmoid };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

namespace ops {

// Elementwise (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// a [p×q] times b [q×r] -> [p×r].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x [batch×in], w [in×out], b [out] -> x·w + b, row-broadcast bias.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

/// Cross-correlation. x [n×c_in×H×W], kernels [c_out×c_in×k×k].
/// Output spatial side: floor((H + 2·padding − k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding);

/// x [n×C×H×W] plus per-channel bias [C].
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

Tensor activate(const Tensor& x, Activation kind);

/// Numerically stable softmax over a 1-D tensor.
Tensor softmax_vec(const Tensor& x);

/// Row-wise layer normalization of x [batch×d] with learned gain/bias [d].
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Mean binary cross-entropy; probabilities clamped to [eps, 1−eps].
/// Gradient flows to p only; y is treated as a constant target.
Tensor bce_loss(const Tensor& p, const Tensor& y, double eps = 1e-7);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// [n×c×h×w] -> [n×c], mean over the spatial dims (SW-GAP core).
Tensor spatial_mean(const Tensor& x);
/// [n×c×h×w] -> [n×h×w], mean over channels (CW-GAP core).
Tensor channel_mean(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);

Tensor transpose(const Tensor& x);  // 2-D only

/// Columns [start, start+len) of a matrix.
Tensor slice_cols(const Tensor& x, int start, int len);

/// Row-wise stable softmax of a matrix.
Tensor softmax_rows(const Tensor& x);

/// Vertical concatenation of matrices sharing a column count.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Horizontal concatenation of two matrices sharing a row count.
Tensor concat_cols(const Tensor& a, const Tensor& b);

}  // namespace ops
}  // namespace mmmil
