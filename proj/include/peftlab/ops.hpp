#pragma once

#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

// All ops record onto the dynamic tape when any input requires grad.
// Shapes are checked eagerly; mismatches raise ShapeError naming both sides.

Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation convention (no kernel flip).
// x: (N,C,H,W), w: (O,C,kh,kw) -> (N,O,H',W') with H' = (H+2p-kh)/s + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);

// Adds b[c] to every (n, c, h, w) position. b: (C).
Tensor bias_nchw(const Tensor& x, const Tensor& b);

// Bilinear interpolation by an integer factor, half-pixel centers.
Tensor upsample_bilinear(const Tensor& x, int factor);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);

Tensor relu(const Tensor& x);  // derivative at exactly 0 is defined as 0
Tensor gelu(const Tensor& x);  // exact erf form
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);  // log(1 + e^x), overflow-safe
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double exponent);

Tensor softmax(const Tensor& x, int axis);
// Pure normalization (x - mean) / sqrt(var + 1e-5) along `axis`;
// affine gain/shift are separate mul_rowvec/add_rowvec ops.
Tensor layernorm(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor transpose(const Tensor& x);  // 2-D
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor mean(const Tensor& x);  // full reduction to shape {1}
Tensor sum(const Tensor& x);

// v broadcasts over the last axis: out[..., j] = x[..., j] (+|*) v[j].
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);

}  // namespace peftlab
