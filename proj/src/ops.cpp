#include "peftlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "peftlab/errors.hpp"

namespace peftlab {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

int normalize_axis(int axis, int ndim, const char* op) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(ndim));
    }
    return axis;
}

// Decomposes indexing around `axis` into (outer, len, inner) so that flat
// index = (o * len + i) * inner + j.
struct AxisSplit {
    std::int64_t outer = 1;
    std::int64_t len = 1;
    std::int64_t inner = 1;
};

AxisSplit split_axis(const std::vector<int>& shape, int axis) {
    AxisSplit s;
    for (int d = 0; d < axis; ++d) s.outer *= shape[d];
    s.len = shape[axis];
    for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d) s.inner *= shape[d];
    return s;
}

Tensor unary_op(const Tensor& x, double (*fwd)(double), double (*dfwd)(double)) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn, dfwd](const TensorNode& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            xn->grad[i] += o.grad[i] * dfwd(xn->values[i]);
        }
    });
}

double relu_fwd(double v) { return v > 0.0 ? v : 0.0; }
double relu_dfwd(double v) { return v > 0.0 ? 1.0 : 0.0; }

double gelu_fwd(double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); }
double gelu_dfwd(double v) {
    return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
}

double sigmoid_fwd(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}
double sigmoid_dfwd(double v) {
    const double s = sigmoid_fwd(v);
    return s * (1.0 - s);
}

double softplus_fwd(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }
double softplus_dfwd(double v) { return sigmoid_fwd(v); }

double exp_fwd(double v) { return std::exp(v); }
double exp_dfwd(double v) { return std::exp(v); }

double log_fwd(double v) { return std::log(v); }
double log_dfwd(double v) { return 1.0 / v; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int d = a.shape()[0], m = a.shape()[1], k = b.shape()[1];
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(d) * k, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int t = 0; t < m; ++t) {
            const double aik = av[static_cast<std::size_t>(i) * m + t];
            const double* brow = &bv[static_cast<std::size_t>(t) * k];
            double* orow = &out[static_cast<std::size_t>(i) * k];
            for (int j = 0; j < k; ++j) orow[j] += aik * brow[j];
        }
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result({d, k}, std::move(out), {an, bn}, [an, bn, d, m, k](const TensorNode& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            // dA = G * B^T
            for (int i = 0; i < d; ++i) {
                for (int t = 0; t < m; ++t) {
                    double acc = 0.0;
                    const double* grow = &o.grad[static_cast<std::size_t>(i) * k];
                    const double* brow = &bn->values[static_cast<std::size_t>(t) * k];
                    for (int j = 0; j < k; ++j) acc += grow[j] * brow[j];
                    an->grad[static_cast<std::size_t>(i) * m + t] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB = A^T * G
            for (int t = 0; t < m; ++t) {
                for (int i = 0; i < d; ++i) {
                    const double ait = an->values[static_cast<std::size_t>(i) * m + t];
                    const double* grow = &o.grad[static_cast<std::size_t>(i) * k];
                    double* brow = &bn->grad[static_cast<std::size_t>(t) * k];
                    for (int j = 0; j < k; ++j) brow[j] += ait * grow[j];
                }
            }
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.shape().size() != 4 || w.shape().size() != 4) {
        throw ShapeError("conv2d: expected 4-D input and kernel, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int O = w.shape()[0], KC = w.shape()[1], KH = w.shape()[2], KW = w.shape()[3];
    if (KC != C) {
        throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    }
    if (KH > H + 2 * padding || KW > W + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
    }
    const int OH = (H + 2 * padding - KH) / stride + 1;
    const int OW = (W + 2 * padding - KW) / stride + 1;

    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<double> out(static_cast<std::size_t>(N) * O * OH * OW, 0.0);

    auto x_at = [&](int n, int c) { return &xv[(static_cast<std::size_t>(n) * C + c) * H * W]; };
    for (int n = 0; n < N; ++n) {
        for (int o = 0; o < O; ++o) {
            double* oimg = &out[(static_cast<std::size_t>(n) * O + o) * OH * OW];
            for (int c = 0; c < C; ++c) {
                const double* ximg = x_at(n, c);
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        const double wval =
                            wv[((static_cast<std::size_t>(o) * C + c) * KH + kh) * KW + kw];
                        if (wval == 0.0) continue;
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride + kh - padding;
                            if (ih < 0 || ih >= H) continue;
                            const double* xrow = &ximg[static_cast<std::size_t>(ih) * W];
                            double* orow = &oimg[static_cast<std::size_t>(oh) * OW];
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride + kw - padding;
                                if (iw < 0 || iw >= W) continue;
                                orow[ow] += wval * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }

    NodePtr xn = x.node(), wn = w.node();
    auto bwd = [xn, wn, N, C, H, W, O, KH, KW, OH, OW, stride, padding](const TensorNode& on) {
        const auto& g = on.grad;
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        for (int n = 0; n < N; ++n) {
            for (int o = 0; o < O; ++o) {
                const double* gimg = &g[(static_cast<std::size_t>(n) * O + o) * OH * OW];
                for (int c = 0; c < C; ++c) {
                    const double* ximg =
                        &xn->values[(static_cast<std::size_t>(n) * C + c) * H * W];
                    double* dximg =
                        xn->requires_grad
                            ? &xn->grad[(static_cast<std::size_t>(n) * C + c) * H * W]
                            : nullptr;
                    for (int kh = 0; kh < KH; ++kh) {
                        for (int kw = 0; kw < KW; ++kw) {
                            const std::size_t widx =
                                ((static_cast<std::size_t>(o) * C + c) * KH + kh) * KW + kw;
                            const double wval = wn->values[widx];
                            double dw = 0.0;
                            for (int oh = 0; oh < OH; ++oh) {
                                const int ih = oh * stride + kh - padding;
                                if (ih < 0 || ih >= H) continue;
                                const double* grow = &gimg[static_cast<std::size_t>(oh) * OW];
                                const double* xrow = &ximg[static_cast<std::size_t>(ih) * W];
                                double* dxrow =
                                    dximg ? &dximg[static_cast<std::size_t>(ih) * W] : nullptr;
                                for (int ow = 0; ow < OW; ++ow) {
                                    const int iw = ow * stride + kw - padding;
                                    if (iw < 0 || iw >= W) continue;
                                    const double gv = grow[ow];
                                    dw += gv * xrow[iw];
                                    if (dxrow) dxrow[iw] += gv * wval;
                                }
                            }
                            if (wn->requires_grad) wn->grad[widx] += dw;
                        }
                    }
                }
            }
        }
    };
    return make_result({N, O, OH, OW}, std::move(out), {xn, wn}, std::move(bwd));
}

Tensor bias_nchw(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 4 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1]) {
        throw ShapeError("bias_nchw: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int N = x.shape()[0], C = x.shape()[1];
    const std::int64_t HW = static_cast<std::int64_t>(x.shape()[2]) * x.shape()[3];
    const auto& xv = x.values();
    const auto& bv = b.values();
    std::vector<double> out(xv.size());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
            const double bc = bv[c];
            for (std::int64_t i = 0; i < HW; ++i) out[base + i] = xv[base + i] + bc;
        }
    }
    NodePtr xn = x.node(), bn = b.node();
    return make_result(x.shape(), std::move(out), {xn, bn}, [xn, bn, N, C, HW](const TensorNode& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < HW; ++i) acc += o.grad[base + i];
                    bn->grad[c] += acc;
                }
            }
        }
    });
}

Tensor upsample_bilinear(const Tensor& x, int factor) {
    if (x.shape().size() != 4) {
        throw ShapeError("upsample_bilinear: expected 4-D input, got " + shape_str(x.shape()));
    }
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int OH = H * factor, OW = W * factor;

    // Half-pixel-center source coordinates, clamped at the border.
    auto make_taps = [factor](int in, int on) {
        std::vector<int> i0(on), i1(on);
        std::vector<double> t(on);
        for (int o = 0; o < on; ++o) {
            const double s = (o + 0.5) / factor - 0.5;
            int lo = static_cast<int>(std::floor(s));
            double frac = s - lo;
            if (lo < 0) {
                lo = 0;
                frac = 0.0;
            }
            int hi = lo + 1;
            if (hi > in - 1) {
                hi = in - 1;
                frac = 0.0;
            }
            i0[o] = lo;
            i1[o] = hi;
            t[o] = frac;
        }
        return std::make_pair(std::make_pair(i0, i1), t);
    };
    auto [hy, ty] = make_taps(H, OH);
    auto [hx, tx] = make_taps(W, OW);
    const auto& y0 = hy.first;
    const auto& y1 = hy.second;
    const auto& x0 = hx.first;
    const auto& x1 = hx.second;

    const auto& xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(N) * C * OH * OW);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* img = &xv[(static_cast<std::size_t>(n) * C + c) * H * W];
            double* oimg = &out[(static_cast<std::size_t>(n) * C + c) * OH * OW];
            for (int oy = 0; oy < OH; ++oy) {
                const double wy = ty[oy];
                const double* r0 = &img[static_cast<std::size_t>(y0[oy]) * W];
                const double* r1 = &img[static_cast<std::size_t>(y1[oy]) * W];
                double* orow = &oimg[static_cast<std::size_t>(oy) * OW];
                for (int ox = 0; ox < OW; ++ox) {
                    const double wx = tx[ox];
                    const double a = r0[x0[ox]] * (1 - wx) + r0[x1[ox]] * wx;
                    const double b = r1[x0[ox]] * (1 - wx) + r1[x1[ox]] * wx;
                    orow[ox] = a * (1 - wy) + b * wy;
                }
            }
        }
    }
    NodePtr xn = x.node();
    auto bwd = [xn, N, C, H, W, OH, OW, y0, y1, ty, x0, x1, tx](const TensorNode& o) {
        xn->ensure_grad();
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                double* dimg = &xn->grad[(static_cast<std::size_t>(n) * C + c) * H * W];
                const double* gimg = &o.grad[(static_cast<std::size_t>(n) * C + c) * OH * OW];
                for (int oy = 0; oy < OH; ++oy) {
                    const double wy = ty[oy];
                    double* d0 = &dimg[static_cast<std::size_t>(y0[oy]) * W];
                    double* d1 = &dimg[static_cast<std::size_t>(y1[oy]) * W];
                    const double* grow = &gimg[static_cast<std::size_t>(oy) * OW];
                    for (int ox = 0; ox < OW; ++ox) {
                        const double wx = tx[ox];
                        const double g = grow[ox];
                        d0[x0[ox]] += g * (1 - wx) * (1 - wy);
                        d0[x1[ox]] += g * wx * (1 - wy);
                        d1[x0[ox]] += g * (1 - wx) * wy;
                        d1[x1[ox]] += g * wx * wy;
                    }
                }
            }
        }
    };
    return make_result({N, C, OH, OW}, std::move(out), {xn}, std::move(bwd));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode& o) {
        if (an->requires_grad) an->accumulate_grad(o.grad);
        if (bn->requires_grad) bn->accumulate_grad(o.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode& o) {
        if (an->requires_grad) an->accumulate_grad(o.grad);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                an->grad[i] += o.grad[i] * bn->values[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                bn->grad[i] += o.grad[i] * an->values[i];
            }
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                an->grad[i] += o.grad[i] / bn->values[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const double bv_i = bn->values[i];
                bn->grad[i] -= o.grad[i] * an->values[i] / (bv_i * bv_i);
            }
        }
    });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn, c](const TensorNode& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * c;
    });
}

Tensor relu(const Tensor& x) { return unary_op(x, relu_fwd, relu_dfwd); }
Tensor gelu(const Tensor& x) { return unary_op(x, gelu_fwd, gelu_dfwd); }
Tensor sigmoid(const Tensor& x) { return unary_op(x, sigmoid_fwd, sigmoid_dfwd); }
Tensor softplus(const Tensor& x) { return unary_op(x, softplus_fwd, softplus_dfwd); }
Tensor exp(const Tensor& x) { return unary_op(x, exp_fwd, exp_dfwd); }
Tensor log(const Tensor& x) { return unary_op(x, log_fwd, log_dfwd); }

Tensor pow_scalar(const Tensor& x, double exponent) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::pow(xv[i], exponent);
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn, exponent](const TensorNode& o) {
        if (exponent == 0.0) return;  // constant 1
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            xn->grad[i] += o.grad[i] * exponent * std::pow(xn->values[i], exponent - 1.0);
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, static_cast<int>(x.shape().size()), "softmax");
    const AxisSplit s = split_axis(x.shape(), ax);
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t j = 0; j < s.inner; ++j) {
            const std::size_t base = static_cast<std::size_t>(o) * s.len * s.inner + j;
            double mx = xv[base];
            for (std::int64_t i = 1; i < s.len; ++i) {
                mx = std::max(mx, xv[base + static_cast<std::size_t>(i) * s.inner]);
            }
            double z = 0.0;
            for (std::int64_t i = 0; i < s.len; ++i) {
                const std::size_t idx = base + static_cast<std::size_t>(i) * s.inner;
                out[idx] = std::exp(xv[idx] - mx);
                z += out[idx];
            }
            for (std::int64_t i = 0; i < s.len; ++i) {
                out[base + static_cast<std::size_t>(i) * s.inner] /= z;
            }
        }
    }
    NodePtr xn = x.node();
    auto outv = out;  // backward needs the softmax values
    Tensor result = make_result(x.shape(), std::move(out), {xn}, [xn, s, outv](const TensorNode& o) {
        xn->ensure_grad();
        for (std::int64_t ot = 0; ot < s.outer; ++ot) {
            for (std::int64_t j = 0; j < s.inner; ++j) {
                const std::size_t base = static_cast<std::size_t>(ot) * s.len * s.inner + j;
                double dot = 0.0;
                for (std::int64_t i = 0; i < s.len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * s.inner;
                    dot += o.grad[idx] * outv[idx];
                }
                for (std::int64_t i = 0; i < s.len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * s.inner;
                    xn->grad[idx] += outv[idx] * (o.grad[idx] - dot);
                }
            }
        }
    });
    return result;
}

Tensor layernorm(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, static_cast<int>(x.shape().size()), "layernorm");
    const AxisSplit s = split_axis(x.shape(), ax);
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    std::vector<double> inv_std(static_cast<std::size_t>(s.outer * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t j = 0; j < s.inner; ++j) {
            const std::size_t base = static_cast<std::size_t>(o) * s.len * s.inner + j;
            double mu = 0.0;
            for (std::int64_t i = 0; i < s.len; ++i) {
                mu += xv[base + static_cast<std::size_t>(i) * s.inner];
            }
            mu /= static_cast<double>(s.len);
            double var = 0.0;
            for (std::int64_t i = 0; i < s.len; ++i) {
                const double d = xv[base + static_cast<std::size_t>(i) * s.inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(s.len);
            const double is = 1.0 / std::sqrt(var + kLayerNormEps);
            inv_std[static_cast<std::size_t>(o * s.inner + j)] = is;
            for (std::int64_t i = 0; i < s.len; ++i) {
                const std::size_t idx = base + static_cast<std::size_t>(i) * s.inner;
                out[idx] = (xv[idx] - mu) * is;
            }
        }
    }
    NodePtr xn = x.node();
    auto outv = out;
    auto bwd = [xn, s, outv, inv_std](const TensorNode& o) {
        xn->ensure_grad();
        const double n = static_cast<double>(s.len);
        for (std::int64_t ot = 0; ot < s.outer; ++ot) {
            for (std::int64_t j = 0; j < s.inner; ++j) {
                const std::size_t base = static_cast<std::size_t>(ot) * s.len * s.inner + j;
                const double is = inv_std[static_cast<std::size_t>(ot * s.inner + j)];
                double gsum = 0.0, gysum = 0.0;
                for (std::int64_t i = 0; i < s.len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * s.inner;
                    gsum += o.grad[idx];
                    gysum += o.grad[idx] * outv[idx];
                }
                for (std::int64_t i = 0; i < s.len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * s.inner;
                    xn->grad[idx] +=
                        is * (o.grad[idx] - gsum / n - outv[idx] * gysum / n);
                }
            }
        }
    };
    return make_result(x.shape(), std::move(out), {xn}, std::move(bwd));
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    NodePtr xn = x.node();
    return make_result(std::move(shape), x.values(), {xn},
                       [xn](const TensorNode& o) { xn->accumulate_grad(o.grad); });
}

Tensor transpose(const Tensor& x) {
    if (x.shape().size() != 2) {
        throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(x.shape()));
    }
    const int r = x.shape()[0], c = x.shape()[1];
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            out[static_cast<std::size_t>(j) * r + i] = xv[static_cast<std::size_t>(i) * c + j];
        }
    }
    NodePtr xn = x.node();
    return make_result({c, r}, std::move(out), {xn}, [xn, r, c](const TensorNode& o) {
        xn->ensure_grad();
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                xn->grad[static_cast<std::size_t>(i) * c + j] +=
                    o.grad[static_cast<std::size_t>(j) * r + i];
            }
        }
    });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const int ax = normalize_axis(axis, static_cast<int>(x.shape().size()), "slice");
    if (start < 0 || len <= 0 || start + len > x.shape()[ax]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
    }
    const AxisSplit s = split_axis(x.shape(), ax);
    std::vector<int> oshape = x.shape();
    oshape[ax] = len;
    const auto& xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(s.outer) * len * s.inner);
    for (std::int64_t o = 0; o < s.outer; ++o) {
        const std::size_t src = (static_cast<std::size_t>(o) * s.len + start) * s.inner;
        const std::size_t dst = static_cast<std::size_t>(o) * len * s.inner;
        std::copy_n(&xv[src], static_cast<std::size_t>(len) * s.inner, &out[dst]);
    }
    NodePtr xn = x.node();
    return make_result(std::move(oshape), std::move(out), {xn},
                       [xn, s, start, len](const TensorNode& o) {
                           xn->ensure_grad();
                           for (std::int64_t ot = 0; ot < s.outer; ++ot) {
                               const std::size_t dst =
                                   (static_cast<std::size_t>(ot) * s.len + start) * s.inner;
                               const std::size_t src = static_cast<std::size_t>(ot) * len * s.inner;
                               for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * s.inner;
                                    ++i) {
                                   xn->grad[dst + i] += o.grad[src + i];
                               }
                           }
                       });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int ax = normalize_axis(axis, static_cast<int>(parts[0].shape().size()), "concat");
    std::vector<int> oshape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        std::vector<int> ps = p.shape();
        ps[ax] = oshape[ax];
        if (ps != oshape) {
            throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        total += p.shape()[ax];
    }
    oshape[ax] = total;
    const AxisSplit s = split_axis(oshape, ax);
    std::vector<double> out(static_cast<std::size_t>(shape_numel(oshape)));
    std::vector<NodePtr> ns;
    std::vector<int> lens;
    ns.reserve(parts.size());
    int off = 0;
    for (const auto& p : parts) {
        const int len = p.shape()[ax];
        const auto& pv = p.values();
        for (std::int64_t o = 0; o < s.outer; ++o) {
            const std::size_t dst = (static_cast<std::size_t>(o) * total + off) * s.inner;
            const std::size_t src = static_cast<std::size_t>(o) * len * s.inner;
            std::copy_n(&pv[src], static_cast<std::size_t>(len) * s.inner, &out[dst]);
        }
        ns.push_back(p.node());
        lens.push_back(len);
        off += len;
    }
    auto bwd = [ns, lens, s, total](const TensorNode& o) {
        int offset = 0;
        for (std::size_t pi = 0; pi < ns.size(); ++pi) {
            const int len = lens[pi];
            if (ns[pi]->requires_grad) {
                ns[pi]->ensure_grad();
                for (std::int64_t ot = 0; ot < s.outer; ++ot) {
                    const std::size_t src =
                        (static_cast<std::size_t>(ot) * total + offset) * s.inner;
                    const std::size_t dst = static_cast<std::size_t>(ot) * len * s.inner;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * s.inner; ++i) {
                        ns[pi]->grad[dst + i] += o.grad[src + i];
                    }
                }
            }
            offset += len;
        }
    };
    return make_result(std::move(oshape), std::move(out), std::move(ns), std::move(bwd));
}

Tensor mean(const Tensor& x) {
    const auto& xv = x.values();
    double acc = 0.0;
    for (const double v : xv) acc += v;
    const double n = static_cast<double>(xv.size());
    NodePtr xn = x.node();
    return make_result({1}, {acc / n}, {xn}, [xn, n](const TensorNode& o) {
        xn->ensure_grad();
        const double g = o.grad[0] / n;
        for (double& d : xn->grad) d += g;
    });
}

Tensor sum(const Tensor& x) {
    const auto& xv = x.values();
    double acc = 0.0;
    for (const double v : xv) acc += v;
    NodePtr xn = x.node();
    return make_result({1}, {acc}, {xn}, [xn](const TensorNode& o) {
        xn->ensure_grad();
        const double g = o.grad[0];
        for (double& d : xn->grad) d += g;
    });
}

namespace {

void check_rowvec(const Tensor& x, const Tensor& v, const char* op) {
    if (x.shape().empty() || v.shape().size() != 1 || v.shape()[0] != x.shape().back()) {
        throw ShapeError(std::string(op) + ": vector " + shape_str(v.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check_rowvec(x, v, "add_rowvec");
    const int k = x.shape().back();
    const std::int64_t rows = x.numel() / k;
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * k;
        for (int j = 0; j < k; ++j) out[base + j] = xv[base + j] + vv[j];
    }
    NodePtr xn = x.node(), vn = v.node();
    return make_result(x.shape(), std::move(out), {xn, vn}, [xn, vn, rows, k](const TensorNode& o) {
        if (xn->requires_grad) xn->accumulate_grad(o.grad);
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * k;
                for (int j = 0; j < k; ++j) vn->grad[j] += o.grad[base + j];
            }
        }
    });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    check_rowvec(x, v, "mul_rowvec");
    const int k = x.shape().back();
    const std::int64_t rows = x.numel() / k;
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * k;
        for (int j = 0; j < k; ++j) out[base + j] = xv[base + j] * vv[j];
    }
    NodePtr xn = x.node(), vn = v.node();
    return make_result(x.shape(), std::move(out), {xn, vn}, [xn, vn, rows, k](const TensorNode& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * k;
                for (int j = 0; j < k; ++j) xn->grad[base + j] += o.grad[base + j] * vn->values[j];
            }
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * k;
                for (int j = 0; j < k; ++j) vn->grad[j] += o.grad[base + j] * xn->values[base + j];
            }
        }
    });
}

}  // namespace peftlab
