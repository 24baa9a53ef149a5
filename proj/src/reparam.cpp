#include "peftlab/reparam.hpp"

#include <cmath>

#include "peftlab/errors.hpp"
#include "peftlab/ops.hpp"

namespace peftlab {

std::string mode_name(ReparamMode mode) {
    switch (mode) {
        case ReparamMode::CoefficientsOnly: return "coeff";
        case ReparamMode::BasesOnly: return "bases";
        case ReparamMode::Both: return "both";
    }
    throw ContractError("unknown reparam mode");
}

ReparamMode parse_mode(const std::string& name) {
    if (name == "coeff") return ReparamMode::CoefficientsOnly;
    if (name == "bases") return ReparamMode::BasesOnly;
    if (name == "both") return ReparamMode::Both;
    throw ConfigError("unknown reparam mode '" + name + "' (expected coeff|bases|both)");
}

Mat to_mat(const Tensor& t) {
    if (t.shape().size() != 2) {
        throw ShapeError("to_mat: expected 2-D tensor, got " + shape_str(t.shape()));
    }
    return Mat(t.shape()[0], t.shape()[1], t.values());
}

Tensor to_tensor(const Mat& m, bool requires_grad) {
    return Tensor::from_data({m.rows, m.cols}, m.a, requires_grad);
}

Matricized matricize(const Tensor& w) {
    const auto& s = w.shape();
    Matricized out;
    out.orig_shape = s;
    int rows, cols;
    if (s.size() == 2) {
        rows = s[0];
        cols = s[1];
    } else if (s.size() == 4) {
        rows = s[0];
        cols = s[1] * s[2] * s[3];
    } else {
        throw ShapeError("matricize: expected a dense or conv weight, got " + shape_str(s));
    }
    Mat m(rows, cols, w.values());
    if (rows > cols) {
        out.m = mat_transpose(m);
        out.transposed = true;
    } else {
        out.m = std::move(m);
    }
    return out;
}

Tensor dematricize(const Mat& m, const std::vector<int>& orig_shape, bool transposed) {
    const Mat restored = transposed ? mat_transpose(m) : m;
    if (shape_numel(orig_shape) != static_cast<std::int64_t>(restored.a.size())) {
        throw ShapeError("dematricize: element count mismatch for " + shape_str(orig_shape));
    }
    return Tensor::from_data(orig_shape, restored.a);
}

SvdReparam decompose(const Tensor& w, ReparamMode mode) {
    Matricized mz = matricize(w);
    SvdResult r = svd(mz.m);

    SvdReparam rp;
    rp.mode = mode;
    rp.orig_shape = mz.orig_shape;
    rp.transposed = mz.transposed;
    rp.u = to_tensor(r.u);
    rp.p = Tensor::from_data({static_cast<int>(r.sigma.size())}, r.sigma);
    rp.v = to_tensor(r.v);
    rp.u.set_requires_grad(mode != ReparamMode::CoefficientsOnly);
    rp.v.set_requires_grad(mode != ReparamMode::CoefficientsOnly);
    rp.p.set_requires_grad(mode != ReparamMode::BasesOnly);

    // Construction invariant: the reparam must reproduce the source weight.
    Mat back = reconstruct(r);
    double num = 0.0;
    for (std::size_t i = 0; i < back.a.size(); ++i) {
        const double d = back.a[i] - mz.m.a[i];
        num += d * d;
    }
    const double rel = std::sqrt(num) / std::max(frobenius_norm(mz.m), 1e-300);
    if (rel >= 1e-10) {
        throw NumericError("decompose: reconstruction residual " + std::to_string(rel) +
                           " exceeds 1e-10");
    }
    return rp;
}

Tensor SvdReparam::weight() const {
    Tensor w2d = matmul(mul_rowvec(u, p), transpose(v));
    if (transposed) w2d = transpose(w2d);
    return reshape(w2d, orig_shape);
}

std::int64_t SvdReparam::trainable_count() const {
    const std::int64_t d = dim_d(), k = dim_k();
    switch (mode) {
        case ReparamMode::CoefficientsOnly: return d;
        case ReparamMode::BasesOnly: return d * d + k * d;
        case ReparamMode::Both: return d * d + d + k * d;
    }
    throw ContractError("unknown reparam mode");
}

std::vector<Tensor> SvdReparam::trainable_tensors() const {
    switch (mode) {
        case ReparamMode::CoefficientsOnly: return {p};
        case ReparamMode::BasesOnly: return {u, v};
        case ReparamMode::Both: return {u, p, v};
    }
    throw ContractError("unknown reparam mode");
}

std::vector<Tensor> SvdReparam::frozen_tensors() const {
    switch (mode) {
        case ReparamMode::CoefficientsOnly: return {u, v};
        case ReparamMode::BasesOnly: return {p};
        case ReparamMode::Both: return {};
    }
    throw ContractError("unknown reparam mode");
}

std::vector<double> grad_coefficients(const Mat& weight_grad, const SvdReparam& rp) {
    const int d = rp.dim_d(), k = rp.dim_k();
    if (weight_grad.rows != d || weight_grad.cols != k) {
        throw ShapeError("grad_coefficients: gradient [" + std::to_string(weight_grad.rows) +
                         ", " + std::to_string(weight_grad.cols) + "] does not match reparam [" +
                         std::to_string(d) + ", " + std::to_string(k) + "]");
    }
    // diag(U^T G V): per coefficient i, u_i^T G v_i.
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    const auto& uv = rp.u.values();
    const auto& vv = rp.v.values();
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int r = 0; r < d; ++r) {
            const double ui = uv[static_cast<std::size_t>(r) * d + i];
            if (ui == 0.0) continue;
            double inner = 0.0;
            for (int c = 0; c < k; ++c) {
                inner += weight_grad.at(r, c) * vv[static_cast<std::size_t>(c) * d + i];
            }
            acc += ui * inner;
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

std::pair<Mat, Mat> grad_bases(const Mat& weight_grad, const SvdReparam& rp) {
    const int d = rp.dim_d(), k = rp.dim_k();
    if (weight_grad.rows != d || weight_grad.cols != k) {
        throw ShapeError("grad_bases: gradient [" + std::to_string(weight_grad.rows) + ", " +
                         std::to_string(weight_grad.cols) + "] does not match reparam [" +
                         std::to_string(d) + ", " + std::to_string(k) + "]");
    }
    Mat vmat(k, d, rp.v.values());
    Mat umat(d, d, rp.u.values());
    Mat gv = mat_mul(weight_grad, vmat);               // d x d
    Mat gtu = mat_mul(mat_transpose(weight_grad), umat);  // k x d
    const auto& pv = rp.p.values();
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) gv.at(i, j) *= pv[static_cast<std::size_t>(j)];
    }
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < d; ++j) gtu.at(i, j) *= pv[static_cast<std::size_t>(j)];
    }
    return {std::move(gv), std::move(gtu)};
}

}  // namespace peftlab
