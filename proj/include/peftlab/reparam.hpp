#pragma once

#include <string>
#include <vector>

#include "peftlab/svd.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab {

enum class ReparamMode { CoefficientsOnly, BasesOnly, Both };

std::string mode_name(ReparamMode mode);
ReparamMode parse_mode(const std::string& name);

// Matricization rule: conv weights O x C x kh x kw flatten to
// O x (C*kh*kw); dense matrices pass through. The result is oriented so
// rows <= cols, with `transposed` recording whether a flip was needed.
// Round trips are bit-exact.
struct Matricized {
    Mat m;
    std::vector<int> orig_shape;
    bool transposed = false;
};

Matricized matricize(const Tensor& w);
Tensor dematricize(const Mat& m, const std::vector<int>& orig_shape, bool transposed);

Mat to_mat(const Tensor& t);
Tensor to_tensor(const Mat& m, bool requires_grad = false);

// A weight stored as frozen singular bases plus trainable coefficients:
// W = U diag(p) V^T in the matricized orientation, p seeded with the
// singular values of the source weight. Which of {p, U, V} trains is the
// mode; coefficients are left unconstrained during training (they may go
// negative or lose sortedness).
struct SvdReparam {
    Tensor u;  // d x d
    Tensor p;  // d
    Tensor v;  // k x d
    ReparamMode mode = ReparamMode::CoefficientsOnly;
    std::vector<int> orig_shape;
    bool transposed = false;

    int dim_d() const { return u.shape()[0]; }
    int dim_k() const { return v.shape()[0]; }

    // Rebuilds the weight on the tape so gradients flow to whichever
    // factors the mode marks trainable.
    Tensor weight() const;

    std::int64_t trainable_count() const;

    std::vector<Tensor> trainable_tensors() const;
    std::vector<Tensor> frozen_tensors() const;
};

SvdReparam decompose(const Tensor& w, ReparamMode mode);

// Closed-form gradient rules in the matricized orientation, used as the
// independent route against the tape: dL/dp = diag(U^T G V),
// dL/dU = G V diag(p), dL/dV = G^T U diag(p).
std::vector<double> grad_coefficients(const Mat& weight_grad, const SvdReparam& rp);
std::pair<Mat, Mat> grad_bases(const Mat& weight_grad, const SvdReparam& rp);

}  // namespace peftlab
