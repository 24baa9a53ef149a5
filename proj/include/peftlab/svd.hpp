#pragma once

#include <cstdint>
#include <vector>

namespace peftlab {

// Plain row-major matrix for decomposition work outside the autodiff graph.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {}

    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

Mat mat_mul(const Mat& a, const Mat& b);
Mat mat_transpose(const Mat& m);
double frobenius_norm(const Mat& m);

// Thin decomposition W = U * diag(sigma) * V^T with r = min(rows, cols).
struct SvdResult {
    Mat u;                      // rows x r, orthonormal columns
    std::vector<double> sigma;  // length r, non-negative, non-increasing
    Mat v;                      // cols x r, orthonormal columns
};

// One-sided Jacobi on the rows of the wide orientation (the tall case is
// solved on the transpose and the factors swapped back). Deterministic:
// fixed cyclic sweep order, sign fixed by making the largest-magnitude
// entry of each left vector positive. Converges when the largest
// normalized row-pair dot product drops below 1e-12; gives up after 60
// sweeps with a ConvergenceError that reports the residual.
SvdResult svd(const Mat& w);

Mat reconstruct(const SvdResult& r);

// max |M^T M - I|
double orthonormality_defect(const Mat& m);

}  // namespace peftlab
