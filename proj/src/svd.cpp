#include "peftlab/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "peftlab/errors.hpp"

namespace peftlab {

namespace {

constexpr double kConvergenceTol = 1e-12;
constexpr int kMaxSweeps = 60;

// Core one-sided Jacobi for d <= k. Rotates row pairs of a working copy
// until all rows are mutually orthogonal, accumulating the rotations in q;
// then W = q^T * diag(row norms) * (normalized rows)^T.
SvdResult svd_wide(const Mat& w) {
    const int d = w.rows, k = w.cols;
    Mat a = w;
    Mat q(d, d);
    for (int i = 0; i < d; ++i) q.at(i, i) = 1.0;

    double residual = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        residual = 0.0;
        for (int p = 0; p < d - 1; ++p) {
            for (int r = p + 1; r < d; ++r) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                double* rp = &a.a[static_cast<std::size_t>(p) * k];
                double* rr = &a.a[static_cast<std::size_t>(r) * k];
                for (int j = 0; j < k; ++j) {
                    alpha += rp[j] * rp[j];
                    beta += rr[j] * rr[j];
                    gamma += rp[j] * rr[j];
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                const double norm_gamma = std::abs(gamma) / std::sqrt(alpha * beta);
                residual = std::max(residual, norm_gamma);
                if (norm_gamma <= kConvergenceTol) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int j = 0; j < k; ++j) {
                    const double vp = rp[j], vr = rr[j];
                    rp[j] = c * vp - s * vr;
                    rr[j] = s * vp + c * vr;
                }
                double* qp = &q.a[static_cast<std::size_t>(p) * d];
                double* qr = &q.a[static_cast<std::size_t>(r) * d];
                for (int j = 0; j < d; ++j) {
                    const double vp = qp[j], vr = qr[j];
                    qp[j] = c * vp - s * vr;
                    qr[j] = s * vp + c * vr;
                }
            }
        }
        converged = residual <= kConvergenceTol;
    }
    if (!converged) {
        throw ConvergenceError("svd did not converge after " + std::to_string(kMaxSweeps) +
                               " sweeps; normalized off-diagonal residual " +
                               std::to_string(residual));
    }

    // Row norms are the singular values; tiny rows are snapped to zero so
    // their (meaningless) directions never leak into V.
    double scale = 0.0;
    for (const double v : a.a) scale = std::max(scale, std::abs(v));
    const double zero_cut = scale * 1e-14;

    std::vector<double> sigma(d);
    Mat v(k, d);
    std::vector<bool> filled(d, false);
    for (int i = 0; i < d; ++i) {
        double norm = 0.0;
        for (int j = 0; j < k; ++j) norm += a.at(i, j) * a.at(i, j);
        norm = std::sqrt(norm);
        if (norm <= zero_cut) {
            sigma[i] = 0.0;
            continue;
        }
        sigma[i] = norm;
        for (int j = 0; j < k; ++j) v.at(j, i) = a.at(i, j) / norm;
        filled[i] = true;
    }

    // Complete V's null-space columns from canonical basis vectors so
    // V^T V = I even for rank-deficient input.
    for (int i = 0; i < d; ++i) {
        if (filled[i]) continue;
        for (int e = 0; e < k; ++e) {
            std::vector<double> cand(k, 0.0);
            cand[e] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {  // twice-is-enough reorthogonalization
                for (int c = 0; c < d; ++c) {
                    if (!filled[c]) continue;
                    double dot = 0.0;
                    for (int j = 0; j < k; ++j) dot += cand[j] * v.at(j, c);
                    for (int j = 0; j < k; ++j) cand[j] -= dot * v.at(j, c);
                }
            }
            double norm = 0.0;
            for (const double cv : cand) norm += cv * cv;
            norm = std::sqrt(norm);
            if (norm > 1e-6) {
                for (int j = 0; j < k; ++j) v.at(j, i) = cand[j] / norm;
                filled[i] = true;
                break;
            }
        }
    }

    // Sort non-increasing; ties keep sweep order.
    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&sigma](int x, int y) { return sigma[x] > sigma[y]; });

    SvdResult res;
    res.u = Mat(d, d);
    res.v = Mat(k, d);
    res.sigma.resize(d);
    for (int i = 0; i < d; ++i) {
        const int src = order[i];
        res.sigma[i] = sigma[src];
        for (int j = 0; j < d; ++j) res.u.at(j, i) = q.at(src, j);  // U = Q^T
        for (int j = 0; j < k; ++j) res.v.at(j, i) = v.at(j, src);
    }

    // Sign convention: largest-magnitude entry of each left vector positive.
    for (int i = 0; i < d; ++i) {
        int arg = 0;
        double best = std::abs(res.u.at(0, i));
        for (int j = 1; j < d; ++j) {
            const double m = std::abs(res.u.at(j, i));
            if (m > best) {
                best = m;
                arg = j;
            }
        }
        if (res.u.at(arg, i) < 0.0) {
            for (int j = 0; j < d; ++j) res.u.at(j, i) = -res.u.at(j, i);
            for (int j = 0; j < k; ++j) res.v.at(j, i) = -res.v.at(j, i);
        }
    }
    return res;
}

}  // namespace

Mat mat_mul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) {
        throw ShapeError("mat_mul: incompatible [" + std::to_string(a.rows) + ", " +
                         std::to_string(a.cols) + "] x [" + std::to_string(b.rows) + ", " +
                         std::to_string(b.cols) + "]");
    }
    Mat out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int t = 0; t < a.cols; ++t) {
            const double av = a.at(i, t);
            if (av == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) out.at(i, j) += av * b.at(t, j);
        }
    }
    return out;
}

Mat mat_transpose(const Mat& m) {
    Mat out(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    }
    return out;
}

double frobenius_norm(const Mat& m) {
    double acc = 0.0;
    for (const double v : m.a) acc += v * v;
    return std::sqrt(acc);
}

SvdResult svd(const Mat& w) {
    if (w.rows <= 0 || w.cols <= 0) throw ShapeError("svd: empty matrix");
    for (const double v : w.a) {
        if (!std::isfinite(v)) throw NumericError("svd: non-finite entry in input");
    }
    if (w.rows <= w.cols) return svd_wide(w);
    // Tall input: decompose the transpose and swap the factor roles.
    SvdResult t = svd_wide(mat_transpose(w));
    SvdResult res;
    res.u = std::move(t.v);
    res.v = std::move(t.u);
    res.sigma = std::move(t.sigma);
    return res;
}

Mat reconstruct(const SvdResult& r) {
    const int d = r.u.rows, rank = r.u.cols, k = r.v.rows;
    Mat out(d, k);
    for (int i = 0; i < d; ++i) {
        for (int t = 0; t < rank; ++t) {
            const double us = r.u.at(i, t) * r.sigma[t];
            if (us == 0.0) continue;
            for (int j = 0; j < k; ++j) out.at(i, j) += us * r.v.at(j, t);
        }
    }
    return out;
}

double orthonormality_defect(const Mat& m) {
    double worst = 0.0;
    for (int i = 0; i < m.cols; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            double dot = 0.0;
            for (int t = 0; t < m.rows; ++t) dot += m.at(t, i) * m.at(t, j);
            const double target = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(dot - target));
        }
    }
    return worst;
}

}  // namespace peftlab
