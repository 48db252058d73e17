#pragma once

// Similarity and normalization primitives shared by every loss.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "san/errors.hpp"

namespace san {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatD = Mat<double>;
using VecD = Vec<double>;

/// Degrees of freedom of the Student-t kernel.
struct KernelParams {
    double nu = 1.0;

    explicit KernelParams(double nu_ = 1.0) : nu(nu_) {
        if (!(nu > 0.0) || !std::isfinite(nu)) throw InvalidArgument("KernelParams: nu must be finite and > 0");
    }

    /// Gamma((nu+1)/2) / (sqrt(nu pi) Gamma(nu/2)), the kernel value at zero distance.
    double normalizer() const {
        return std::exp(std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0)) / std::sqrt(nu * std::numbers::pi);
    }
};

struct TopNConfig {
    int n = 20;

    explicit TopNConfig(int n_ = 20) : n(n_) {
        if (n < 1) throw InvalidArgument("TopNConfig: n must be >= 1");
    }

    int effective(Eigen::Index count) const { return static_cast<int>(std::min<Eigen::Index>(n, count)); }
};

/// Student-t density in squared-distance form. Takes ||a-b||^2 directly.
template <typename T>
T t_kernel(T dist_sq, const KernelParams& params) {
    if (!std::isfinite(static_cast<double>(dist_sq))) throw InvalidArgument("t_kernel: non-finite distance");
    if (dist_sq < T(0)) throw InvalidArgument("t_kernel: negative squared distance");
    const T nu = static_cast<T>(params.nu);
    return static_cast<T>(params.normalizer()) * std::pow(T(1) + dist_sq / nu, -(nu + T(1)) / T(2));
}

/// d kappa / d dist_sq, given the already evaluated kernel value.
template <typename T>
T t_kernel_grad(T dist_sq, T kernel_value, const KernelParams& params) {
    const T nu = static_cast<T>(params.nu);
    return -kernel_value * (nu + T(1)) / (T(2) * nu) / (T(1) + dist_sq / nu);
}

template <typename T>
void require_finite(const Mat<T>& x, const char* who) {
    if (!x.allFinite()) throw InvalidArgument(std::string(who) + ": non-finite entries");
}

/// Squared Euclidean distances between all rows of X. Exact zeros on the diagonal.
template <typename T>
Mat<T> pairwise_sq_dist(const Mat<T>& x) {
    require_finite(x, "pairwise_sq_dist");
    const Eigen::Index m = x.rows();
    Mat<T> d(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        d(i, i) = T(0);
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const T v = (x.row(i) - x.row(j)).squaredNorm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

/// Variant taking ragged rows; only here the dimension check can fail.
inline MatD pairwise_sq_dist(std::span<const std::vector<double>> rows) {
    if (rows.empty()) return MatD(0, 0);
    const std::size_t dim = rows.front().size();
    MatD x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim) throw InvalidArgument("pairwise_sq_dist: rows have unequal dimension");
        for (std::size_t k = 0; k < dim; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return pairwise_sq_dist<double>(x);
}

template <typename T>
Mat<T> kernel_matrix(const Mat<T>& x, const KernelParams& params) {
    Mat<T> d = pairwise_sq_dist(x);
    return d.unaryExpr([&](T v) { return t_kernel(v, params); });
}

template <typename A, typename B>
auto cosine_sim(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    using T = typename A::Scalar;
    if (a.size() != b.size()) throw InvalidArgument("cosine_sim: dimension mismatch");
    const T na = a.norm();
    const T nb = b.norm();
    if (na == T(0) || nb == T(0)) throw DegenerateInput("cosine_sim: zero-norm vector");
    return std::clamp<T>(a.dot(b) / (na * nb), T(-1), T(1));
}

/// Gradient of cos(a, b) with respect to a.
template <typename A, typename B>
auto cosine_sim_grad_a(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    using T = typename A::Scalar;
    const T na = a.norm();
    const T nb = b.norm();
    if (na == T(0) || nb == T(0)) throw DegenerateInput("cosine_sim: zero-norm vector");
    const T s = a.dot(b) / (na * nb);
    Vec<T> g = b / (na * nb) - s * a / (na * na);
    return g;
}

/// Indices of the n largest entries; ties go to the lower index.
template <typename T>
std::vector<Eigen::Index> top_n_indices(const Vec<T>& logits, const TopNConfig& cfg) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(logits.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return logits(a) > logits(b); });
    idx.resize(static_cast<std::size_t>(cfg.effective(logits.size())));
    return idx;
}

/// Plain row softmax with max shift.
template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
    Vec<T> e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
}

/// Softmax restricted to the n largest logits; exact zeros elsewhere.
template <typename T>
Vec<T> top_n_softmax(const Vec<T>& logits, const TopNConfig& cfg) {
    if (logits.size() < 1) throw InvalidArgument("top_n_softmax: empty logits");
    if (!logits.allFinite()) throw InvalidArgument("top_n_softmax: non-finite logits");
    // Full support: same arithmetic as softmax, so the two agree bit for bit.
    if (cfg.n >= logits.size()) return softmax(logits);
    const auto sel = top_n_indices(logits, cfg);
    const T top = logits(sel.front());
    Vec<T> out = Vec<T>::Zero(logits.size());
    T total = T(0);
    for (Eigen::Index i : sel) {
        out(i) = std::exp(logits(i) - top);
        total += out(i);
    }
    for (Eigen::Index i : sel) out(i) /= total;
    return out;
}

/// Vector-Jacobian product of top_n_softmax with the selection held constant.
/// `probs` is the forward output; zero entries outside the support get zero gradient.
template <typename T>
Vec<T> top_n_softmax_backward(const Vec<T>& probs, const Vec<T>& grad_probs) {
    const T inner = probs.dot(grad_probs);
    return (probs.array() * (grad_probs.array() - inner)).matrix();
}

}  // namespace san
