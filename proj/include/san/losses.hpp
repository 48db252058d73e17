#pragma once

// Training objectives: InfoNCE (positive left out of the denominator by
// default), the binary pair form of contrastive learning, the soft
// contrastive loss, the All-in-One loss, cross-entropy, the one-vs-all
// ablation loss and the combined objective.
//
// Pair sums run over ordered pairs i != j and are divided by the row count m.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "san/core_math.hpp"
#include "san/errors.hpp"

namespace san {

inline constexpr double kDefaultClampEps = 1e-8;

/// Binary, symmetric, zero-diagonal matrix; h(i,j) = 1 iff rows i and j are
/// two views of the same original sample.
class AugmentationRelation {
public:
    AugmentationRelation() = default;

    explicit AugmentationRelation(MatD h) : h_(std::move(h)) { validate(); }

    /// Rows (2i, 2i+1) are views of sample i; every other pair is unrelated.
    static AugmentationRelation consecutive_pairs(Eigen::Index views) {
        if (views % 2 != 0) throw InvalidArgument("AugmentationRelation: view count must be even");
        MatD h = MatD::Zero(views, views);
        for (Eigen::Index i = 0; i + 1 < views; i += 2) {
            h(i, i + 1) = 1.0;
            h(i + 1, i) = 1.0;
        }
        return AugmentationRelation(std::move(h));
    }

    static AugmentationRelation none(Eigen::Index m) { return AugmentationRelation(MatD::Zero(m, m)); }

    Eigen::Index size() const { return h_.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return h_(i, j); }
    const MatD& matrix() const { return h_; }

private:
    void validate() const {
        if (h_.rows() != h_.cols()) throw InvalidArgument("AugmentationRelation: matrix must be square");
        for (Eigen::Index i = 0; i < h_.rows(); ++i) {
            if (h_(i, i) != 0.0) throw InvalidArgument("AugmentationRelation: diagonal must be zero");
            for (Eigen::Index j = 0; j < h_.cols(); ++j) {
                const double v = h_(i, j);
                if (v != 0.0 && v != 1.0) throw InvalidArgument("AugmentationRelation: entries must be 0 or 1");
                if (v != h_(j, i)) throw InvalidArgument("AugmentationRelation: matrix must be symmetric");
            }
        }
    }

    MatD h_;
};

/// Head embeddings z and backbone embeddings (y) for the same rows.
template <typename T>
struct PairBatch {
    Mat<T> z;
    Mat<T> y_emb;
    AugmentationRelation relation;

    PairBatch(Mat<T> z_, Mat<T> y_, AugmentationRelation rel)
        : z(std::move(z_)), y_emb(std::move(y_)), relation(std::move(rel)) {
        if (z.rows() != y_emb.rows()) throw InvalidArgument("PairBatch: z and y_emb row counts differ");
        if (relation.size() != z.rows()) throw InvalidArgument("PairBatch: relation size does not match rows");
        if (!z.allFinite() || !y_emb.allFinite()) throw InvalidArgument("PairBatch: non-finite embeddings");
    }

    Eigen::Index rows() const { return z.rows(); }
};

struct SCLConfig {
    double alpha = 0.5;
    KernelParams nu_y{100.0};
    KernelParams nu_z{10.0};
    double clamp_eps = kDefaultClampEps;
    /// When false, the affinity P is a constant target and no gradient reaches
    /// the backbone through it; only Q is differentiated.
    bool affinity_grad = true;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("SCLConfig: alpha must lie in [0, 1]");
        if (!(clamp_eps > 0.0 && clamp_eps <= 1e-3)) throw InvalidArgument("SCLConfig: clamp_eps must lie in (0, 1e-3]");
    }
};

inline double clamp_unit(double v, double eps) { return std::clamp(v, eps, 1.0 - eps); }

// ---------------------------------------------------------------------------
// Per-pair building blocks.

/// Affinity target for one pair: e^alpha * kappa for augmentation-linked pairs.
inline double pair_affinity_value(double h, double alpha, double kappa_y, double eps) {
    return clamp_unit(h > 0.5 ? std::exp(alpha) * kappa_y : kappa_y, eps);
}

/// -[P log Q + (1-P) log(1-Q)]
inline double scl_pair_loss(double p, double q) { return -(p * std::log(q) + (1.0 - p) * std::log(1.0 - q)); }

/// d/dQ of scl_pair_loss; zero at Q = P.
inline double scl_pair_grad_q(double p, double q) { return -(p / q - (1.0 - p) / (1.0 - q)); }

/// One ordered-pair term of the closed-form CL - SCL difference.
inline double gap_pair_term(double h, double alpha, double kappa_y, double kappa_z) {
    if (!(kappa_z > 0.0 && kappa_z < 1.0)) throw DegenerateInput("scl_cl_gap: log(1/kappa - 1) is singular");
    const double r = 1.0 + (std::exp(alpha) - 1.0) * h;
    return (h - r * kappa_y) * std::log(1.0 / kappa_z - 1.0);
}

// ---------------------------------------------------------------------------
// Contrastive baselines.

/// -s_pos + log sum_k exp(s_neg[k]); `include_positive` adds exp(s_pos) to the
/// denominator as in the common InfoNCE variant.
inline double infonce_loss(double sim_pos, const std::vector<double>& sims_neg, bool include_positive = false) {
    if (sims_neg.empty()) throw InvalidArgument("infonce_loss: at least one negative similarity required");
    double top = include_positive ? sim_pos : sims_neg.front();
    for (double s : sims_neg) top = std::max(top, s);
    double acc = include_positive ? std::exp(sim_pos - top) : 0.0;
    for (double s : sims_neg) acc += std::exp(s - top);
    return -sim_pos + top + std::log(acc);
}

template <typename T>
struct LossGrad {
    T value{};
    Mat<T> grad_z;
    Mat<T> grad_y;  ///< empty unless the loss depends on backbone embeddings differentiably
};

/// Batch InfoNCE over cosine similarities. Each row with at least one
/// relation-1 partner is an anchor (one term per positive partner); its
/// negatives are all relation-0 rows. Mean over anchor terms.
template <typename T>
LossGrad<T> infonce_batch_loss(const Mat<T>& z, const AugmentationRelation& rel, bool include_positive = false) {
    const Eigen::Index m = z.rows();
    if (rel.size() != m) throw InvalidArgument("infonce_batch_loss: relation size mismatch");
    LossGrad<T> out;
    out.grad_z = Mat<T>::Zero(m, z.cols());
    Mat<T> s(m, m);
    std::vector<Vec<T>> unit(static_cast<std::size_t>(m));
    Vec<T> norms(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        norms(i) = z.row(i).norm();
        if (norms(i) == T(0)) throw DegenerateInput("infonce_batch_loss: zero-norm embedding");
        unit[static_cast<std::size_t>(i)] = z.row(i).transpose() / norms(i);
    }
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) s(i, j) = unit[i].dot(unit[j]);

    // dL/dS accumulated, then mapped through the cosine Jacobian.
    Mat<T> ds = Mat<T>::Zero(m, m);
    std::size_t terms = 0;
    T total = T(0);
    for (Eigen::Index i = 0; i < m; ++i) {
        std::vector<Eigen::Index> neg;
        for (Eigen::Index k = 0; k < m; ++k)
            if (k != i && rel(i, k) == 0.0) neg.push_back(k);
        for (Eigen::Index j = 0; j < m; ++j) {
            if (rel(i, j) != 1.0) continue;
            if (neg.empty()) throw InvalidArgument("infonce_batch_loss: anchor without negatives");
            T top = include_positive ? s(i, j) : s(i, neg.front());
            for (auto k : neg) top = std::max(top, s(i, k));
            T denom = include_positive ? std::exp(s(i, j) - top) : T(0);
            for (auto k : neg) denom += std::exp(s(i, k) - top);
            total += -s(i, j) + top + std::log(denom);
            ds(i, j) += T(-1);
            if (include_positive) ds(i, j) += std::exp(s(i, j) - top) / denom;
            for (auto k : neg) ds(i, k) += std::exp(s(i, k) - top) / denom;
            ++terms;
        }
    }
    if (terms == 0) throw InvalidArgument("infonce_batch_loss: relation has no positive pairs");
    const T scale = T(1) / static_cast<T>(terms);
    out.value = total * scale;
    // d s_ij / d z_i = (u_j - s_ij u_i) / |z_i|
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            const T g = ds(i, j) * scale;
            if (g == T(0)) continue;
            out.grad_z.row(i) += g * ((unit[j] - s(i, j) * unit[i]) / norms(i)).transpose();
            out.grad_z.row(j) += g * ((unit[i] - s(i, j) * unit[j]) / norms(j)).transpose();
        }
    }
    return out;
}

enum class DensityMode { ExpDensity, KernelBce };

/// Binary pair form of CL: -sum [H log Q + (1-H) log Qdot] / m.
/// ExpDensity: Q = exp(cos), Qdot = exp(-cos). KernelBce: Q = kappa^{nu_z}, Qdot = 1 - Q.
template <typename T>
LossGrad<T> cl_binary_loss_grad(const PairBatch<T>& batch, DensityMode mode, const SCLConfig& cfg) {
    const Eigen::Index m = batch.rows();
    const auto& z = batch.z;
    LossGrad<T> out;
    out.grad_z = Mat<T>::Zero(m, z.cols());
    const T inv_m = T(1) / static_cast<T>(m);
    T total = T(0);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const T h = static_cast<T>(batch.relation(i, j));
            if (mode == DensityMode::ExpDensity) {
                // -[H s + (1-H)(-s)] = (1 - 2H) s, counted for (i,j) and (j,i).
                const T s = cosine_sim(z.row(i).transpose(), z.row(j).transpose());
                const T coef = T(2) * (T(1) - T(2) * h) * inv_m;
                total += coef * s;
                out.grad_z.row(i) += coef * cosine_sim_grad_a(z.row(i).transpose(), z.row(j).transpose()).transpose();
                out.grad_z.row(j) += coef * cosine_sim_grad_a(z.row(j).transpose(), z.row(i).transpose()).transpose();
            } else {
                const T d2 = (z.row(i) - z.row(j)).squaredNorm();
                const T k = t_kernel(d2, cfg.nu_z);
                const T q = static_cast<T>(clamp_unit(static_cast<double>(k), cfg.clamp_eps));
                if (!(q > T(0) && q < T(1))) throw InvariantViolation("cl_binary_loss: Q outside (0, 1) after clamping");
                total += T(2) * inv_m * static_cast<T>(scl_pair_loss(h, q));
                if (q == k) {
                    const T g = T(2) * inv_m * static_cast<T>(scl_pair_grad_q(h, q)) * t_kernel_grad(d2, k, cfg.nu_z);
                    const auto diff = (z.row(i) - z.row(j)).eval();
                    out.grad_z.row(i) += T(2) * g * diff;
                    out.grad_z.row(j) -= T(2) * g * diff;
                }
            }
        }
    }
    out.value = total;
    return out;
}

template <typename T>
T cl_binary_loss(const PairBatch<T>& batch, DensityMode mode, const SCLConfig& cfg) {
    return cl_binary_loss_grad(batch, mode, cfg).value;
}

// ---------------------------------------------------------------------------
// Soft contrastive loss.

/// P_ij = clamp(e^{alpha H_ij} kappa^{nu_y}(y_i, y_j)). Diagonal left at zero.
template <typename T>
Mat<T> pair_affinity(const PairBatch<T>& batch, const SCLConfig& cfg) {
    const Eigen::Index m = batch.rows();
    Mat<T> p = Mat<T>::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            const T d2 = (batch.y_emb.row(i) - batch.y_emb.row(j)).squaredNorm();
            p(i, j) = static_cast<T>(pair_affinity_value(batch.relation(i, j), cfg.alpha,
                                                         static_cast<double>(t_kernel(d2, cfg.nu_y)), cfg.clamp_eps));
        }
    return p;
}

/// Q_ij = clamp(kappa^{nu_z}(z_i, z_j)). Diagonal left at zero.
template <typename T>
Mat<T> head_density(const Mat<T>& z, const SCLConfig& cfg) {
    const Eigen::Index m = z.rows();
    Mat<T> q = Mat<T>::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            if (i != j)
                q(i, j) = static_cast<T>(
                    clamp_unit(static_cast<double>(t_kernel<T>((z.row(i) - z.row(j)).squaredNorm(), cfg.nu_z)), cfg.clamp_eps));
    return q;
}

/// Soft contrastive loss and its gradient. If `fixed_affinity` is given it is
/// used as P instead of recomputing it from y_emb (and no y gradient is formed).
template <typename T>
LossGrad<T> scl_loss_grad(const PairBatch<T>& batch, const SCLConfig& cfg, const Mat<T>* fixed_affinity = nullptr) {
    cfg.validate();
    const Eigen::Index m = batch.rows();
    const auto& z = batch.z;
    const auto& y = batch.y_emb;
    const bool grad_y = cfg.affinity_grad && fixed_affinity == nullptr;
    LossGrad<T> out;
    out.grad_z = Mat<T>::Zero(m, z.cols());
    if (grad_y) out.grad_y = Mat<T>::Zero(m, y.cols());
    const T inv_m = T(1) / static_cast<T>(m);
    const T e_alpha = static_cast<T>(std::exp(cfg.alpha));
    T total = T(0);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const T h = static_cast<T>(batch.relation(i, j));
            const auto dz = (z.row(i) - z.row(j)).eval();
            const T d2z = dz.squaredNorm();
            const T kz = t_kernel(d2z, cfg.nu_z);
            const T q = static_cast<T>(clamp_unit(static_cast<double>(kz), cfg.clamp_eps));

            T p;
            T ky = T(0), d2y = T(0), raw_p = T(0);
            if (fixed_affinity) {
                p = (*fixed_affinity)(i, j);
            } else {
                d2y = (y.row(i) - y.row(j)).squaredNorm();
                ky = t_kernel(d2y, cfg.nu_y);
                raw_p = (h > T(0.5) ? e_alpha : T(1)) * ky;
                p = static_cast<T>(clamp_unit(static_cast<double>(raw_p), cfg.clamp_eps));
            }
            // (i,j) and (j,i) contribute identical terms.
            const T w = T(2) * inv_m;
            total += w * static_cast<T>(scl_pair_loss(static_cast<double>(p), static_cast<double>(q)));
            if (q == kz) {
                const T g = w * static_cast<T>(scl_pair_grad_q(static_cast<double>(p), static_cast<double>(q))) *
                            t_kernel_grad(d2z, kz, cfg.nu_z);
                out.grad_z.row(i) += T(2) * g * dz;
                out.grad_z.row(j) -= T(2) * g * dz;
            }
            if (grad_y && p == raw_p) {
                const T dl_dp = -(std::log(q) - std::log(T(1) - q));
                const T g = w * dl_dp * (h > T(0.5) ? e_alpha : T(1)) * t_kernel_grad(d2y, ky, cfg.nu_y);
                const auto dy = (y.row(i) - y.row(j)).eval();
                out.grad_y.row(i) += T(2) * g * dy;
                out.grad_y.row(j) -= T(2) * g * dy;
            }
        }
    }
    out.value = total;
    return out;
}

template <typename T>
T scl_loss(const PairBatch<T>& batch, const SCLConfig& cfg) {
    return scl_loss_grad(batch, cfg).value;
}

/// Closed form of cl_binary_loss(KernelBce) - scl_loss:
/// sum_{i != j} (H_ij - P_ij) log(1/Q_ij - 1) / m, with P the clamped affinity
/// (equal to R_ij kappa^{nu_y} whenever e^alpha kappa stays below 1 - eps).
template <typename T>
T scl_cl_gap(const PairBatch<T>& batch, const SCLConfig& cfg) {
    const Mat<T> p = pair_affinity(batch, cfg);
    const Mat<T> q = head_density(batch.z, cfg);
    const Eigen::Index m = batch.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            const double qq = static_cast<double>(q(i, j));
            if (!(qq > 0.0 && qq < 1.0)) throw DegenerateInput("scl_cl_gap: log(1/kappa - 1) is singular");
            total += (batch.relation(i, j) - static_cast<double>(p(i, j))) * std::log(1.0 / qq - 1.0);
        }
    return static_cast<T>(total / static_cast<double>(m));
}

// ---------------------------------------------------------------------------
// Classifier losses.

/// Known-class channels c and "not that class" channels c_tilde after top-n softmax.
template <typename T>
struct AIOProbabilities {
    Vec<T> c;
    Vec<T> c_tilde;

    AIOProbabilities(Vec<T> c_, Vec<T> ct_) : c(std::move(c_)), c_tilde(std::move(ct_)) {
        if (c.size() != c_tilde.size() || c.size() < 1) throw InvalidArgument("AIOProbabilities: channel sizes differ");
        if ((c.array() < T(0)).any() || (c_tilde.array() < T(0)).any())
            throw InvalidArgument("AIOProbabilities: negative probability");
    }

    /// Splits a 2K vector laid out as [c^1..c^K, c_tilde^1..c_tilde^K].
    static AIOProbabilities from_joint(const Vec<T>& joint) {
        if (joint.size() % 2 != 0) throw InvalidArgument("AIOProbabilities: joint vector must have even length");
        const Eigen::Index k = joint.size() / 2;
        return AIOProbabilities(joint.head(k), joint.tail(k));
    }

    Eigen::Index classes() const { return c.size(); }

    Vec<T> joint() const {
        Vec<T> v(2 * c.size());
        v << c, c_tilde;
        return v;
    }
};

template <typename T>
struct AioLossParts {
    T value{};
    /// Gradient with respect to the joint 2K probability vector.
    Vec<T> grad_probs;
};

/// -[log c^y + min_{k != y} log c_tilde^k + log(c^y - max_k c_tilde^k)], each
/// log argument floored at clamp_eps. `label` is 0-based.
template <typename T>
AioLossParts<T> aio_loss_grad(const AIOProbabilities<T>& probs, int label, double clamp_eps = kDefaultClampEps) {
    const Eigen::Index k_count = probs.classes();
    if (k_count < 2) throw InvalidArgument("aio_loss: at least two known classes required");
    if (label < 0 || label >= k_count) throw InvalidArgument("aio_loss: label out of range");
    const T eps = static_cast<T>(clamp_eps);
    const auto& c = probs.c;
    const auto& ct = probs.c_tilde;

    Eigen::Index hard_neg = -1;
    for (Eigen::Index k = 0; k < k_count; ++k) {
        if (k == label) continue;
        if (hard_neg < 0 || ct(k) < ct(hard_neg)) hard_neg = k;
    }
    Eigen::Index top_unknown = 0;
    for (Eigen::Index k = 1; k < k_count; ++k)
        if (ct(k) > ct(top_unknown)) top_unknown = k;

    const T cy = c(label);
    const T margin = cy - ct(top_unknown);

    AioLossParts<T> out;
    out.grad_probs = Vec<T>::Zero(2 * k_count);
    out.value = -(std::log(std::max(cy, eps)) + std::log(std::max(ct(hard_neg), eps)) + std::log(std::max(margin, eps)));
    if (cy > eps) out.grad_probs(label) -= T(1) / cy;
    if (ct(hard_neg) > eps) out.grad_probs(k_count + hard_neg) -= T(1) / ct(hard_neg);
    if (margin > eps) {
        out.grad_probs(label) -= T(1) / margin;
        out.grad_probs(k_count + top_unknown) += T(1) / margin;
    }
    return out;
}

template <typename T>
T aio_loss(const AIOProbabilities<T>& probs, int label, double clamp_eps = kDefaultClampEps) {
    return aio_loss_grad(probs, label, clamp_eps).value;
}

/// -log p[label], with the probability floored at clamp_eps.
template <typename T>
T ce_loss(const Vec<T>& closed_probs, int label, double clamp_eps = kDefaultClampEps) {
    if (label < 0 || label >= closed_probs.size()) throw InvalidArgument("ce_loss: label out of range");
    if ((closed_probs.array() < T(0)).any() || std::abs(static_cast<double>(closed_probs.sum()) - 1.0) > 1e-6)
        throw InvalidArgument("ce_loss: input is not a probability vector");
    return -std::log(std::max(closed_probs(label), static_cast<T>(clamp_eps)));
}

/// One-vs-all loss used by the ablation head: per class a binary softmax over
/// (logit k, logit K+k); -log p_pos^y - min_{k != y} log p_neg^k.
/// Returns the loss and its gradient with respect to the 2K logits.
template <typename T>
std::pair<T, Vec<T>> ova_loss_grad(const Vec<T>& logits, int label) {
    const Eigen::Index k_count = logits.size() / 2;
    if (logits.size() % 2 != 0 || k_count < 2) throw InvalidArgument("ova_loss: need 2K logits with K >= 2");
    if (label < 0 || label >= k_count) throw InvalidArgument("ova_loss: label out of range");
    auto sigmoid = [](T u) { return u >= T(0) ? T(1) / (T(1) + std::exp(-u)) : std::exp(u) / (T(1) + std::exp(u)); };
    auto log_sigmoid = [](T u) { return u >= T(0) ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u)); };
    Vec<T> grad = Vec<T>::Zero(logits.size());

    const T u_y = logits(label) - logits(k_count + label);
    T loss = -log_sigmoid(u_y);
    const T gy = -(T(1) - sigmoid(u_y));
    grad(label) += gy;
    grad(k_count + label) -= gy;

    // Hardest negative: the non-label class with the largest positive score.
    Eigen::Index hard = -1;
    for (Eigen::Index k = 0; k < k_count; ++k) {
        if (k == label) continue;
        const T u = logits(k) - logits(k_count + k);
        if (hard < 0 || u > logits(hard) - logits(k_count + hard)) hard = k;
    }
    const T u_h = logits(hard) - logits(k_count + hard);
    loss += -log_sigmoid(-u_h);
    const T gh = sigmoid(u_h);
    grad(hard) += gh;
    grad(k_count + hard) -= gh;
    return {loss, grad};
}

/// source_ce + beta * source_aio + lambda * target_scl
inline double total_loss(double source_ce, double source_aio, double target_scl, double lambda, double beta) {
    if (!(lambda >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("total_loss: lambda and beta must be >= 0");
    return source_ce + beta * source_aio + lambda * target_scl;
}

}  // namespace san
