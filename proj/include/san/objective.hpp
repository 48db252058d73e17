#pragma once

// Combined training objective over one source batch and one target batch,
// its exact gradient through the full stack, and a finite-difference checker.

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "san/losses.hpp"
#include "san/model.hpp"

namespace san {

enum class ClassifierKind { Aio, Ova };
enum class ContrastKind { None, Scl, InfoNce, ClKernel, ClExp };

struct ObjectiveConfig {
    double lambda = 0.1;
    double beta = 1.0;
    bool use_ce = true;
    ClassifierKind classifier = ClassifierKind::Aio;
    ContrastKind contrast = ContrastKind::Scl;
    TopNConfig topn{20};
    SCLConfig scl{};
    bool infonce_include_positive = false;
    double clamp_eps = kDefaultClampEps;
};

struct SourceBatch {
    MatD x;
    std::vector<int> labels;  ///< observed (possibly noisy) 0-based labels
};

/// Augmented target views; the relation pairs views of the same sample.
struct TargetBatch {
    MatD views;
    AugmentationRelation relation;
};

struct ObjectiveTerms {
    double ce = 0.0;
    double classifier = 0.0;  ///< AIO or one-vs-all, depending on the config
    double contrast = 0.0;
    double total = 0.0;
};

/// Evaluates the objective that is minimized per step:
///   mean_s[ce] + beta * mean_s[classifier] + lambda * contrast(target views).
/// When `grad` is non-null it receives the exact gradient (overwritten).
/// `frozen_affinity`, if given, replaces the SCL affinity matrix P.
template <typename T>
ObjectiveTerms evaluate_objective(const Parameters<T>& params, const NetworkSpec& spec, const SourceBatch& src,
                                  const TargetBatch* tgt, const ObjectiveConfig& cfg, Parameters<T>* grad,
                                  const Mat<T>* frozen_affinity = nullptr) {
    ObjectiveTerms terms;
    if (grad) *grad = params.zeros_like();
    const int k_count = spec.known_classes();

    const bool need_source = (cfg.use_ce && params.has_closed) || cfg.beta > 0.0;
    if (need_source && src.x.rows() > 0) {
        if (static_cast<Eigen::Index>(src.labels.size()) != src.x.rows())
            throw InvalidArgument("evaluate_objective: label count does not match source rows");
        const Mat<T> xs = src.x.template cast<T>();
        const auto fwd = forward(params, spec, xs);
        const Eigen::Index b = xs.rows();
        const T inv_b = T(1) / static_cast<T>(b);
        OutputGrads<T> up;
        if (grad) {
            up.aio_logits = Mat<T>::Zero(b, spec.aio_outputs);
            if (params.has_closed) up.closed_logits = Mat<T>::Zero(b, k_count);
        }
        double ce_sum = 0.0, cls_sum = 0.0;
        for (Eigen::Index i = 0; i < b; ++i) {
            const int y = src.labels[static_cast<std::size_t>(i)];
            if (cfg.use_ce && params.has_closed) {
                const Vec<T> p = softmax<T>(fwd.closed_logits.row(i).transpose());
                ce_sum += static_cast<double>(ce_loss(p, y, cfg.clamp_eps));
                if (grad && p(y) > static_cast<T>(cfg.clamp_eps)) {
                    Vec<T> g = p;
                    g(y) -= T(1);
                    up.closed_logits.row(i) = (g * inv_b).transpose();
                }
            }
            if (cfg.beta > 0.0) {
                const Vec<T> logits = fwd.aio_logits.row(i).transpose();
                if (cfg.classifier == ClassifierKind::Aio) {
                    const Vec<T> probs = top_n_softmax(logits, cfg.topn);
                    const auto parts = aio_loss_grad(AIOProbabilities<T>::from_joint(probs), y, cfg.clamp_eps);
                    cls_sum += static_cast<double>(parts.value);
                    if (grad)
                        up.aio_logits.row(i) =
                            (top_n_softmax_backward(probs, parts.grad_probs) * (inv_b * static_cast<T>(cfg.beta))).transpose();
                } else {
                    const auto [value, g] = ova_loss_grad(logits, y);
                    cls_sum += static_cast<double>(value);
                    if (grad) up.aio_logits.row(i) = (g * (inv_b * static_cast<T>(cfg.beta))).transpose();
                }
            }
        }
        terms.ce = ce_sum / static_cast<double>(b);
        terms.classifier = cls_sum / static_cast<double>(b);
        if (grad) backward(params, spec, fwd, up, *grad);
    }

    if (tgt && cfg.contrast != ContrastKind::None && cfg.lambda > 0.0 && tgt->views.rows() > 0) {
        const Mat<T> xt = tgt->views.template cast<T>();
        const auto fwd = forward(params, spec, xt);
        PairBatch<T> pb(fwd.head, fwd.backbone, tgt->relation);
        LossGrad<T> lg;
        switch (cfg.contrast) {
            case ContrastKind::Scl: lg = scl_loss_grad(pb, cfg.scl, frozen_affinity); break;
            case ContrastKind::InfoNce: lg = infonce_batch_loss(fwd.head, tgt->relation, cfg.infonce_include_positive); break;
            case ContrastKind::ClKernel: lg = cl_binary_loss_grad(pb, DensityMode::KernelBce, cfg.scl); break;
            case ContrastKind::ClExp: lg = cl_binary_loss_grad(pb, DensityMode::ExpDensity, cfg.scl); break;
            case ContrastKind::None: break;
        }
        terms.contrast = static_cast<double>(lg.value);
        if (grad) {
            const T lam = static_cast<T>(cfg.lambda);
            OutputGrads<T> up;
            up.head = lg.grad_z * lam;
            if (lg.grad_y.size()) up.backbone = lg.grad_y * lam;
            backward(params, spec, fwd, up, *grad);
        }
    }

    const double ce_weight = (cfg.use_ce && params.has_closed) ? 1.0 : 0.0;
    terms.total = ce_weight * terms.ce + cfg.beta * terms.classifier + cfg.lambda * terms.contrast;
    if (grad) {
        const int bad = grad->first_non_finite_layer();
        if (bad >= 0) throw TrainingDivergence("non-finite gradient in layer " + std::to_string(bad), bad);
    }
    return terms;
}

/// SCL affinity matrix at the current parameters, for holding P fixed.
inline MatD current_affinity(const Parameters<double>& params, const NetworkSpec& spec, const TargetBatch& tgt,
                             const SCLConfig& scl) {
    const auto fwd = forward(params, spec, tgt.views);
    return pair_affinity(PairBatch<double>(fwd.head, fwd.backbone, tgt.relation), scl);
}

// ---------------------------------------------------------------------------
// Finite-difference checking.

struct GradCompare {
    double max_rel_error = 0.0;
    std::size_t worst_coord = 0;
    std::size_t checked = 0;
};

/// Gradients smaller than this are compared in absolute terms: central
/// differences at step 1e-5 carry round-off near 1e-16 * |loss| / 1e-5.
inline constexpr double kGradCheckFloor = 1e-6;

/// The floor also grows with the loss itself, so that the round-off of a
/// central difference, eps * |loss| / step, stays 1e4 times below it. Large
/// losses come from eps-clamped log terms that carry no gradient.
inline constexpr double kRoundoffHeadroom = 1e4;

/// Relative error with an absolute floor: |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = kGradCheckFloor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` at the listed coordinates, compared to `analytic`.
template <typename LossFn>
GradCompare compare_gradient(Parameters<double> params, const Parameters<double>& analytic, LossFn&& loss,
                             const std::vector<std::size_t>& coords, double step, double floor = kGradCheckFloor) {
    GradCompare out;
    floor = std::max(floor, kRoundoffHeadroom * std::numeric_limits<double>::epsilon() * std::abs(loss(params)) / step);
    for (std::size_t c : coords) {
        const double orig = params.coord(c);
        params.coord(c) = orig + step;
        const double lp = loss(params);
        params.coord(c) = orig - step;
        const double lm = loss(params);
        params.coord(c) = orig;
        const double numeric = (lp - lm) / (2.0 * step);
        const double err = relative_error(analytic.coord(c), numeric, floor);
        if (out.checked == 0 || err > out.max_rel_error) {
            out.max_rel_error = err;
            out.worst_coord = c;
        }
        ++out.checked;
    }
    return out;
}

/// Coordinates to probe: every coordinate of small layers, a seeded sample
/// of `per_layer` from larger ones, at least `min_total` overall.
inline std::vector<std::size_t> sample_coordinates(const Parameters<double>& p, std::size_t min_total,
                                                   std::uint64_t seed) {
    const std::size_t n = p.size();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (n <= min_total) return all;
    Rng rng = make_stream(seed, {kTagGradCheck});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(min_total);
    // Make sure every layer is represented.
    std::vector<bool> seen(p.layers.size(), false);
    for (auto c : all) seen[p.layer_of(c)] = true;
    std::size_t offset = 0;
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        if (!seen[li]) all.push_back(offset);
        offset += static_cast<std::size_t>(p.layers[li].w.size() + p.layers[li].b.size());
    }
    std::sort(all.begin(), all.end());
    return all;
}

struct GradCheckTerm {
    std::string name;
    GradCompare result;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckTerm> terms;
    double threshold = 0.0;

    bool passed() const {
        return std::all_of(terms.begin(), terms.end(), [](const GradCheckTerm& t) { return t.passed; });
    }
};

inline const char* contrast_name(ContrastKind k) {
    switch (k) {
        case ContrastKind::None: return "none";
        case ContrastKind::Scl: return "scl";
        case ContrastKind::InfoNce: return "infonce";
        case ContrastKind::ClKernel: return "cl-kernel-bce";
        case ContrastKind::ClExp: return "cl-exp-density";
    }
    return "?";
}

/// Checks one objective configuration as a whole.
inline GradCheckTerm check_objective(const Parameters<double>& params, const NetworkSpec& spec, const SourceBatch& src,
                                     const TargetBatch* tgt, const ObjectiveConfig& cfg, const std::string& name,
                                     double step, double threshold, std::size_t min_coords, std::uint64_t seed) {
    MatD frozen;
    const MatD* frozen_ptr = nullptr;
    if (tgt && cfg.contrast == ContrastKind::Scl && !cfg.scl.affinity_grad && cfg.lambda > 0.0) {
        frozen = current_affinity(params, spec, *tgt, cfg.scl);
        frozen_ptr = &frozen;
    }
    Parameters<double> analytic;
    evaluate_objective(params, spec, src, tgt, cfg, &analytic, frozen_ptr);
    auto loss = [&](const Parameters<double>& p) {
        return evaluate_objective<double>(p, spec, src, tgt, cfg, nullptr, frozen_ptr).total;
    };
    GradCheckTerm term;
    term.name = name;
    term.result = compare_gradient(params, analytic, loss, sample_coordinates(params, min_coords, seed), step);
    term.passed = term.result.max_rel_error < threshold;
    return term;
}

/// Checks each active loss term of `cfg` in isolation, through the whole stack.
inline GradCheckReport grad_check(const Parameters<double>& params, const NetworkSpec& spec, const SourceBatch& src,
                                  const TargetBatch* tgt, const ObjectiveConfig& cfg, double step = 1e-5,
                                  double threshold = 1e-4, std::size_t min_coords = 200, std::uint64_t seed = 0) {
    GradCheckReport report;
    report.threshold = threshold;
    if (cfg.use_ce && params.has_closed) {
        ObjectiveConfig c = cfg;
        c.beta = 0.0;
        c.lambda = 0.0;
        report.terms.push_back(check_objective(params, spec, src, tgt, c, "ce", step, threshold, min_coords, seed));
    }
    if (cfg.beta > 0.0) {
        ObjectiveConfig c = cfg;
        c.use_ce = false;
        c.lambda = 0.0;
        report.terms.push_back(check_objective(params, spec, src, tgt, c,
                                               cfg.classifier == ClassifierKind::Aio ? "aio" : "ova", step, threshold,
                                               min_coords, seed));
    }
    if (tgt && cfg.contrast != ContrastKind::None && cfg.lambda > 0.0) {
        ObjectiveConfig c = cfg;
        c.use_ce = false;
        c.beta = 0.0;
        report.terms.push_back(
            check_objective(params, spec, src, tgt, c, contrast_name(cfg.contrast), step, threshold, min_coords, seed));
    }
    report.terms.push_back(check_objective(params, spec, src, tgt, cfg, "total", step, threshold, min_coords, seed));
    return report;
}

}  // namespace san
