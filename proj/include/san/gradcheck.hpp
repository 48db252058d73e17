#pragma once

// Randomized finite-difference checks of every loss through the full
// backbone -> head -> classifier stack.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "san/model.hpp"
#include "san/objective.hpp"

namespace san {

struct GradCheckCase {
    NetworkSpec spec;
    Parameters<double> params;
    SourceBatch source;
    TargetBatch target;
    TopNConfig topn{20};
};

inline GradCheckCase random_gradcheck_draw(std::uint64_t seed, std::uint64_t attempt) {
    Rng rng = make_stream(seed, {kTagGradCheck, 1, attempt});
    std::uniform_int_distribution<int> dim(3, 6), width(3, 6), classes(2, 4), pairs(2, 4), bsz(3, 6);
    std::normal_distribution<double> n01(0.0, 1.0);
    GradCheckCase c;
    c.spec.input_dim = dim(rng);
    c.spec.backbone_layers = {width(rng), width(rng)};
    c.spec.head_layers = {width(rng), width(rng)};
    const int k = classes(rng);
    c.spec.aio_outputs = 2 * k;
    c.spec.closed_head = true;
    c.spec.activation = (seed % 2 == 0) ? Activation::Tanh : Activation::Relu;
    c.spec.seed = seed;
    c.params = init_parameters(c.spec);
    // Non-zero biases so every layer's bias gradient is exercised.
    for (auto& l : c.params.layers)
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = 0.1 * n01(rng);

    const int b = bsz(rng);
    c.source.x.resize(b, c.spec.input_dim);
    for (Eigen::Index i = 0; i < c.source.x.size(); ++i) c.source.x.data()[i] = n01(rng);
    std::uniform_int_distribution<int> lab(0, k - 1);
    for (int i = 0; i < b; ++i) c.source.labels.push_back(lab(rng));

    const int m = 2 * pairs(rng);
    c.target.views.resize(m, c.spec.input_dim);
    for (Eigen::Index i = 0; i < c.target.views.size(); ++i) c.target.views.data()[i] = n01(rng);
    c.target.relation = AugmentationRelation::consecutive_pairs(m);
    // Either the full softmax or a strict top-n selection.
    c.topn = TopNConfig{(seed % 3 == 0) ? std::max(2, k) : 20};
    return c;
}

namespace detail {

inline bool sorted_gap_ok(std::vector<double> v, double gap) {
    std::sort(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] - v[i - 1] < gap) return false;
    return true;
}

/// True when no input sits within finite-difference reach of a kink or a
/// floor: ReLU pre-activations, the top-n cut, the AIO min / max selections
/// and the AIO margin.
inline bool well_conditioned(const GradCheckCase& c, double gap = 1e-3) {
    for (const MatD* x : {&c.source.x, &c.target.views}) {
        const auto fwd = forward(c.params, c.spec, *x);
        if (c.spec.activation == Activation::Relu)
            for (const auto& pre : fwd.pre)
                if ((pre.array().abs() < gap).any()) return false;
        for (Eigen::Index i = 0; i < fwd.aio_logits.rows(); ++i) {
            const VecD l = fwd.aio_logits.row(i).transpose();
            if (!sorted_gap_ok(std::vector<double>(l.data(), l.data() + l.size()), gap)) return false;
            if (x != &c.source.x) continue;
            const auto probs = AIOProbabilities<double>::from_joint(top_n_softmax(l, c.topn));
            const int y = c.source.labels[static_cast<std::size_t>(i)];
            if (std::abs(probs.c(y) - probs.c_tilde.maxCoeff()) < 10 * gap) return false;
        }
    }
    return true;
}

}  // namespace detail

/// Small random network and batches. Widths, class count, top-n and the
/// activation are drawn from the seed; draws too close to a kink are
/// rejected and redrawn.
inline GradCheckCase random_gradcheck_case(std::uint64_t seed) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        GradCheckCase c = random_gradcheck_draw(seed, attempt);
        if (detail::well_conditioned(c) || attempt == 999) return c;
    }
}

struct GradCheckSuiteResult {
    std::vector<GradCheckTerm> terms;  ///< one per (case, loss)
    double worst = 0.0;
    std::string worst_name;
    bool passed = true;
};

/// For each case: CE alone, AIO alone, one-vs-all alone, and each contrastive
/// form (SCL, kernel-bce CL, exp-density CL, InfoNCE) alone, then the full
/// objective.
inline GradCheckSuiteResult run_gradcheck_suite(std::size_t cases, std::uint64_t seed, double step = 1e-5,
                                                double threshold = 1e-4, std::size_t coords = 200) {
    GradCheckSuiteResult res;
    auto record = [&](GradCheckTerm t, std::size_t ci) {
        t.name = "case" + std::to_string(ci) + "/" + t.name;
        if (t.result.max_rel_error > res.worst || res.terms.empty()) {
            res.worst = t.result.max_rel_error;
            res.worst_name = t.name;
        }
        res.passed = res.passed && t.passed;
        res.terms.push_back(std::move(t));
    };
    for (std::size_t ci = 0; ci < cases; ++ci) {
        const std::uint64_t s = seed * 1000003ULL + ci;
        const GradCheckCase c = random_gradcheck_case(s);
        ObjectiveConfig base;
        base.topn = c.topn;
        base.lambda = 0.7;
        base.beta = 0.9;

        ObjectiveConfig ce = base;
        ce.beta = 0.0;
        ce.lambda = 0.0;
        record(check_objective(c.params, c.spec, c.source, nullptr, ce, "ce", step, threshold, coords, s), ci);

        for (ClassifierKind kind : {ClassifierKind::Aio, ClassifierKind::Ova}) {
            ObjectiveConfig oc = base;
            oc.use_ce = false;
            oc.lambda = 0.0;
            oc.classifier = kind;
            record(check_objective(c.params, c.spec, c.source, nullptr, oc, kind == ClassifierKind::Aio ? "aio" : "ova",
                                   step, threshold, coords, s),
                   ci);
        }
        for (ContrastKind kind : {ContrastKind::Scl, ContrastKind::ClKernel, ContrastKind::ClExp, ContrastKind::InfoNce}) {
            ObjectiveConfig oc = base;
            oc.use_ce = false;
            oc.beta = 0.0;
            oc.contrast = kind;
            record(check_objective(c.params, c.spec, c.source, &c.target, oc, contrast_name(kind), step, threshold,
                                   coords, s),
                   ci);
        }
        record(check_objective(c.params, c.spec, c.source, &c.target, base, "total", step, threshold, coords, s), ci);
    }
    return res;
}

}  // namespace san
