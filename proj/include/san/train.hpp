#pragma once

// Minibatch training on labeled source + augmented target views, and the
// target-domain prediction pass.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "san/data.hpp"
#include "san/metrics.hpp"
#include "san/model.hpp"
#include "san/objective.hpp"

namespace san {

enum class Variant {
    San,       ///< CE + AIO + SCL
    SanWoScl,  ///< contrastive term removed
    SanWoAio,  ///< AIO replaced by one-vs-all open-set heads
    SanWCl,    ///< SCL replaced by plain contrastive learning
};

inline Variant parse_variant(const std::string& s) {
    if (s == "san") return Variant::San;
    if (s == "san-wo-scl") return Variant::SanWoScl;
    if (s == "san-wo-aio") return Variant::SanWoAio;
    if (s == "san-w-cl") return Variant::SanWCl;
    throw InvalidArgument("unknown variant '" + s + "' (expected san, san-wo-scl, san-wo-aio, san-w-cl)");
}

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::San: return "san";
        case Variant::SanWoScl: return "san-wo-scl";
        case Variant::SanWoAio: return "san-wo-aio";
        case Variant::SanWCl: return "san-w-cl";
    }
    return "?";
}

struct TrainConfig {
    double lambda = 0.1;
    double beta = 1.0;
    ScheduleConfig schedule{};
    int epochs = 30;
    int batch_size = 64;
    /// Target samples per step; each contributes two views.
    int target_batch = 32;
    double clamp_eps = kDefaultClampEps;
    TopNConfig topn{20};
    SCLConfig scl{};
    /// Contrastive form used by the san-w-cl variant.
    ContrastKind cl_form = ContrastKind::InfoNce;
    bool use_ce = true;
    /// Rescale the full gradient to at most this L2 norm; 0 disables.
    double grad_clip = 0.0;

    void validate() const {
        if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
        if (batch_size < 2) throw InvalidArgument("TrainConfig: batch_size must be >= 2");
        if (target_batch < 2) throw InvalidArgument("TrainConfig: target_batch must be >= 2");
        if (!(lambda >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("TrainConfig: lambda and beta must be >= 0");
        if (!(schedule.lr0 > 0.0)) throw InvalidArgument("TrainConfig: lr0 must be > 0");
        if (!(schedule.decay_gamma > 0.0) || !(schedule.decay_power > 0.0))
            throw InvalidArgument("TrainConfig: decay constants must be > 0");
        if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) throw InvalidArgument("TrainConfig: grad_clip must be >= 0");
        scl.validate();
    }
};

inline ObjectiveConfig objective_for(Variant v, const TrainConfig& t) {
    ObjectiveConfig c;
    c.lambda = t.lambda;
    c.beta = t.beta;
    c.use_ce = t.use_ce;
    c.topn = t.topn;
    c.scl = t.scl;
    c.scl.clamp_eps = t.clamp_eps;
    c.clamp_eps = t.clamp_eps;
    switch (v) {
        case Variant::San: break;
        case Variant::SanWoScl: c.contrast = ContrastKind::None; break;
        case Variant::SanWoAio: c.classifier = ClassifierKind::Ova; break;
        case Variant::SanWCl: c.contrast = t.cl_form; break;
    }
    return c;
}

/// The one-vs-all head needs the closed-set head for its first stage.
inline NetworkSpec network_for(Variant v, NetworkSpec spec) {
    if (v == Variant::SanWoAio) spec.closed_head = true;
    return spec;
}

inline SourceBatch make_source_batch(const std::vector<DomainSample>& src, std::span<const std::size_t> idx) {
    SourceBatch b;
    b.x.resize(static_cast<Eigen::Index>(idx.size()), src.front().features.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        b.x.row(static_cast<Eigen::Index>(i)) = src[idx[i]].features.transpose();
        b.labels.push_back(src[idx[i]].observed_label);
    }
    return b;
}

/// Two views per listed target sample, rows (2j, 2j+1); with probability
/// p_view the second view silently comes from a different class.
inline TargetBatch make_target_batch(const Dataset& ds, std::span<const std::size_t> idx, const NoiseSpec& noise,
                                     std::uint64_t seed, std::uint64_t step) {
    const Lift* lift = ds.lift ? &*ds.lift : nullptr;
    std::vector<ViewPair> pairs;
    pairs.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        Rng rng = make_stream(seed, {kTagAugment, step, j});
        auto [a, b] = augment(ds.target[idx[j]], noise, lift, rng);
        pairs.push_back({std::move(a), std::move(b), idx[j]});
    }
    if (noise.p_view > 0.0) {
        Rng rng = make_stream(seed, {kTagViewNoise, step});
        inject_view_noise(pairs, noise.p_view, ds.target, noise, lift, rng);  // mask discarded
    }
    TargetBatch tb;
    tb.views.resize(static_cast<Eigen::Index>(2 * pairs.size()), ds.feature_dim);
    for (std::size_t j = 0; j < pairs.size(); ++j) {
        tb.views.row(static_cast<Eigen::Index>(2 * j)) = pairs[j].a.transpose();
        tb.views.row(static_cast<Eigen::Index>(2 * j + 1)) = pairs[j].b.transpose();
    }
    tb.relation = AugmentationRelation::consecutive_pairs(tb.views.rows());
    return tb;
}

struct TrainResult {
    Parameters<double> params;
    std::vector<double> epoch_loss;  ///< mean objective per epoch
    std::size_t steps = 0;
};

/// Runs `epochs` passes over the source set; the target set is cycled in
/// step with it. Throws TrainingDivergence on a non-finite loss or gradient.
inline TrainResult train(Parameters<double> params, const NetworkSpec& spec, const Dataset& ds, const NoiseSpec& noise,
                         const TrainConfig& tcfg, Variant variant, std::uint64_t seed) {
    tcfg.validate();
    noise.validate();
    if (ds.source.empty()) throw InvalidArgument("train: empty source set");
    const ObjectiveConfig ocfg = objective_for(variant, tcfg);
    const bool use_target = ocfg.contrast != ContrastKind::None && ocfg.lambda > 0.0 && ds.target.size() >= 2;

    const std::size_t n_src = ds.source.size();
    const std::size_t bs = static_cast<std::size_t>(tcfg.batch_size);
    const std::size_t steps_per_epoch = (n_src + bs - 1) / bs;
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(tcfg.epochs);
    const std::size_t tb = std::min<std::size_t>(static_cast<std::size_t>(tcfg.target_batch), ds.target.size());

    TrainResult res;
    std::vector<std::size_t> src_perm(n_src), tgt_perm(ds.target.size());
    std::size_t tgt_cursor = ds.target.size();
    std::size_t tgt_epoch = 0;
    std::size_t step = 0;
    Parameters<double> grad;

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::iota(src_perm.begin(), src_perm.end(), std::size_t{0});
        Rng shuf = make_stream(seed, {kTagShuffle, 0, static_cast<std::uint64_t>(epoch)});
        std::shuffle(src_perm.begin(), src_perm.end(), shuf);
        double epoch_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            const std::size_t lo = s * bs, hi = std::min(n_src, lo + bs);
            const SourceBatch sb = make_source_batch(ds.source, std::span(src_perm).subspan(lo, hi - lo));

            TargetBatch tbatch;
            if (use_target) {
                if (tgt_cursor + tb > tgt_perm.size()) {
                    std::iota(tgt_perm.begin(), tgt_perm.end(), std::size_t{0});
                    Rng ts = make_stream(seed, {kTagShuffle, 1, tgt_epoch++});
                    std::shuffle(tgt_perm.begin(), tgt_perm.end(), ts);
                    tgt_cursor = 0;
                }
                tbatch = make_target_batch(ds, std::span(tgt_perm).subspan(tgt_cursor, tb), noise, seed, step);
                tgt_cursor += tb;
            }
            ObjectiveTerms terms;
            try {
                terms = evaluate_objective(params, spec, sb, use_target ? &tbatch : nullptr, ocfg, &grad);
            } catch (const InvalidArgument& e) {
                // Inputs were validated up front, so this is overflow inside the network.
                throw TrainingDivergence("step " + std::to_string(step) + ": " + e.what(), -1);
            } catch (const DegenerateInput& e) {
                throw TrainingDivergence("step " + std::to_string(step) + ": " + e.what(), -1);
            }
            if (!std::isfinite(terms.total))
                throw TrainingDivergence("non-finite loss at step " + std::to_string(step), -1);
            if (tcfg.grad_clip > 0.0) clip_gradient(grad, tcfg.grad_clip);
            sgd_step(params, grad, step, total_steps, tcfg.schedule);
            const int bad = params.first_non_finite_layer();
            if (bad >= 0) throw TrainingDivergence("non-finite parameters in layer " + std::to_string(bad), bad);
            epoch_sum += terms.total;
        }
        res.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    }
    res.steps = step;
    res.params = std::move(params);
    return res;
}

inline MatD stack_features(const std::vector<DomainSample>& samples) {
    MatD x(static_cast<Eigen::Index>(samples.size()), samples.empty() ? 0 : samples.front().features.size());
    for (std::size_t i = 0; i < samples.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
    return x;
}

inline std::vector<Decision> predict(const Parameters<double>& params, const NetworkSpec& spec,
                                     const std::vector<DomainSample>& samples, Variant variant, const TopNConfig& topn) {
    std::vector<Decision> out;
    if (samples.empty()) return out;
    const auto fwd = forward(params, spec, stack_features(samples));
    for (Eigen::Index i = 0; i < fwd.aio_logits.rows(); ++i) {
        const VecD logits = fwd.aio_logits.row(i).transpose();
        if (variant == Variant::SanWoAio)
            out.push_back(ova_infer<double>(fwd.closed_logits.row(i).transpose(), logits));
        else
            out.push_back(aio_infer(AIOProbabilities<double>::from_joint(top_n_softmax(logits, topn))));
    }
    return out;
}

/// Fraction of samples whose AIO output satisfies
/// c^y > max_k c_tilde^k > max_{k != y} c^k, with y the observed label.
inline double ordering_fraction(const Parameters<double>& params, const NetworkSpec& spec,
                                const std::vector<DomainSample>& samples, const TopNConfig& topn) {
    if (samples.empty()) return 0.0;
    const auto fwd = forward(params, spec, stack_features(samples));
    std::size_t ok = 0;
    for (Eigen::Index i = 0; i < fwd.aio_logits.rows(); ++i) {
        const auto probs = AIOProbabilities<double>::from_joint(top_n_softmax<double>(fwd.aio_logits.row(i).transpose(), topn));
        const int y = samples[static_cast<std::size_t>(i)].observed_label;
        double other = -1.0;
        for (Eigen::Index k = 0; k < probs.classes(); ++k)
            if (k != y) other = std::max(other, probs.c(k));
        const double unk = probs.c_tilde.maxCoeff();
        if (probs.c(y) > unk && unk > other) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

}  // namespace san
