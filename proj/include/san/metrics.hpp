#pragma once

// Target-domain accounting, H-score, Balance H-score, count sensitivities
// and the positive/noise pair loss probe.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "san/errors.hpp"
#include "san/losses.hpp"
#include "san/model.hpp"

namespace san {

/// Ground truth for one evaluated target sample.
struct Truth {
    int label = -1;  ///< 0-based known class; ignored when is_private
    bool is_private = false;
};

struct EvalCounts {
    std::vector<std::size_t> class_correct;
    std::vector<std::size_t> class_total;
    std::size_t unknown_correct = 0;
    std::size_t unknown_total = 0;

    std::size_t known_total() const {
        std::size_t n = 0;
        for (auto t : class_total) n += t;
        return n;
    }
    std::size_t known_correct() const {
        std::size_t n = 0;
        for (auto c : class_correct) n += c;
        return n;
    }
    /// Unknown-to-known sample ratio M_t / M.
    double theta() const { return static_cast<double>(unknown_total) / static_cast<double>(known_total()); }

    /// Mean of per-class accuracies over known classes that have samples.
    double known_accuracy() const {
        double acc = 0.0;
        std::size_t classes = 0;
        for (std::size_t k = 0; k < class_total.size(); ++k) {
            if (class_total[k] == 0) continue;
            acc += static_cast<double>(class_correct[k]) / static_cast<double>(class_total[k]);
            ++classes;
        }
        if (classes == 0) throw UndefinedScore("no known-class samples in the evaluation set");
        return acc / static_cast<double>(classes);
    }
    double unknown_accuracy() const {
        if (unknown_total == 0) throw UndefinedScore("no unknown-class samples in the evaluation set");
        return static_cast<double>(unknown_correct) / static_cast<double>(unknown_total);
    }
};

inline EvalCounts eval_counts(const std::vector<Decision>& predictions, const std::vector<Truth>& truths,
                              std::size_t known_classes) {
    if (predictions.size() != truths.size()) throw InvalidArgument("eval_counts: predictions and truths differ in length");
    EvalCounts c;
    c.class_correct.assign(known_classes, 0);
    c.class_total.assign(known_classes, 0);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto& t = truths[i];
        if (t.is_private) {
            ++c.unknown_total;
            if (predictions[i].is_unknown()) ++c.unknown_correct;
        } else {
            if (t.label < 0 || static_cast<std::size_t>(t.label) >= known_classes)
                throw InvalidArgument("eval_counts: truth label " + std::to_string(t.label) + " is not a known class");
            ++c.class_total[static_cast<std::size_t>(t.label)];
            if (predictions[i] == Decision::known(t.label)) ++c.class_correct[static_cast<std::size_t>(t.label)];
        }
    }
    if (c.known_total() == 0) throw UndefinedScore("eval_counts: no known-class samples");
    if (c.unknown_total == 0) throw UndefinedScore("eval_counts: no unknown-class samples");
    return c;
}

/// 2 a_c a_t / (a_c + a_t), 0 when both are 0.
inline double h_score(double a_c, double a_t) {
    if (a_c + a_t == 0.0) return 0.0;
    return 2.0 * a_c * a_t / (a_c + a_t);
}

/// (1 + theta) a_c a_t / (theta a_c + a_t), 0 when both are 0.
inline double balance_h_score(double a_c, double a_t, double theta) {
    if (theta < 0.0) throw InvalidArgument("balance_h_score: theta must be >= 0");
    if (a_c == a_t) return a_c;
    const double den = theta * a_c + a_t;
    if (den == 0.0) return 0.0;
    return (1.0 + theta) * a_c * a_t / den;
}

struct ScoreReport {
    double a_c = 0.0;
    double a_t = 0.0;
    double h_score = 0.0;
    double balance_h_score = 0.0;
    double theta = 0.0;
    std::vector<double> per_class;  ///< NaN for classes without samples
};

inline ScoreReport score(const EvalCounts& c) {
    ScoreReport r;
    r.a_c = c.known_accuracy();
    r.a_t = c.unknown_accuracy();
    r.theta = c.theta();
    r.h_score = h_score(r.a_c, r.a_t);
    r.balance_h_score = balance_h_score(r.a_c, r.a_t, r.theta);
    for (std::size_t k = 0; k < c.class_total.size(); ++k)
        r.per_class.push_back(c.class_total[k] ? static_cast<double>(c.class_correct[k]) / static_cast<double>(c.class_total[k])
                                               : std::nan(""));
    return r;
}

inline nlohmann::ordered_json to_json(const ScoreReport& r) {
    nlohmann::ordered_json j;
    j["a_c"] = r.a_c;
    j["a_t"] = r.a_t;
    j["h_score"] = r.h_score;
    j["balance_h_score"] = r.balance_h_score;
    j["theta"] = r.theta;
    auto pc = nlohmann::ordered_json::array();
    for (double v : r.per_class) pc.push_back(std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v));
    j["per_class"] = pc;
    return j;
}

// ---------------------------------------------------------------------------
// Sensitivity of the scores to one more correct known / unknown sample.

struct BalanceSensitivity {
    double b_wrt_nc = 0.0;
    double b_wrt_nt = 0.0;
    double h_wrt_nc = 0.0;
    double h_wrt_nt = 0.0;
};

/// Symmetric finite differences of B and H with respect to the pooled count
/// of correct known samples N_c (A_c = N_c / M) and correct unknown samples
/// N_t (A_t = N_t / M_t), step `delta` samples.
inline BalanceSensitivity balance_sensitivity(std::size_t known_total, std::size_t known_correct,
                                              std::size_t unknown_total, std::size_t unknown_correct,
                                              std::size_t delta) {
    if (delta == 0) throw InvalidArgument("balance_sensitivity: delta must be positive");
    if (known_total == 0 || unknown_total == 0) throw UndefinedScore("balance_sensitivity: empty side");
    if (known_correct < delta || known_correct + delta > known_total || unknown_correct < delta ||
        unknown_correct + delta > unknown_total)
        throw InvalidArgument("balance_sensitivity: delta moves a count outside [0, total]");
    const double m = static_cast<double>(known_total), mt = static_cast<double>(unknown_total);
    const double theta = mt / m;
    const double nc = static_cast<double>(known_correct), nt = static_cast<double>(unknown_correct);
    const double d = static_cast<double>(delta);
    auto b = [&](double c, double t) { return balance_h_score(c / m, t / mt, theta); };
    auto h = [&](double c, double t) { return h_score(c / m, t / mt); };
    BalanceSensitivity s;
    s.b_wrt_nc = (b(nc + d, nt) - b(nc - d, nt)) / (2.0 * d);
    s.b_wrt_nt = (b(nc, nt + d) - b(nc, nt - d)) / (2.0 * d);
    s.h_wrt_nc = (h(nc + d, nt) - h(nc - d, nt)) / (2.0 * d);
    s.h_wrt_nt = (h(nc, nt + d) - h(nc, nt - d)) / (2.0 * d);
    return s;
}

inline BalanceSensitivity balance_sensitivity(const EvalCounts& c, std::size_t delta) {
    return balance_sensitivity(c.known_total(), c.known_correct(), c.unknown_total, c.unknown_correct, delta);
}

// ---------------------------------------------------------------------------
// Positive-pair / noise-pair loss probe.
//
// Two sampled similarity populations: high values (what a related pair should
// score) and low values. In the positive-pair case the H=1 pair scores high
// and the H=0 pair scores low; under view noise the roles swap. Per case the
// loss is m_ratio * loss(H=0 pair) + loss(H=1 pair), averaged over samples.

enum class ProbeLoss { Cl, Scl };
enum class ProbeAffinity {
    Soft,   ///< P = min(e^alpha S, 1-eps) for H=1, P = S for H=0
    Binary  ///< P = H
};

struct SNRProbe {
    double pl = 0.0;
    double nl = 0.0;
    double snr = 0.0;
    double m_ratio = 1.0;
};

namespace detail {

inline double probe_pair_loss(ProbeLoss kind, ProbeAffinity aff, double h, double s, const SCLConfig& cfg) {
    if (kind == ProbeLoss::Cl || aff == ProbeAffinity::Binary) return h > 0.5 ? -std::log(s) : -std::log(1.0 - s);
    const double p = h > 0.5 ? std::min(std::exp(cfg.alpha) * s, 1.0 - cfg.clamp_eps) : s;
    return scl_pair_loss(p, s);
}

inline double probe_mean(ProbeLoss kind, ProbeAffinity aff, double h, const std::vector<double>& s, const SCLConfig& cfg) {
    double acc = 0.0;
    for (double v : s) acc += probe_pair_loss(kind, aff, h, v, cfg);
    return acc / static_cast<double>(s.size());
}

}  // namespace detail

inline SNRProbe snr_probe(ProbeLoss kind, const std::vector<double>& q_pos, const std::vector<double>& q_noise,
                          const SCLConfig& cfg, double m_ratio, ProbeAffinity affinity = ProbeAffinity::Soft) {
    if (q_pos.empty() || q_noise.empty()) throw UndefinedScore("snr_probe: empty sample set, SNR undefined");
    for (const auto* v : {&q_pos, &q_noise})
        for (double s : *v)
            if (!(s > 0.0 && s < 1.0)) throw InvalidArgument("snr_probe: similarity samples must lie in (0, 1)");
    SNRProbe r;
    r.m_ratio = m_ratio;
    r.pl = m_ratio * detail::probe_mean(kind, affinity, 0.0, q_noise, cfg) + detail::probe_mean(kind, affinity, 1.0, q_pos, cfg);
    r.nl = m_ratio * detail::probe_mean(kind, affinity, 0.0, q_pos, cfg) + detail::probe_mean(kind, affinity, 1.0, q_noise, cfg);
    if (r.nl == 0.0 || !std::isfinite(r.nl)) throw UndefinedScore("snr_probe: noise-pair loss is zero, SNR undefined");
    r.snr = r.pl / r.nl;
    return r;
}

}  // namespace san
