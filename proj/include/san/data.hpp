#pragma once

// Synthetic open-set / universal domain adaptation benchmarks, augmentation,
// view noise, label noise, and the plain-text feature file format.

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "san/core_math.hpp"
#include "san/errors.hpp"
#include "san/rng.hpp"

namespace san {

/// Class counts: shared = |Ls & Lt|, src_private = |Ls - Lt|, tgt_private = |Lt - Ls|.
struct DatasetSplitSpec {
    int shared = 6;
    int src_private = 3;
    int tgt_private = 3;
    int samples_per_class = 200;
    int feature_dim = 16;
    double class_std = 0.15;
    double radius = 1.0;
    double nonlinearity = 0.3;
    /// Radius of the target-private class means, as a multiple of `radius`.
    double private_radius = 1.0;

    void validate() const {
        if (shared < 2) throw InvalidArgument("DatasetSplitSpec: at least two shared classes required");
        if (src_private < 0 || tgt_private < 0) throw InvalidArgument("DatasetSplitSpec: class counts must be >= 0");
        if (samples_per_class < 2) throw InvalidArgument("DatasetSplitSpec: samples_per_class must be >= 2");
        if (feature_dim < 2) throw InvalidArgument("DatasetSplitSpec: feature_dim must be >= 2");
        if (!(class_std >= 0.0)) throw InvalidArgument("DatasetSplitSpec: class_std must be >= 0");
    }

    int known_classes() const { return shared + src_private; }
    int total_classes() const { return shared + src_private + tgt_private; }
};

inline DatasetSplitSpec visda_like_split() { return DatasetSplitSpec{6, 3, 3}; }
inline DatasetSplitSpec office_like_split() { return DatasetSplitSpec{10, 10, 11}; }

inline DatasetSplitSpec split_preset(const std::string& name) {
    if (name == "visda-like") return visda_like_split();
    if (name == "office-like") return office_like_split();
    throw InvalidArgument("unknown split preset '" + name + "'");
}

/// Target-domain transform of the latent plane: rotate, scale, translate.
struct DomainShift {
    double rotation = 0.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();
    double scale = 1.0;
    /// Whether target-private class means are also transformed.
    bool shift_private = true;
};

struct NoiseSpec {
    double rho_s = 0.0;   ///< source label-noise rate
    double p_view = 0.0;  ///< probability that a positive pair is silently corrupted
    double aug_jitter = 0.05;
    double aug_rotation = 0.1;

    void validate() const {
        if (!(rho_s >= 0.0 && rho_s < 1.0)) throw InvalidArgument("NoiseSpec: rho_s must lie in [0, 1)");
        if (!(p_view >= 0.0 && p_view < 1.0)) throw InvalidArgument("NoiseSpec: p_view must lie in [0, 1)");
        if (!(aug_jitter >= 0.0) || !(aug_rotation >= 0.0)) throw InvalidArgument("NoiseSpec: augmentation scales must be >= 0");
    }
};

enum class Domain { Source, Target };

struct DomainSample {
    VecD features;
    std::optional<Eigen::Vector2d> latent;  ///< only for synthetic data
    int true_label = -1;      ///< known class index, or K + j for the j-th target-private class; -1 if unlabeled
    int observed_label = -1;  ///< source only
    Domain domain = Domain::Source;
    bool is_private = false;
};

/// Fixed random map from the latent plane to feature space:
/// f(u) = A u + c * tanh(B u + b0).
struct Lift {
    MatD a;  ///< d x 2
    MatD b;  ///< d x 2
    VecD b0;
    double nonlinearity = 0.3;

    static Lift make(int feature_dim, double nonlinearity, std::uint64_t seed) {
        Rng rng = make_stream(seed, {kTagLift});
        std::normal_distribution<double> n01(0.0, 1.0);
        Lift l;
        l.nonlinearity = nonlinearity;
        l.a.resize(feature_dim, 2);
        l.b.resize(feature_dim, 2);
        l.b0.resize(feature_dim);
        for (int i = 0; i < feature_dim; ++i)
            for (int j = 0; j < 2; ++j) l.a(i, j) = n01(rng);
        for (int i = 0; i < feature_dim; ++i)
            for (int j = 0; j < 2; ++j) l.b(i, j) = n01(rng);
        for (int i = 0; i < feature_dim; ++i) l.b0(i) = n01(rng);
        return l;
    }

    VecD operator()(const Eigen::Vector2d& u) const {
        return a * u + nonlinearity * (b * u + b0).array().tanh().matrix();
    }
};

struct Dataset {
    std::vector<DomainSample> source;
    std::vector<DomainSample> target;
    int known_classes = 0;
    int feature_dim = 0;
    std::optional<Lift> lift;
};

inline Eigen::Vector2d rotate(const Eigen::Vector2d& u, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * u.x() - s * u.y(), s * u.x() + c * u.y()};
}

/// Circle slot of each class id. Target-private classes are spread evenly
/// around the circle; known classes fill the remaining slots in id order.
inline std::vector<int> circle_slots(const DatasetSplitSpec& split) {
    const int total = split.total_classes();
    const int known = split.known_classes();
    std::vector<int> slot(static_cast<std::size_t>(total), -1);
    std::vector<bool> taken(static_cast<std::size_t>(total), false);
    for (int j = 0; j < split.tgt_private; ++j) {
        int s = static_cast<int>(std::floor((j + 0.5) * total / split.tgt_private));
        while (taken[static_cast<std::size_t>(s % total)]) ++s;
        s %= total;
        taken[static_cast<std::size_t>(s)] = true;
        slot[static_cast<std::size_t>(known + j)] = s;
    }
    int next = 0;
    for (int c = 0; c < known; ++c) {
        while (taken[static_cast<std::size_t>(next)]) ++next;
        taken[static_cast<std::size_t>(next)] = true;
        slot[static_cast<std::size_t>(c)] = next;
    }
    return slot;
}

/// Class means on a circle (spacing 2 pi / total classes) in a latent plane;
/// see circle_slots for the placement. Target latents are drawn
/// around the shifted means. Sample i of a domain uses its own rng stream.
inline Dataset gen_unda_dataset(const DatasetSplitSpec& split, const DomainShift& shift, std::uint64_t seed) {
    split.validate();
    Dataset ds;
    ds.known_classes = split.known_classes();
    ds.feature_dim = split.feature_dim;
    ds.lift = Lift::make(split.feature_dim, split.nonlinearity, seed);
    const int total = split.total_classes();
    const auto slots = circle_slots(split);
    auto mean_of = [&](int cls) {
        const double ang = 2.0 * std::numbers::pi * slots[static_cast<std::size_t>(cls)] / total;
        const double r = split.radius * (cls >= split.known_classes() ? split.private_radius : 1.0);
        return Eigen::Vector2d(r * std::cos(ang), r * std::sin(ang));
    };

    std::vector<int> src_classes, tgt_classes;
    for (int c = 0; c < split.shared; ++c) {
        src_classes.push_back(c);
        tgt_classes.push_back(c);
    }
    for (int c = 0; c < split.src_private; ++c) src_classes.push_back(split.shared + c);
    for (int c = 0; c < split.tgt_private; ++c) tgt_classes.push_back(split.known_classes() + c);

    auto draw = [&](Domain dom, const std::vector<int>& classes, std::vector<DomainSample>& out) {
        std::uint64_t index = 0;
        for (int cls : classes) {
            for (int s = 0; s < split.samples_per_class; ++s, ++index) {
                Rng rng = make_stream(seed, {kTagSample, dom == Domain::Source ? 0u : 1u, index});
                std::normal_distribution<double> noise(0.0, split.class_std);
                Eigen::Vector2d u = mean_of(cls);
                const bool shifted = dom == Domain::Target && (shift.shift_private || cls < split.known_classes());
                if (shifted) u = rotate(u * shift.scale, shift.rotation) + shift.translation;
                u += Eigen::Vector2d(noise(rng), noise(rng));
                DomainSample d;
                d.latent = u;
                d.features = (*ds.lift)(u);
                d.true_label = cls;
                d.domain = dom;
                d.is_private = cls >= split.known_classes();
                if (dom == Domain::Source) d.observed_label = cls;
                out.push_back(std::move(d));
            }
        }
    };
    draw(Domain::Source, src_classes, ds.source);
    draw(Domain::Target, tgt_classes, ds.target);
    return ds;
}

/// One augmented view: rotation by U(-r, r) in the latent plane (synthetic data
/// only), re-lift, then isotropic Gaussian jitter in feature space.
inline VecD augment_view(const DomainSample& s, const NoiseSpec& noise, const Lift* lift, Rng& rng) {
    VecD f;
    if (lift && s.latent && noise.aug_rotation > 0.0) {
        std::uniform_real_distribution<double> ang(-noise.aug_rotation, noise.aug_rotation);
        f = (*lift)(rotate(*s.latent, ang(rng)));
    } else {
        f = s.features;
    }
    if (noise.aug_jitter > 0.0) {
        std::normal_distribution<double> jit(0.0, noise.aug_jitter);
        for (Eigen::Index i = 0; i < f.size(); ++i) f(i) += jit(rng);
    }
    return f;
}

inline std::pair<VecD, VecD> augment(const DomainSample& s, const NoiseSpec& noise, const Lift* lift, Rng& rng) {
    VecD a = augment_view(s, noise, lift, rng);
    VecD b = augment_view(s, noise, lift, rng);
    return {std::move(a), std::move(b)};
}

struct ViewPair {
    VecD a;
    VecD b;
    std::size_t origin = 0;  ///< index into the sample pool
};

/// Replaces view b of each pair, with probability p_view, by a view of a
/// uniformly drawn sample of a different true class. The pairing itself is
/// unchanged. Returns the corruption mask, which training never sees.
inline std::vector<bool> inject_view_noise(std::vector<ViewPair>& pairs, double p_view,
                                           const std::vector<DomainSample>& pool, const NoiseSpec& noise,
                                           const Lift* lift, Rng& rng) {
    if (!(p_view >= 0.0 && p_view < 1.0 + 1e-12)) throw InvalidArgument("inject_view_noise: p_view must lie in [0, 1]");
    std::set<int> classes;
    for (const auto& s : pool) classes.insert(s.true_label);
    if (classes.size() < 2) throw InvalidArgument("inject_view_noise: fewer than two classes present");
    std::vector<bool> mask(pairs.size(), false);
    if (p_view == 0.0) return mask;
    std::bernoulli_distribution corrupt(std::min(p_view, 1.0));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!corrupt(rng)) continue;
        const int own = pool[pairs[i].origin].true_label;
        std::size_t j = pick(rng);
        while (pool[j].true_label == own) j = pick(rng);
        pairs[i].b = augment_view(pool[j], noise, lift, rng);
        mask[i] = true;
    }
    return mask;
}

/// Flips each observed label with probability rho_s to a uniformly chosen
/// different known class. Returns the number of flips.
inline std::size_t inject_label_noise(std::vector<DomainSample>& samples, double rho_s, int known_classes, Rng& rng) {
    if (!(rho_s >= 0.0 && rho_s < 1.0)) throw InvalidArgument("inject_label_noise: rho_s must lie in [0, 1)");
    if (known_classes < 2) throw InvalidArgument("inject_label_noise: at least two known classes required");
    std::bernoulli_distribution flip(rho_s);
    std::uniform_int_distribution<int> other(0, known_classes - 2);
    std::size_t flips = 0;
    for (auto& s : samples) {
        if (!flip(rng)) continue;
        int k = other(rng);
        if (k >= s.observed_label) ++k;
        s.observed_label = k;
        ++flips;
    }
    return flips;
}

// ---------------------------------------------------------------------------
// Feature files: "domain,label,f1,f2,..." per line; domain is s or t; label -1
// marks an unlabeled target row; lines starting with '#' are ignored.

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& tok, std::size_t line) {
    const std::string t = trim(tok);
    double v = 0.0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
        throw ParseError("not a number: '" + t + "'", line);
    return v;
}

inline int parse_int(const std::string& tok, std::size_t line) {
    const std::string t = trim(tok);
    int v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) throw ParseError("not an integer: '" + t + "'", line);
    return v;
}

}  // namespace detail

inline Dataset parse_feature_stream(std::istream& in) {
    struct Row {
        bool source;
        int label;
        VecD f;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    int dim = -1;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> tok;
        std::stringstream ss(t);
        for (std::string cell; std::getline(ss, cell, ',');) tok.push_back(cell);
        if (tok.size() < 3) throw ParseError("expected domain,label,features...", lineno);
        const std::string dom = detail::trim(tok[0]);
        if (dom != "s" && dom != "t") throw ParseError("domain must be 's' or 't', got '" + dom + "'", lineno);
        Row r{dom == "s", detail::parse_int(tok[1], lineno), VecD(static_cast<Eigen::Index>(tok.size() - 2))};
        for (std::size_t k = 2; k < tok.size(); ++k) r.f(static_cast<Eigen::Index>(k - 2)) = detail::parse_double(tok[k], lineno);
        if (dim < 0) dim = static_cast<int>(r.f.size());
        if (r.f.size() != dim) throw ParseError("feature count differs from earlier rows", lineno);
        if (r.source && r.label < 0) throw ParseError("source rows need a label >= 0", lineno);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw InvalidArgument("feature file contains no samples");

    std::set<int> src_labels, tgt_private;
    for (const auto& r : rows)
        if (r.source) src_labels.insert(r.label);
    for (const auto& r : rows)
        if (!r.source && r.label >= 0 && !src_labels.count(r.label)) tgt_private.insert(r.label);
    std::map<int, int> dense;
    for (int l : src_labels) dense.emplace(l, static_cast<int>(dense.size()));
    for (int l : tgt_private) dense.emplace(l, static_cast<int>(dense.size()));

    Dataset ds;
    ds.known_classes = static_cast<int>(src_labels.size());
    ds.feature_dim = dim;
    for (auto& r : rows) {
        DomainSample s;
        s.features = std::move(r.f);
        s.domain = r.source ? Domain::Source : Domain::Target;
        s.true_label = r.label >= 0 ? dense.at(r.label) : -1;
        s.is_private = s.true_label >= ds.known_classes;
        if (r.source) s.observed_label = s.true_label;
        (r.source ? ds.source : ds.target).push_back(std::move(s));
    }
    if (ds.source.empty()) throw UndefinedScore("feature file has no source rows");
    if (ds.target.empty()) throw UndefinedScore("feature file has no target rows");
    return ds;
}

inline Dataset load_feature_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature file " + path);
    return parse_feature_stream(in);
}

/// Writes true labels for both domains (privates keep their K + j ids).
inline void write_feature_stream(std::ostream& os, const Dataset& ds) {
    os << "# domain,label,features (" << ds.feature_dim << ")\n";
    os << std::setprecision(17);
    auto row = [&](const DomainSample& s, const char* dom) {
        os << dom << ',' << (s.domain == Domain::Source ? s.observed_label : s.true_label);
        for (Eigen::Index k = 0; k < s.features.size(); ++k) os << ',' << s.features(k);
        os << '\n';
    };
    for (const auto& s : ds.source) row(s, "s");
    for (const auto& s : ds.target) row(s, "t");
}

inline void write_feature_file(const std::string& path, const Dataset& ds) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_feature_stream(os, ds);
}

}  // namespace san
