#pragma once

// Experiment runner: config files, per-seed runs, noise sweeps, grid search,
// and the report / plot writers.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "san/data.hpp"
#include "san/metrics.hpp"
#include "san/model.hpp"
#include "san/train.hpp"

namespace san {

struct GridSpec {
    std::vector<double> lambda, beta, alpha, lr0;  ///< empty axis = config value
};

struct ExperimentConfig {
    std::vector<Variant> variants{Variant::San};
    std::string split_name = "visda-like";
    DatasetSplitSpec split = visda_like_split();
    std::string feature_file;  ///< if set, replaces the synthetic generator
    DomainShift shift{};
    NoiseSpec noise{};
    TrainConfig train{};
    /// Widths only; input and output sizes follow the data.
    std::vector<int> backbone_layers{64, 32};
    std::vector<int> head_layers{64, 16};
    Activation activation = Activation::Relu;
    std::vector<std::uint64_t> seeds{0};
    std::string out_dir = "out";
    bool export_embedding = true;
    std::vector<double> rho_list{0.0, 0.2, 0.4};
    GridSpec grid{};

    void validate() const {
        if (seeds.empty()) throw InvalidArgument("config: at least one seed required");
        if (variants.empty()) throw InvalidArgument("config: at least one variant required");
        if (feature_file.empty()) split.validate();
        noise.validate();
        train.validate();
        if (backbone_layers.empty() || head_layers.empty()) throw InvalidArgument("config: layer lists must be nonempty");
    }
};

// ---------------------------------------------------------------------------
// Config text: `[section]` headers and `key = value` lines; `#` or `;` starts
// a comment line. Keys are addressed as `section.key`.

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidArgument("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw InvalidArgument("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw InvalidArgument("config: '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& t : split_list(v)) out.push_back(to_double(key, t));
    return out;
}

inline std::vector<int> to_widths(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& t : split_list(v)) out.push_back(static_cast<int>(to_int(key, t)));
    if (out.empty()) throw InvalidArgument("config: '" + key + "' needs at least one width");
    return out;
}

inline ContrastKind parse_cl_form(const std::string& v) {
    if (v == "infonce") return ContrastKind::InfoNce;
    if (v == "kernel-bce") return ContrastKind::ClKernel;
    if (v == "exp-density") return ContrastKind::ClExp;
    throw InvalidArgument("config: train.cl_form must be infonce, kernel-bce or exp-density");
}

inline const char* cl_form_name(ContrastKind k) {
    switch (k) {
        case ContrastKind::ClKernel: return "kernel-bce";
        case ContrastKind::ClExp: return "exp-density";
        default: return "infonce";
    }
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& setters() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::map<std::string, Setter> table = {
        {"experiment.variant", [](C& c, S, S v) { c.variants = {parse_variant(v)}; }},
        {"experiment.variants",
         [](C& c, S, S v) {
             c.variants.clear();
             for (const auto& t : split_list(v)) c.variants.push_back(parse_variant(t));
         }},
        {"experiment.seed", [](C& c, S k, S v) { c.seeds = {static_cast<std::uint64_t>(to_int(k, v))}; }},
        {"experiment.seeds",
         [](C& c, S k, S v) {
             c.seeds.clear();
             for (const auto& t : split_list(v)) c.seeds.push_back(static_cast<std::uint64_t>(to_int(k, t)));
         }},
        {"experiment.out", [](C& c, S, S v) { c.out_dir = v; }},
        {"experiment.embedding", [](C& c, S k, S v) { c.export_embedding = to_bool(k, v); }},

        {"data.split",
         [](C& c, S, S v) {
             const DatasetSplitSpec p = split_preset(v);
             c.split.shared = p.shared;
             c.split.src_private = p.src_private;
             c.split.tgt_private = p.tgt_private;
             c.split_name = v;
         }},
        {"data.shared", [](C& c, S k, S v) { c.split.shared = static_cast<int>(to_int(k, v)); }},
        {"data.src_private", [](C& c, S k, S v) { c.split.src_private = static_cast<int>(to_int(k, v)); }},
        {"data.tgt_private", [](C& c, S k, S v) { c.split.tgt_private = static_cast<int>(to_int(k, v)); }},
        {"data.samples_per_class", [](C& c, S k, S v) { c.split.samples_per_class = static_cast<int>(to_int(k, v)); }},
        {"data.feature_dim", [](C& c, S k, S v) { c.split.feature_dim = static_cast<int>(to_int(k, v)); }},
        {"data.class_std", [](C& c, S k, S v) { c.split.class_std = to_double(k, v); }},
        {"data.radius", [](C& c, S k, S v) { c.split.radius = to_double(k, v); }},
        {"data.private_radius", [](C& c, S k, S v) { c.split.private_radius = to_double(k, v); }},
        {"data.nonlinearity", [](C& c, S k, S v) { c.split.nonlinearity = to_double(k, v); }},
        {"data.feature_file", [](C& c, S, S v) { c.feature_file = v; }},
        {"data.rotation", [](C& c, S k, S v) { c.shift.rotation = to_double(k, v); }},
        {"data.scale", [](C& c, S k, S v) { c.shift.scale = to_double(k, v); }},
        {"data.translation",
         [](C& c, S k, S v) {
             const auto t = to_doubles(k, v);
             if (t.size() != 2) throw InvalidArgument("config: data.translation expects two numbers");
             c.shift.translation = Eigen::Vector2d(t[0], t[1]);
         }},

        {"noise.rho_s", [](C& c, S k, S v) { c.noise.rho_s = to_double(k, v); }},
        {"noise.p_view", [](C& c, S k, S v) { c.noise.p_view = to_double(k, v); }},
        {"noise.aug_jitter", [](C& c, S k, S v) { c.noise.aug_jitter = to_double(k, v); }},
        {"noise.aug_rotation", [](C& c, S k, S v) { c.noise.aug_rotation = to_double(k, v); }},

        {"train.lambda", [](C& c, S k, S v) { c.train.lambda = to_double(k, v); }},
        {"train.beta", [](C& c, S k, S v) { c.train.beta = to_double(k, v); }},
        {"train.lr0", [](C& c, S k, S v) { c.train.schedule.lr0 = to_double(k, v); }},
        {"train.decay_gamma", [](C& c, S k, S v) { c.train.schedule.decay_gamma = to_double(k, v); }},
        {"train.decay_power", [](C& c, S k, S v) { c.train.schedule.decay_power = to_double(k, v); }},
        {"train.epochs", [](C& c, S k, S v) { c.train.epochs = static_cast<int>(to_int(k, v)); }},
        {"train.batch_size", [](C& c, S k, S v) { c.train.batch_size = static_cast<int>(to_int(k, v)); }},
        {"train.target_batch", [](C& c, S k, S v) { c.train.target_batch = static_cast<int>(to_int(k, v)); }},
        {"train.clamp_eps", [](C& c, S k, S v) { c.train.clamp_eps = to_double(k, v); }},
        {"train.grad_clip", [](C& c, S k, S v) { c.train.grad_clip = to_double(k, v); }},
        {"train.top_n",
         [](C& c, S k, S v) {
             const long long n = to_int(k, v);
             if (n < 1) throw InvalidArgument("config: train.top_n must be >= 1");
             c.train.topn = TopNConfig{static_cast<int>(n)};
         }},
        {"train.use_ce", [](C& c, S k, S v) { c.train.use_ce = to_bool(k, v); }},
        {"train.cl_form", [](C& c, S, S v) { c.train.cl_form = parse_cl_form(v); }},

        {"scl.alpha", [](C& c, S k, S v) { c.train.scl.alpha = to_double(k, v); }},
        {"scl.nu_y", [](C& c, S k, S v) { c.train.scl.nu_y = KernelParams{to_double(k, v)}; }},
        {"scl.nu_z", [](C& c, S k, S v) { c.train.scl.nu_z = KernelParams{to_double(k, v)}; }},
        {"scl.affinity_grad", [](C& c, S k, S v) { c.train.scl.affinity_grad = to_bool(k, v); }},

        {"model.backbone", [](C& c, S k, S v) { c.backbone_layers = to_widths(k, v); }},
        {"model.head", [](C& c, S k, S v) { c.head_layers = to_widths(k, v); }},
        {"model.activation", [](C& c, S, S v) { c.activation = parse_activation(v); }},

        {"sweep.rho", [](C& c, S k, S v) { c.rho_list = to_doubles(k, v); }},
        {"grid.lambda", [](C& c, S k, S v) { c.grid.lambda = to_doubles(k, v); }},
        {"grid.beta", [](C& c, S k, S v) { c.grid.beta = to_doubles(k, v); }},
        {"grid.alpha", [](C& c, S k, S v) { c.grid.alpha = to_doubles(k, v); }},
        {"grid.lr0", [](C& c, S k, S v) { c.grid.lr0 = to_doubles(k, v); }},
    };
    return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : detail::setters()) keys.push_back(k);
    return keys;
}

inline bool is_config_key(const std::string& key) { return detail::setters().count(key) != 0; }

/// Sets one dotted key. Unknown keys and malformed values are InvalidArgument.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = detail::setters();
    const auto it = table.find(key);
    if (it == table.end()) throw InvalidArgument("config: unknown key '" + key + "'");
    it->second(cfg, key, detail::trim(value));
}

/// Applies a config text on top of `cfg`. Errors carry the line number.
inline void parse_config(std::istream& in, ExperimentConfig& cfg) {
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) throw ParseError("malformed section header '" + t + "'", lineno);
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + t + "'", lineno);
        const std::string key = detail::trim(t.substr(0, eq));
        if (key.empty()) throw ParseError("empty key", lineno);
        const std::string full = section.empty() ? key : section + "." + key;
        try {
            apply_setting(cfg, full, t.substr(eq + 1));
        } catch (const InvalidArgument& e) {
            throw ParseError(e.what(), lineno);
        }
    }
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig cfg = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    parse_config(in, cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// Formatting helpers. Every number written to an artifact goes through
// fmt_num so reruns are byte-identical.

inline std::string fmt_num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_num(v[i]);
    return s;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

/// Resolved config in the same text format, loadable by parse_config.
inline std::string config_to_text(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "[experiment]\nvariants = ";
    for (std::size_t i = 0; i < c.variants.size(); ++i) os << (i ? "," : "") << variant_name(c.variants[i]);
    os << "\nseeds = ";
    for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? "," : "") << c.seeds[i];
    os << "\nout = " << c.out_dir << "\nembedding = " << (c.export_embedding ? "true" : "false") << "\n\n[data]\n";
    if (!c.feature_file.empty()) {
        os << "feature_file = " << c.feature_file << "\n";
    } else {
        os << "shared = " << c.split.shared << "\nsrc_private = " << c.split.src_private
           << "\ntgt_private = " << c.split.tgt_private << "\nsamples_per_class = " << c.split.samples_per_class
           << "\nfeature_dim = " << c.split.feature_dim << "\nclass_std = " << fmt_num(c.split.class_std)
           << "\nradius = " << fmt_num(c.split.radius) << "\nprivate_radius = " << fmt_num(c.split.private_radius)
           << "\nnonlinearity = " << fmt_num(c.split.nonlinearity) << "\n";
    }
    os << "rotation = " << fmt_num(c.shift.rotation) << "\nscale = " << fmt_num(c.shift.scale)
       << "\ntranslation = " << fmt_num(c.shift.translation.x()) << "," << fmt_num(c.shift.translation.y())
       << "\n\n[noise]\nrho_s = " << fmt_num(c.noise.rho_s) << "\np_view = " << fmt_num(c.noise.p_view)
       << "\naug_jitter = " << fmt_num(c.noise.aug_jitter) << "\naug_rotation = " << fmt_num(c.noise.aug_rotation)
       << "\n\n[train]\nlambda = " << fmt_num(c.train.lambda) << "\nbeta = " << fmt_num(c.train.beta)
       << "\nlr0 = " << fmt_num(c.train.schedule.lr0) << "\ndecay_gamma = " << fmt_num(c.train.schedule.decay_gamma)
       << "\ndecay_power = " << fmt_num(c.train.schedule.decay_power) << "\nepochs = " << c.train.epochs
       << "\nbatch_size = " << c.train.batch_size << "\ntarget_batch = " << c.train.target_batch
       << "\nclamp_eps = " << fmt_num(c.train.clamp_eps) << "\ngrad_clip = " << fmt_num(c.train.grad_clip) << "\ntop_n = " << c.train.topn.n
       << "\nuse_ce = " << (c.train.use_ce ? "true" : "false") << "\ncl_form = " << detail::cl_form_name(c.train.cl_form)
       << "\n\n[scl]\nalpha = " << fmt_num(c.train.scl.alpha) << "\nnu_y = " << fmt_num(c.train.scl.nu_y.nu)
       << "\nnu_z = " << fmt_num(c.train.scl.nu_z.nu)
       << "\naffinity_grad = " << (c.train.scl.affinity_grad ? "true" : "false") << "\n\n[model]\nbackbone = "
       << join_ints(c.backbone_layers) << "\nhead = " << join_ints(c.head_layers)
       << "\nactivation = " << activation_name(c.activation) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Runs.

struct EmbeddingPoint {
    double x = 0.0, y = 0.0;
    int true_class = -1;  ///< known class, or K + j for a target-private class
    Decision decision;
};

struct SeedRun {
    std::uint64_t seed = 0;
    bool completed = false;
    std::string error;  ///< divergence diagnostic when not completed
    ScoreReport report;
    std::vector<double> loss_trace;
};

struct Aggregate {
    std::size_t completed = 0;
    double a_c_mean = 0, a_c_std = 0;
    double a_t_mean = 0, a_t_std = 0;
    double h_mean = 0, h_std = 0;
    double b_mean = 0, b_std = 0;
};

struct RunArtifacts {
    Variant variant = Variant::San;
    std::vector<SeedRun> seeds;
    Aggregate aggregate;
    int known_classes = 0;
    /// Target embedding of the first completed seed, when exported.
    std::vector<EmbeddingPoint> embedding;

    std::size_t completed() const { return aggregate.completed; }
};

/// Mean and sample standard deviation (n - 1; 0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::nan(""), std::nan("")};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline Aggregate aggregate(const std::vector<SeedRun>& runs) {
    std::vector<double> ac, at, h, b;
    for (const auto& r : runs) {
        if (!r.completed) continue;
        ac.push_back(r.report.a_c);
        at.push_back(r.report.a_t);
        h.push_back(r.report.h_score);
        b.push_back(r.report.balance_h_score);
    }
    Aggregate a;
    a.completed = ac.size();
    std::tie(a.a_c_mean, a.a_c_std) = mean_std(ac);
    std::tie(a.a_t_mean, a.a_t_std) = mean_std(at);
    std::tie(a.h_mean, a.h_std) = mean_std(h);
    std::tie(a.b_mean, a.b_std) = mean_std(b);
    return a;
}

/// Data for one seed: generated (or loaded) and then label-noised.
inline Dataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    Dataset ds = cfg.feature_file.empty() ? gen_unda_dataset(cfg.split, cfg.shift, seed) : load_feature_file(cfg.feature_file);
    if (cfg.noise.rho_s > 0.0) {
        Rng rng = make_stream(seed, {kTagLabelNoise});
        inject_label_noise(ds.source, cfg.noise.rho_s, ds.known_classes, rng);
    }
    return ds;
}

inline NetworkSpec network_spec(const ExperimentConfig& cfg, const Dataset& ds, Variant v, std::uint64_t seed) {
    NetworkSpec ns;
    ns.input_dim = ds.feature_dim;
    ns.backbone_layers = cfg.backbone_layers;
    ns.head_layers = cfg.head_layers;
    ns.aio_outputs = 2 * ds.known_classes;
    ns.closed_head = true;
    ns.activation = cfg.activation;
    ns.seed = seed;
    return network_for(v, ns);
}

inline std::vector<Truth> target_truths(const Dataset& ds) {
    std::vector<Truth> t;
    t.reserve(ds.target.size());
    for (const auto& s : ds.target) t.push_back({s.is_private ? -1 : s.true_label, s.is_private});
    return t;
}

/// PCA to two components; each axis is signed so that its largest-magnitude
/// loading is positive.
inline MatD pca2(const MatD& x) {
    const Eigen::Index n = x.rows(), d = x.cols();
    MatD centered = x.rowwise() - x.colwise().mean();
    MatD cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
    Eigen::SelfAdjointEigenSolver<MatD> es(cov);
    MatD basis = MatD::Zero(d, 2);
    for (int c = 0; c < 2 && c < d; ++c) {
        VecD v = es.eigenvectors().col(d - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(c) = v;
    }
    return centered * basis;
}

/// Trains and evaluates one variant over every seed of `cfg`. A diverging
/// seed is recorded with its diagnostic; the others continue.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, Variant variant) {
    cfg.validate();
    RunArtifacts art;
    art.variant = variant;
    for (std::uint64_t seed : cfg.seeds) {
        SeedRun run;
        run.seed = seed;
        const Dataset ds = make_dataset(cfg, seed);
        art.known_classes = ds.known_classes;
        const NetworkSpec ns = network_spec(cfg, ds, variant, seed);
        try {
            TrainResult tr = train(init_parameters(ns), ns, ds, cfg.noise, cfg.train, variant, seed);
            run.loss_trace = tr.epoch_loss;
            const auto decisions = predict(tr.params, ns, ds.target, variant, cfg.train.topn);
            run.report = score(eval_counts(decisions, target_truths(ds), static_cast<std::size_t>(ds.known_classes)));
            run.completed = true;
            if (cfg.export_embedding && art.embedding.empty()) {
                const MatD xy = pca2(forward(tr.params, ns, stack_features(ds.target)).backbone);
                for (std::size_t i = 0; i < ds.target.size(); ++i)
                    art.embedding.push_back({xy(static_cast<Eigen::Index>(i), 0), xy(static_cast<Eigen::Index>(i), 1),
                                             ds.target[i].true_label, decisions[i]});
            }
        } catch (const TrainingDivergence& e) {
            run.error = e.what();
        }
        art.seeds.push_back(std::move(run));
    }
    art.aggregate = aggregate(art.seeds);
    return art;
}

inline RunArtifacts run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, cfg.variants.front()); }

// ---------------------------------------------------------------------------
// Noise sweep and grid search.

struct SweepCell {
    double rho_s = 0.0;
    RunArtifacts artifacts;
};

/// Every variant of `cfg` at every label-noise rate, in (rho, variant) order.
inline std::vector<SweepCell> run_noise_sweep(const ExperimentConfig& cfg, const std::vector<double>& rho_list) {
    if (rho_list.empty()) throw InvalidArgument("run_noise_sweep: empty noise-rate list");
    if (cfg.variants.size() < 2) throw InvalidArgument("run_noise_sweep: at least two variants required");
    std::vector<SweepCell> cells;
    for (double rho : rho_list) {
        ExperimentConfig c = cfg;
        c.noise.rho_s = rho;
        c.export_embedding = false;
        for (Variant v : cfg.variants) cells.push_back({rho, run_experiment(c, v)});
    }
    return cells;
}

struct GridCell {
    double lambda = 0.0, beta = 0.0, alpha = 0.0, lr0 = 0.0;
    RunArtifacts artifacts;
    /// Every seed completed.
    bool finished() const { return artifacts.completed() == artifacts.seeds.size(); }
};

struct GridResult {
    std::vector<GridCell> cells;
    std::size_t best = 0;
};

/// Selection among finished cells by mean Balance H-score; ties go to the
/// smaller lambda, then beta, then alpha, then lr0. Throws TrainingDivergence
/// when no cell finished.
inline std::size_t select_best(const std::vector<GridCell>& cells) {
    std::optional<std::size_t> best;
    auto key = [](const GridCell& c) { return std::tuple(c.lambda, c.beta, c.alpha, c.lr0); };
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i].finished()) continue;
        if (!best) {
            best = i;
            continue;
        }
        const double bi = cells[i].artifacts.aggregate.b_mean, bb = cells[*best].artifacts.aggregate.b_mean;
        if (bi > bb || (bi == bb && key(cells[i]) < key(cells[*best]))) best = i;
    }
    if (!best) throw TrainingDivergence("grid_search: every cell diverged", -1);
    return *best;
}

inline GridResult grid_search(const ExperimentConfig& cfg, const GridSpec& grid) {
    auto axis = [](const std::vector<double>& v, double dflt) { return v.empty() ? std::vector<double>{dflt} : v; };
    const auto lambdas = axis(grid.lambda, cfg.train.lambda);
    const auto betas = axis(grid.beta, cfg.train.beta);
    const auto alphas = axis(grid.alpha, cfg.train.scl.alpha);
    const auto lrs = axis(grid.lr0, cfg.train.schedule.lr0);
    GridResult res;
    for (double l : lambdas)
        for (double b : betas)
            for (double a : alphas)
                for (double lr : lrs) {
                    ExperimentConfig c = cfg;
                    c.train.lambda = l;
                    c.train.beta = b;
                    c.train.scl.alpha = a;
                    c.train.schedule.lr0 = lr;
                    c.export_embedding = false;
                    res.cells.push_back({l, b, a, lr, run_experiment(c, cfg.variants.front())});
                }
    res.best = select_best(res.cells);
    return res;
}

// ---------------------------------------------------------------------------
// Reports.

inline nlohmann::ordered_json to_json(const Aggregate& a) {
    nlohmann::ordered_json j;
    j["completed_seeds"] = a.completed;
    for (auto [name, m, s] : {std::tuple{"a_c", a.a_c_mean, a.a_c_std}, std::tuple{"a_t", a.a_t_mean, a.a_t_std},
                              std::tuple{"h_score", a.h_mean, a.h_std},
                              std::tuple{"balance_h_score", a.b_mean, a.b_std}}) {
        j[name] = {{"mean", std::isnan(m) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(m)},
                   {"std", std::isnan(s) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(s)}};
    }
    return j;
}

inline nlohmann::ordered_json to_json(const RunArtifacts& art) {
    nlohmann::ordered_json j;
    j["variant"] = variant_name(art.variant);
    auto seeds = nlohmann::ordered_json::array();
    for (const auto& r : art.seeds) {
        nlohmann::ordered_json s;
        s["seed"] = r.seed;
        s["status"] = r.completed ? "completed" : "diverged";
        if (r.completed)
            s["report"] = to_json(r.report);
        else
            s["error"] = r.error;
        seeds.push_back(s);
    }
    j["seeds"] = seeds;
    j["aggregate"] = to_json(art.aggregate);
    return j;
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << text;
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline std::string decision_text(const Decision& d) { return d.is_unknown() ? "unknown" : std::to_string(d.known_class); }

inline std::string loss_trace_csv(const RunArtifacts& art) {
    std::string s = "seed,epoch,loss\n";
    for (const auto& r : art.seeds)
        for (std::size_t e = 0; e < r.loss_trace.size(); ++e)
            s += std::to_string(r.seed) + "," + std::to_string(e) + "," + fmt_num(r.loss_trace[e]) + "\n";
    return s;
}

inline std::string embedding_csv(const std::vector<EmbeddingPoint>& pts) {
    std::string s = "x,y,true_class,decision\n";
    for (const auto& p : pts)
        s += fmt_num(p.x) + "," + fmt_num(p.y) + "," + std::to_string(p.true_class) + "," + decision_text(p.decision) + "\n";
    return s;
}

/// Scatter of the embedding: fill colour is the true class, a black ring
/// marks points predicted unknown.
inline std::string embedding_svg(const std::vector<EmbeddingPoint>& pts, int known_classes) {
    const double w = 480, h = 480, pad = 20;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!pts.empty()) {
        x0 = x1 = pts[0].x;
        y0 = y1 = pts[0].y;
        for (const auto& p : pts) {
            x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
            y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
        }
    }
    const double sx = (w - 2 * pad) / std::max(x1 - x0, 1e-12), sy = (h - 2 * pad) / std::max(y1 - y0, 1e-12);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
       << " " << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& p : pts) {
        const int hue = known_classes > 0 && p.true_class >= known_classes ? 0 : (p.true_class * 47) % 360;
        const char* fill_light = p.true_class >= known_classes ? "20%" : "50%";
        char buf[256];
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"hsl(%d,70%%,%s)\"%s/>\n",
                      pad + (p.x - x0) * sx, h - pad - (p.y - y0) * sy, hue, fill_light,
                      p.decision.is_unknown() ? " stroke=\"black\" stroke-width=\"1\"" : "");
        os << buf;
    }
    os << "</svg>\n";
    return os.str();
}

/// loss_trace.csv always; embedding.csv and embedding.svg when the artifacts carry an embedding.
inline std::vector<std::string> emit_plots(const RunArtifacts& art, const std::string& dir) {
    ensure_dir(dir);
    const std::filesystem::path d(dir);
    std::vector<std::string> written;
    write_text((d / "loss_trace.csv").string(), loss_trace_csv(art));
    written.push_back((d / "loss_trace.csv").string());
    if (!art.embedding.empty()) {
        write_text((d / "embedding.csv").string(), embedding_csv(art.embedding));
        write_text((d / "embedding.svg").string(), embedding_svg(art.embedding, art.known_classes));
        written.push_back((d / "embedding.csv").string());
        written.push_back((d / "embedding.svg").string());
    }
    return written;
}

inline void write_report(const RunArtifacts& art, const std::string& dir) {
    ensure_dir(dir);
    write_text((std::filesystem::path(dir) / "report.json").string(), to_json(art).dump(2) + "\n");
}

inline std::string sweep_table_csv(const std::vector<SweepCell>& cells) {
    std::string s = "rho_s,variant,completed_seeds,h_score_mean,h_score_std,balance_h_score_mean,balance_h_score_std\n";
    for (const auto& c : cells) {
        const auto& a = c.artifacts.aggregate;
        s += fmt_num(c.rho_s) + "," + variant_name(c.artifacts.variant) + "," + std::to_string(a.completed) + "," +
             fmt_num(a.h_mean) + "," + fmt_num(a.h_std) + "," + fmt_num(a.b_mean) + "," + fmt_num(a.b_std) + "\n";
    }
    return s;
}

inline std::string grid_table_csv(const GridResult& g) {
    std::string s = "lambda,beta,alpha,lr0,status,completed_seeds,h_score_mean,balance_h_score_mean,selected\n";
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
        const auto& c = g.cells[i];
        const auto& a = c.artifacts.aggregate;
        s += fmt_num(c.lambda) + "," + fmt_num(c.beta) + "," + fmt_num(c.alpha) + "," + fmt_num(c.lr0) + "," +
             (c.finished() ? "ok" : "diverged") + "," + std::to_string(a.completed) + "," + fmt_num(a.h_mean) + "," +
             fmt_num(a.b_mean) + "," + (i == g.best ? "1" : "0") + "\n";
    }
    return s;
}

}  // namespace san
