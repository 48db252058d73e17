// Command-line front end: run, sweep-noise, grid, gradcheck, gen-data, score.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "san/san.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

/// Flags shared by the experiment subcommands. Unset optionals leave the
/// config value alone.
struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant, split, out;
    std::optional<double> rho_s, p_view, alpha, lambda, beta, nu_y, nu_z;
    std::optional<int> top_n;
};

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("--config", f.config, "Config file ([section] key = value)");
    app->add_option("--seed", f.seed, "Single seed (replaces experiment.seeds)");
    app->add_option("--variant", f.variant, "san | san-wo-scl | san-wo-aio | san-w-cl, or a comma list");
    app->add_option("--split", f.split, "visda-like | office-like");
    app->add_option("--rho-s", f.rho_s, "Source label-noise rate");
    app->add_option("--p-view", f.p_view, "View-noise rate");
    app->add_option("--alpha", f.alpha, "SCL augmentation boost");
    app->add_option("--lambda", f.lambda, "Contrastive weight");
    app->add_option("--beta", f.beta, "Classifier weight");
    app->add_option("--nu-y", f.nu_y, "Backbone kernel degrees of freedom (default 100)");
    app->add_option("--nu-z", f.nu_z, "Head kernel degrees of freedom (default 10)");
    app->add_option("--top-n", f.top_n, "Top-n softmax support (default 20)");
    app->add_option("--out", f.out, "Output directory");
    app->allow_extras();
}

/// `--section.key value` or `--section.key=value` pairs left over by CLI11.
void apply_dotted(san::ExperimentConfig& cfg, const std::vector<std::string>& extras) {
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& a = extras[i];
        if (a.rfind("--", 0) != 0) throw san::InvalidArgument("unexpected argument '" + a + "'");
        std::string key = a.substr(2), value;
        const auto eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            if (i + 1 >= extras.size()) throw san::InvalidArgument("missing value for '--" + key + "'");
            value = extras[++i];
        }
        if (!san::is_config_key(key)) throw san::InvalidArgument("unknown option '--" + key + "'");
        san::apply_setting(cfg, key, value);
    }
}

/// Config file, then dotted overrides, then the named flags.
san::ExperimentConfig resolve(const CommonFlags& f, const std::vector<std::string>& extras) {
    san::ExperimentConfig cfg;
    if (!f.config.empty()) cfg = san::load_config(f.config);
    apply_dotted(cfg, extras);
    auto set = [&](const char* key, const auto& opt) {
        if (!opt) return;
        std::ostringstream os;
        os << std::setprecision(17) << *opt;
        san::apply_setting(cfg, key, os.str());
    };
    set("experiment.seed", f.seed);
    if (f.variant) san::apply_setting(cfg, "experiment.variants", *f.variant);
    if (f.split) san::apply_setting(cfg, "data.split", *f.split);
    if (f.out) san::apply_setting(cfg, "experiment.out", *f.out);
    set("noise.rho_s", f.rho_s);
    set("noise.p_view", f.p_view);
    set("scl.alpha", f.alpha);
    set("train.lambda", f.lambda);
    set("train.beta", f.beta);
    set("scl.nu_y", f.nu_y);
    set("scl.nu_z", f.nu_z);
    set("train.top_n", f.top_n);
    cfg.validate();
    return cfg;
}

std::string fmt(double v) { return san::fmt_num(v); }

int cmd_run(const san::ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    bool any_all_diverged = false;
    san::ensure_dir(cfg.out_dir);
    san::write_text((fs::path(cfg.out_dir) / "config.ini").string(), san::config_to_text(cfg));
    for (san::Variant v : cfg.variants) {
        const std::string dir = cfg.variants.size() == 1 ? cfg.out_dir : (fs::path(cfg.out_dir) / san::variant_name(v)).string();
        const auto art = san::run_experiment(cfg, v);
        san::write_report(art, dir);
        san::emit_plots(art, dir);
        for (const auto& s : art.seeds)
            if (!s.completed) std::cerr << san::variant_name(v) << " seed " << s.seed << " diverged: " << s.error << "\n";
        const auto& a = art.aggregate;
        std::cout << san::variant_name(v) << ": seeds " << a.completed << "/" << art.seeds.size() << " h_score "
                  << fmt(a.h_mean) << " balance_h_score " << fmt(a.b_mean) << " a_c " << fmt(a.a_c_mean) << " a_t "
                  << fmt(a.a_t_mean) << "  -> " << dir << "\n";
        if (a.completed == 0) any_all_diverged = true;
    }
    return any_all_diverged ? kExitDiverged : kExitOk;
}

int cmd_sweep(const san::ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const auto cells = san::run_noise_sweep(cfg, cfg.rho_list);
    san::ensure_dir(cfg.out_dir);
    san::write_text((fs::path(cfg.out_dir) / "config.ini").string(), san::config_to_text(cfg));
    san::write_text((fs::path(cfg.out_dir) / "sweep.csv").string(), san::sweep_table_csv(cells));
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    bool all_diverged = true;
    for (const auto& c : cells) {
        j.push_back({{"rho_s", c.rho_s}, {"run", san::to_json(c.artifacts)}});
        if (c.artifacts.completed() > 0) all_diverged = false;
    }
    san::write_text((fs::path(cfg.out_dir) / "sweep.json").string(), j.dump(2) + "\n");
    std::cout << san::sweep_table_csv(cells);
    return all_diverged ? kExitDiverged : kExitOk;
}

int cmd_grid(const san::ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    san::ensure_dir(cfg.out_dir);
    san::write_text((fs::path(cfg.out_dir) / "config.ini").string(), san::config_to_text(cfg));
    try {
        const auto g = san::grid_search(cfg, cfg.grid);
        san::write_text((fs::path(cfg.out_dir) / "grid.csv").string(), san::grid_table_csv(g));
        std::cout << san::grid_table_csv(g);
        const auto& b = g.cells[g.best];
        std::cout << "selected lambda " << fmt(b.lambda) << " beta " << fmt(b.beta) << " alpha " << fmt(b.alpha) << " lr0 "
                  << fmt(b.lr0) << " balance_h_score " << fmt(b.artifacts.aggregate.b_mean) << "\n";
        return kExitOk;
    } catch (const san::TrainingDivergence& e) {
        std::cerr << e.what() << "\n";
        return kExitDiverged;
    }
}

int cmd_gradcheck(std::size_t cases, std::uint64_t seed) {
    const auto r = san::run_gradcheck_suite(cases, seed);
    for (const auto& t : r.terms)
        if (!t.passed) std::cout << "FAIL " << t.name << " rel_err " << fmt(t.result.max_rel_error) << "\n";
    std::cout << (r.passed ? "gradcheck passed" : "gradcheck FAILED") << ": " << r.terms.size() << " checks, worst "
              << fmt(r.worst) << " (" << r.worst_name << ")\n";
    return r.passed ? kExitOk : kExitFailure;
}

int cmd_gen_data(const san::ExperimentConfig& cfg, const std::string& file) {
    const std::uint64_t seed = cfg.seeds.front();
    const auto ds = san::make_dataset(cfg, seed);
    std::string path = file;
    if (path.empty()) {
        san::ensure_dir(cfg.out_dir);
        path = (std::filesystem::path(cfg.out_dir) / "features.csv").string();
    }
    san::write_feature_file(path, ds);
    std::cout << "wrote " << ds.source.size() << " source and " << ds.target.size() << " target samples to " << path << "\n";
    return kExitOk;
}

/// Lines `true_label,is_private,prediction`; prediction is a class index or
/// `unknown`. Known classes are 0 .. max known label unless given.
int cmd_score(const std::string& path, std::optional<std::size_t> known_classes) {
    std::ifstream in(path);
    if (!in) throw san::IoError("cannot open predictions file '" + path + "'");
    std::vector<san::Decision> preds;
    std::vector<san::Truth> truths;
    std::string line;
    std::size_t lineno = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = san::detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(t);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(san::detail::trim(tok));
        if (f.size() != 3) throw san::ParseError("expected true_label,is_private,prediction", lineno);
        san::Truth tr;
        tr.label = san::detail::parse_int(f[0], lineno);
        if (f[1] == "1" || f[1] == "true")
            tr.is_private = true;
        else if (f[1] == "0" || f[1] == "false")
            tr.is_private = false;
        else
            throw san::ParseError("is_private must be 0/1 or true/false", lineno);
        if (!tr.is_private) max_label = std::max(max_label, tr.label);
        truths.push_back(tr);
        preds.push_back(f[2] == "unknown" ? san::Decision::unknown()
                                          : san::Decision::known(san::detail::parse_int(f[2], lineno)));
    }
    const std::size_t k = known_classes.value_or(static_cast<std::size_t>(max_label + 1));
    const auto report = san::score(san::eval_counts(preds, truths, k));
    std::cout << san::to_json(report).dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Soft contrastive learning + all-in-one classifier for open-set / universal domain adaptation"};
    app.require_subcommand(1);

    CommonFlags run_f, sweep_f, grid_f, gen_f;
    auto* run = app.add_subcommand("run", "Train and evaluate every configured variant over every seed");
    add_common(run, run_f);
    auto* sweep = app.add_subcommand("sweep-noise", "Label-noise sweep over the configured variants");
    add_common(sweep, sweep_f);
    std::optional<std::string> rho_list;
    sweep->add_option("--rho-list", rho_list, "Comma list of noise rates (sweep.rho)");
    auto* grid = app.add_subcommand("grid", "Grid search over lambda, beta, alpha (and lr0)");
    add_common(grid, grid_f);

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss on random networks");
    std::size_t gc_cases = 50;
    std::uint64_t gc_seed = 1;
    gc->add_option("--cases", gc_cases, "Number of random configurations");
    gc->add_option("--seed", gc_seed, "Seed");

    auto* gen = app.add_subcommand("gen-data", "Write a generated dataset as a feature file");
    add_common(gen, gen_f);
    std::string gen_file;
    gen->add_option("--file", gen_file, "Output file (default <out>/features.csv)");

    auto* sc = app.add_subcommand("score", "Score a predictions file");
    std::string pred_path;
    std::optional<std::size_t> known;
    sc->add_option("predictions", pred_path, "Predictions file")->required();
    sc->add_option("--known-classes", known, "Number of known classes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) return cmd_run(resolve(run_f, run->remaining()));
        if (*sweep) {
            auto cfg = resolve(sweep_f, sweep->remaining());
            if (rho_list) san::apply_setting(cfg, "sweep.rho", *rho_list);
            return cmd_sweep(cfg);
        }
        if (*grid) return cmd_grid(resolve(grid_f, grid->remaining()));
        if (*gc) return cmd_gradcheck(gc_cases, gc_seed);
        if (*gen) return cmd_gen_data(resolve(gen_f, gen->remaining()), gen_file);
        if (*sc) return cmd_score(pred_path, known);
    } catch (const san::InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const san::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const san::UndefinedScore& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const san::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}
