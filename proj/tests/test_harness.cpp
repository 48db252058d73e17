#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "san/harness.hpp"

using namespace san;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.split = DatasetSplitSpec{3, 1, 1};
    c.split.samples_per_class = 10;
    c.split.class_std = 0.08;
    c.split.private_radius = 2.0;
    c.backbone_layers = {8, 6};
    c.head_layers = {8, 4};
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.train.target_batch = 8;
    c.train.schedule.lr0 = 0.05;
    c.train.clamp_eps = 1e-3;
    c.noise.p_view = 0.2;
    c.seeds = {0, 1};
    return c;
}

std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("san_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Config, ParseSectionsAndComments) {
    std::istringstream in(
        "# top comment\n"
        "[experiment]\n"
        "variants = san, san-wo-scl\n"
        "seeds = 3,4\n"
        "; another comment\n"
        "[train]\n"
        "lambda = 0.25\n"
        "top_n = 7\n"
        "[scl]\n"
        "nu_y = 50\n"
        "affinity_grad = false\n"
        "[model]\n"
        "backbone = 12, 6\n");
    ExperimentConfig c;
    parse_config(in, c);
    EXPECT_EQ(c.variants, (std::vector<Variant>{Variant::San, Variant::SanWoScl}));
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_EQ(c.train.lambda, 0.25);
    EXPECT_EQ(c.train.topn.n, 7);
    EXPECT_EQ(c.train.scl.nu_y.nu, 50.0);
    EXPECT_FALSE(c.train.scl.affinity_grad);
    EXPECT_EQ(c.backbone_layers, (std::vector<int>{12, 6}));
}

TEST(Config, ErrorsCarryLineNumbers) {
    std::istringstream unknown("[train]\nlambda = 0.1\nbogus = 3\n");
    ExperimentConfig c;
    try {
        parse_config(unknown, c);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::istringstream bad_value("[train]\nlambda = abc\n");
    EXPECT_THROW(parse_config(bad_value, c), ParseError);
    std::istringstream no_section("lambda = 1\n");
    EXPECT_THROW(parse_config(no_section, c), ParseError);
}

TEST(Config, OverrideByDottedKey) {
    ExperimentConfig c;
    apply_setting(c, "train.beta", "0.5");
    apply_setting(c, "data.split", "office-like");
    apply_setting(c, "noise.rho_s", "0.2");
    apply_setting(c, "train.grad_clip", "5");
    EXPECT_EQ(c.train.grad_clip, 5.0);
    c.train.grad_clip = -1.0;
    EXPECT_THROW(c.train.validate(), InvalidArgument);
    c.train.grad_clip = 5.0;
    EXPECT_EQ(c.train.beta, 0.5);
    EXPECT_EQ(c.split.shared, 10);
    EXPECT_EQ(c.noise.rho_s, 0.2);
    EXPECT_TRUE(is_config_key("scl.alpha"));
    EXPECT_FALSE(is_config_key("scl.gamma"));
    EXPECT_THROW(apply_setting(c, "experiment.variant", "nope"), InvalidArgument);
}

TEST(Config, TextRoundTrip) {
    ExperimentConfig c = tiny_config();
    c.variants = {Variant::San, Variant::SanWoAio};
    c.shift.rotation = 0.125;
    c.train.cl_form = ContrastKind::ClKernel;
    const std::string text = config_to_text(c);
    ExperimentConfig back;
    std::istringstream in(text);
    parse_config(in, back);
    EXPECT_EQ(config_to_text(back), text);
}

TEST(Config, ShippedConfigsLoadAndValidate) {
    for (const char* name : {"visda_like.ini", "smoke.ini", "noise_sweep.ini", "grid.ini"}) {
        const auto c = load_config(std::string(SAN_CONFIG_DIR) + "/" + name);
        EXPECT_NO_THROW(c.validate()) << name;
    }
    EXPECT_THROW(load_config("/nonexistent/x.ini"), IoError);
}

TEST(Config, ValidationRejectsEmptySeeds) {
    ExperimentConfig c;
    c.seeds.clear();
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(RunExperiment, ScoresInRange) {
    const auto art = run_experiment(tiny_config(), Variant::San);
    ASSERT_EQ(art.seeds.size(), 2u);
    for (const auto& s : art.seeds) {
        ASSERT_TRUE(s.completed) << s.error;
        EXPECT_GE(s.report.h_score, 0.0);
        EXPECT_LE(s.report.h_score, 1.0);
        EXPECT_EQ(s.loss_trace.size(), 2u);
    }
    EXPECT_EQ(art.embedding.size(), 40u);
}

TEST(RunExperiment, ZeroEpochsEvaluatesUntrainedNetwork) {
    ExperimentConfig c = tiny_config();
    c.train.epochs = 0;
    const auto art = run_experiment(c, Variant::San);
    for (const auto& s : art.seeds) {
        ASSERT_TRUE(s.completed);
        EXPECT_TRUE(s.loss_trace.empty());
        EXPECT_TRUE(std::isfinite(s.report.h_score));
    }
}

TEST(RunExperiment, AggregateRecomputesFromSeeds) {
    ExperimentConfig c = tiny_config();
    c.seeds = {0, 1, 2};
    const auto art = run_experiment(c, Variant::SanWoScl);
    std::vector<double> h;
    for (const auto& s : art.seeds) h.push_back(s.report.h_score);
    const double mean = (h[0] + h[1] + h[2]) / 3.0;
    double ss = 0.0;
    for (double v : h) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(art.aggregate.h_mean, mean, 1e-15);
    EXPECT_NEAR(art.aggregate.h_std, std::sqrt(ss / 2.0), 1e-15);
    EXPECT_EQ(art.aggregate.completed, 3u);
}

TEST(RunExperiment, DivergentSeedIsRecordedAndSkipped) {
    ExperimentConfig c = tiny_config();
    c.train.schedule.lr0 = 1e200;
    const auto art = run_experiment(c, Variant::San);
    for (const auto& s : art.seeds) {
        EXPECT_FALSE(s.completed);
        EXPECT_FALSE(s.error.empty());
    }
    EXPECT_EQ(art.aggregate.completed, 0u);
    EXPECT_TRUE(std::isnan(art.aggregate.h_mean));
}

TEST(RunExperiment, OvaVariantRuns) {
    const auto art = run_experiment(tiny_config(), Variant::SanWoAio);
    EXPECT_EQ(art.aggregate.completed, 2u);
}

TEST(Sweep, EmptyListRejected) {
    ExperimentConfig c = tiny_config();
    c.variants = {Variant::San, Variant::SanWoAio};
    EXPECT_THROW(run_noise_sweep(c, {}), InvalidArgument);
    c.variants = {Variant::San};
    EXPECT_THROW(run_noise_sweep(c, {0.0}), InvalidArgument);
}

TEST(Sweep, SingleRateMatchesRunExperiment) {
    ExperimentConfig c = tiny_config();
    c.seeds = {0};
    c.variants = {Variant::San, Variant::SanWoAio};
    const auto cells = run_noise_sweep(c, {0.0});
    ASSERT_EQ(cells.size(), 2u);
    for (const auto& cell : cells) {
        const auto direct = run_experiment(c, cell.artifacts.variant);
        EXPECT_EQ(cell.artifacts.aggregate.h_mean, direct.aggregate.h_mean);
        EXPECT_EQ(cell.artifacts.aggregate.b_mean, direct.aggregate.b_mean);
    }
    EXPECT_EQ(count_lines(sweep_table_csv(cells)), 3u);
}

TEST(Grid, OnePointGridEqualsRun) {
    ExperimentConfig c = tiny_config();
    c.seeds = {0};
    const auto g = grid_search(c, GridSpec{});
    ASSERT_EQ(g.cells.size(), 1u);
    EXPECT_EQ(g.best, 0u);
    EXPECT_EQ(g.cells[0].artifacts.aggregate.b_mean, run_experiment(c, Variant::San).aggregate.b_mean);
    EXPECT_EQ(count_lines(grid_table_csv(g)), 2u);
}

TEST(Grid, SelectionMatchesArgmaxOfTable) {
    ExperimentConfig c = tiny_config();
    c.seeds = {0};
    GridSpec grid;
    grid.lambda = {0.05, 0.2};
    grid.alpha = {0.25, 0.75};
    const auto g = grid_search(c, grid);
    ASSERT_EQ(g.cells.size(), 4u);
    // Re-read the table and pick the best row by hand.
    std::istringstream table(grid_table_csv(g));
    std::string line;
    std::getline(table, line);
    double best_b = -1.0;
    std::size_t best_row = 0, row = 0, selected_row = 99;
    while (std::getline(table, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        const double b = std::stod(f[7]);
        if (f[4] == "ok" && b > best_b) best_b = b, best_row = row;
        if (f[8] == "1") selected_row = row;
        ++row;
    }
    EXPECT_EQ(selected_row, best_row);
    EXPECT_EQ(g.best, best_row);
}

TEST(Grid, TieBreaksTowardSmallerLambda) {
    std::vector<GridCell> cells(3);
    const double lambdas[] = {0.3, 0.1, 0.2};
    for (int i = 0; i < 3; ++i) {
        cells[i].lambda = lambdas[i];
        cells[i].artifacts.seeds.resize(1);
        cells[i].artifacts.seeds[0].completed = true;
        cells[i].artifacts.aggregate.completed = 1;
        cells[i].artifacts.aggregate.b_mean = 0.5;
    }
    EXPECT_EQ(select_best(cells), 1u);
    cells[2].artifacts.aggregate.b_mean = 0.6;
    EXPECT_EQ(select_best(cells), 2u);
}

TEST(Grid, DivergentCellsMarkedAndSkipped) {
    ExperimentConfig c = tiny_config();
    c.seeds = {0};
    GridSpec grid;
    grid.lr0 = {0.05, 1e200};
    const auto g = grid_search(c, grid);
    ASSERT_EQ(g.cells.size(), 2u);
    EXPECT_TRUE(g.cells[0].finished());
    EXPECT_FALSE(g.cells[1].finished());
    EXPECT_EQ(g.best, 0u);
    EXPECT_NE(grid_table_csv(g).find("diverged"), std::string::npos);

    GridSpec all_bad;
    all_bad.lr0 = {1e200};
    EXPECT_THROW(grid_search(c, all_bad), TrainingDivergence);
}

TEST(Plots, LossTraceOnlyWithoutEmbedding) {
    ExperimentConfig c = tiny_config();
    c.export_embedding = false;
    const auto art = run_experiment(c, Variant::San);
    const auto dir = temp_dir("noemb");
    const auto files = emit_plots(art, dir);
    ASSERT_EQ(files.size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / "loss_trace.csv"));
    EXPECT_FALSE(std::filesystem::exists(std::filesystem::path(dir) / "embedding.csv"));
}

TEST(Plots, RowCountMatchesPoints) {
    RunArtifacts art;
    art.known_classes = 3;
    for (int i = 0; i < 100; ++i) art.embedding.push_back({i * 0.1, -i * 0.2, i % 4, i % 5 ? Decision::known(i % 3) : Decision::unknown()});
    const auto dir = temp_dir("rows");
    emit_plots(art, dir);
    EXPECT_EQ(count_lines(slurp(dir + "/embedding.csv")), 101u);
    EXPECT_NE(slurp(dir + "/embedding.svg").find("<svg"), std::string::npos);
}

TEST(Plots, DeterministicAcrossReruns) {
    const ExperimentConfig c = tiny_config();
    const auto a = run_experiment(c, Variant::San), b = run_experiment(c, Variant::San);
    const auto da = temp_dir("det_a"), db = temp_dir("det_b");
    emit_plots(a, da);
    emit_plots(b, db);
    write_report(a, da);
    write_report(b, db);
    for (const char* f : {"embedding.csv", "embedding.svg", "loss_trace.csv", "report.json"})
        EXPECT_EQ(slurp(da + "/" + f), slurp(db + "/" + f)) << f;
}

TEST(Plots, UnwritableDirectory) {
    RunArtifacts art;
    const auto blocker = temp_dir("blocker");
    std::ofstream(blocker) << "x";
    EXPECT_THROW(emit_plots(art, blocker + "/sub"), IoError);
}

TEST(Report, JsonShape) {
    const auto art = run_experiment(tiny_config(), Variant::San);
    const auto j = to_json(art);
    EXPECT_EQ(j["variant"], "san");
    ASSERT_EQ(j["seeds"].size(), 2u);
    EXPECT_EQ(j["seeds"][0]["status"], "completed");
    EXPECT_TRUE(j["seeds"][0]["report"].contains("balance_h_score"));
    EXPECT_TRUE(j["aggregate"]["h_score"].contains("mean"));
}

TEST(Pca, OrientationIsCanonical) {
    MatD x(4, 3);
    x << 1, 0, 0, -1, 0, 0, 0, 0.5, 0, 0, -0.5, 0;
    const MatD a = pca2(x), b = pca2(-x);
    EXPECT_TRUE(a.cwiseAbs().isApprox(b.cwiseAbs()));
    EXPECT_NEAR(std::abs(a(0, 0)), 1.0, 1e-12);
}
