#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "mat/cli.hpp"
#include "mat/report.hpp"

using namespace mat;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code{0};
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args)
{
    args.insert(args.begin(), "mat_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("mat-cli-" + name);
    fs::remove_all(dir);
    return dir;
}

nlohmann::json summary_without_timing(const fs::path& dir)
{
    auto j = nlohmann::json::parse(io::read_file(dir / "summary.json"));
    j.erase("timing");
    return j;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

EvalReport make_report(const std::string& name, int classes, double clean, std::vector<std::pair<std::string, double>> attacks)
{
    EvalReport r;
    r.model = name;
    r.classes = classes;
    r.examples = 100;
    r.clean_accuracy = clean;
    for (const auto& [id, acc] : attacks) {
        r.attacks.push_back({id, id == "l2" ? "l2" : "linf", acc, {}});
    }
    return r;
}

// Shared training run (the desk preset trains in well under a second).
const fs::path& trained()
{
    static const fs::path dir = [] {
        const auto d = scratch_dir("train-a");
        const auto r = run({"train", "--preset", "desk-two-gaussians", "--seed", "7", "--out", d.string()});
        EXPECT_EQ(r.code, 0) << r.err;
        return d;
    }();
    return dir;
}

}  // namespace

TEST(Cli, TrainingTwiceGivesIdenticalSummaries)
{
    const auto again = scratch_dir("train-b");
    const auto r = run({"train", "--preset", "desk-two-gaussians", "--seed", "7", "--out", again.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(summary_without_timing(trained()), summary_without_timing(again));
    for (const char* f : {"h1.ckpt", "h2.ckpt", "report.md", "report.csv", "transfer.csv"}) {
        EXPECT_EQ(io::read_file(trained() / f), io::read_file(again / f)) << f;
    }
    const auto s = nlohmann::json::parse(io::read_file(again / "summary.json"));
    EXPECT_EQ(s.at("status"), "ok");
    EXPECT_TRUE(s.at("timing").contains("wall_clock_seconds"));
    EXPECT_FALSE(s.at("results").at("manifest").contains("wall_clock_seconds"));
}

TEST(Cli, DifferentSeedsGiveDifferentModels)
{
    const auto other = scratch_dir("train-seed8");
    ASSERT_EQ(run({"train", "--seed", "8", "--out", other.string()}).code, 0);
    EXPECT_NE(io::read_file(trained() / "h1.ckpt"), io::read_file(other / "h1.ckpt"));
}

TEST(Cli, MissingCheckpointExitsWithConfigurationCode)
{
    const auto dir = scratch_dir("missing");
    const auto r = run({"evaluate", "--checkpoint", "missing.ckpt", "--out", dir.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("missing.ckpt"), std::string::npos);
    const auto s = nlohmann::json::parse(io::read_file(dir / "summary.json"));
    EXPECT_EQ(s.at("status"), "error");
    EXPECT_EQ(s.at("exit_code"), 2);
}

TEST(Cli, EvaluateReproducesTrainingReport)
{
    const auto dir = scratch_dir("evaluate");
    const auto r = run({"evaluate", "--seed", "7", "--checkpoint", (trained() / "h2.ckpt").string(), "--out",
                        dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto trained_reports = nlohmann::json::parse(io::read_file(trained() / "summary.json"))["results"]["reports"];
    const auto eval_reports = nlohmann::json::parse(io::read_file(dir / "summary.json"))["results"]["reports"];
    ASSERT_EQ(eval_reports.size(), 1U);
    EXPECT_EQ(eval_reports[0]["model"], "h2");
    EXPECT_EQ(eval_reports[0], trained_reports[1]);
}

TEST(Cli, TransferNeedsTwoCheckpoints)
{
    const auto dir = scratch_dir("transfer");
    EXPECT_EQ(run({"transfer", "--checkpoint", (trained() / "h1.ckpt").string(), "--out", dir.string()}).code, 2);
    const auto r = run({"transfer", "--seed", "7", "--checkpoint", (trained() / "h1.ckpt").string(), "--checkpoint",
                        (trained() / "h2.ckpt").string(), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::read_file(dir / "transfer.csv"), io::read_file(trained() / "transfer.csv"));
}

TEST(Cli, SweepWritesOneRowPerAlpha)
{
    const auto dir = scratch_dir("sweep");
    const auto r = run({"sweep", "--alphas", "0,0.3,0.6,0.9", "--set", "train.epochs=2", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = io::read_file(dir / "sweep.csv");
    EXPECT_EQ(count_lines(csv), 5);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "alpha,clean,robust");
    EXPECT_TRUE(fs::exists(dir / "accuracy_vs_alpha.svg"));
    EXPECT_EQ(run({"sweep", "--alphas", "0,1.5", "--out", dir.string()}).code, 2);
    EXPECT_EQ(run({"sweep", "--alphas", "0,abc", "--out", dir.string()}).code, 2);
}

TEST(Cli, UnknownFlagPrintsUsage)
{
    const auto r = run({"train", "--bogus"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run({"fly"}).code, 2);
    EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, ConfigurationMistakesExitWithCodeTwo)
{
    const auto dir = scratch_dir("config");
    EXPECT_EQ(run({"train", "--set", "train.nonexistent=3", "--out", dir.string()}).code, 2);
    EXPECT_EQ(run({"train", "--preset", "no-such-preset", "--out", dir.string()}).code, 2);
    EXPECT_EQ(run({"train", "--set", "loss.alpha=2", "--out", dir.string()}).code, 2);
    EXPECT_EQ(run({"train", "--set", "train.scenario=sideways", "--out", dir.string()}).code, 2);
    fs::create_directories(dir);
    io::atomic_write(dir / "c.json", "{\"seed\": 3}");
    EXPECT_EQ(run({"train", "--preset", "desk-two-gaussians", "--config", (dir / "c.json").string(), "--out",
                   dir.string()})
                  .code,
              2);
    EXPECT_EQ(run({"report", "--out", dir.string()}).code, 2);
}

TEST(Cli, ReportRegenerationIsByteStable)
{
    const auto dir = scratch_dir("report");
    const auto r = run({"report", "--summary", (trained() / "summary.json").string(), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"report.md", "report.csv", "report.json", "transfer.csv", "scenarios.svg"}) {
        EXPECT_EQ(io::read_file(dir / f), io::read_file(trained() / f)) << f;
    }
    const auto dir2 = scratch_dir("report2");
    ASSERT_EQ(run({"report", "--summary", (dir / "summary.json").string(), "--out", dir2.string()}).code, 0);
    EXPECT_EQ(io::read_file(dir2 / "report.md"), io::read_file(dir / "report.md"));
}

TEST(Cli, FormatSelectsArtifacts)
{
    const auto dir = scratch_dir("format");
    ASSERT_EQ(run({"report", "--summary", (trained() / "summary.json").string(), "--format", "csv", "--out",
                   dir.string()})
                  .code,
              0);
    EXPECT_TRUE(fs::exists(dir / "report.csv"));
    EXPECT_FALSE(fs::exists(dir / "report.md"));
    EXPECT_FALSE(fs::exists(dir / "scenarios.svg"));
}

TEST(Cli, TrainMultiPerturbationAddsBaselineGains)
{
    const auto dir = scratch_dir("train-mp");
    const auto r = run({"train-mp", "--set", "train.epochs=2", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto md = io::read_file(dir / "report.md");
    EXPECT_NE(md.find("| Model | Clean | linf | l2 | R_avg | R_worst |"), std::string::npos);
    EXPECT_NE(md.find("| (vs AT-avg) |"), std::string::npos);
    EXPECT_NE(md.find("| AT-avg |"), std::string::npos);
}

TEST(Cli, OfflineScenarioPretrainsTeacher)
{
    const auto dir = scratch_dir("offline");
    const auto r = run({"train", "--set", "train.scenario=rob-rob-offline", "--set", "train.epochs=2", "--out",
                        dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "teacher.ckpt"));
    const auto teacher = load_checkpoint(dir / "teacher.ckpt").classifier();
    const auto h1 = load_checkpoint(dir / "h1.ckpt").classifier();
    for (std::size_t i = 0; i < h1.parameters().size(); ++i) {
        EXPECT_TRUE((h1.parameters()[i].array() == teacher.parameters()[i].array()).all());
    }
}

TEST(Report, CsvHasOneRowPerModelAndAttack)
{
    const std::vector<EvalReport> reps{make_report("a", 10, 0.9, {{"fgsm", 0.5}, {"pgd", 0.4}}),
                                       make_report("b", 10, 0.8, {{"fgsm", 0.6}, {"pgd", 0.45}})};
    const auto csv = emit_csv(reps);
    EXPECT_EQ(csv, "model,attack,accuracy\na,fgsm,0.500000\na,pgd,0.400000\nb,fgsm,0.600000\nb,pgd,0.450000\n");
}

TEST(Report, MarkdownBoldsBestAndUnderlinesSecond)
{
    std::vector<TableRow> rows;
    rows.push_back({make_report("a", 10, 0.90, {{"fgsm", 0.50}, {"pgd", 0.40}}), std::nullopt});
    rows.push_back({make_report("b", 10, 0.85, {{"fgsm", 0.60}, {"pgd", 0.40}}), std::nullopt});
    rows.push_back({make_report("c", 10, 0.80, {{"fgsm", 0.55}, {"pgd", 0.30}}), std::nullopt});
    const std::string expect =
        "| Model | Clean | FGSM | PGD |\n"
        "|---|---|---|---|\n"
        "| a | **90.00** | 50.00 | **40.00** |\n"
        "| b | <u>85.00</u> | **60.00** | **40.00** |\n"
        "| c | 80.00 | <u>55.00</u> | <u>30.00</u> |\n";
    EXPECT_EQ(emit_markdown(rows, TableLayout::Attacks), expect);
}

TEST(Report, TypeLayoutAndGainRows)
{
    EvalReport mat = make_report("MAT", 10, 0.80, {{"pgd", 0.50}, {"l2", 0.60}});
    mat.per_type = {{"linf", 0.50}, {"l2", 0.60}};
    mat.r_avg = 0.55;
    mat.r_worst = 0.45;
    EvalReport at = make_report("AT", 10, 0.82, {{"pgd", 0.45}, {"l2", 0.58}});
    at.per_type = {{"linf", 0.45}, {"l2", 0.58}};
    at.r_avg = 0.515;
    at.r_worst = 0.40;
    std::vector<TableRow> rows{{mat, at}, {at, std::nullopt}};
    const auto md = emit_markdown(rows, TableLayout::Types);
    EXPECT_NE(md.find("| Model | Clean | linf | l2 | R_avg | R_worst |"), std::string::npos);
    EXPECT_NE(md.find("| MAT | <u>80.00</u> | **50.00** | **60.00** | **55.00** | **45.00** |"), std::string::npos);
    EXPECT_NE(md.find("| (vs AT) | (-2.00) | (+5.00) | (+2.00) | (+3.50) | (+5.00) |"), std::string::npos);
}

TEST(Report, MixedClassCountsAreRejected)
{
    const std::vector<EvalReport> reps{make_report("a", 10, 0.9, {{"pgd", 0.4}}),
                                       make_report("b", 100, 0.6, {{"pgd", 0.2}})};
    EXPECT_THROW(emit_csv(reps), AggregationError);
    EXPECT_THROW(emit_json(reps), AggregationError);
    std::vector<TableRow> rows{{reps[0], std::nullopt}, {reps[1], std::nullopt}};
    EXPECT_THROW(emit_markdown(rows, TableLayout::Attacks), AggregationError);
    EXPECT_EQ(AggregationError("x").exit_code(), 3);
}

TEST(Report, SweepCsvAndPlotsAreWellFormed)
{
    const std::vector<SweepRow> rows{{0.0, 0.9, 0.5}, {0.6, 0.88, 0.55}};
    EXPECT_EQ(sweep_csv(rows), "alpha,clean,robust\n0.0000,0.900000,0.500000\n0.6000,0.880000,0.550000\n");
    const auto svg = svg_sweep(rows);
    EXPECT_EQ(svg.rfind("<svg", 0), 0U);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
