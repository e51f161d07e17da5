#ifndef MAT_CLI_HPP
#define MAT_CLI_HPP

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mat/config.hpp"
#include "mat/evaluation.hpp"
#include "mat/report.hpp"
#include "mat/sweep.hpp"
#include "mat/trainer.hpp"

namespace mat {

// Exit codes: 0 success, 2 configuration error (including bad flags), 3 runtime or numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct CliOptions {
    std::string command;
    std::string preset;
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out{"mat-out"};
    std::vector<std::string> overrides;
    std::vector<std::string> checkpoints;
    std::string alphas;
    std::string format{"all"};
    std::vector<std::string> summaries;
    std::string data_root;
};

namespace cli_detail {

inline std::string utc_now()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

inline std::vector<double> parse_alphas(const std::string& s)
{
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) {
            throw ConfigError("--alphas entry '" + item + "' is not a number");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw ConfigError("--alphas is empty");
    }
    return out;
}

struct Run {
    const CliOptions& opt;
    nlohmann::json config;
    nlohmann::json results = nlohmann::json::object();
    std::vector<std::string> artifacts;

    std::filesystem::path out() const { return opt.out; }

    void write(const std::string& name, const std::string& bytes)
    {
        io::atomic_write(out() / name, bytes);
        artifacts.push_back(name);
    }

    void render()
    {
        for (const auto& [name, bytes] : render_artifacts(results, split_list(opt.format))) {
            write(name, bytes);
        }
    }
};

inline std::vector<nlohmann::json> evaluate_members(const Cohort& cohort, const AttackSuite& suite,
                                                    const Dataset& test, std::uint64_t seed)
{
    std::vector<nlohmann::json> out;
    for (const auto& m : cohort.members) {
        out.push_back(report_to_json(evaluate_suite(m.model, suite, test, seed, m.name)));
    }
    return out;
}

inline std::uint64_t eval_seed(const nlohmann::json& c) { return get<std::uint64_t>(c.at("eval"), "seed"); }

inline void save_members(Run& run, const Cohort& cohort, int epoch)
{
    for (const auto& m : cohort.members) {
        const std::string name = m.name + ".ckpt";
        save_checkpoint(m.model, m.optim, epoch, m.attack_rng, run.out() / name);
        run.artifacts.push_back(name);
    }
}

inline void record_manifest(Run& run, const RunManifest& manifest)
{
    nlohmann::json m = manifest.to_json();
    run.write("manifest.json", m.dump(2) + "\n");
    m.erase("wall_clock_seconds");  // timing lives only in the summary's "timing" block
    run.results["manifest"] = m;
}

inline void cmd_train(Run& run)
{
    const auto& c = run.config;
    const DataSplits data = load_data(c, data_root(run.opt.data_root));
    TrainConfig cfg = train_config_from(c);
    cfg.checkpoint_dir = run.out() / "checkpoints";
    const OptimState optim = optim_from_config(c);
    const PerturbationSpec attack = spec_from_json(c.at("attack").at("train"));
    const auto arch = get<std::string>(c.at("model"), "arch");
    const auto networks = get<std::size_t>(c.at("train"), "networks");
    const std::uint64_t seed = cfg.seed;

    Cohort cohort = make_peer_cohort(cfg.scenario == Scenario::RobRobOnline ? networks : 2, arch, data.train.shape,
                                     data.train.classes, attack, optim, seed);
    RunManifest manifest;
    if (cfg.scenario == Scenario::RobRobOnline) {
        manifest = train_mat(cohort, data.train, cfg);
    } else {
        std::optional<std::filesystem::path> teacher;
        if (is_offline(cfg.scenario)) {
            // Pretrain h1 on its own (adversarially for rob-*, naturally for nat-*) with the same budget.
            Cohort t = make_peer_cohort(1, arch, data.train.shape, data.train.classes, attack, optim, seed);
            TrainConfig tc = cfg;
            tc.checkpoint_every = 0;
            train_single(t, data.train, tc, !is_natural_teacher(cfg.scenario));
            teacher = run.out() / "teacher.ckpt";
            save_checkpoint(t.members[0].model, t.members[0].optim, cfg.epochs, t.members[0].attack_rng, *teacher);
            run.artifacts.push_back("teacher.ckpt");
        }
        manifest = train_scenario(cohort, data.train, cfg, teacher);
    }
    save_members(run, cohort, cfg.epochs);
    record_manifest(run, manifest);

    const AttackSuite suite = suite_from_config(c);
    const std::uint64_t es = eval_seed(c);
    nlohmann::json reports = nlohmann::json::array();
    for (auto& r : evaluate_members(cohort, suite, data.test, es)) {
        reports.push_back(std::move(r));
    }
    run.results["reports"] = reports;
    run.results["layout"] = "attacks";

    const PerturbationSpec eval_spec = spec_from_json(c.at("attack").at("eval"));
    std::vector<Classifier> models;
    std::vector<std::string> names;
    for (const auto& m : cohort.members) {
        models.push_back(m.model);
        names.push_back(m.name);
    }
    if (models.size() >= 2) {
        const Eigen::MatrixXd t = transfer_matrix(models, eval_spec, data.test, es, "pgd");
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            std::vector<double> row(t.cols());
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
                row[static_cast<std::size_t>(j)] = t(i, j);
            }
            rows.push_back(row);
        }
        run.results["transfer"] = {{"models", names}, {"matrix", rows}};
    }
    nlohmann::json obf = nlohmann::json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (i == 0 && is_natural_teacher(cfg.scenario)) {
            continue;
        }
        std::vector<Classifier> sources;
        for (std::size_t j = 0; j < models.size(); ++j) {
            if (j != i) {
                sources.push_back(models[j]);
            }
        }
        nlohmann::json o = obfuscation_to_json(obfuscation_check(models[i], data.test, eval_spec, sources, es));
        o["model"] = names[i];
        obf.push_back(std::move(o));
    }
    run.results["obfuscation"] = obf;
    // The robust partner is the last network.
    const auto last = report_from_json(reports.back());
    run.results["scenarios"] = nlohmann::json::array(
        {{{"name", scenario_name(cfg.scenario)}, {"clean", last.clean_accuracy}, {"robust", last.attack("pgd").accuracy}}});
    run.render();
}

inline void cmd_train_mp(Run& run)
{
    const auto& c = run.config;
    const DataSplits data = load_data(c, data_root(run.opt.data_root));
    TrainConfig cfg = train_config_from(c);
    cfg.checkpoint_dir = run.out() / "checkpoints";
    const OptimState optim = optim_from_config(c);
    const auto specs = specs_from_json(c.at("mp").at("specialists"));
    const auto arch = get<std::string>(c.at("model"), "arch");
    Cohort cohort = make_mp_cohort(specs, arch, data.train.shape, data.train.classes, optim, cfg.seed);
    const RunManifest manifest = train_mat_mp(cohort, data.train, cfg);
    save_members(run, cohort, cfg.epochs);
    record_manifest(run, manifest);

    const AttackSuite suite = mp_suite_from_config(c);
    const std::uint64_t es = eval_seed(c);
    nlohmann::json reports = nlohmann::json::array();
    for (auto& r : evaluate_members(cohort, suite, data.test, es)) {
        reports.push_back(std::move(r));
    }
    if (c.at("mp").value("baseline", false)) {
        // Same generalist initialisation trained without distillation.
        Cohort base;
        base.members.push_back(make_mp_cohort(specs, arch, data.train.shape, data.train.classes, optim, cfg.seed)
                                   .members.back());
        base.members[0].name = std::string("AT-") + strategy_name(cfg.strategy);
        train_at_mp(base, data.train, cfg, specs);
        reports.push_back(report_to_json(evaluate_suite(base.members[0].model, suite, data.test, es,
                                                        base.members[0].name)));
        run.results["baselines"] = {{"generalist", base.members[0].name}};
    }
    run.results["reports"] = reports;
    run.results["layout"] = "types";
    run.render();
}

inline std::vector<std::pair<std::string, Classifier>> load_models(const CliOptions& opt, std::size_t at_least)
{
    if (opt.checkpoints.size() < at_least) {
        throw ConfigError(opt.command + " needs " + (at_least == 1 ? "--checkpoint" : "at least " +
                          std::to_string(at_least) + " --checkpoint paths"));
    }
    std::vector<std::pair<std::string, Classifier>> out;
    for (const auto& p : opt.checkpoints) {
        out.emplace_back(std::filesystem::path(p).stem().string(), load_checkpoint(p).classifier());
    }
    return out;
}

inline void cmd_evaluate(Run& run)
{
    const auto models = load_models(run.opt, 1);
    const DataSplits data = load_data(run.config, data_root(run.opt.data_root));
    const AttackSuite suite = suite_from_config(run.config);
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& [name, model] : models) {
        reports.push_back(report_to_json(evaluate_suite(model, suite, data.test, eval_seed(run.config), name)));
    }
    run.results["reports"] = reports;
    run.results["layout"] = "attacks";
    run.render();
}

inline void cmd_transfer(Run& run)
{
    const auto loaded = load_models(run.opt, 2);
    const DataSplits data = load_data(run.config, data_root(run.opt.data_root));
    std::vector<Classifier> models;
    std::vector<std::string> names;
    for (const auto& [n, m] : loaded) {
        names.push_back(n);
        models.push_back(m);
    }
    const Eigen::MatrixXd t = transfer_matrix(models, spec_from_json(run.config.at("attack").at("eval")), data.test,
                                              eval_seed(run.config), "pgd");
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
            row.push_back(t(i, j));
        }
        rows.push_back(row);
    }
    run.results["transfer"] = {{"models", names}, {"matrix", rows}};
    run.render();
}

inline void cmd_sweep(Run& run)
{
    const auto& c = run.config;
    const std::vector<double> grid =
        run.opt.alphas.empty() ? get<std::vector<double>>(c.at("sweep"), "alphas") : parse_alphas(run.opt.alphas);
    const DataSplits data = load_data(c, data_root(run.opt.data_root));
    SweepSetup s;
    s.arch = get<std::string>(c.at("model"), "arch");
    s.networks = get<std::size_t>(c.at("train"), "networks");
    s.train_attack = spec_from_json(c.at("attack").at("train"));
    s.eval_attack = spec_from_json(c.at("attack").at("eval"));
    s.optim = optim_from_config(c);
    s.train = train_config_from(c);
    s.val_fraction = get<double>(c.at("sweep"), "val_fraction");
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : alpha_sweep(data.train, grid, s)) {
        rows.push_back({{"alpha", r.alpha}, {"clean", r.clean}, {"robust", r.robust}});
    }
    run.results["sweep"] = rows;
    run.render();
}

// Merges the "results" blocks of one or more summaries and re-renders them.
inline void cmd_report(Run& run)
{
    if (run.opt.summaries.empty()) {
        throw ConfigError("report needs --summary");
    }
    nlohmann::json merged = nlohmann::json::object();
    for (const auto& path : run.opt.summaries) {
        nlohmann::json s;
        try {
            s = nlohmann::json::parse(io::read_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("summary '" + path + "' is not valid JSON: " + e.what());
        }
        const nlohmann::json r = s.value("results", nlohmann::json::object());
        for (const char* list : {"reports", "scenarios"}) {
            if (r.contains(list)) {
                for (const auto& item : r.at(list)) {
                    merged[list].push_back(item);
                }
            }
        }
        for (const char* single : {"layout", "sweep", "transfer"}) {
            if (r.contains(single) && !merged.contains(single)) {
                merged[single] = r.at(single);
            }
        }
        if (r.contains("baselines")) {
            merged["baselines"].update(r.at("baselines"));
        }
    }
    run.results = merged;
    run.render();
}

}  // namespace cli_detail

inline nlohmann::json resolve_config(const CliOptions& opt)
{
    nlohmann::json c;
    if (!opt.config_file.empty()) {
        c = load_config_file(opt.config_file);
        if (!opt.preset.empty()) {
            throw ConfigError("--preset and --config are mutually exclusive");
        }
    } else {
        c = preset(opt.preset.empty() ? "desk-two-gaussians" : opt.preset);
    }
    if (opt.seed) {
        c["seed"] = *opt.seed;
    }
    for (const auto& o : opt.overrides) {
        apply_override(c, o);
    }
    return c;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CliOptions opt;
    CLI::App app{"Mutual adversarial training: train, evaluate and report on classifier cohorts", "mat_cli"};
    app.add_option("command", opt.command, "train | train-mp | evaluate | transfer | sweep | report")
        ->required()
        ->check(CLI::IsMember({"train", "train-mp", "evaluate", "transfer", "sweep", "report"}));
    app.add_option("--preset", opt.preset, "named preset");
    app.add_option("--config", opt.config_file, "JSON config file");
    app.add_option("--seed", opt.seed, "run seed");
    app.add_option("--out", opt.out, "output directory");
    app.add_option("--set", opt.overrides, "dotted.key=value override (repeatable)");
    app.add_option("--checkpoint", opt.checkpoints, "checkpoint path (repeatable)");
    app.add_option("--alphas", opt.alphas, "comma-separated alpha grid");
    app.add_option("--format", opt.format, "csv, json, markdown, plot or all (comma-separated)");
    app.add_option("--summary", opt.summaries, "summary JSON to re-render (repeatable)");
    app.add_option("--data-root", opt.data_root, "data root (default $MAT_DATA_ROOT, else ./data)");

    try {
        std::vector<std::string> args;
        for (int i = argc - 1; i > 0; --i) {
            args.emplace_back(argv[i]);
        }
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitConfig;
    }

    const auto started = std::chrono::steady_clock::now();
    const std::string started_at = cli_detail::utc_now();
    nlohmann::json summary{{"command", opt.command}};
    int code = kExitOk;
    std::string message;
    cli_detail::Run run{opt, nlohmann::json::object(), nlohmann::json::object(), {}};
    try {
        run.config = resolve_config(opt);
        if (opt.command == "train") {
            cli_detail::cmd_train(run);
        } else if (opt.command == "train-mp") {
            cli_detail::cmd_train_mp(run);
        } else if (opt.command == "evaluate") {
            cli_detail::cmd_evaluate(run);
        } else if (opt.command == "transfer") {
            cli_detail::cmd_transfer(run);
        } else if (opt.command == "sweep") {
            cli_detail::cmd_sweep(run);
        } else {
            cli_detail::cmd_report(run);
        }
    } catch (const Error& e) {
        code = e.exit_code();
        message = e.what();
    } catch (const nlohmann::json::exception& e) {
        code = kExitConfig;
        message = std::string("configuration: ") + e.what();
    } catch (const std::exception& e) {
        code = kExitRuntime;
        message = e.what();
    }
    if (code != kExitOk) {
        err << "error: " << message << "\n";
    }
    std::sort(run.artifacts.begin(), run.artifacts.end());
    summary["status"] = code == kExitOk ? "ok" : "error";
    summary["exit_code"] = code;
    summary["error"] = message;
    summary["config"] = run.config;
    summary["results"] = run.results;
    summary["artifacts"] = run.artifacts;
    summary["timing"] = {{"started_at", started_at},
                         {"finished_at", cli_detail::utc_now()},
                         {"wall_clock_seconds",
                          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}};
    try {
        io::atomic_write(opt.out / "summary.json", summary.dump(2) + "\n");
    } catch (const std::exception& e) {
        err << "error: could not write summary: " << e.what() << "\n";
        return code == kExitOk ? kExitRuntime : code;
    }
    if (code == kExitOk) {
        out << "wrote " << (opt.out / "summary.json").string() << "\n";
    }
    return code;
}

}  // namespace mat

#endif  // MAT_CLI_HPP
