#ifndef MAT_CONFIG_HPP
#define MAT_CONFIG_HPP

#include <cstdlib>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mat/attacks.hpp"
#include "mat/core/optim.hpp"
#include "mat/data.hpp"
#include "mat/evaluation.hpp"
#include "mat/io.hpp"
#include "mat/losses.hpp"
#include "mat/trainer.hpp"

namespace mat {

using nlohmann::json;

inline json spec_json(std::string_view norm, double eps, double step, int steps, int restarts = 1,
                      std::string_view init = "uniform")
{
    return {{"norm", norm},         {"eps", eps},   {"step_size", step},       {"steps", steps},
            {"restarts", restarts}, {"init", init}, {"inner_loss", "boosted_ce"}};
}

// Complete configuration with every recognised key; presets patch it.
inline json base_config()
{
    return {
        {"seed", 0},
        {"data",
         {{"source", "synthetic"},
          {"kind", "two-gaussians"},
          {"n", 1000},
          {"test_n", 2000},
          {"dim", 20},
          {"gap", 0.4},
          {"sigma", 0.2},
          {"weak_gap", 0.06},
          {"weak_sigma", 0.03},
          {"image_size", 8},
          {"image_channels", 1},
          {"path", ""},
          {"test_path", ""},
          {"test_fraction", 0.2}}},
        {"model", {{"arch", "mlp:2x32"}}},
        {"train",
         {{"epochs", 20},
          {"batch_size", 64},
          {"lr", 0.05},
          {"momentum", 0.9},
          {"weight_decay", 0.0},
          {"milestones", json::array()},
          {"lr_factor", 0.1},
          {"networks", 2},
          {"scenario", "rob-rob-online"},
          {"augment", false},
          {"flip_prob", 0.5},
          {"pad", 4},
          {"checkpoint_every", 0},
          {"msd_steps", 0}}},
        {"loss",
         {{"alpha", 0.6},
          {"detach_teacher", false},
          {"cohort_divisor", "n-1"},
          {"specialist_peers_include_generalist", false}}},
        {"attack", {{"train", spec_json("linf", 0.04, 0.01, 10)}, {"eval", spec_json("linf", 0.04, 0.005, 20)}}},
        {"mp",
         {{"strategy", "avg"},
          {"baseline", true},
          {"specialists", json::array({spec_json("linf", 0.04, 0.01, 10), spec_json("l2", 0.1, 0.025, 10)})},
          {"eval", json::array({spec_json("linf", 0.04, 0.005, 20), spec_json("l2", 0.1, 0.0125, 20)})}}},
        {"eval", {{"attacks", json::array()}, {"seed", 1}}},
        {"sweep", {{"alphas", json::array({0.0, 0.3, 0.6, 0.9, 0.99})}, {"val_fraction", 0.2}}},
    };
}

inline const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names{"desk-two-gaussians", "desk-image-subset", "paper-cifar10",
                                                "paper-cifar100", "paper-mp"};
    return names;
}

inline json preset_patch(std::string_view name)
{
    if (name == "desk-two-gaussians") {
        return json::object();
    }
    if (name == "desk-image-subset") {
        // Small CIFAR-format subset under the data root; a short CNN run.
        return {{"data", {{"source", "image-batches"}, {"path", "desk-image-subset"}, {"test_fraction", 0.2}}},
                {"model", {{"arch", "cnn:2x8"}}},
                {"train", {{"epochs", 10}, {"batch_size", 64}, {"lr", 0.02}, {"augment", true}}},
                {"attack",
                 {{"train", spec_json("linf", 8.0 / 255.0, 2.0 / 255.0, 5)},
                  {"eval", spec_json("linf", 8.0 / 255.0, 2.0 / 255.0, 20)}}}};
    }
    if (name == "paper-cifar10" || name == "paper-cifar100") {
        // CIFAR protocol: SGD lr 0.01, momentum 0.9, weight decay 3.5e-3, lr x0.1 at
        // epochs 75/90/100, batch 128, 120 epochs, flip + 4-pixel-pad crop.
        // Training PGD: eps 8/255, K=10, step 0.007. Evaluation PGD: K=100, step 0.003.
        const double alpha = name == "paper-cifar10" ? 0.6 : 0.45;
        const std::string path = name == "paper-cifar10" ? "cifar-10-batches-bin" : "cifar-100-binary";
        return {{"data", {{"source", "image-batches"}, {"path", path}, {"test_path", path + "/test"}}},
                {"model", {{"arch", "cnn:3x32"}}},
                {"train",
                 {{"epochs", 120},
                  {"batch_size", 128},
                  {"lr", 0.01},
                  {"momentum", 0.9},
                  {"weight_decay", 3.5e-3},
                  {"milestones", {75, 90, 100}},
                  {"lr_factor", 0.1},
                  {"augment", true}}},
                {"loss", {{"alpha", alpha}}},
                {"attack",
                 {{"train", spec_json("linf", 8.0 / 255.0, 0.007, 10)},
                  {"eval", spec_json("linf", 8.0 / 255.0, 0.003, 100)}}}};
    }
    if (name == "paper-mp") {
        // Multi-perturbation protocol: (linf, l2, l1) budgets 0.03 / 0.5 / 12, steps
        // 0.003 / 0.05 / 0.05, iterations 40 / 50 / 50; evaluation with 10 restarts.
        return {{"data", {{"source", "image-batches"}, {"path", "cifar-10-batches-bin"},
                          {"test_path", "cifar-10-batches-bin/test"}}},
                {"model", {{"arch", "cnn:3x32"}}},
                {"train",
                 {{"epochs", 120},
                  {"batch_size", 128},
                  {"lr", 0.01},
                  {"momentum", 0.9},
                  {"weight_decay", 3.5e-3},
                  {"milestones", {75, 90, 100}},
                  {"augment", true}}},
                {"mp",
                 {{"strategy", "avg"},
                  {"specialists", json::array({spec_json("linf", 0.03, 0.003, 40), spec_json("l2", 0.5, 0.05, 50),
                                               spec_json("l1", 12.0, 0.05, 50)})},
                  {"eval", json::array({spec_json("linf", 0.03, 0.003, 40, 10), spec_json("l2", 0.5, 0.05, 50, 10),
                                        spec_json("l1", 12.0, 0.05, 50, 10)})}}}};
    }
    std::string known;
    for (const auto& n : preset_names()) {
        known += (known.empty() ? "" : ", ") + n;
    }
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

inline json preset(std::string_view name)
{
    json c = base_config();
    c.merge_patch(preset_patch(name));
    return c;
}

// A config file is JSON; an optional "preset" key names the starting point.
inline json load_config_file(const std::filesystem::path& path)
{
    json file;
    try {
        file = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!file.is_object()) {
        throw ConfigError("config file '" + path.string() + "' must hold a JSON object");
    }
    json c = file.contains("preset") ? preset(file.at("preset").get<std::string>()) : base_config();
    file.erase("preset");
    c.merge_patch(file);
    return c;
}

// "a.b.c=value": the key path must already exist (array elements by index).
// The value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(json& config, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (node->is_object() && node->contains(part)) {
            node = &(*node)[part];
        } else if (node->is_array() && !part.empty() &&
                   part.find_first_not_of("0123456789") == std::string::npos &&
                   std::stoul(part) < node->size()) {
            node = &(*node)[std::stoul(part)];
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    *node = std::move(value);
}

template <class T>
T get(const json& j, const char* key)
{
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline PerturbationSpec spec_from_json(const json& j)
{
    PerturbationSpec s;
    s.norm = norm_from_name(get<std::string>(j, "norm"));
    s.eps = get<double>(j, "eps");
    s.step_size = get<double>(j, "step_size");
    s.steps = get<int>(j, "steps");
    s.restarts = j.contains("restarts") ? get<int>(j, "restarts") : 1;
    s.init = init_from_name(j.contains("init") ? get<std::string>(j, "init") : "uniform");
    s.inner_loss = inner_loss_from_name(j.contains("inner_loss") ? get<std::string>(j, "inner_loss") : "boosted_ce");
    s.validate();
    return s;
}

inline OptimState optim_from_config(const json& c)
{
    const json& t = c.at("train");
    OptimState o;
    o.learning_rate = get<double>(t, "lr");
    o.momentum = get<double>(t, "momentum");
    o.weight_decay = get<double>(t, "weight_decay");
    o.milestones = get<std::vector<int>>(t, "milestones");
    o.factor = get<double>(t, "lr_factor");
    o.validate();
    return o;
}

inline LossWeights weights_from_config(const json& c)
{
    const json& l = c.at("loss");
    LossWeights w;
    w.alpha = get<double>(l, "alpha");
    w.detach_teacher = get<bool>(l, "detach_teacher");
    const auto div = get<std::string>(l, "cohort_divisor");
    if (div == "n-1") {
        w.cohort_divisor = CohortDivisor::NMinus1;
    } else if (div == "n") {
        w.cohort_divisor = CohortDivisor::AsWritten;
    } else {
        throw ConfigError("cohort_divisor must be 'n-1' or 'n'");
    }
    w.specialist_peers_include_generalist = get<bool>(l, "specialist_peers_include_generalist");
    w.validate();
    return w;
}

inline TrainConfig train_config_from(const json& c)
{
    const json& t = c.at("train");
    TrainConfig cfg;
    cfg.epochs = get<int>(t, "epochs");
    cfg.batch_size = get<std::size_t>(t, "batch_size");
    cfg.weights = weights_from_config(c);
    cfg.scenario = scenario_from_name(get<std::string>(t, "scenario"));
    cfg.strategy = strategy_from_name(get<std::string>(c.at("mp"), "strategy"));
    cfg.seed = get<std::uint64_t>(c, "seed");
    cfg.msd_steps = get<int>(t, "msd_steps");
    cfg.augment = get<bool>(t, "augment");
    cfg.augment_ops.flip_prob = get<double>(t, "flip_prob");
    cfg.augment_ops.pad = get<int>(t, "pad");
    cfg.checkpoint_every = get<int>(t, "checkpoint_every");
    cfg.snapshot = c;
    cfg.validate();
    return cfg;
}

inline std::vector<PerturbationSpec> specs_from_json(const json& arr)
{
    std::vector<PerturbationSpec> out;
    for (const auto& j : arr) {
        out.push_back(spec_from_json(j));
    }
    return out;
}

// Explicit eval.attacks entries, or FGSM + PGD at the evaluation spec.
inline AttackSuite suite_from_config(const json& c)
{
    AttackSuite s;
    const json& list = c.at("eval").at("attacks");
    if (list.empty()) {
        const PerturbationSpec e = spec_from_json(c.at("attack").at("eval"));
        s.attacks.push_back({"fgsm", norm_name(Norm::Linf), AttackKind::Fgsm, e, {}, 1.0});
        s.attacks.push_back({"pgd", norm_name(e.norm), AttackKind::Pgd, e, {}, 1.0});
    } else {
        for (const auto& j : list) {
            AttackEntry a;
            a.id = get<std::string>(j, "id");
            a.kind = attack_kind_from_name(get<std::string>(j, "kind"));
            if (a.kind == AttackKind::Msd) {
                a.specs = specs_from_json(j.at("specs"));
                a.spec = a.specs.front();
            } else if (a.kind == AttackKind::GaussianNoise || a.kind == AttackKind::SaltPepper) {
                a.spec.norm = a.kind == AttackKind::GaussianNoise ? Norm::L2 : Norm::L1;
                a.spec.eps = get<double>(j, "eps");
                a.spec.restarts = j.contains("trials") ? get<int>(j, "trials") : 1;
            } else {
                a.spec = spec_from_json(j);
            }
            a.decay = j.contains("decay") ? get<double>(j, "decay") : 1.0;
            a.type = j.contains("type") ? get<std::string>(j, "type") : std::string(norm_name(a.spec.norm));
            s.attacks.push_back(std::move(a));
        }
    }
    s.validate();
    return s;
}

// One PGD entry per multi-perturbation evaluation spec, typed by norm.
inline AttackSuite mp_suite_from_config(const json& c)
{
    AttackSuite s;
    for (const auto& spec : specs_from_json(c.at("mp").at("eval"))) {
        const std::string n = norm_name(spec.norm);
        s.attacks.push_back({"pgd-" + n, n, AttackKind::Pgd, spec, {}, 1.0});
    }
    s.validate();
    return s;
}

inline std::filesystem::path data_root(const std::string& flag)
{
    if (!flag.empty()) {
        return flag;
    }
    if (const char* env = std::getenv("MAT_DATA_ROOT"); env != nullptr && *env != '\0') {
        return env;
    }
    return "data";
}

struct DataSplits {
    Dataset train;
    Dataset test;
};

// Synthetic data: training set of n from the run seed, an independent test draw
// of test_n. Image batches: "path" (and optional "test_path") under the data root.
inline DataSplits load_data(const json& c, const std::filesystem::path& root)
{
    const json& d = c.at("data");
    const auto seed = get<std::uint64_t>(c, "seed");
    const auto source = get<std::string>(d, "source");
    if (source == "synthetic") {
        SyntheticParams p;
        p.dim = get<int>(d, "dim");
        p.gap = get<double>(d, "gap");
        p.sigma = get<double>(d, "sigma");
        p.weak_gap = get<double>(d, "weak_gap");
        p.weak_sigma = get<double>(d, "weak_sigma");
        p.image_size = get<int>(d, "image_size");
        p.image_channels = get<int>(d, "image_channels");
        const auto kind = get<std::string>(d, "kind");
        DataSplits s{make_synthetic(kind, get<std::size_t>(d, "n"), seed, p),
                     make_synthetic(kind, get<std::size_t>(d, "test_n"), derive_seed(seed, "test"), p)};
        s.train.split = Split::Train;
        s.test.split = Split::Test;
        return s;
    }
    if (source == "image-batches") {
        const auto path = root / get<std::string>(d, "path");
        if (!std::filesystem::exists(path)) {
            throw ConfigError("data directory '" + path.string() + "' does not exist (set --data-root or MAT_DATA_ROOT)");
        }
        Dataset all = load_image_batches(path);
        const auto test_path = get<std::string>(d, "test_path");
        if (!test_path.empty() && std::filesystem::exists(root / test_path)) {
            Dataset test = load_image_batches(root / test_path);
            all.split = Split::Train;
            test.split = Split::Test;
            return {std::move(all), std::move(test)};
        }
        Rng rng = substream(seed, "data/split");
        const auto idx = split_indices(all.size(), 0.0, get<double>(d, "test_fraction"), rng);
        return {subset(all, idx.train, Split::Train), subset(all, idx.test, Split::Test)};
    }
    throw ConfigError("unknown data source '" + source + "'");
}

}  // namespace mat

#endif  // MAT_CONFIG_HPP
