#ifndef MAT_EVALUATION_HPP
#define MAT_EVALUATION_HPP

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mat/attacks.hpp"
#include "mat/core/classifier.hpp"
#include "mat/data.hpp"

namespace mat {

using Mask = std::vector<bool>;

enum class AttackKind { Fgsm, Pgd, Mim, Msd, GaussianNoise, SaltPepper };

inline AttackKind attack_kind_from_name(std::string_view s)
{
    if (s == "fgsm") return AttackKind::Fgsm;
    if (s == "pgd") return AttackKind::Pgd;
    if (s == "mim") return AttackKind::Mim;
    if (s == "msd") return AttackKind::Msd;
    if (s == "gaussian") return AttackKind::GaussianNoise;
    if (s == "salt-pepper") return AttackKind::SaltPepper;
    throw ConfigError("unknown attack kind '" + std::string(s) + "'");
}

inline const char* attack_kind_name(AttackKind k)
{
    switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Mim: return "mim";
    case AttackKind::Msd: return "msd";
    case AttackKind::GaussianNoise: return "gaussian";
    case AttackKind::SaltPepper: return "salt-pepper";
    }
    return "?";
}

struct AttackEntry {
    std::string id;
    std::string type;  // perturbation type used for per-type grouping, e.g. "linf"
    AttackKind kind{AttackKind::Pgd};
    PerturbationSpec spec;                 // fgsm uses eps; noise attacks use eps as budget and restarts as trials
    std::vector<PerturbationSpec> specs;  // msd only
    double decay{1.0};                    // mim only
};

struct AttackSuite {
    std::vector<AttackEntry> attacks;

    void validate() const
    {
        if (attacks.empty()) {
            throw ConfigError("attack suite is empty");
        }
        std::set<std::string> ids;
        for (const auto& a : attacks) {
            if (a.id.empty()) {
                throw ConfigError("attack id must not be empty");
            }
            if (!ids.insert(a.id).second) {
                throw ConfigError("duplicate attack id '" + a.id + "'");
            }
            if (a.type.empty()) {
                throw ConfigError("attack '" + a.id + "' has no perturbation type");
            }
        }
    }
};

struct AttackResult {
    std::string id;
    std::string type;
    double accuracy{0.0};
    Mask mask;
};

struct TypeAccuracy {
    std::string type;
    double accuracy{0.0};
};

struct EvalReport {
    std::string model;
    int classes{0};
    std::size_t examples{0};
    double clean_accuracy{0.0};
    Mask clean_mask;
    std::vector<AttackResult> attacks;
    std::vector<TypeAccuracy> per_type;  // types in order of first appearance
    double r_avg{0.0};
    double r_worst{0.0};

    [[nodiscard]] const AttackResult& attack(std::string_view id) const
    {
        for (const auto& a : attacks) {
            if (a.id == id) {
                return a;
            }
        }
        throw IndexError("report has no attack '" + std::string(id) + "'");
    }
};

inline double mask_mean(const Mask& m)
{
    if (m.empty()) {
        return 0.0;
    }
    const auto hits = std::count(m.begin(), m.end(), true);
    return static_cast<double>(hits) / static_cast<double>(m.size());
}

inline std::string mask_bits(const Mask& m)
{
    std::string s(m.size(), '0');
    for (std::size_t i = 0; i < m.size(); ++i) {
        s[i] = m[i] ? '1' : '0';
    }
    return s;
}

inline Mask mask_from_bits(std::string_view s)
{
    Mask m(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '0' && s[i] != '1') {
            throw CorruptDataError("mask string contains a character other than 0/1");
        }
        m[i] = s[i] == '1';
    }
    return m;
}

// Mean over examples of the AND across all masks.
inline double worst_case_accuracy(std::span<const Mask> masks)
{
    if (masks.empty()) {
        throw ConfigError("worst-case accuracy needs at least one mask");
    }
    const std::size_t n = masks.front().size();
    for (const auto& m : masks) {
        if (m.size() != n) {
            throw ShapeError("masks cover different numbers of examples");
        }
    }
    Mask all(n, true);
    for (const auto& m : masks) {
        for (std::size_t i = 0; i < n; ++i) {
            all[i] = all[i] && m[i];
        }
    }
    return mask_mean(all);
}

// Fills accuracies, per-type accuracies (per-example AND within a type), R_avg and R_worst from the masks.
inline void aggregate(EvalReport& r)
{
    if (r.attacks.empty()) {
        throw ConfigError("cannot aggregate a report without attacks");
    }
    const std::size_t n = r.attacks.front().mask.size();
    if (!r.clean_mask.empty() && r.clean_mask.size() != n) {
        throw ShapeError("clean mask and attack masks cover different numbers of examples");
    }
    r.examples = n;
    r.clean_accuracy = mask_mean(r.clean_mask);
    std::vector<Mask> all;
    std::vector<std::string> order;
    std::map<std::string, std::vector<Mask>> by_type;
    for (auto& a : r.attacks) {
        if (a.mask.size() != n) {
            throw ShapeError("attack '" + a.id + "' mask covers a different number of examples");
        }
        a.accuracy = mask_mean(a.mask);
        all.push_back(a.mask);
        if (!by_type.contains(a.type)) {
            order.push_back(a.type);
        }
        by_type[a.type].push_back(a.mask);
    }
    r.per_type.clear();
    double sum = 0.0;
    for (const auto& t : order) {
        const double acc = worst_case_accuracy(by_type[t]);
        r.per_type.push_back({t, acc});
        sum += acc;
    }
    r.r_avg = sum / static_cast<double>(order.size());
    r.r_worst = worst_case_accuracy(all);
}

inline Mask correct_mask(const Classifier& model, const Batch& x, std::span<const int> y)
{
    const auto pred = model.predict(x);
    Mask m(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        m[i] = pred[i] == y[i];
    }
    return m;
}

// Adversarial inputs for one suite entry.
inline Batch run_attack(const Classifier& model, const AttackEntry& a, const Batch& x, std::span<const int> y,
                        Rng& rng)
{
    switch (a.kind) {
    case AttackKind::Fgsm:
        return fgsm(model, x, y, a.spec.eps, a.spec.inner_loss).x_adv;
    case AttackKind::Pgd:
        return pgd_attack(model, x, y, a.spec, rng).x_adv;
    case AttackKind::Mim:
        return mim_attack(model, x, y, a.spec, a.decay, rng).x_adv;
    case AttackKind::Msd:
        return msd_attack(model, x, y, a.specs, rng).x_adv;
    case AttackKind::GaussianNoise:
        return noise_attack(model, x, y, NoiseKind::GaussianL2, a.spec.eps, a.spec.restarts, rng, a.spec.inner_loss)
            .x_adv;
    case AttackKind::SaltPepper:
        return noise_attack(model, x, y, NoiseKind::SaltPepperL1, a.spec.eps, a.spec.restarts, rng,
                            a.spec.inner_loss)
            .x_adv;
    }
    throw ConfigError("unknown attack kind");
}

inline constexpr std::size_t kEvalChunk = 256;

// Correctness mask of `target` on adversarial inputs crafted against `source`.
// Randomness comes from substream "eval/<id>" of `seed`, consumed chunk by chunk.
inline Mask attack_mask(const Classifier& source, const Classifier& target, const AttackEntry& a, const Dataset& data,
                        std::uint64_t seed)
{
    Rng rng = substream(seed, "eval/" + a.id);
    Mask out;
    out.reserve(data.size());
    for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
        const auto rows = static_cast<Eigen::Index>(std::min(kEvalChunk, data.size() - b));
        const Batch x = data.inputs.middleRows(static_cast<Eigen::Index>(b), rows);
        const std::span<const int> y(data.labels.data() + b, static_cast<std::size_t>(rows));
        const Mask m = correct_mask(target, run_attack(source, a, x, y, rng), y);
        out.insert(out.end(), m.begin(), m.end());
    }
    return out;
}

// Attacks run concurrently on the read-only model; each has its own stream, so
// results do not depend on scheduling.
inline EvalReport evaluate_suite(const Classifier& model, const AttackSuite& suite, const Dataset& data,
                                 std::uint64_t seed, std::string name = "model")
{
    suite.validate();
    if (data.size() == 0) {
        throw ConfigError("evaluation set is empty");
    }
    EvalReport r;
    r.model = std::move(name);
    r.classes = model.classes();
    r.clean_mask = correct_mask(model, data.inputs, data.labels);
    std::vector<std::future<Mask>> jobs;
    for (const auto& a : suite.attacks) {
        jobs.push_back(std::async(std::launch::async, [&model, &a, &data, seed] {
            return attack_mask(model, model, a, data, seed);
        }));
    }
    for (std::size_t i = 0; i < suite.attacks.size(); ++i) {
        r.attacks.push_back({suite.attacks[i].id, suite.attacks[i].type, 0.0, jobs[i].get()});
    }
    aggregate(r);
    return r;
}

// Entry (target, source): accuracy of target on PGD examples crafted against source.
// The stream key is the attack id, so the diagonal matches evaluate_suite's entry with that id.
inline Eigen::MatrixXd transfer_matrix(std::span<const Classifier> models, const PerturbationSpec& spec,
                                       const Dataset& data, std::uint64_t seed, std::string id = "pgd")
{
    if (models.size() < 2) {
        throw ConfigError("transfer matrix needs at least two models");
    }
    if (data.size() == 0) {
        throw ConfigError("evaluation set is empty");
    }
    AttackEntry a;
    a.id = std::move(id);
    a.type = norm_name(spec.norm);
    a.kind = AttackKind::Pgd;
    a.spec = spec;
    const auto n = static_cast<Eigen::Index>(models.size());
    Eigen::MatrixXd t(n, n);
    for (Eigen::Index s = 0; s < n; ++s) {
        // Craft once per source, then score every target on the same inputs.
        Rng rng = substream(seed, "eval/" + a.id);
        std::vector<Batch> chunks;
        for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
            const auto rows = static_cast<Eigen::Index>(std::min(kEvalChunk, data.size() - b));
            const Batch x = data.inputs.middleRows(static_cast<Eigen::Index>(b), rows);
            const std::span<const int> y(data.labels.data() + b, static_cast<std::size_t>(rows));
            chunks.push_back(run_attack(models[static_cast<std::size_t>(s)], a, x, y, rng));
        }
        for (Eigen::Index tg = 0; tg < n; ++tg) {
            Mask m;
            std::size_t b = 0;
            for (const auto& xa : chunks) {
                const std::span<const int> y(data.labels.data() + b, static_cast<std::size_t>(xa.rows()));
                const Mask part = correct_mask(models[static_cast<std::size_t>(tg)], xa, y);
                m.insert(m.end(), part.begin(), part.end());
                b += static_cast<std::size_t>(xa.rows());
            }
            t(tg, s) = mask_mean(m);
        }
    }
    return t;
}

struct ObfuscationReport {
    double fgsm{0.0};
    double pgd{0.0};
    double whitebox{0.0};
    std::vector<double> transfer;  // one per source model
    bool pass{false};
    std::vector<std::string> flags;
};

inline constexpr double kObfuscationTolerance = 0.01;

// PASS iff pgd <= fgsm + tol and whitebox <= strongest (lowest) transfer accuracy + tol.
inline ObfuscationReport obfuscation_verdict(double fgsm_acc, double pgd_acc, double whitebox_acc,
                                             std::vector<double> transfer_acc, double tol = kObfuscationTolerance)
{
    ObfuscationReport r{fgsm_acc, pgd_acc, whitebox_acc, std::move(transfer_acc), true, {}};
    if (pgd_acc > fgsm_acc + tol) {
        r.flags.emplace_back("pgd > fgsm");
    }
    if (!r.transfer.empty()) {
        const double strongest = *std::min_element(r.transfer.begin(), r.transfer.end());
        if (whitebox_acc > strongest + tol) {
            r.flags.emplace_back("whitebox > blackbox");
        }
    }
    r.pass = r.flags.empty();
    return r;
}

// FGSM and PGD at the same linf budget against `model`; transfer accuracy from
// PGD examples crafted on each of `sources`. White-box accuracy is the PGD accuracy.
inline ObfuscationReport obfuscation_check(const Classifier& model, const Dataset& data, const PerturbationSpec& pgd,
                                           std::span<const Classifier> sources, std::uint64_t seed,
                                           double tol = kObfuscationTolerance)
{
    AttackEntry f{"fgsm", norm_name(Norm::Linf), AttackKind::Fgsm, pgd, {}, 1.0};
    AttackEntry p{"pgd", norm_name(pgd.norm), AttackKind::Pgd, pgd, {}, 1.0};
    const double fgsm_acc = mask_mean(attack_mask(model, model, f, data, seed));
    const double pgd_acc = mask_mean(attack_mask(model, model, p, data, seed));
    std::vector<double> transfer;
    for (const auto& s : sources) {
        transfer.push_back(mask_mean(attack_mask(s, model, p, data, seed)));
    }
    return obfuscation_verdict(fgsm_acc, pgd_acc, pgd_acc, std::move(transfer), tol);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json report_to_json(const EvalReport& r, bool with_masks = true)
{
    nlohmann::json attacks = nlohmann::json::array();
    for (const auto& a : r.attacks) {
        nlohmann::json j{{"id", a.id}, {"type", a.type}, {"accuracy", a.accuracy}};
        if (with_masks) {
            j["mask"] = mask_bits(a.mask);
        }
        attacks.push_back(std::move(j));
    }
    nlohmann::json types = nlohmann::json::array();
    for (const auto& t : r.per_type) {
        types.push_back({{"type", t.type}, {"accuracy", t.accuracy}});
    }
    nlohmann::json j{{"model", r.model},
                     {"classes", r.classes},
                     {"examples", r.examples},
                     {"clean_accuracy", r.clean_accuracy},
                     {"attacks", attacks},
                     {"per_type", types},
                     {"r_avg", r.r_avg},
                     {"r_worst", r.r_worst}};
    if (with_masks) {
        j["clean_mask"] = mask_bits(r.clean_mask);
    }
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j)
{
    try {
        EvalReport r;
        r.model = j.at("model").get<std::string>();
        r.classes = j.at("classes").get<int>();
        r.examples = j.at("examples").get<std::size_t>();
        r.clean_accuracy = j.at("clean_accuracy").get<double>();
        if (j.contains("clean_mask")) {
            r.clean_mask = mask_from_bits(j.at("clean_mask").get<std::string>());
        }
        for (const auto& a : j.at("attacks")) {
            AttackResult res{a.at("id").get<std::string>(), a.at("type").get<std::string>(),
                             a.at("accuracy").get<double>(), {}};
            if (a.contains("mask")) {
                res.mask = mask_from_bits(a.at("mask").get<std::string>());
            }
            r.attacks.push_back(std::move(res));
        }
        for (const auto& t : j.at("per_type")) {
            r.per_type.push_back({t.at("type").get<std::string>(), t.at("accuracy").get<double>()});
        }
        r.r_avg = j.at("r_avg").get<double>();
        r.r_worst = j.at("r_worst").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptDataError(std::string("malformed evaluation report: ") + e.what());
    }
}

inline nlohmann::json obfuscation_to_json(const ObfuscationReport& r)
{
    return {{"fgsm", r.fgsm},         {"pgd", r.pgd},   {"whitebox", r.whitebox},
            {"transfer", r.transfer}, {"pass", r.pass}, {"flags", r.flags}};
}

}  // namespace mat

#endif  // MAT_EVALUATION_HPP
