#ifndef MAT_TRAINER_HPP
#define MAT_TRAINER_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mat/attacks.hpp"
#include "mat/checkpoint.hpp"
#include "mat/core/classifier.hpp"
#include "mat/core/optim.hpp"
#include "mat/data.hpp"
#include "mat/losses.hpp"

namespace mat {

enum class Role { Peer, Specialist, Generalist };

inline const char* role_name(Role r)
{
    switch (r) {
    case Role::Peer: return "peer";
    case Role::Specialist: return "specialist";
    case Role::Generalist: return "generalist";
    }
    return "?";
}

struct Member {
    std::string name;
    Classifier model;
    Role role{Role::Peer};
    int specialist_index{-1};  // specialists only, 0-based perturbation type
    PerturbationSpec attack;   // training-time attack
    bool trainable{true};
    OptimState optim;
    Rng attack_rng;
};

struct Cohort {
    std::vector<Member> members;

    [[nodiscard]] std::size_t size() const noexcept { return members.size(); }

    // Exactly one generalist when specialists exist; specialist indices 0..M-1 each used once.
    void validate() const
    {
        std::size_t generalists = 0;
        std::vector<int> seen;
        for (const auto& m : members) {
            if (m.role == Role::Generalist) {
                ++generalists;
            } else if (m.role == Role::Specialist) {
                seen.push_back(m.specialist_index);
            }
        }
        if (!seen.empty() && generalists != 1) {
            throw ConfigError("a cohort with specialists needs exactly one generalist");
        }
        if (seen.empty() && generalists > 0) {
            throw ConfigError("a generalist needs at least one specialist");
        }
        std::sort(seen.begin(), seen.end());
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (seen[i] != static_cast<int>(i)) {
                throw ConfigError("specialist indices must be 0..M-1, each exactly once");
            }
        }
    }

    [[nodiscard]] std::vector<std::size_t> specialists() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (members[i].role == Role::Specialist) {
                out.push_back(i);
            }
        }
        std::sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
            return members[a].specialist_index < members[b].specialist_index;
        });
        return out;
    }

    [[nodiscard]] std::optional<std::size_t> generalist() const
    {
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (members[i].role == Role::Generalist) {
                return i;
            }
        }
        return std::nullopt;
    }
};

// Builds one member; parameters come from substream "init/<name>", attack
// randomness from "attack/<name>".
inline Member make_member(std::string name, std::string_view arch, InputShape shape, int classes,
                          const PerturbationSpec& attack, const OptimState& optim, std::uint64_t seed,
                          Role role = Role::Peer, int specialist_index = -1)
{
    Rng init = substream(seed, "init/" + name);
    Member m;
    m.model = Classifier::build(arch, shape, classes, init);
    m.role = role;
    m.specialist_index = specialist_index;
    m.attack = attack;
    m.optim = optim;
    m.attack_rng = substream(seed, "attack/" + name);
    m.name = std::move(name);
    return m;
}

inline Cohort make_peer_cohort(std::size_t n, std::string_view arch, InputShape shape, int classes,
                               const PerturbationSpec& attack, const OptimState& optim, std::uint64_t seed)
{
    Cohort c;
    for (std::size_t i = 0; i < n; ++i) {
        c.members.push_back(make_member("h" + std::to_string(i + 1), arch, shape, classes, attack, optim, seed));
    }
    return c;
}

// M specialists ("specialist1".."specialistM", bound to their own attack) plus
// one generalist ("generalist") appended last.
inline Cohort make_mp_cohort(std::span<const PerturbationSpec> specs, std::string_view arch, InputShape shape,
                             int classes, const OptimState& optim, std::uint64_t seed)
{
    Cohort c;
    for (std::size_t m = 0; m < specs.size(); ++m) {
        c.members.push_back(make_member("specialist" + std::to_string(m + 1), arch, shape, classes, specs[m], optim,
                                        seed, Role::Specialist, static_cast<int>(m)));
    }
    c.members.push_back(make_member("generalist", arch, shape, classes, specs.empty() ? PerturbationSpec{} : specs[0],
                                    optim, seed, Role::Generalist));
    return c;
}

enum class Scenario { RobRobOnline, RobRobOffline, NatRobOnline, NatRobOffline };

inline Scenario scenario_from_name(std::string_view s)
{
    if (s == "rob-rob-online") return Scenario::RobRobOnline;
    if (s == "rob-rob-offline") return Scenario::RobRobOffline;
    if (s == "nat-rob-online") return Scenario::NatRobOnline;
    if (s == "nat-rob-offline") return Scenario::NatRobOffline;
    throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

inline const char* scenario_name(Scenario s)
{
    switch (s) {
    case Scenario::RobRobOnline: return "rob-rob-online";
    case Scenario::RobRobOffline: return "rob-rob-offline";
    case Scenario::NatRobOnline: return "nat-rob-online";
    case Scenario::NatRobOffline: return "nat-rob-offline";
    }
    return "?";
}

inline bool is_offline(Scenario s) { return s == Scenario::RobRobOffline || s == Scenario::NatRobOffline; }
inline bool is_natural_teacher(Scenario s) { return s == Scenario::NatRobOnline || s == Scenario::NatRobOffline; }

enum class MpStrategy { None, Avg, Max, Msd };

inline MpStrategy strategy_from_name(std::string_view s)
{
    if (s == "none") return MpStrategy::None;
    if (s == "avg") return MpStrategy::Avg;
    if (s == "max") return MpStrategy::Max;
    if (s == "msd") return MpStrategy::Msd;
    throw ConfigError("unknown multi-perturbation strategy '" + std::string(s) + "'");
}

inline const char* strategy_name(MpStrategy s)
{
    switch (s) {
    case MpStrategy::None: return "none";
    case MpStrategy::Avg: return "avg";
    case MpStrategy::Max: return "max";
    case MpStrategy::Msd: return "msd";
    }
    return "?";
}

struct TrainConfig {
    int epochs{20};
    std::size_t batch_size{64};
    LossWeights weights;
    Scenario scenario{Scenario::RobRobOnline};
    MpStrategy strategy{MpStrategy::None};
    std::uint64_t seed{0};
    int msd_steps{0};  // 0: largest step count among the specialists
    bool augment{false};
    AugmentOps augment_ops;
    int checkpoint_every{0};  // epochs; 0 disables periodic checkpoints
    std::filesystem::path checkpoint_dir;
    nlohmann::json snapshot;  // configuration echoed into the manifest

    void validate() const
    {
        if (epochs < 0) {
            throw ConfigError("epochs must be non-negative");
        }
        if (batch_size < 1) {
            throw ConfigError("batch size must be positive");
        }
        weights.validate();
    }
};

struct EpochRecord {
    int epoch{0};
    double learning_rate{0.0};
    double mean_loss{0.0};
    std::vector<double> member_loss;
    std::vector<double> clean_accuracy;  // on the training set, after the epoch
};

struct RunManifest {
    nlohmann::json config;
    std::uint64_t seed{0};
    std::vector<std::string> members;
    std::vector<EpochRecord> epochs;
    std::vector<double> step_loss;                     // total objective per minibatch
    std::vector<std::vector<double>> step_member_loss;  // per minibatch, per member
    std::vector<std::size_t> step_selected;            // MAX strategy: selected perturbation type per minibatch
    double wall_clock_seconds{0.0};
    std::vector<std::string> artifacts;

    [[nodiscard]] nlohmann::json to_json() const
    {
        nlohmann::json e = nlohmann::json::array();
        for (const auto& r : epochs) {
            e.push_back({{"epoch", r.epoch},
                         {"learning_rate", r.learning_rate},
                         {"mean_loss", r.mean_loss},
                         {"member_loss", r.member_loss},
                         {"clean_accuracy", r.clean_accuracy}});
        }
        return {{"config", config},   {"seed", seed},
                {"members", members}, {"epochs", e},
                {"wall_clock_seconds", wall_clock_seconds}, {"artifacts", artifacts}};
    }
};

// ---------------------------------------------------------------------------
// One minibatch: slots (member, input) plus the objective over their outputs.

struct StepPlan {
    std::vector<std::size_t> slot_member;
    std::vector<Batch> slot_input;
    Objective objective;
    std::vector<std::size_t> term_member;  // member whose loss each term belongs to
    std::optional<std::size_t> selected;   // MAX strategy

    std::size_t add_slot(std::size_t member, Batch input)
    {
        slot_member.push_back(member);
        slot_input.push_back(std::move(input));
        return slot_member.size() - 1;
    }
    void classification(std::size_t owner, double weight, std::size_t slot)
    {
        objective.add_classification(weight, slot);
        term_member.push_back(owner);
    }
    void distillation(std::size_t owner, double weight, std::size_t teacher, std::size_t student)
    {
        objective.add_distillation(weight, teacher, student);
        term_member.push_back(owner);
    }
};

struct StepResult {
    double total{0.0};
    std::vector<double> member_loss;
    std::vector<Parameters> grads;  // per member, empty for members without slots
    ObjectiveValue value;
};

// Forward every slot, evaluate the objective, back-propagate into per-member gradients.
inline StepResult run_plan(const Cohort& cohort, const StepPlan& plan, std::span<const int> y)
{
    std::vector<ForwardTrace> traces(plan.slot_input.size());
    std::vector<Batch> probs;
    probs.reserve(plan.slot_input.size());
    for (std::size_t s = 0; s < plan.slot_input.size(); ++s) {
        const auto& model = cohort.members[plan.slot_member[s]].model;
        probs.push_back(softmax_rows(model.logits(plan.slot_input[s], traces[s])));
    }
    StepResult r;
    r.value = evaluate(plan.objective, probs, y, true);
    r.total = r.value.total;
    if (!std::isfinite(r.total)) {
        throw NumericError("non-finite training loss");
    }
    r.member_loss.assign(cohort.size(), 0.0);
    for (std::size_t t = 0; t < plan.objective.terms.size(); ++t) {
        r.member_loss[plan.term_member[t]] += plan.objective.terms[t].weight * r.value.term_values[t];
    }
    r.grads.resize(cohort.size());
    for (std::size_t s = 0; s < plan.slot_input.size(); ++s) {
        const auto& member = cohort.members[plan.slot_member[s]];
        auto& g = r.grads[plan.slot_member[s]];
        if (g.empty()) {
            g = member.model.zero_gradients();
        }
        member.model.backward(traces[s], r.value.logit_grads[s], &g);
    }
    return r;
}

namespace detail {

inline Batch attack_input(Member& m, const Batch& x, std::span<const int> y)
{
    return pgd_attack(m.model, x, y, m.attack, m.attack_rng).x_adv;
}

}  // namespace detail

// Cohort MAT (every scenario). Slots: [input_n for each network] then [clean_n].
// Adversarial inputs are crafted before any update in the minibatch.
inline StepPlan plan_mat(Cohort& cohort, const Batch& x, std::span<const int> y, const LossWeights& w,
                         Scenario scenario)
{
    const std::size_t n = cohort.size();
    if (n < 2) {
        throw ConfigError("MAT needs a cohort of at least 2 networks");
    }
    if (scenario != Scenario::RobRobOnline && n != 2) {
        throw ConfigError(std::string("scenario ") + scenario_name(scenario) + " is defined for two networks");
    }
    StepPlan plan;
    plan.objective.detach_teacher = w.detach_teacher;
    const double kd = w.cohort_kd_weight(n);
    if (is_offline(scenario)) {
        // Frozen teacher h1: only the student's terms carry gradient.
        const std::size_t student_in = plan.add_slot(1, detail::attack_input(cohort.members[1], x, y));
        const std::size_t teacher_clean = plan.add_slot(0, x);
        plan.classification(1, 1.0 - w.alpha, student_in);
        plan.distillation(1, kd, teacher_clean, student_in);
        return plan;
    }
    std::vector<std::size_t> in(n);
    std::vector<std::size_t> clean(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool natural = i == 0 && is_natural_teacher(scenario);
        in[i] = plan.add_slot(i, natural ? x : detail::attack_input(cohort.members[i], x, y));
    }
    for (std::size_t i = 0; i < n; ++i) {
        clean[i] = plan.add_slot(i, x);
    }
    for (std::size_t i = 0; i < n; ++i) {
        plan.classification(i, 1.0 - w.alpha, in[i]);
        for (std::size_t m = 0; m < n; ++m) {
            if (m != i) {
                plan.distillation(i, kd, clean[m], in[i]);
            }
        }
    }
    return plan;
}

// Single network trained on boosted CE at clean (natural) or adversarial inputs.
inline StepPlan plan_single(Cohort& cohort, const Batch& x, std::span<const int> y, bool adversarial)
{
    StepPlan plan;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto s = plan.add_slot(i, adversarial ? detail::attack_input(cohort.members[i], x, y) : x);
        plan.classification(i, 1.0, s);
    }
    return plan;
}

inline std::vector<PerturbationSpec> msd_specs(const Cohort& cohort, int msd_steps)
{
    std::vector<PerturbationSpec> specs;
    int steps = msd_steps;
    for (auto s : cohort.specialists()) {
        specs.push_back(cohort.members[s].attack);
        if (msd_steps <= 0) {
            steps = std::max(steps, cohort.members[s].attack.steps);
        }
    }
    for (auto& s : specs) {
        s.steps = steps;
    }
    return specs;
}

namespace detail {

// Generalist terms shared by MAT-MP (with distillation) and the AT-MP baselines
// (alpha = 0, no specialists consulted).
inline void add_generalist_terms(StepPlan& plan, Cohort& cohort, std::size_t g, const Batch& x,
                                 std::span<const int> y, const LossWeights& w, MpStrategy strategy, int msd_steps,
                                 std::span<const std::size_t> specialist_clean, std::span<const PerturbationSpec> specs)
{
    const std::size_t m = specs.size();
    const double inv_m = 1.0 / static_cast<double>(m);
    const bool distill = !specialist_clean.empty();
    Member& gen = cohort.members[g];
    switch (strategy) {
    case MpStrategy::Avg:
        for (std::size_t k = 0; k < m; ++k) {
            const auto s = plan.add_slot(g, pgd_attack(gen.model, x, y, specs[k], gen.attack_rng).x_adv);
            plan.classification(g, (1.0 - w.alpha) * inv_m, s);
            if (distill) {
                plan.distillation(g, w.alpha * inv_m, specialist_clean[k], s);
            }
        }
        break;
    case MpStrategy::Max: {
        std::vector<Batch> adv;
        std::vector<Batch> probs;
        for (std::size_t k = 0; k < m; ++k) {
            adv.push_back(pgd_attack(gen.model, x, y, specs[k], gen.attack_rng).x_adv);
            probs.push_back(gen.model.probs(adv.back()));
        }
        const std::size_t k = worst_perturbation(probs, y);
        plan.selected = k;
        const auto s = plan.add_slot(g, std::move(adv[k]));
        plan.classification(g, 1.0 - w.alpha, s);
        if (distill) {
            plan.distillation(g, w.alpha, specialist_clean[k], s);
        }
        break;
    }
    case MpStrategy::Msd: {
        const auto unified = [&] {
            std::vector<PerturbationSpec> out(specs.begin(), specs.end());
            int steps = msd_steps;
            if (steps <= 0) {
                for (const auto& s : out) {
                    steps = std::max(steps, s.steps);
                }
            }
            for (auto& s : out) {
                s.steps = steps;
            }
            return out;
        }();
        const auto s = plan.add_slot(g, msd_attack(gen.model, x, y, unified, gen.attack_rng).x_adv);
        plan.classification(g, 1.0 - w.alpha, s);
        if (distill) {
            for (std::size_t k = 0; k < m; ++k) {
                plan.distillation(g, w.alpha * inv_m, specialist_clean[k], s);
            }
        }
        break;
    }
    case MpStrategy::None:
        throw ConfigError("a generalist needs a multi-perturbation strategy (avg, max or msd)");
    }
}

}  // namespace detail

// MAT-MP: specialists distil from each other, the generalist from the specialist
// matching each perturbation type. The recorded total is the sum of all members' losses.
inline StepPlan plan_mat_mp(Cohort& cohort, const Batch& x, std::span<const int> y, const LossWeights& w,
                            MpStrategy strategy, int msd_steps)
{
    cohort.validate();
    const auto spec_idx = cohort.specialists();
    const auto g = cohort.generalist();
    if (!g || spec_idx.empty()) {
        throw ConfigError("MAT-MP needs specialists and a generalist");
    }
    if (strategy == MpStrategy::None) {
        throw ConfigError("a generalist needs a multi-perturbation strategy (avg, max or msd)");
    }
    const std::size_t m = spec_idx.size();
    StepPlan plan;
    plan.objective.detach_teacher = w.detach_teacher;

    std::vector<std::size_t> adv(m);
    std::vector<std::size_t> clean(m);
    for (std::size_t k = 0; k < m; ++k) {
        adv[k] = plan.add_slot(spec_idx[k], detail::attack_input(cohort.members[spec_idx[k]], x, y));
    }
    for (std::size_t k = 0; k < m; ++k) {
        clean[k] = plan.add_slot(spec_idx[k], x);
    }
    std::optional<std::size_t> gen_clean;
    if (w.specialist_peers_include_generalist) {
        gen_clean = plan.add_slot(*g, x);
    }
    const double peer_w = w.alpha / static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
        plan.classification(spec_idx[k], 1.0 - w.alpha, adv[k]);
        for (std::size_t n = 0; n < m; ++n) {
            if (n != k) {
                plan.distillation(spec_idx[k], peer_w, clean[n], adv[k]);
            }
        }
        if (gen_clean) {
            plan.distillation(spec_idx[k], peer_w, *gen_clean, adv[k]);
        }
    }
    std::vector<PerturbationSpec> specs;
    for (auto s : spec_idx) {
        specs.push_back(cohort.members[s].attack);
    }
    detail::add_generalist_terms(plan, cohort, *g, x, y, w, strategy, msd_steps, clean, specs);
    return plan;
}

// AT-AVG / AT-MAX / AT-MSD baseline for a lone network over several perturbation types.
inline StepPlan plan_at_mp(Cohort& cohort, const Batch& x, std::span<const int> y,
                           std::span<const PerturbationSpec> specs, MpStrategy strategy, int msd_steps)
{
    if (cohort.size() != 1 || specs.empty()) {
        throw ConfigError("AT-MP baselines train one network against at least one perturbation type");
    }
    StepPlan plan;
    LossWeights none;
    none.alpha = 0.0;
    detail::add_generalist_terms(plan, cohort, 0, x, y, none, strategy, msd_steps, {}, specs);
    return plan;
}

// ---------------------------------------------------------------------------
// Training loop

inline void apply_step(Cohort& cohort, const StepResult& r, int epoch)
{
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        auto& m = cohort.members[i];
        if (m.trainable && !r.grads[i].empty()) {
            sgd_step(m.model, m.optim, r.grads[i], lr_at_epoch(m.optim, epoch));
        }
    }
}

inline double accuracy(const Classifier& model, const Batch& x, std::span<const int> y)
{
    const auto pred = model.predict(x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hit += pred[i] == y[i] ? 1U : 0U;
    }
    return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

inline void save_cohort(const Cohort& cohort, int epoch, const std::filesystem::path& dir, std::string_view suffix,
                        std::vector<std::string>* artifacts = nullptr)
{
    for (const auto& m : cohort.members) {
        const auto path = dir / (m.name + std::string(suffix) + ".ckpt");
        save_checkpoint(m.model, m.optim, epoch, m.attack_rng, path);
        if (artifacts != nullptr) {
            artifacts->push_back(path.string());
        }
    }
}

// Restores parameters, optimizer state and attack stream of every member from
// "<dir>/<name><suffix>.ckpt"; returns the stored epoch.
inline int load_cohort(Cohort& cohort, const std::filesystem::path& dir, std::string_view suffix)
{
    int epoch = -1;
    for (auto& m : cohort.members) {
        const Checkpoint c = load_checkpoint(dir / (m.name + std::string(suffix) + ".ckpt"));
        m.model = c.classifier();
        m.optim = c.optim;
        m.attack_rng = rng_from_state(c.rng_state);
        if (epoch >= 0 && c.epoch != epoch) {
            throw ConfigError("cohort checkpoints come from different epochs");
        }
        epoch = c.epoch;
    }
    return epoch;
}

using Planner = std::function<StepPlan(Cohort&, const Batch&, std::span<const int>)>;

// Runs epochs [first_epoch, cfg.epochs]. Data order and augmentation for epoch e
// come from substreams keyed by e, so a resumed run replays the same batches.
inline RunManifest run_training(Cohort& cohort, const Dataset& data, const TrainConfig& cfg, const Planner& planner,
                                int first_epoch = 1, RunManifest manifest = {})
{
    cfg.validate();
    data.validate();
    if (data.size() == 0) {
        throw ConfigError("training set is empty");
    }
    const auto start = std::chrono::steady_clock::now();
    manifest.config = cfg.snapshot;
    manifest.seed = cfg.seed;
    manifest.members.clear();
    for (const auto& m : cohort.members) {
        manifest.members.push_back(m.name);
    }
    const bool augment = cfg.augment && data.shape.image;

    for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
        Rng order_rng = substream(cfg.seed, "data/order", static_cast<std::uint64_t>(epoch));
        Rng aug_rng = substream(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, order_rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = cohort.members.empty() ? 0.0 : lr_at_epoch(cohort.members.front().optim, epoch);
        rec.member_loss.assign(cohort.size(), 0.0);
        std::size_t steps = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            Batch x = gather_rows(data.inputs, idx);
            const Labels y = gather_labels(data.labels, idx);
            if (augment) {
                x = mat::augment(x, data.shape, cfg.augment_ops, aug_rng);
            }
            StepResult r;
            try {
                const StepPlan plan = planner(cohort, x, y);
                r = run_plan(cohort, plan, y);
                if (plan.selected) {
                    manifest.step_selected.push_back(*plan.selected);
                }
            } catch (const NumericError& err) {
                if (!cfg.checkpoint_dir.empty()) {
                    save_cohort(cohort, epoch - 1, cfg.checkpoint_dir, ".last_good");
                }
                throw NumericError(std::string("training aborted at epoch ") + std::to_string(epoch) + ": " +
                                   err.what());
            }
            apply_step(cohort, r, epoch);
            manifest.step_loss.push_back(r.total);
            manifest.step_member_loss.push_back(r.member_loss);
            rec.mean_loss += r.total;
            for (std::size_t i = 0; i < cohort.size(); ++i) {
                rec.member_loss[i] += r.member_loss[i];
            }
            ++steps;
        }
        if (steps > 0) {
            rec.mean_loss /= static_cast<double>(steps);
            for (auto& l : rec.member_loss) {
                l /= static_cast<double>(steps);
            }
        }
        for (const auto& m : cohort.members) {
            rec.clean_accuracy.push_back(accuracy(m.model, data.inputs, data.labels));
        }
        manifest.epochs.push_back(std::move(rec));
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
            save_cohort(cohort, epoch, cfg.checkpoint_dir, ".epoch" + std::to_string(epoch), &manifest.artifacts);
        }
    }
    manifest.wall_clock_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return manifest;
}

// Two-network or N-network MAT, all networks trainable (rob-rob-online).
inline RunManifest train_mat(Cohort& cohort, const Dataset& data, const TrainConfig& cfg, int first_epoch = 1)
{
    if (cfg.scenario != Scenario::RobRobOnline) {
        throw ConfigError("train_mat runs the rob-rob-online scenario; use train_scenario for the others");
    }
    for (const auto& m : cohort.members) {
        if (!m.trainable) {
            throw ConfigError("train_mat needs every network trainable");
        }
    }
    const LossWeights w = cfg.weights;
    return run_training(cohort, data, cfg,
                        [w](Cohort& c, const Batch& x, std::span<const int> y) {
                            return plan_mat(c, x, y, w, Scenario::RobRobOnline);
                        },
                        first_epoch);
}

// One of the four two-network distillation scenarios. Offline scenarios load
// h1 from `teacher_checkpoint` and keep it frozen.
inline RunManifest train_scenario(Cohort& pair, const Dataset& data, const TrainConfig& cfg,
                                  const std::optional<std::filesystem::path>& teacher_checkpoint = std::nullopt)
{
    if (pair.size() != 2) {
        throw ConfigError("distillation scenarios train a pair of networks");
    }
    if (is_offline(cfg.scenario)) {
        if (!teacher_checkpoint) {
            throw ConfigError(std::string("scenario ") + scenario_name(cfg.scenario) +
                              " needs a pretrained teacher checkpoint");
        }
        pair.members[0].model = load_checkpoint(*teacher_checkpoint).classifier();
        pair.members[0].trainable = false;
    } else {
        pair.members[0].trainable = true;
    }
    pair.members[1].trainable = true;
    const LossWeights w = cfg.weights;
    const Scenario sc = cfg.scenario;
    return run_training(pair, data, cfg, [w, sc](Cohort& c, const Batch& x, std::span<const int> y) {
        return plan_mat(c, x, y, w, sc);
    });
}

// Plain training of every member on its own: natural (clean inputs) or
// adversarial (its own attack spec).
inline RunManifest train_single(Cohort& cohort, const Dataset& data, const TrainConfig& cfg, bool adversarial)
{
    return run_training(cohort, data, cfg, [adversarial](Cohort& c, const Batch& x, std::span<const int> y) {
        return plan_single(c, x, y, adversarial);
    });
}

inline RunManifest train_mat_mp(Cohort& cohort, const Dataset& data, const TrainConfig& cfg)
{
    cohort.validate();
    if (!cohort.generalist()) {
        throw ConfigError("MAT-MP needs a generalist");
    }
    if (cfg.strategy == MpStrategy::None) {
        throw ConfigError("a generalist needs a multi-perturbation strategy (avg, max or msd)");
    }
    const LossWeights w = cfg.weights;
    const MpStrategy st = cfg.strategy;
    const int msd = cfg.msd_steps;
    return run_training(cohort, data, cfg, [w, st, msd](Cohort& c, const Batch& x, std::span<const int> y) {
        return plan_mat_mp(c, x, y, w, st, msd);
    });
}

// AT-AVG / AT-MAX / AT-MSD: one network, several perturbation types, no distillation.
inline RunManifest train_at_mp(Cohort& single, const Dataset& data, const TrainConfig& cfg,
                               std::vector<PerturbationSpec> specs)
{
    const MpStrategy st = cfg.strategy;
    const int msd = cfg.msd_steps;
    return run_training(single, data, cfg, [specs = std::move(specs), st, msd](Cohort& c, const Batch& x,
                                                                                 std::span<const int> y) {
        return plan_at_mp(c, x, y, specs, st, msd);
    });
}

}  // namespace mat

#endif  // MAT_TRAINER_HPP
