#include <gtest/gtest.h>

#include <filesystem>

#include "mat/sweep.hpp"
#include "mat/trainer.hpp"
#include "support.hpp"

using namespace mat;
namespace fs = std::filesystem;

namespace {

constexpr const char* kArch = "mlp:2x8";

Dataset small_data(std::size_t n = 96, std::uint64_t seed = 3)
{
    SyntheticParams p;
    p.dim = 6;
    return make_synthetic("two-gaussians", n, seed, p);
}

PerturbationSpec attack(double eps = 0.04)
{
    return PerturbationSpec{Norm::Linf, eps, eps / 4.0, 3, 1, InitMode::UniformBall, InnerLoss::BoostedCE};
}

PerturbationSpec l2_attack()
{
    return PerturbationSpec{Norm::L2, 0.1, 0.04, 3, 1, InitMode::UniformBall, InnerLoss::BoostedCE};
}

OptimState optim()
{
    OptimState o;
    o.learning_rate = 0.05;
    o.momentum = 0.9;
    return o;
}

TrainConfig config(double alpha, int epochs = 2, std::uint64_t seed = 5)
{
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 32;
    c.weights.alpha = alpha;
    c.seed = seed;
    return c;
}

Cohort pair(std::uint64_t seed = 5, const PerturbationSpec& a = attack())
{
    return make_peer_cohort(2, kArch, InputShape::flat(6), 2, a, optim(), seed);
}

double max_param_diff(const Classifier& a, const Classifier& b)
{
    double d = 0.0;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        d = std::max(d, (a.parameters()[i] - b.parameters()[i]).cwiseAbs().maxCoeff());
    }
    return d;
}

bool same_params(const Classifier& a, const Classifier& b) { return max_param_diff(a, b) == 0.0; }

fs::path scratch_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("mat-trainer-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Cohort single(const std::string& name, const PerturbationSpec& a, std::uint64_t seed = 5,
              Role role = Role::Peer)
{
    Cohort c;
    c.members.push_back(make_member(name, kArch, InputShape::flat(6), 2, a, optim(), seed, role));
    return c;
}

}  // namespace

TEST(Trainer, ZeroAlphaDecouplesIntoIndependentAdversarialTraining)
{
    const Dataset data = small_data();
    Cohort mat = pair();
    Cohort at = pair();
    const auto m1 = train_mat(mat, data, config(0.0));
    const auto m2 = train_single(at, data, config(0.0), true);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_TRUE(same_params(mat.members[i].model, at.members[i].model)) << i;
    }
    ASSERT_EQ(m1.step_loss.size(), m2.step_loss.size());
    for (std::size_t s = 0; s < m1.step_loss.size(); ++s) {
        EXPECT_NEAR(m1.step_loss[s], m2.step_loss[s], 1e-12);
    }
}

TEST(Trainer, TinyBudgetMatchesNaturalTraining)
{
    const Dataset data = small_data();
    Cohort adv = make_peer_cohort(1, kArch, InputShape::flat(6), 2, attack(1e-12), optim(), 5);
    Cohort nat = make_peer_cohort(1, kArch, InputShape::flat(6), 2, attack(1e-12), optim(), 5);
    train_single(adv, data, config(0.0), true);
    train_single(nat, data, config(0.0), false);
    EXPECT_LE(max_param_diff(adv.members[0].model, nat.members[0].model), 1e-6);
}

TEST(Trainer, OfflineTeacherStaysFrozen)
{
    const Dataset data = small_data();
    const auto dir = scratch_dir("offline");
    Cohort teacher = single("h1", attack());
    train_single(teacher, data, config(0.0), true);
    save_checkpoint(teacher.members[0].model, teacher.members[0].optim, 2, teacher.members[0].attack_rng,
                    dir / "teacher.ckpt");

    for (auto sc : {Scenario::RobRobOffline, Scenario::NatRobOffline}) {
        Cohort p = pair();
        auto cfg = config(0.6);
        cfg.scenario = sc;
        train_scenario(p, data, cfg, dir / "teacher.ckpt");
        EXPECT_TRUE(same_params(p.members[0].model, teacher.members[0].model)) << scenario_name(sc);
        EXPECT_FALSE(same_params(p.members[1].model, pair().members[1].model));
    }
}

TEST(Trainer, OfflineScenarioWithoutTeacherIsAConfigurationError)
{
    const Dataset data = small_data();
    Cohort p = pair();
    auto cfg = config(0.6);
    cfg.scenario = Scenario::RobRobOffline;
    EXPECT_THROW(train_scenario(p, data, cfg), ConfigError);
    try {
        train_scenario(p, data, cfg, fs::path("no/such/teacher.ckpt"));
        FAIL() << "expected a configuration error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("no/such/teacher.ckpt"), std::string::npos);
    }
}

TEST(Trainer, IdenticalNetworksHaveNoDistillationGradientAtFullAlpha)
{
    // alpha = 1 leaves only the KL terms; twin networks on (almost) clean inputs sit at its minimum.
    const Dataset data = small_data(32);
    Cohort c = pair(5, attack(1e-12));
    c.members[1].model = c.members[0].model;
    LossWeights w;
    w.alpha = 1.0;
    const auto plan = plan_mat(c, data.inputs, data.labels, w, Scenario::RobRobOnline);
    const auto r = run_plan(c, plan, data.labels);
    EXPECT_LE(std::abs(r.total), 1e-10);
    for (const auto& g : r.grads) {
        for (const auto& p : g) {
            EXPECT_LE(p.cwiseAbs().maxCoeff(), 1e-9);
        }
    }
}

TEST(Trainer, NaturalTeacherOnlineAtZeroAlphaDecouples)
{
    const Dataset data = small_data();
    Cohort p = pair();
    auto cfg = config(0.0);
    cfg.scenario = Scenario::NatRobOnline;
    train_scenario(p, data, cfg);

    Cohort nat = single("h1", attack());
    train_single(nat, data, config(0.0), false);
    Cohort rob = single("h2", attack());
    train_single(rob, data, config(0.0), true);
    EXPECT_TRUE(same_params(p.members[0].model, nat.members[0].model));
    EXPECT_TRUE(same_params(p.members[1].model, rob.members[0].model));
}

TEST(Trainer, DetachedTeacherGradientsComeOnlyFromOwnTerms)
{
    const Dataset data = small_data(32);
    Cohort c = pair();
    LossWeights w;
    w.alpha = 0.6;
    w.detach_teacher = true;
    const auto plan = plan_mat(c, data.inputs, data.labels, w, Scenario::RobRobOnline);
    const auto joint = run_plan(c, plan, data.labels);
    for (std::size_t owner = 0; owner < 2; ++owner) {
        StepPlan own = plan;
        own.objective.terms.clear();
        own.term_member.clear();
        for (std::size_t t = 0; t < plan.objective.terms.size(); ++t) {
            if (plan.term_member[t] == owner) {
                own.objective.terms.push_back(plan.objective.terms[t]);
                own.term_member.push_back(owner);
            }
        }
        const auto part = run_plan(c, own, data.labels);
        for (std::size_t k = 0; k < joint.grads[owner].size(); ++k) {
            EXPECT_LE((joint.grads[owner][k] - part.grads[owner][k]).cwiseAbs().maxCoeff(), 1e-14);
        }
    }

    // Without detaching, a network also receives gradient through its role as teacher.
    StepPlan attached = plan;
    attached.objective.detach_teacher = false;
    const auto coupled = run_plan(c, attached, data.labels);
    double diff = 0.0;
    for (std::size_t k = 0; k < coupled.grads[0].size(); ++k) {
        diff = std::max(diff, (coupled.grads[0][k] - joint.grads[0][k]).cwiseAbs().maxCoeff());
    }
    EXPECT_GT(diff, 1e-8);
}

TEST(Trainer, StepTotalsAreSumsOfMemberLosses)
{
    const Dataset data = small_data();
    Cohort c = make_peer_cohort(3, kArch, InputShape::flat(6), 2, attack(), optim(), 5);
    const auto m = train_mat(c, data, config(0.4, 1));
    ASSERT_FALSE(m.step_loss.empty());
    for (std::size_t s = 0; s < m.step_loss.size(); ++s) {
        double sum = 0.0;
        for (double l : m.step_member_loss[s]) {
            sum += l;
        }
        EXPECT_NEAR(m.step_loss[s], sum, 1e-8);
    }
}

TEST(Trainer, SameSeedGivesIdenticalParameters)
{
    const Dataset data = small_data();
    Cohort a = pair(9);
    Cohort b = pair(9);
    train_mat(a, data, config(0.6, 2, 9));
    train_mat(b, data, config(0.6, 2, 9));
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_TRUE(same_params(a.members[i].model, b.members[i].model));
    }
    Cohort c = pair(10);
    train_mat(c, data, config(0.6, 2, 10));
    EXPECT_FALSE(same_params(a.members[0].model, c.members[0].model));
}

TEST(Trainer, ResumingFromCheckpointIsBitExact)
{
    const Dataset data = small_data();
    const auto dir = scratch_dir("resume");
    auto cfg = config(0.6, 4);
    cfg.checkpoint_every = 2;
    cfg.checkpoint_dir = dir;
    Cohort full = pair();
    const auto m = train_mat(full, data, cfg);
    EXPECT_EQ(m.artifacts.size(), 4U);

    Cohort resumed = pair();
    const int epoch = load_cohort(resumed, dir, ".epoch2");
    EXPECT_EQ(epoch, 2);
    auto cfg2 = config(0.6, 4);
    train_mat(resumed, data, cfg2, epoch + 1);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_TRUE(same_params(full.members[i].model, resumed.members[i].model)) << i;
        EXPECT_EQ(rng_state(full.members[i].attack_rng), rng_state(resumed.members[i].attack_rng));
    }
}

TEST(Trainer, NonFiniteLossAbortsAndKeepsLastGoodState)
{
    const Dataset data = small_data();
    const auto dir = scratch_dir("abort");
    Cohort c = pair();
    c.members[1].model.parameters()[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    auto cfg = config(0.6, 1);
    cfg.checkpoint_dir = dir;
    try {
        train_mat(c, data, cfg);
        FAIL() << "expected a numeric error";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    }
    EXPECT_TRUE(fs::exists(dir / "h1.last_good.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "h2.last_good.ckpt"));
}

TEST(Trainer, ScenarioAndCohortValidation)
{
    const Dataset data = small_data();
    Cohort one = make_peer_cohort(1, kArch, InputShape::flat(6), 2, attack(), optim(), 5);
    EXPECT_THROW(train_mat(one, data, config(0.5)), ConfigError);
    Cohort p = pair();
    auto cfg = config(0.5);
    cfg.scenario = Scenario::NatRobOnline;
    EXPECT_THROW(train_mat(p, data, cfg), ConfigError);
    EXPECT_THROW(train_mat(p, data, config(1.5)), ConfigError);
    EXPECT_THROW(scenario_from_name("rob-nat-online"), ConfigError);
}

namespace {

class MultiPerturbationBaseline : public ::testing::TestWithParam<MpStrategy> {};

}  // namespace

TEST_P(MultiPerturbationBaseline, ZeroAlphaReproducesAdversarialTrainingStepForStep)
{
    const Dataset data = small_data();
    const PerturbationSpec specs[2] = {attack(), l2_attack()};
    auto cfg = config(0.0);
    cfg.strategy = GetParam();

    Cohort mp = make_mp_cohort(specs, kArch, InputShape::flat(6), 2, optim(), 5);
    const auto m = train_mat_mp(mp, data, cfg);

    Cohort base = single("generalist", specs[0], 5, Role::Generalist);
    const auto b = train_at_mp(base, data, cfg, {specs[0], specs[1]});
    ASSERT_EQ(m.step_member_loss.size(), b.step_loss.size());
    for (std::size_t s = 0; s < b.step_loss.size(); ++s) {
        EXPECT_NEAR(m.step_member_loss[s][2], b.step_loss[s], 1e-8) << "step " << s;
    }
    EXPECT_LE(max_param_diff(mp.members[2].model, base.members[0].model), 1e-8);
    if (GetParam() == MpStrategy::Max) {
        EXPECT_EQ(m.step_selected, b.step_selected);
        EXPECT_EQ(m.step_selected.size(), m.step_loss.size());
    }

    // Specialists at alpha = 0 are plain single-norm adversarial training.
    for (int k = 0; k < 2; ++k) {
        Cohort at = single("specialist" + std::to_string(k + 1), specs[k]);
        train_single(at, data, cfg, true);
        EXPECT_TRUE(same_params(mp.members[static_cast<std::size_t>(k)].model, at.members[0].model));
    }
}

INSTANTIATE_TEST_SUITE_P(Strategies, MultiPerturbationBaseline,
                         ::testing::Values(MpStrategy::Avg, MpStrategy::Max, MpStrategy::Msd),
                         [](const auto& info) { return std::string(strategy_name(info.param)); });

TEST(MultiPerturbation, SingleSpecialistCohortTrains)
{
    const Dataset data = small_data();
    const PerturbationSpec specs[1] = {attack()};
    Cohort mp = make_mp_cohort(specs, kArch, InputShape::flat(6), 2, optim(), 5);
    auto cfg = config(0.5, 1);
    cfg.strategy = MpStrategy::Avg;
    const auto m = train_mat_mp(mp, data, cfg);
    EXPECT_EQ(m.members, (std::vector<std::string>{"specialist1", "generalist"}));
    EXPECT_TRUE(std::isfinite(m.epochs.back().mean_loss));
}

TEST(MultiPerturbation, MissingStrategyIsAConfigurationError)
{
    const Dataset data = small_data();
    const PerturbationSpec specs[2] = {attack(), l2_attack()};
    Cohort mp = make_mp_cohort(specs, kArch, InputShape::flat(6), 2, optim(), 5);
    EXPECT_THROW(train_mat_mp(mp, data, config(0.5)), ConfigError);
    EXPECT_THROW(strategy_from_name("min"), ConfigError);
}

TEST(MultiPerturbation, StepLossIsTheSumOverMembers)
{
    const Dataset data = small_data();
    const PerturbationSpec specs[2] = {attack(), l2_attack()};
    for (auto st : {MpStrategy::Avg, MpStrategy::Max, MpStrategy::Msd}) {
        Cohort mp = make_mp_cohort(specs, kArch, InputShape::flat(6), 2, optim(), 5);
        auto cfg = config(0.6, 1);
        cfg.strategy = st;
        cfg.weights.specialist_peers_include_generalist = true;
        const auto m = train_mat_mp(mp, data, cfg);
        for (std::size_t s = 0; s < m.step_loss.size(); ++s) {
            const auto& parts = m.step_member_loss[s];
            EXPECT_NEAR(m.step_loss[s], matmp_total(std::span<const double>(parts.data(), 2), parts[2]), 1e-8);
        }
    }
}

TEST(Sweep, SingleAlphaGridMatchesDirectTraining)
{
    const Dataset data = small_data(120);
    SweepSetup setup;
    setup.arch = kArch;
    setup.train_attack = attack();
    setup.eval_attack = attack();
    setup.optim = optim();
    setup.train = config(0.0, 1);
    const double grid[1] = {0.6};
    const auto rows = alpha_sweep(data, grid, setup);
    ASSERT_EQ(rows.size(), 1U);
    const auto direct = sweep_point(data, 0.6, setup);
    EXPECT_EQ(rows[0].alpha, 0.6);
    EXPECT_EQ(rows[0].clean, direct.row.clean);
    EXPECT_EQ(rows[0].robust, direct.row.robust);
    EXPECT_THROW(alpha_sweep(data, std::span<const double>{}, setup), ConfigError);
}
