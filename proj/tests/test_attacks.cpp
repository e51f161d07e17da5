#include <gtest/gtest.h>

#include "mat/attacks.hpp"
#include "support.hpp"

using namespace mat;
using mat::test::l1_projection_oracle;
using mat::test::make_model;
using mat::test::random_batch;
using mat::test::random_labels;

namespace {

Eigen::RowVectorXd random_row(Eigen::Index d, Rng& rng, double scale)
{
    Eigen::RowVectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        v[i] = scale * standard_normal(rng);
    }
    return v;
}

PerturbationSpec linf_spec(double eps, double eta, int steps, InitMode init = InitMode::UniformBall)
{
    return PerturbationSpec{Norm::Linf, eps, eta, steps, 1, init, InnerLoss::BoostedCE};
}

bool bitwise_equal(const Batch& a, const Batch& b)
{
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST(Projection, WorkedExamples)
{
    Eigen::RowVectorXd v(3);
    v << 0.5, -0.2, 0.05;
    Eigen::RowVectorXd linf(3);
    linf << 0.1, -0.1, 0.05;
    EXPECT_TRUE(project_ball(v, Norm::Linf, 0.1).isApprox(linf));

    Eigen::RowVectorXd w(2);
    w << 3.0, 4.0;
    Eigen::RowVectorXd l2(2);
    l2 << 0.6, 0.8;
    EXPECT_LE((project_ball(w, Norm::L2, 1.0) - l2).cwiseAbs().maxCoeff(), 1e-15);

    Eigen::RowVectorXd l1(2);
    l1 << 0.0, 1.0;
    EXPECT_LE((project_ball(w, Norm::L1, 1.0) - l1).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(project_ball(w, Norm::L2, 0.0), ConfigError);
}

TEST(Projection, RandomVectorsLandInsideAndProjectionIsIdempotent)
{
    Rng r(1);
    for (Norm p : {Norm::Linf, Norm::L2, Norm::L1}) {
        for (int i = 0; i < 2000; ++i) {
            const auto d = 1 + static_cast<Eigen::Index>(uniform_index(r, 40));
            const double eps = uniform(r, 0.01, 2.0);
            const Eigen::RowVectorXd v = random_row(d, r, uniform(r, 0.01, 3.0));
            const Eigen::RowVectorXd once = project_ball(v, p, eps);
            EXPECT_LE(norm_of(once, p), eps + 1e-6);
            EXPECT_TRUE((project_ball(once, p, eps).array() == once.array()).all());
            if (norm_of(v, p) <= eps) {
                EXPECT_TRUE((once.array() == v.array()).all());
            }
        }
    }
}

TEST(Projection, L1MatchesDenseQuadraticProgram)
{
    Rng r(2);
    for (int i = 0; i < 300; ++i) {
        const auto d = 1 + static_cast<Eigen::Index>(uniform_index(r, 5));
        const double eps = uniform(r, 0.05, 1.5);
        const Eigen::RowVectorXd v = random_row(d, r, 1.0);
        const Eigen::RowVectorXd oracle = l1_projection_oracle(v, eps);
        EXPECT_LE((project_ball(v, Norm::L1, eps) - oracle).cwiseAbs().maxCoeff(), 1e-6) << "dim " << d;
    }
}

TEST(Fgsm, WorkedExampleOnLinearModel)
{
    // Logits (x0, -x0) for x = (0.5, 0.5), true class 0: the gradient pushes x0 down.
    Classifier m = make_model("linear", InputShape::flat(2), 2, 1);
    auto& p = m.parameters();
    p[0] << 1.0, 0.0, -1.0, 0.0;
    p[1].setZero();
    const Batch x = Batch::Constant(1, 2, 0.5);
    const Labels y{0};
    const auto adv = fgsm(m, x, y, 0.1);
    EXPECT_NEAR(adv.x_adv(0, 0), 0.4, 1e-15);
    // Zero gradient on the second coordinate gives a zero sign.
    EXPECT_EQ(adv.x_adv(0, 1), 0.5);
}

TEST(Fgsm, EqualsSingleStepZeroInitPgdAndHandRolledSignStep)
{
    Rng r(3);
    for (int trial = 0; trial < 10; ++trial) {
        Classifier m = make_model("mlp:2x8", InputShape::flat(6), 3, 100 + trial);
        const Batch x = random_batch(16, 6, r);
        const Labels y = random_labels(16, 3, r);
        const double eps = uniform(r, 0.01, 0.2);
        Rng unused(0);
        const auto a = fgsm(m, x, y, eps);
        const auto b = pgd_attack(m, x, y, linf_spec(eps, eps, 1, InitMode::Zero), unused);
        EXPECT_TRUE(bitwise_equal(a.x_adv, b.x_adv));

        const Batch g = input_gradient(m, InnerLoss::BoostedCE, x, y);
        Batch manual = x;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            manual.data()[i] = std::clamp(x.data()[i] + eps * sign_of(g.data()[i]), 0.0, 1.0);
        }
        EXPECT_TRUE(bitwise_equal(a.x_adv, manual));
    }
}

TEST(Mim, ZeroDecayEqualsPgd)
{
    Rng r(4);
    for (int trial = 0; trial < 10; ++trial) {
        Classifier m = make_model("mlp:2x8", InputShape::flat(5), 3, 200 + trial);
        const Batch x = random_batch(12, 5, r);
        const Labels y = random_labels(12, 3, r);
        const auto spec = linf_spec(0.1, 0.02, 7);
        Rng ra(trial);
        Rng rb(trial);
        EXPECT_TRUE(bitwise_equal(mim_attack(m, x, y, spec, 0.0, ra).x_adv, pgd_attack(m, x, y, spec, rb).x_adv));
    }
}

TEST(Mim, SingleStepEqualsFgsm)
{
    Rng r(5);
    Classifier m = make_model("mlp:2x8", InputShape::flat(5), 3, 9);
    const Batch x = random_batch(12, 5, r);
    const Labels y = random_labels(12, 3, r);
    Rng unused(0);
    const auto a = mim_attack(m, x, y, linf_spec(0.07, 0.07, 1, InitMode::Zero), 1.0, unused);
    EXPECT_TRUE(bitwise_equal(a.x_adv, fgsm(m, x, y, 0.07).x_adv));
}

TEST(Mim, MomentumMatchesReferenceLoop)
{
    Rng r(6);
    Classifier m = make_model("mlp:2x6", InputShape::flat(4), 3, 17);
    const Batch x = random_batch(5, 4, r, 0.2, 0.8);
    const Labels y = random_labels(5, 3, r);
    const double eps = 0.1;
    const double eta = 0.03;
    Rng unused(0);
    const auto got = mim_attack(m, x, y, linf_spec(eps, eta, 3, InitMode::Zero), 1.0, unused);

    Batch x_adv = x;
    Batch acc = Batch::Zero(x.rows(), x.cols());
    for (int t = 0; t < 3; ++t) {
        const Batch g = input_gradient(m, InnerLoss::BoostedCE, x_adv, y);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            acc.row(i) += g.row(i) / g.row(i).cwiseAbs().sum();
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
                const double moved = x_adv(i, j) + eta * sign_of(acc(i, j));
                x_adv(i, j) = std::clamp(std::clamp(moved, x(i, j) - eps, x(i, j) + eps), 0.0, 1.0);
            }
        }
    }
    EXPECT_LE((got.x_adv - x_adv).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(mim_attack(m, x, y, PerturbationSpec{Norm::L2, 0.1, 0.01, 2}, 1.0, unused), ConfigError);
}

TEST(Pgd, LinearLogisticReachesClosedFormWorstCase)
{
    // For a 2-class linear model the worst linf loss is softplus(-(margin - eps*|w1 - w0|_1)).
    Rng r(7);
    for (int trial = 0; trial < 20; ++trial) {
        Classifier m = make_model("linear", InputShape::flat(8), 2, 300 + trial);
        const Batch x = random_batch(10, 8, r, 0.2, 0.8);
        const Labels y = random_labels(10, 2, r);
        const double eps = 0.05;
        PerturbationSpec spec{Norm::Linf, eps, eps / 4.0, 10, 1, InitMode::UniformBall, InnerLoss::CrossEntropy};
        Rng ar(trial);
        const auto adv = pgd_attack(m, x, y, spec, ar);
        const auto& w = m.parameters()[0];
        const auto& b = m.parameters()[1];
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const int yi = y[static_cast<std::size_t>(i)];
            const int other = 1 - yi;
            const Eigen::RowVectorXd dw = w.row(yi) - w.row(other);
            const double margin = dw.dot(x.row(i)) + b(yi, 0) - b(other, 0);
            const double worst = std::log1p(std::exp(-(margin - eps * dw.cwiseAbs().sum())));
            EXPECT_NEAR(adv.final_loss[i], worst, 1e-4);
        }
    }
}

TEST(Pgd, LossGrowsWithStepsOnLinearModel)
{
    Rng r(8);
    Classifier m = make_model("linear", InputShape::flat(6), 2, 5);
    const Batch x = random_batch(20, 6, r, 0.3, 0.7);
    const Labels y = random_labels(20, 2, r);
    Eigen::VectorXd prev = Eigen::VectorXd::Constant(20, -1.0);
    for (int k = 1; k <= 6; ++k) {
        Rng unused(0);
        const auto adv = pgd_attack(m, x, y, linf_spec(0.1, 0.02, k, InitMode::Zero), unused);
        for (Eigen::Index i = 0; i < 20; ++i) {
            EXPECT_GE(adv.final_loss[i], prev[i] - 1e-12);
        }
        prev = adv.final_loss;
    }
}

TEST(Pgd, PerturbationsStayInBallAndBox)
{
    Rng r(9);
    for (Norm p : {Norm::Linf, Norm::L2, Norm::L1}) {
        Classifier m = make_model("mlp:2x8", InputShape::flat(30), 4, 12);
        const Batch x = random_batch(10, 30, r);
        const Labels y = random_labels(10, 4, r);
        const double eps = p == Norm::Linf ? 0.05 : (p == Norm::L2 ? 0.5 : 2.0);
        PerturbationSpec spec{p, eps, eps / 4.0, 8, 2, InitMode::UniformBall, InnerLoss::BoostedCE};
        const auto adv = pgd_attack(m, x, y, spec, r);
        EXPECT_GE(adv.x_adv.minCoeff(), 0.0);
        EXPECT_LE(adv.x_adv.maxCoeff(), 1.0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            EXPECT_LE(norm_of(adv.delta.row(i), p), eps + 1e-6) << norm_name(p);
        }
    }
}

TEST(Pgd, TinyBudgetLeavesInputsAlmostUnchanged)
{
    Rng r(10);
    Classifier m = make_model("mlp:2x8", InputShape::flat(5), 3, 4);
    const Batch x = random_batch(8, 5, r);
    const Labels y = random_labels(8, 3, r);
    const auto adv = pgd_attack(m, x, y, linf_spec(1e-9, 1e-9, 5), r);
    EXPECT_LE((adv.x_adv - x).cwiseAbs().maxCoeff(), 1e-9 + 1e-15);
    EXPECT_EQ(m.predict(adv.x_adv), m.predict(x));
}

TEST(Pgd, MoreRestartsNeverLowerTheLoss)
{
    Rng r(11);
    Classifier m = make_model("mlp:2x8", InputShape::flat(5), 3, 8);
    const Batch x = random_batch(30, 5, r);
    const Labels y = random_labels(30, 3, r);
    auto spec = linf_spec(0.1, 0.02, 3);
    Rng a(42);
    const auto one = pgd_attack(m, x, y, spec, a);
    spec.restarts = 4;
    Rng b(42);
    const auto four = pgd_attack(m, x, y, spec, b);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        EXPECT_GE(four.final_loss[i], one.final_loss[i]);
    }
}

TEST(Pgd, InvalidSpecsAreRejected)
{
    Classifier m = make_model("linear", InputShape::flat(2), 2, 1);
    const Batch x = Batch::Constant(1, 2, 0.5);
    const Labels y{0};
    Rng r(0);
    EXPECT_THROW(pgd_attack(m, x, y, linf_spec(0.0, 0.1, 1), r), ConfigError);
    EXPECT_THROW(pgd_attack(m, x, y, linf_spec(0.1, 0.0, 1), r), ConfigError);
    EXPECT_THROW(pgd_attack(m, x, y, linf_spec(0.1, 0.1, 0), r), ConfigError);
    auto s = linf_spec(0.1, 0.1, 1);
    s.restarts = 0;
    EXPECT_THROW(pgd_attack(m, x, y, s, r), ConfigError);
    EXPECT_THROW(pgd_attack(m, Batch::Constant(1, 3, 0.5), y, linf_spec(0.1, 0.1, 1), r), ShapeError);
    EXPECT_THROW(norm_from_name("l3"), ConfigError);
}

TEST(Msd, TiesGoToLinf)
{
    Classifier m = make_model("mlp:2x4", InputShape::flat(4), 3, 2);
    auto& p = m.parameters();
    p[p.size() - 1].setZero();
    p[p.size() - 2].setZero();
    const Batch x = Batch::Constant(3, 4, 0.5);
    const Labels y{0, 1, 2};
    const PerturbationSpec specs[3] = {{Norm::L1, 1.0, 0.5, 3, 1, InitMode::Zero},
                                       {Norm::L2, 0.5, 0.2, 3, 1, InitMode::Zero},
                                       {Norm::Linf, 0.1, 0.05, 3, 1, InitMode::Zero}};
    Rng r(0);
    const auto adv = msd_attack(m, x, y, specs, r);
    for (const auto& trace : adv.norm_trace) {
        ASSERT_EQ(trace.size(), 3U);
        for (Norm n : trace) {
            EXPECT_EQ(n, Norm::Linf);
        }
    }
}

TEST(Msd, GreedyChoiceMatchesReplayOverAllNormSequences)
{
    // Every step keeps the candidate with the largest loss; replaying all 3^2
    // two-step sequences the greedy path must be one of them and each of its
    // steps must beat the alternatives at that point.
    Rng r(12);
    Classifier m = make_model("mlp:2x8", InputShape::flat(10), 3, 33);
    const Batch x = random_batch(6, 10, r, 0.2, 0.8);
    const Labels y = random_labels(6, 3, r);
    const PerturbationSpec specs[3] = {{Norm::Linf, 0.05, 0.02, 2, 1, InitMode::Zero},
                                       {Norm::L2, 0.3, 0.15, 2, 1, InitMode::Zero},
                                       {Norm::L1, 1.0, 0.5, 2, 1, InitMode::Zero}};
    Rng ar(0);
    const auto adv = msd_attack(m, x, y, specs, ar);

    auto step = [&](const Batch& xi, const Eigen::RowVectorXd& delta, std::span<const int> yi, const PerturbationSpec& s) {
        const Batch g = input_gradient(m, InnerLoss::BoostedCE, xi + Batch(delta), yi);
        Eigen::RowVectorXd next = project_ball(delta + detail::ascent_step(g.row(0), s.norm, s.step_size), s.norm, s.eps);
        return Eigen::RowVectorXd((xi.row(0) + next).cwiseMax(0.0).cwiseMin(1.0) - xi.row(0));
    };
    auto loss = [&](const Batch& xi, const Eigen::RowVectorXd& delta, std::span<const int> yi) {
        return boosted_ce_rows(m.probs(xi + Batch(delta)), yi)[0];
    };
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Batch xi = x.row(i);
        const std::span<const int> yi(&y[static_cast<std::size_t>(i)], 1);
        Eigen::RowVectorXd greedy = Eigen::RowVectorXd::Zero(x.cols());
        for (int t = 0; t < 2; ++t) {
            const Norm chosen = adv.norm_trace[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
            Eigen::RowVectorXd pick;
            double best = -1.0;
            for (const auto& s : specs) {
                const Eigen::RowVectorXd cand = step(xi, greedy, yi, s);
                const double l = loss(xi, cand, yi);
                if (s.norm == chosen) {
                    pick = cand;
                    best = l;
                }
            }
            for (const auto& s : specs) {
                EXPECT_GE(best, loss(xi, step(xi, greedy, yi, s), yi));
            }
            greedy = pick;
        }
        bool found = false;
        for (int a = 0; a < 3 && !found; ++a) {
            for (int b = 0; b < 3 && !found; ++b) {
                const Eigen::RowVectorXd seq = step(xi, step(xi, Eigen::RowVectorXd::Zero(x.cols()), yi, specs[a]), yi, specs[b]);
                found = (seq - adv.delta.row(i)).cwiseAbs().maxCoeff() <= 1e-12;
            }
        }
        EXPECT_TRUE(found) << "example " << i;
        EXPECT_LE((greedy - adv.delta.row(i)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Msd, SpecsMustShareStepsAndUseDistinctNorms)
{
    Classifier m = make_model("linear", InputShape::flat(2), 2, 1);
    const Batch x = Batch::Constant(1, 2, 0.5);
    const Labels y{0};
    Rng r(0);
    const PerturbationSpec steps[2] = {{Norm::Linf, 0.1, 0.1, 2}, {Norm::L2, 0.1, 0.1, 3}};
    EXPECT_THROW(msd_attack(m, x, y, steps, r), ConfigError);
    const PerturbationSpec same[2] = {{Norm::L2, 0.1, 0.1, 2}, {Norm::L2, 0.2, 0.1, 2}};
    EXPECT_THROW(msd_attack(m, x, y, same, r), ConfigError);
    EXPECT_THROW(msd_attack(m, x, y, std::span<const PerturbationSpec>{}, r), ConfigError);
}

TEST(Noise, PerturbationsRespectBudgetsAndAreReproducible)
{
    Rng r(13);
    Classifier m = make_model("mlp:2x8", InputShape::flat(16), 3, 3);
    const Batch x = random_batch(10, 16, r);
    const Labels y = random_labels(10, 3, r);
    for (auto kind : {NoiseKind::GaussianL2, NoiseKind::SaltPepperL1}) {
        const double budget = kind == NoiseKind::GaussianL2 ? 0.4 : 2.5;
        Rng a(5);
        Rng b(5);
        const auto adv = noise_attack(m, x, y, kind, budget, 4, a);
        EXPECT_TRUE(bitwise_equal(adv.x_adv, noise_attack(m, x, y, kind, budget, 4, b).x_adv));
        const Norm p = kind == NoiseKind::GaussianL2 ? Norm::L2 : Norm::L1;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            EXPECT_LE(norm_of(adv.delta.row(i), p), budget + 1e-9);
        }
        EXPECT_GE(adv.x_adv.minCoeff(), 0.0);
        EXPECT_LE(adv.x_adv.maxCoeff(), 1.0);
        if (kind == NoiseKind::SaltPepperL1) {
            for (Eigen::Index j = 0; j < x.size(); ++j) {
                const double v = adv.x_adv.data()[j];
                EXPECT_TRUE(v == x.data()[j] || v == 0.0 || v == 1.0);
            }
        }
        Rng c(5);
        EXPECT_TRUE(bitwise_equal(noise_attack(m, x, y, kind, 0.0, 3, c).x_adv, x));
    }
    Rng d(0);
    EXPECT_THROW(noise_attack(m, x, y, NoiseKind::GaussianL2, 0.1, 0, d), ConfigError);
}
