#ifndef MAT_ATTACKS_HPP
#define MAT_ATTACKS_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mat/core/classifier.hpp"
#include "mat/core/error.hpp"
#include "mat/core/rng.hpp"
#include "mat/gradients.hpp"
#include "mat/losses.hpp"

namespace mat {

enum class Norm { Linf, L2, L1 };

inline Norm norm_from_name(std::string_view s)
{
    if (s == "inf" || s == "linf") {
        return Norm::Linf;
    }
    if (s == "2" || s == "l2") {
        return Norm::L2;
    }
    if (s == "1" || s == "l1") {
        return Norm::L1;
    }
    throw ConfigError("unsupported norm '" + std::string(s) + "'");
}

inline const char* norm_name(Norm n)
{
    switch (n) {
    case Norm::Linf: return "linf";
    case Norm::L2: return "l2";
    case Norm::L1: return "l1";
    }
    return "?";
}

// Ties between norms in multi-norm attacks go to the lower priority value.
inline int norm_priority(Norm n) { return static_cast<int>(n); }

enum class InitMode { Zero, UniformBall };

inline InitMode init_from_name(std::string_view s)
{
    if (s == "zero") {
        return InitMode::Zero;
    }
    if (s == "uniform" || s == "uniform-in-ball") {
        return InitMode::UniformBall;
    }
    throw ConfigError("unknown attack init '" + std::string(s) + "'");
}

struct PerturbationSpec {
    Norm norm{Norm::Linf};
    double eps{8.0 / 255.0};
    double step_size{0.007};
    int steps{10};
    int restarts{1};
    InitMode init{InitMode::UniformBall};
    InnerLoss inner_loss{InnerLoss::BoostedCE};

    void validate() const
    {
        if (!(eps > 0.0)) {
            throw ConfigError("attack budget eps must be positive");
        }
        if (!(step_size > 0.0)) {
            throw ConfigError("attack step size must be positive");
        }
        if (steps < 1) {
            throw ConfigError("attack needs at least one step");
        }
        if (restarts < 1) {
            throw ConfigError("attack needs at least one restart");
        }
    }
};

struct AdversarialBatch {
    Batch x_adv;
    Batch delta;  // x_adv - x
    PerturbationSpec spec;
    std::vector<int> best_restart;        // per example
    Eigen::VectorXd final_loss;           // inner loss at x_adv, per example
    std::vector<std::vector<Norm>> norm_trace;  // multi-norm attacks: chosen norm per step, per example
};

inline double norm_of(const Eigen::Ref<const Eigen::RowVectorXd>& v, Norm p)
{
    switch (p) {
    case Norm::Linf: return v.cwiseAbs().maxCoeff();
    case Norm::L2: return v.norm();
    case Norm::L1: return v.cwiseAbs().sum();
    }
    return 0.0;
}

// Euclidean projection onto {d : |d|_p <= eps}. Vectors already inside the ball
// (up to a relative 1e-12) are returned unchanged, which keeps the map idempotent.
inline Eigen::RowVectorXd project_ball(const Eigen::Ref<const Eigen::RowVectorXd>& delta, Norm p, double eps)
{
    if (!(eps > 0.0)) {
        throw ConfigError("projection radius must be positive");
    }
    const double slack = eps * (1.0 + 1e-12);
    switch (p) {
    case Norm::Linf:
        return delta.cwiseMax(-eps).cwiseMin(eps);
    case Norm::L2: {
        const double n = delta.norm();
        if (n <= slack) {
            return delta;
        }
        return delta * (eps / n);
    }
    case Norm::L1: {
        const Eigen::RowVectorXd a = delta.cwiseAbs();
        if (a.sum() <= slack) {
            return delta;
        }
        // Sort-based simplex projection of |delta| onto {u >= 0, sum u = eps}.
        std::vector<double> u(a.data(), a.data() + a.size());
        std::sort(u.begin(), u.end(), std::greater<>());
        double cumulative = 0.0;
        double theta = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) {
            cumulative += u[j];
            const double t = (cumulative - eps) / static_cast<double>(j + 1);
            if (u[j] - t > 0.0) {
                theta = t;
            } else {
                break;
            }
        }
        Eigen::RowVectorXd out(delta.size());
        for (Eigen::Index i = 0; i < delta.size(); ++i) {
            const double mag = std::max(a[i] - theta, 0.0);
            out[i] = delta[i] < 0.0 ? -mag : mag;
        }
        return out;
    }
    }
    throw ConfigError("unsupported norm");
}

inline Batch project_rows(const Batch& delta, Norm p, double eps)
{
    Batch out(delta.rows(), delta.cols());
    for (Eigen::Index i = 0; i < delta.rows(); ++i) {
        out.row(i) = project_ball(delta.row(i), p, eps);
    }
    return out;
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace detail {

// Fraction of coordinates moved by one l1 steepest-ascent step.
inline constexpr double kL1TopFraction = 0.01;

// Steepest-ascent step for one example under norm p.
//   linf: eta * sign(g)
//   l2:   eta * g / |g|_2
//   l1:   eta * sign(g_i) on the top-1% largest |g_i| (at least one coordinate)
inline Eigen::RowVectorXd ascent_step(const Eigen::Ref<const Eigen::RowVectorXd>& g, Norm p, double eta)
{
    Eigen::RowVectorXd step = Eigen::RowVectorXd::Zero(g.size());
    switch (p) {
    case Norm::Linf:
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            step[i] = eta * sign_of(g[i]);
        }
        break;
    case Norm::L2: {
        const double n = g.norm();
        if (n > 0.0) {
            step = g * (eta / n);
        }
        break;
    }
    case Norm::L1: {
        const auto d = static_cast<std::size_t>(g.size());
        const std::size_t k = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(kL1TopFraction * static_cast<double>(d))));
        std::vector<Eigen::Index> order(d);
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return std::abs(g[a]) > std::abs(g[b]); });
        for (std::size_t j = 0; j < k; ++j) {
            step[order[j]] = eta * sign_of(g[order[j]]);
        }
        break;
    }
    }
    return step;
}

// Uniform sample from the p-ball of radius eps.
inline Eigen::RowVectorXd sample_ball(Eigen::Index d, Norm p, double eps, Rng& rng)
{
    Eigen::RowVectorXd v(d);
    switch (p) {
    case Norm::Linf:
        for (Eigen::Index i = 0; i < d; ++i) {
            v[i] = uniform(rng, -eps, eps);
        }
        break;
    case Norm::L2: {
        for (Eigen::Index i = 0; i < d; ++i) {
            v[i] = standard_normal(rng);
        }
        const double n = v.norm();
        const double r = eps * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
        v *= n > 0.0 ? r / n : 0.0;
        break;
    }
    case Norm::L1: {
        // First d coordinates of a Dirichlet(1,...,1) over d+1 cells, random signs.
        double total = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            v[i] = -std::log(1.0 - uniform01(rng));
            total += v[i];
        }
        total += -std::log(1.0 - uniform01(rng));
        for (Eigen::Index i = 0; i < d; ++i) {
            v[i] = eps * v[i] / total * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
        }
        break;
    }
    }
    return v;
}

inline Batch initial_delta(const Batch& x, Norm p, double eps, InitMode init, Rng& rng)
{
    if (init == InitMode::Zero) {
        return Batch::Zero(x.rows(), x.cols());
    }
    Batch d(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        d.row(i) = sample_ball(x.cols(), p, eps, rng);
    }
    return clip01(x + d) - x;
}

inline Eigen::VectorXd loss_at(const Classifier& model, InnerLoss loss, const Batch& x, std::span<const int> y)
{
    return inner_loss_rows(loss, model.probs(x), y);
}

// Keeps, per example, the candidate with strictly larger loss.
inline void keep_best(AdversarialBatch& best, const Batch& x_adv, const Eigen::VectorXd& loss, int restart)
{
    if (best.x_adv.size() == 0) {
        best.x_adv = x_adv;
        best.final_loss = loss;
        best.best_restart.assign(static_cast<std::size_t>(x_adv.rows()), restart);
        return;
    }
    for (Eigen::Index i = 0; i < x_adv.rows(); ++i) {
        if (loss[i] > best.final_loss[i]) {
            best.x_adv.row(i) = x_adv.row(i);
            best.final_loss[i] = loss[i];
            best.best_restart[static_cast<std::size_t>(i)] = restart;
        }
    }
}

inline void check_inputs(const Classifier& model, const Batch& x, std::span<const int> y)
{
    if (x.cols() != model.input_shape().dim()) {
        throw ShapeError("attack input has " + std::to_string(x.cols()) + " features, model expects " +
                         std::to_string(model.input_shape().dim()));
    }
    require_labels(y, x.rows(), model.classes());
}

// Shared loop of PGD and MIM; momentum < 0 selects plain PGD.
inline AdversarialBatch iterate(const Classifier& model, const Batch& x, std::span<const int> y,
                                const PerturbationSpec& spec, double momentum, Rng& rng)
{
    spec.validate();
    check_inputs(model, x, y);
    AdversarialBatch best;
    best.spec = spec;
    for (int r = 0; r < spec.restarts; ++r) {
        Batch delta = initial_delta(x, spec.norm, spec.eps, spec.init, rng);
        Batch x_adv = x + delta;
        Batch accum = Batch::Zero(x.rows(), x.cols());
        for (int t = 0; t < spec.steps; ++t) {
            const Batch g = input_gradient(model, spec.inner_loss, x_adv, y);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                Eigen::RowVectorXd dir = g.row(i);
                if (momentum >= 0.0) {
                    const double l1 = dir.cwiseAbs().sum();
                    accum.row(i) = momentum * accum.row(i) + (l1 > 0.0 ? Eigen::RowVectorXd(dir / l1)
                                                                        : Eigen::RowVectorXd(dir * 0.0));
                    dir = accum.row(i);
                }
                delta.row(i) = project_ball(delta.row(i) + ascent_step(dir, spec.norm, spec.step_size),
                                            spec.norm, spec.eps);
            }
            x_adv = clip01(x + delta);
            delta = x_adv - x;
        }
        keep_best(best, x_adv, loss_at(model, spec.inner_loss, x_adv, y), r);
    }
    best.delta = best.x_adv - x;
    return best;
}

}  // namespace detail

// Projected gradient ascent on the inner loss under spec.norm, best of spec.restarts per example.
inline AdversarialBatch pgd_attack(const Classifier& model, const Batch& x, std::span<const int> y,
                                   const PerturbationSpec& spec, Rng& rng)
{
    return detail::iterate(model, x, y, spec, -1.0, rng);
}

// Single signed-gradient step of size eps: PGD with K=1, eta=eps, zero init, one restart.
inline AdversarialBatch fgsm(const Classifier& model, const Batch& x, std::span<const int> y, double eps,
                             InnerLoss inner_loss = InnerLoss::BoostedCE)
{
    PerturbationSpec spec{Norm::Linf, eps, eps, 1, 1, InitMode::Zero, inner_loss};
    Rng unused{0};
    return pgd_attack(model, x, y, spec, unused);
}

// Momentum iterative method: g <- mu * g + grad / |grad|_1, signed steps. Linf only.
inline AdversarialBatch mim_attack(const Classifier& model, const Batch& x, std::span<const int> y,
                                   const PerturbationSpec& spec, double decay, Rng& rng)
{
    if (spec.norm != Norm::Linf) {
        throw ConfigError("MIM is defined for the linf norm only");
    }
    if (!(decay >= 0.0)) {
        throw ConfigError("MIM decay must be non-negative");
    }
    return detail::iterate(model, x, y, spec, decay, rng);
}

// Multi steepest descent: at each step every norm proposes its own projected
// ascent step; each example keeps the candidate with the largest inner loss.
// Ties go to linf, then l2, then l1. Restarts, init and inner loss come from
// the highest-priority spec.
inline AdversarialBatch msd_attack(const Classifier& model, const Batch& x, std::span<const int> y,
                                   std::span<const PerturbationSpec> specs, Rng& rng)
{
    if (specs.empty()) {
        throw ConfigError("MSD needs at least one perturbation spec");
    }
    std::vector<PerturbationSpec> ordered(specs.begin(), specs.end());
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return norm_priority(a.norm) < norm_priority(b.norm);
    });
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        ordered[i].validate();
        if (ordered[i].steps != ordered[0].steps) {
            throw ConfigError("MSD specs must share one step count");
        }
        if (i > 0 && ordered[i].norm == ordered[i - 1].norm) {
            throw ConfigError("MSD specs must use distinct norms");
        }
    }
    detail::check_inputs(model, x, y);
    const PerturbationSpec& lead = ordered.front();
    const InnerLoss loss = lead.inner_loss;

    AdversarialBatch best;
    best.spec = lead;
    std::vector<std::vector<Norm>> best_trace;
    for (int r = 0; r < lead.restarts; ++r) {
        Batch delta = detail::initial_delta(x, lead.norm, lead.eps, lead.init, rng);
        std::vector<std::vector<Norm>> trace(static_cast<std::size_t>(x.rows()));
        for (int t = 0; t < lead.steps; ++t) {
            const Batch g = input_gradient(model, loss, x + delta, y);
            Batch chosen = delta;
            Eigen::VectorXd chosen_loss = Eigen::VectorXd::Constant(x.rows(), -std::numeric_limits<double>::infinity());
            std::vector<Norm> chosen_norm(static_cast<std::size_t>(x.rows()), lead.norm);
            for (const auto& s : ordered) {
                Batch cand(x.rows(), x.cols());
                for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    cand.row(i) = project_ball(delta.row(i) + detail::ascent_step(g.row(i), s.norm, s.step_size),
                                               s.norm, s.eps);
                }
                cand = clip01(x + cand) - x;
                const Eigen::VectorXd l = detail::loss_at(model, loss, x + cand, y);
                for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    if (l[i] > chosen_loss[i]) {
                        chosen_loss[i] = l[i];
                        chosen.row(i) = cand.row(i);
                        chosen_norm[static_cast<std::size_t>(i)] = s.norm;
                    }
                }
            }
            delta = std::move(chosen);
            for (std::size_t i = 0; i < trace.size(); ++i) {
                trace[i].push_back(chosen_norm[i]);
            }
        }
        const Batch x_adv = x + delta;
        const Eigen::VectorXd final_loss = detail::loss_at(model, loss, x_adv, y);
        if (r == 0) {
            best_trace = trace;
        } else {
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                if (final_loss[i] > best.final_loss[i]) {
                    best_trace[static_cast<std::size_t>(i)] = trace[static_cast<std::size_t>(i)];
                }
            }
        }
        detail::keep_best(best, x_adv, final_loss, r);
    }
    best.delta = best.x_adv - x;
    best.norm_trace = std::move(best_trace);
    return best;
}

enum class NoiseKind { GaussianL2, SaltPepperL1 };

// Best-of-trials random perturbation inside the budget; no gradients.
//   GaussianL2:   isotropic Gaussian direction scaled to l2 norm = budget
//   SaltPepperL1: coordinates set to 0 or 1 in random order while the l1 budget allows
inline AdversarialBatch noise_attack(const Classifier& model, const Batch& x, std::span<const int> y,
                                     NoiseKind kind, double budget, int trials, Rng& rng,
                                     InnerLoss inner_loss = InnerLoss::BoostedCE)
{
    if (trials < 1) {
        throw ConfigError("noise attack needs at least one trial");
    }
    if (!(budget >= 0.0)) {
        throw ConfigError("noise budget must be non-negative");
    }
    detail::check_inputs(model, x, y);
    const Eigen::Index d = x.cols();
    AdversarialBatch best;
    best.spec = PerturbationSpec{kind == NoiseKind::GaussianL2 ? Norm::L2 : Norm::L1, budget, budget, 1, trials,
                                 InitMode::UniformBall, inner_loss};
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    for (int t = 0; t < trials; ++t) {
        Batch x_adv = x;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (kind == NoiseKind::GaussianL2) {
                Eigen::RowVectorXd n(d);
                for (Eigen::Index j = 0; j < d; ++j) {
                    n[j] = standard_normal(rng);
                }
                const double len = n.norm();
                if (len > 0.0) {
                    x_adv.row(i) = (x.row(i) + n * (budget / len)).cwiseMax(0.0).cwiseMin(1.0);
                }
            } else {
                std::iota(order.begin(), order.end(), Eigen::Index{0});
                shuffle(order, rng);
                double used = 0.0;
                for (auto j : order) {
                    const double v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
                    const double cost = std::abs(v - x(i, j));
                    if (used + cost <= budget) {
                        x_adv(i, j) = v;
                        used += cost;
                    }
                }
            }
        }
        detail::keep_best(best, x_adv, detail::loss_at(model, inner_loss, x_adv, y), t);
    }
    best.delta = best.x_adv - x;
    return best;
}

}  // namespace mat

#endif  // MAT_ATTACKS_HPP
