#ifndef MAT_LOSSES_HPP
#define MAT_LOSSES_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mat/core/error.hpp"
#include "mat/core/tensor.hpp"

namespace mat {

// Scalar classification losses usable inside attacks and as AT terms.
enum class InnerLoss { BoostedCE, CrossEntropy };

inline InnerLoss inner_loss_from_name(std::string_view name)
{
    if (name == "boosted_ce") {
        return InnerLoss::BoostedCE;
    }
    if (name == "ce") {
        return InnerLoss::CrossEntropy;
    }
    throw ConfigError("unregistered loss '" + std::string(name) + "'");
}

inline const char* inner_loss_name(InnerLoss l)
{
    return l == InnerLoss::BoostedCE ? "boosted_ce" : "ce";
}

namespace detail {

inline double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

// Largest probability among classes other than y, lowest index on ties.
inline int runner_up(const Eigen::Ref<const Eigen::RowVectorXd>& p, int y)
{
    int best = -1;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (k == y) {
            continue;
        }
        if (best < 0 || p[k] > p[best]) {
            best = static_cast<int>(k);
        }
    }
    return best;
}

}  // namespace detail

// Boosted cross-entropy: -log p_y - log(1 - max_{k != y} p_k), both logs floored.
inline Eigen::VectorXd boosted_ce_rows(const Batch& probs, std::span<const int> y)
{
    require_labels(y, probs.rows(), static_cast<int>(probs.cols()));
    Eigen::VectorXd out(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int yi = y[static_cast<std::size_t>(i)];
        const int j = detail::runner_up(probs.row(i), yi);
        out[i] = -detail::safe_log(probs(i, yi)) - detail::safe_log(1.0 - probs(i, j));
    }
    return out;
}

// d(sum_i boosted_ce_i)/d(probs).
inline Batch boosted_ce_grad_probs(const Batch& probs, std::span<const int> y)
{
    Batch g = Batch::Zero(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int yi = y[static_cast<std::size_t>(i)];
        const int j = detail::runner_up(probs.row(i), yi);
        if (probs(i, yi) > kProbFloor) {
            g(i, yi) = -1.0 / probs(i, yi);
        }
        const double rest = 1.0 - probs(i, j);
        if (rest > kProbFloor) {
            g(i, j) = 1.0 / rest;
        }
    }
    return g;
}

inline Eigen::VectorXd cross_entropy_rows(const Batch& probs, std::span<const int> y)
{
    require_labels(y, probs.rows(), static_cast<int>(probs.cols()));
    Eigen::VectorXd out(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        out[i] = -detail::safe_log(probs(i, y[static_cast<std::size_t>(i)]));
    }
    return out;
}

inline Eigen::VectorXd inner_loss_rows(InnerLoss loss, const Batch& probs, std::span<const int> y)
{
    return loss == InnerLoss::BoostedCE ? boosted_ce_rows(probs, y) : cross_entropy_rows(probs, y);
}

// d(sum_i loss_i)/d(logits), given the softmax output `probs`.
inline Batch inner_loss_logit_grad(InnerLoss loss, const Batch& probs, std::span<const int> y)
{
    require_labels(y, probs.rows(), static_cast<int>(probs.cols()));
    if (loss == InnerLoss::CrossEntropy) {
        Batch g = probs;
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            const int yi = y[static_cast<std::size_t>(i)];
            if (probs(i, yi) > kProbFloor) {
                g(i, yi) -= 1.0;
            } else {
                g.row(i).setZero();
            }
        }
        return g;
    }
    return softmax_backward(probs, boosted_ce_grad_probs(probs, y));
}

// KL(teacher || student) per row, logs floored, clamped at 0 against rounding.
inline Eigen::VectorXd kl_rows(const Batch& teacher, const Batch& student)
{
    if (teacher.rows() != student.rows() || teacher.cols() != student.cols()) {
        throw ShapeError("KL divergence between batches of different shape");
    }
    Eigen::VectorXd out(teacher.rows());
    for (Eigen::Index i = 0; i < teacher.rows(); ++i) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < teacher.cols(); ++k) {
            const double t = teacher(i, k);
            if (t > 0.0) {
                s += t * (detail::safe_log(t) - detail::safe_log(student(i, k)));
            }
        }
        out[i] = std::max(s, 0.0);
    }
    return out;
}

inline Batch kl_grad_student_probs(const Batch& teacher, const Batch& student)
{
    Batch g = Batch::Zero(student.rows(), student.cols());
    for (Eigen::Index i = 0; i < student.rows(); ++i) {
        for (Eigen::Index k = 0; k < student.cols(); ++k) {
            if (student(i, k) > kProbFloor) {
                g(i, k) = -teacher(i, k) / student(i, k);
            }
        }
    }
    return g;
}

inline Batch kl_grad_teacher_probs(const Batch& teacher, const Batch& student)
{
    Batch g(teacher.rows(), teacher.cols());
    for (Eigen::Index i = 0; i < teacher.rows(); ++i) {
        for (Eigen::Index k = 0; k < teacher.cols(); ++k) {
            const double t = teacher(i, k);
            g(i, k) = detail::safe_log(t) - detail::safe_log(student(i, k)) + (t > kProbFloor ? 1.0 : 0.0);
        }
    }
    return g;
}

// Single-distribution entry points.
inline double boosted_ce(const ProbVector& p, int y)
{
    if (y < 0 || y >= p.size()) {
        throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(p.size()) + ")");
    }
    const int label[1] = {y};
    return boosted_ce_rows(p.as_row(), label)[0];
}

inline double kl_div(const ProbVector& teacher, const ProbVector& target)
{
    if (teacher.size() != target.size()) {
        throw ShapeError("KL divergence between distributions with " + std::to_string(teacher.size()) +
                         " and " + std::to_string(target.size()) + " classes");
    }
    return kl_rows(teacher.as_row(), target.as_row())[0];
}

// ---------------------------------------------------------------------------
// Loss weights and breakdowns

enum class CohortDivisor {
    NMinus1,    // alpha / (N - 1): N = 2 reduces exactly to the pair loss
    AsWritten,  // alpha / N: the specialist-loss convention applied to cohorts
};

struct LossWeights {
    double alpha{0.6};
    bool detach_teacher{false};
    CohortDivisor cohort_divisor{CohortDivisor::NMinus1};
    bool specialist_peers_include_generalist{false};

    void validate() const
    {
        if (!(alpha >= 0.0 && alpha <= 1.0)) {
            throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
        }
    }

    [[nodiscard]] double cohort_kd_weight(std::size_t networks) const
    {
        const double div = cohort_divisor == CohortDivisor::NMinus1 ? static_cast<double>(networks) - 1.0
                                                                     : static_cast<double>(networks);
        return alpha / div;
    }
};

// total = at_weight * sum(at) + kd_weight * sum(kd).
struct LossBreakdown {
    double total{0.0};
    std::vector<double> at;
    std::vector<double> kd;
    double at_weight{1.0};
    double kd_weight{0.0};

    [[nodiscard]] double recombined() const
    {
        return at_weight * std::accumulate(at.begin(), at.end(), 0.0) +
               kd_weight * std::accumulate(kd.begin(), kd.end(), 0.0);
    }
};

// ---------------------------------------------------------------------------
// Objectives: weighted sums of batch-mean terms over "slots", where a slot is
// the probability output of one network on one input batch. Evaluating an
// objective yields its value and d(objective)/d(logits) for every slot.

enum class TermKind { Classification, Distillation };

struct Term {
    TermKind kind{TermKind::Classification};
    double weight{1.0};
    std::size_t student{0};  // slot scored against labels, or the KL target slot
    std::size_t teacher{0};  // soft-label slot (distillation only)
    InnerLoss loss{InnerLoss::BoostedCE};
};

struct Objective {
    std::vector<Term> terms;
    bool detach_teacher{false};

    void add_classification(double weight, std::size_t slot, InnerLoss loss = InnerLoss::BoostedCE)
    {
        terms.push_back({TermKind::Classification, weight, slot, 0, loss});
    }
    void add_distillation(double weight, std::size_t teacher, std::size_t student)
    {
        terms.push_back({TermKind::Distillation, weight, student, teacher, InnerLoss::BoostedCE});
    }
};

struct ObjectiveValue {
    double total{0.0};
    std::vector<double> term_values;  // unweighted batch means, one per term
    std::vector<Batch> logit_grads;   // one per slot; empty when gradients were not requested
};

inline ObjectiveValue evaluate(const Objective& obj, std::span<const Batch> slots, std::span<const int> y,
                               bool with_gradients)
{
    ObjectiveValue out;
    if (slots.empty()) {
        throw ConfigError("objective evaluated without slots");
    }
    const Eigen::Index rows = slots.front().rows();
    const double inv_b = 1.0 / static_cast<double>(rows);
    std::vector<Batch> grad_probs;
    if (with_gradients) {
        for (const auto& s : slots) {
            grad_probs.push_back(Batch::Zero(s.rows(), s.cols()));
        }
    }
    for (const auto& t : obj.terms) {
        if (t.student >= slots.size() || (t.kind == TermKind::Distillation && t.teacher >= slots.size())) {
            throw IndexError("objective term refers to a missing slot");
        }
        const Batch& s = slots[t.student];
        double value = 0.0;
        if (t.kind == TermKind::Classification) {
            value = inner_loss_rows(t.loss, s, y).mean();
            if (with_gradients && t.weight != 0.0) {
                // Boosted CE goes through the probability route; CE's logit
                // gradient is added after the softmax pull-back below.
                if (t.loss == InnerLoss::BoostedCE) {
                    grad_probs[t.student] += (t.weight * inv_b) * boosted_ce_grad_probs(s, y);
                }
            }
        } else {
            const Batch& teacher = slots[t.teacher];
            value = kl_rows(teacher, s).mean();
            if (with_gradients && t.weight != 0.0) {
                grad_probs[t.student] += (t.weight * inv_b) * kl_grad_student_probs(teacher, s);
                if (!obj.detach_teacher) {
                    grad_probs[t.teacher] += (t.weight * inv_b) * kl_grad_teacher_probs(teacher, s);
                }
            }
        }
        if (!std::isfinite(value)) {
            throw NumericError("non-finite loss term");
        }
        out.term_values.push_back(value);
        out.total += t.weight * value;
    }
    if (with_gradients) {
        out.logit_grads.reserve(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) {
            out.logit_grads.push_back(softmax_backward(slots[i], grad_probs[i]));
        }
        for (const auto& t : obj.terms) {
            if (t.kind == TermKind::Classification && t.loss == InnerLoss::CrossEntropy && t.weight != 0.0) {
                out.logit_grads[t.student] +=
                    (t.weight * inv_b) * inner_loss_logit_grad(InnerLoss::CrossEntropy, slots[t.student], y);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// MAT losses. Every batch argument holds one probability row per example and
// every loss is a mean over the batch.

namespace detail {

inline void require_same_shape(std::span<const Batch> batches)
{
    for (const auto& b : batches) {
        if (b.rows() != batches.front().rows() || b.cols() != batches.front().cols()) {
            throw ShapeError("probability batches are not aligned");
        }
    }
}

}  // namespace detail

// Two-network loss: (1-a)(AT1 + AT2) + a(KD1 + KD2) with
// KD1 = KL(p2(x) || p1(x_adv1)) and KD2 = KL(p1(x) || p2(x_adv2)).
inline LossBreakdown mat_pair_loss(const Batch& p1_adv, const Batch& p1_clean, const Batch& p2_adv,
                                   const Batch& p2_clean, std::span<const int> y, const LossWeights& w)
{
    w.validate();
    const Batch all[4] = {p1_adv, p1_clean, p2_adv, p2_clean};
    detail::require_same_shape(all);
    LossBreakdown b;
    b.at = {boosted_ce_rows(p1_adv, y).mean(), boosted_ce_rows(p2_adv, y).mean()};
    b.kd = {kl_rows(p2_clean, p1_adv).mean(), kl_rows(p1_clean, p2_adv).mean()};
    b.at_weight = 1.0 - w.alpha;
    b.kd_weight = w.alpha;
    b.total = (1.0 - w.alpha) * (b.at[0] + b.at[1]) + w.alpha * (b.kd[0] + b.kd[1]);
    return b;
}

// N-network cohort: (1-a) sum_n AT_n + (a/div) sum_n sum_{m != n} KL(p_m(x) || p_n(x_adv_n)).
inline LossBreakdown mat_cohort_loss(std::span<const Batch> adv_probs, std::span<const Batch> clean_probs,
                                     std::span<const int> y, const LossWeights& w)
{
    w.validate();
    const std::size_t n = adv_probs.size();
    if (n < 2) {
        throw ConfigError("a MAT cohort needs at least 2 networks");
    }
    if (clean_probs.size() != n) {
        throw ConfigError("cohort loss needs clean outputs for every network");
    }
    detail::require_same_shape(adv_probs);
    detail::require_same_shape(clean_probs);
    LossBreakdown b;
    b.at_weight = 1.0 - w.alpha;
    b.kd_weight = w.cohort_kd_weight(n);
    for (std::size_t i = 0; i < n; ++i) {
        b.at.push_back(boosted_ce_rows(adv_probs[i], y).mean());
        double kd = 0.0;
        for (std::size_t m = 0; m < n; ++m) {
            if (m != i) {
                kd += kl_rows(clean_probs[m], adv_probs[i]).mean();
            }
        }
        b.kd.push_back(kd);
    }
    b.total = b.recombined();
    return b;
}

// Specialist m: (1-a) L_C(p_m(x_adv^m), y) + (a/M) sum_{n in peers} KL(p_n(x) || p_m(x_adv^m)).
inline double specialist_loss(std::size_t num_specialists, const Batch& adv_probs_m,
                              std::span<const Batch> peer_clean_probs, std::span<const int> y,
                              const LossWeights& w)
{
    w.validate();
    if (num_specialists < 1) {
        throw ConfigError("specialist loss needs at least one specialist");
    }
    if (peer_clean_probs.empty()) {
        throw ConfigError("specialist loss needs a non-empty peer set");
    }
    double kd = 0.0;
    for (const auto& peer : peer_clean_probs) {
        kd += kl_rows(peer, adv_probs_m).mean();
    }
    return (1.0 - w.alpha) * boosted_ce_rows(adv_probs_m, y).mean() +
           w.alpha / static_cast<double>(num_specialists) * kd;
}

// Generalist, averaged over perturbation types.
inline double generalist_loss_avg(std::span<const Batch> adv_probs_0, std::span<const Batch> specialist_clean,
                                  std::span<const int> y, const LossWeights& w)
{
    w.validate();
    const std::size_t m = adv_probs_0.size();
    if (m == 0 || specialist_clean.size() != m) {
        throw ConfigError("generalist loss needs one adversarial batch per specialist (M >= 1)");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sum += (1.0 - w.alpha) * boosted_ce_rows(adv_probs_0[i], y).mean() +
               w.alpha * kl_rows(specialist_clean[i], adv_probs_0[i]).mean();
    }
    return sum / static_cast<double>(m);
}

// Index of the perturbation type with the largest batch-mean boosted CE; lowest index on ties.
inline std::size_t worst_perturbation(std::span<const Batch> adv_probs_0, std::span<const int> y)
{
    if (adv_probs_0.empty()) {
        throw ConfigError("no perturbation types to select from");
    }
    std::size_t k = 0;
    double best = boosted_ce_rows(adv_probs_0[0], y).mean();
    for (std::size_t i = 1; i < adv_probs_0.size(); ++i) {
        const double v = boosted_ce_rows(adv_probs_0[i], y).mean();
        if (v > best) {
            best = v;
            k = i;
        }
    }
    return k;
}

struct MaxSelection {
    double loss{0.0};
    std::size_t selected{0};  // 0-based perturbation type
};

// Generalist trained on the worst perturbation type only.
inline MaxSelection generalist_loss_max(std::span<const Batch> adv_probs_0, std::span<const Batch> specialist_clean,
                                        std::span<const int> y, const LossWeights& w)
{
    w.validate();
    if (adv_probs_0.empty() || specialist_clean.size() != adv_probs_0.size()) {
        throw ConfigError("generalist loss needs one adversarial batch per specialist (M >= 1)");
    }
    const std::size_t k = worst_perturbation(adv_probs_0, y);
    const double loss = (1.0 - w.alpha) * boosted_ce_rows(adv_probs_0[k], y).mean() +
                        w.alpha * kl_rows(specialist_clean[k], adv_probs_0[k]).mean();
    return {loss, k};
}

// Generalist trained on a single multi-norm adversarial batch, distilled from every specialist.
inline double generalist_loss_msd(const Batch& msd_adv_probs_0, std::span<const Batch> specialist_clean,
                                  std::span<const int> y, const LossWeights& w)
{
    w.validate();
    const std::size_t m = specialist_clean.size();
    if (m == 0) {
        throw ConfigError("generalist loss needs at least one specialist");
    }
    const double at = boosted_ce_rows(msd_adv_probs_0, y).mean();
    double sum = 0.0;
    for (const auto& s : specialist_clean) {
        sum += (1.0 - w.alpha) * at + w.alpha * kl_rows(s, msd_adv_probs_0).mean();
    }
    return sum / static_cast<double>(m);
}

inline double matmp_total(std::span<const double> specialist_losses, double generalist_loss)
{
    double total = generalist_loss;
    for (double l : specialist_losses) {
        total += l;
    }
    return total;
}

}  // namespace mat

#endif  // MAT_LOSSES_HPP
