#ifndef MAT_SWEEP_HPP
#define MAT_SWEEP_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mat/evaluation.hpp"
#include "mat/trainer.hpp"

namespace mat {

struct SweepSetup {
    std::string arch{"mlp:2x32"};
    std::size_t networks{2};
    PerturbationSpec train_attack;
    PerturbationSpec eval_attack;  // PGD on the validation split
    OptimState optim;
    TrainConfig train;             // alpha is overwritten per grid point
    double val_fraction{0.2};
};

struct SweepRow {
    double alpha{0.0};
    double clean{0.0};   // mean over the cohort
    double robust{0.0};  // mean over the cohort
};

struct SweepPoint {
    SweepRow row;
    Cohort cohort;
};

inline Dataset sweep_split(const Dataset& data, double val_fraction, std::uint64_t seed, Split which)
{
    Rng rng = substream(seed, "sweep/split");
    const auto idx = split_indices(data.size(), val_fraction, 0.0, rng);
    return which == Split::Val ? subset(data, idx.val, Split::Val) : subset(data, idx.train, Split::Train);
}

// Trains one cohort at `alpha` on the training part of the seeded split and
// scores it on the validation part.
inline SweepPoint sweep_point(const Dataset& data, double alpha, const SweepSetup& setup)
{
    const std::uint64_t seed = setup.train.seed;
    const Dataset train = sweep_split(data, setup.val_fraction, seed, Split::Train);
    const Dataset val = sweep_split(data, setup.val_fraction, seed, Split::Val);
    if (val.size() == 0) {
        throw ConfigError("alpha sweep validation split is empty");
    }
    TrainConfig cfg = setup.train;
    cfg.weights.alpha = alpha;
    cfg.scenario = Scenario::RobRobOnline;
    Cohort cohort = make_peer_cohort(setup.networks, setup.arch, data.shape, data.classes, setup.train_attack,
                                     setup.optim, seed);
    train_mat(cohort, train, cfg);

    AttackEntry pgd{"pgd", norm_name(setup.eval_attack.norm), AttackKind::Pgd, setup.eval_attack, {}, 1.0};
    SweepPoint p{{alpha, 0.0, 0.0}, std::move(cohort)};
    for (const auto& m : p.cohort.members) {
        p.row.clean += accuracy(m.model, val.inputs, val.labels);
        p.row.robust += mask_mean(attack_mask(m.model, m.model, pgd, val, seed));
    }
    p.row.clean /= static_cast<double>(p.cohort.size());
    p.row.robust /= static_cast<double>(p.cohort.size());
    return p;
}

inline std::vector<SweepRow> alpha_sweep(const Dataset& data, std::span<const double> grid, const SweepSetup& setup)
{
    if (grid.empty()) {
        throw ConfigError("alpha grid is empty");
    }
    std::vector<SweepRow> rows;
    for (double a : grid) {
        rows.push_back(sweep_point(data, a, setup).row);
    }
    return rows;
}

}  // namespace mat

#endif  // MAT_SWEEP_HPP
