#ifndef MAT_CORE_OPTIM_HPP
#define MAT_CORE_OPTIM_HPP

#include <optional>
#include <vector>

#include "mat/core/classifier.hpp"
#include "mat/core/error.hpp"

namespace mat {

// SGD with momentum, L2 weight decay and a step schedule.
struct OptimState {
    double learning_rate{0.01};
    double momentum{0.0};
    double weight_decay{0.0};
    std::vector<int> milestones;  // epochs (1-based) at which the rate is multiplied by `factor`
    double factor{0.1};
    Parameters velocity;          // empty until the first step

    void validate() const
    {
        if (!(learning_rate > 0.0)) {
            throw ConfigError("learning rate must be positive");
        }
        if (momentum < 0.0 || momentum >= 1.0) {
            throw ConfigError("momentum must lie in [0, 1)");
        }
        if (weight_decay < 0.0) {
            throw ConfigError("weight decay must be non-negative");
        }
        if (factor <= 0.0 || factor > 1.0) {
            throw ConfigError("learning-rate decay factor must lie in (0, 1]");
        }
    }
};

// Initial rate times factor^(number of milestones <= epoch).
inline double lr_at_epoch(const OptimState& s, int epoch)
{
    if (epoch < 1) {
        throw ConfigError("epochs are numbered from 1");
    }
    double lr = s.learning_rate;
    for (int m : s.milestones) {
        if (epoch >= m) {
            lr *= s.factor;
        }
    }
    return lr;
}

// d = g + wd * theta;  v = momentum * v + d;  theta -= lr * v.
// With momentum 0 and wd 0 this is exactly theta - lr * g.
inline void sgd_step(Classifier& model, OptimState& state, const Parameters& grads,
                     std::optional<double> lr = std::nullopt)
{
    auto& params = model.parameters();
    if (grads.size() != params.size()) {
        throw ShapeError("gradient list does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols()) {
            throw ShapeError("gradient " + std::to_string(i) + " has the wrong shape");
        }
        if (!grads[i].allFinite()) {
            throw NumericError("non-finite gradient for parameter " + std::to_string(i));
        }
    }
    const double rate = lr.value_or(state.learning_rate);
    if (state.momentum > 0.0 && state.velocity.empty()) {
        state.velocity = model.zero_gradients();
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.momentum == 0.0 && state.weight_decay == 0.0) {
            params[i] -= rate * grads[i];
            continue;
        }
        Eigen::MatrixXd d = grads[i];
        if (state.weight_decay != 0.0) {
            d += state.weight_decay * params[i];
        }
        if (state.momentum > 0.0) {
            state.velocity[i] = state.momentum * state.velocity[i] + d;
            params[i] -= rate * state.velocity[i];
        } else {
            params[i] -= rate * d;
        }
    }
}

}  // namespace mat

#endif  // MAT_CORE_OPTIM_HPP
