#ifndef MAT_GRADIENTS_HPP
#define MAT_GRADIENTS_HPP

#include <span>
#include <string_view>

#include "mat/core/classifier.hpp"
#include "mat/losses.hpp"

namespace mat {

// d(sum_i loss_i)/dx: row i is the gradient of example i's own loss.
// Parameters are left untouched.
inline Batch input_gradient(const Classifier& model, InnerLoss loss, const Batch& x, std::span<const int> y)
{
    ForwardTrace trace;
    const Batch probs = softmax_rows(model.logits(x, trace));
    return model.backward(trace, inner_loss_logit_grad(loss, probs, y), nullptr);
}

inline Batch input_gradient(const Classifier& model, std::string_view loss_name, const Batch& x,
                            std::span<const int> y)
{
    return input_gradient(model, inner_loss_from_name(loss_name), x, y);
}

// Batch-mean loss and its parameter gradients.
inline double parameter_gradient(const Classifier& model, InnerLoss loss, const Batch& x, std::span<const int> y,
                                 Parameters& grads)
{
    ForwardTrace trace;
    const Batch probs = softmax_rows(model.logits(x, trace));
    const double inv_b = 1.0 / static_cast<double>(x.rows());
    grads = model.zero_gradients();
    model.backward(trace, inv_b * inner_loss_logit_grad(loss, probs, y), &grads);
    return inner_loss_rows(loss, probs, y).mean();
}

}  // namespace mat

#endif  // MAT_GRADIENTS_HPP
