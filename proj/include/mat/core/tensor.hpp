#ifndef MAT_CORE_TENSOR_HPP
#define MAT_CORE_TENSOR_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mat/core/error.hpp"

namespace mat {

// One example per row. Image rows are channel-major (c, h, w).
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Labels = std::vector<int>;

// Probabilities are floored at this value before any logarithm.
inline constexpr double kProbFloor = 1e-12;

struct InputShape {
    int channels{1};
    int height{1};
    int width{1};
    bool image{false};

    static InputShape flat(int dim) { return {1, 1, dim, false}; }
    static InputShape img(int c, int h, int w) { return {c, h, w, true}; }

    [[nodiscard]] int dim() const noexcept { return channels * height * width; }
    bool operator==(const InputShape&) const = default;
};

inline void require_labels(std::span<const int> y, Eigen::Index rows, int classes)
{
    if (static_cast<Eigen::Index>(y.size()) != rows) {
        throw ShapeError("label count " + std::to_string(y.size()) + " does not match batch size " +
                         std::to_string(rows));
    }
    for (int label : y) {
        if (label < 0 || label >= classes) {
            throw IndexError("label " + std::to_string(label) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
    }
}

// Row-wise softmax with max subtraction.
inline Batch softmax_rows(const Batch& logits)
{
    Batch out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

// Pulls a gradient with respect to probabilities back to the logits:
// dz = p * (dp - <dp, p>).
inline Batch softmax_backward(const Batch& probs, const Batch& grad_probs)
{
    Batch out(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const double inner = probs.row(i).dot(grad_probs.row(i));
        out.row(i) = probs.row(i).array() * (grad_probs.row(i).array() - inner);
    }
    return out;
}

// Argmax with the lowest index winning ties.
inline int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row)
{
    int best = 0;
    for (Eigen::Index k = 1; k < row.size(); ++k) {
        if (row[k] > row[best]) {
            best = static_cast<int>(k);
        }
    }
    return best;
}

inline Batch gather_rows(const Batch& x, std::span<const std::size_t> idx)
{
    Batch out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

inline Labels gather_labels(std::span<const int> y, std::span<const std::size_t> idx)
{
    Labels out;
    out.reserve(idx.size());
    for (auto i : idx) {
        out.push_back(y[i]);
    }
    return out;
}

inline Batch clip01(Batch x)
{
    return x.cwiseMax(0.0).cwiseMin(1.0);
}

// A single length-K probability distribution.
class ProbVector {
public:
    explicit ProbVector(Eigen::VectorXd values) : values_(std::move(values))
    {
        if (values_.size() < 1) {
            throw ShapeError("ProbVector needs at least one class");
        }
        if (!values_.allFinite() || values_.minCoeff() < 0.0 || values_.maxCoeff() > 1.0 + 1e-12) {
            throw ConfigError("ProbVector entries must lie in [0, 1]");
        }
        if (std::abs(values_.sum() - 1.0) > 1e-6) {
            throw ConfigError("ProbVector entries must sum to 1");
        }
    }
    ProbVector(std::initializer_list<double> values)
        : ProbVector(Eigen::Map<const Eigen::VectorXd>(values.begin(),
                                                       static_cast<Eigen::Index>(values.size())))
    {
    }

    [[nodiscard]] int size() const noexcept { return static_cast<int>(values_.size()); }
    [[nodiscard]] double operator[](int k) const { return values_[k]; }
    [[nodiscard]] const Eigen::VectorXd& values() const noexcept { return values_; }
    [[nodiscard]] Batch as_row() const { return values_.transpose(); }

private:
    Eigen::VectorXd values_;
};

}  // namespace mat

#endif  // MAT_CORE_TENSOR_HPP
