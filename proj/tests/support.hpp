#ifndef MAT_TESTS_SUPPORT_HPP
#define MAT_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mat/core/classifier.hpp"
#include "mat/core/rng.hpp"
#include "mat/core/tensor.hpp"

namespace mat::test {

inline constexpr double kFdStep = 1e-4;

// ||a - b|| / max(||a||, ||b||), with an absolute floor for all-zero gradients.
inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
    const double scale = std::max({a.norm(), b.norm(), 1e-10});
    return (a - b).norm() / scale;
}

// Central differences of f with respect to every entry of m (m is restored).
template <class M>
Eigen::MatrixXd fd_gradient(M& m, const std::function<double()>& f, double h = kFdStep)
{
    Eigen::MatrixXd g(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double keep = m(i, j);
            m(i, j) = keep + h;
            const double up = f();
            m(i, j) = keep - h;
            const double down = f();
            m(i, j) = keep;
            g(i, j) = (up - down) / (2.0 * h);
        }
    }
    return g;
}

inline Batch random_batch(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = 0.0, double hi = 1.0)
{
    Batch b(rows, cols);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        b.data()[i] = uniform(rng, lo, hi);
    }
    return b;
}

inline Labels random_labels(std::size_t n, int classes, Rng& rng)
{
    Labels y(n);
    for (auto& v : y) {
        v = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes)));
    }
    return y;
}

// Rows are random distributions with entries bounded away from zero.
inline Batch random_probs(Eigen::Index rows, Eigen::Index classes, Rng& rng)
{
    Batch p = random_batch(rows, classes, rng, 0.05, 1.0);
    for (Eigen::Index i = 0; i < rows; ++i) {
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

inline Classifier make_model(std::string_view arch, InputShape shape, int classes, std::uint64_t seed)
{
    Rng rng(seed);
    return Classifier::build(arch, shape, classes, rng);
}

// Projection onto the polytope {u : G u <= h} by enumerating active sets and
// solving each equality-constrained KKT system densely. Exponential, so only
// for a handful of constraints.
inline Eigen::VectorXd polytope_projection(const Eigen::VectorXd& v, const Eigen::MatrixXd& g, const Eigen::VectorXd& h,
                                    double* best_dist)
{
    const auto m = static_cast<int>(g.rows());
    Eigen::VectorXd best;
    *best_dist = std::numeric_limits<double>::infinity();
    for (int mask = 0; mask < (1 << m); ++mask) {
        std::vector<int> act;
        for (int i = 0; i < m; ++i) {
            if (mask & (1 << i)) {
                act.push_back(i);
            }
        }
        Eigen::VectorXd u = v;
        if (!act.empty()) {
            Eigen::MatrixXd ga(static_cast<Eigen::Index>(act.size()), g.cols());
            Eigen::VectorXd ha(static_cast<Eigen::Index>(act.size()));
            for (std::size_t k = 0; k < act.size(); ++k) {
                ga.row(static_cast<Eigen::Index>(k)) = g.row(act[k]);
                ha[static_cast<Eigen::Index>(k)] = h[act[k]];
            }
            const Eigen::MatrixXd gram = ga * ga.transpose();
            Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
            if (lu.rank() < gram.rows()) {
                continue;
            }
            const Eigen::VectorXd lambda = lu.solve(ga * v - ha);
            if (lambda.minCoeff() < -1e-12) {
                continue;
            }
            u = v - ga.transpose() * lambda;
        }
        if ((g * u - h).maxCoeff() > 1e-12) {
            continue;
        }
        const double dist = (u - v).squaredNorm();
        if (dist < *best_dist) {
            *best_dist = dist;
            best = u;
        }
    }
    return best;
}

// l1-ball projection as the nearest of the per-orthant simplex projections.
inline Eigen::RowVectorXd l1_projection_oracle(const Eigen::RowVectorXd& v, double eps)
{
    const Eigen::Index d = v.size();
    Eigen::RowVectorXd best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int signs = 0; signs < (1 << d); ++signs) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d + 1, d);
        Eigen::VectorXd h = Eigen::VectorXd::Zero(d + 1);
        for (Eigen::Index i = 0; i < d; ++i) {
            const double s = (signs & (1 << i)) ? -1.0 : 1.0;
            g(i, i) = -s;  // s * u_i >= 0
            g(d, i) = s;   // sum s * u_i <= eps
        }
        h[d] = eps;
        double dist = 0.0;
        const Eigen::VectorXd u = polytope_projection(v.transpose(), g, h, &dist);
        if (u.size() > 0 && dist < best_dist) {
            best_dist = dist;
            best = u.transpose();
        }
    }
    return best;
}

}  // namespace mat::test

#endif  // MAT_TESTS_SUPPORT_HPP
