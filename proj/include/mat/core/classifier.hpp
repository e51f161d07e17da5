#ifndef MAT_CORE_CLASSIFIER_HPP
#define MAT_CORE_CLASSIFIER_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mat/core/error.hpp"
#include "mat/core/rng.hpp"
#include "mat/core/tensor.hpp"

namespace mat {

using Parameters = std::vector<Eigen::MatrixXd>;

namespace layers {

// y = x W^T + b. `weight`/`bias` index into the owning classifier's parameters.
struct Dense {
    int in{0};
    int out{0};
    std::size_t weight{0};
    std::size_t bias{0};
};

struct Relu {};

// 3x3 convolution, stride 1, zero padding 1. Weight is (out_c, in_c * 9).
struct Conv3x3 {
    int in_c{0};
    int out_c{0};
    int height{0};
    int width{0};
    std::size_t weight{0};
    std::size_t bias{0};
};

// 2x2 max pooling, stride 2.
struct MaxPool2 {
    int channels{0};
    int height{0};
    int width{0};
};

using Layer = std::variant<Dense, Relu, Conv3x3, MaxPool2>;

inline const char* name(const Layer& layer)
{
    return std::visit(
        [](const auto& l) -> const char* {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Dense>) {
                return "dense";
            } else if constexpr (std::is_same_v<T, Relu>) {
                return "relu";
            } else if constexpr (std::is_same_v<T, Conv3x3>) {
                return "conv3x3";
            } else {
                return "maxpool2";
            }
        },
        layer);
}

}  // namespace layers

// Intermediate values of one forward pass, consumed by `Classifier::backward`.
struct ForwardTrace {
    std::vector<Batch> inputs;                // input to each layer
    std::vector<std::vector<int>> pool_index;  // argmax positions, pooling layers only
    Batch logits;
};

// Feed-forward classifier over inputs in [0,1]^d.
//
// Architecture descriptors:
//   "linear"   single dense layer
//   "mlp:LxW"  L dense layers (L >= 1), hidden width W, ReLU between layers
//   "cnn:BxC"  B blocks of conv3x3(C)-relu-maxpool2, then a dense head; image inputs only
class Classifier {
public:
    Classifier() = default;

    static Classifier build(std::string_view architecture, InputShape shape, int classes, Rng& init_rng)
    {
        if (classes < 2) {
            throw ConfigError("classifier needs at least 2 classes");
        }
        if (shape.dim() < 1) {
            throw ConfigError("classifier input dimension must be positive");
        }
        Classifier c;
        c.architecture_ = std::string(architecture);
        c.shape_ = shape;
        c.classes_ = classes;

        if (architecture == "linear") {
            c.add_dense(shape.dim(), classes);
        } else if (architecture.starts_with("mlp:")) {
            const auto [depth, width] = parse_pair(architecture.substr(4), architecture);
            int in = shape.dim();
            for (int i = 0; i + 1 < depth; ++i) {
                c.add_dense(in, width);
                c.layers_.emplace_back(layers::Relu{});
                in = width;
            }
            c.add_dense(in, classes);
        } else if (architecture.starts_with("cnn:")) {
            if (!shape.image) {
                throw ConfigError("architecture '" + std::string(architecture) + "' needs image-shaped input");
            }
            const auto [blocks, channels] = parse_pair(architecture.substr(4), architecture);
            int c_in = shape.channels;
            int h = shape.height;
            int w = shape.width;
            for (int b = 0; b < blocks; ++b) {
                if (h % 2 != 0 || w % 2 != 0) {
                    throw ConfigError("image " + std::to_string(shape.height) + "x" +
                                      std::to_string(shape.width) + " is not divisible by 2^" +
                                      std::to_string(blocks));
                }
                c.add_conv(c_in, channels, h, w);
                c.layers_.emplace_back(layers::Relu{});
                c.layers_.emplace_back(layers::MaxPool2{channels, h, w});
                c_in = channels;
                h /= 2;
                w /= 2;
            }
            c.add_dense(c_in * h * w, classes);
        } else {
            throw ConfigError("unknown architecture '" + std::string(architecture) + "'");
        }
        c.initialize(init_rng);
        return c;
    }

    [[nodiscard]] const std::string& architecture() const noexcept { return architecture_; }
    [[nodiscard]] InputShape input_shape() const noexcept { return shape_; }
    [[nodiscard]] int classes() const noexcept { return classes_; }
    [[nodiscard]] const std::vector<layers::Layer>& layer_list() const noexcept { return layers_; }

    [[nodiscard]] Parameters& parameters() noexcept { return params_; }
    [[nodiscard]] const Parameters& parameters() const noexcept { return params_; }

    [[nodiscard]] std::size_t parameter_count() const noexcept
    {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += static_cast<std::size_t>(p.size());
        }
        return n;
    }

    [[nodiscard]] Parameters zero_gradients() const
    {
        Parameters g;
        g.reserve(params_.size());
        for (const auto& p : params_) {
            g.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
        }
        return g;
    }

    // Fan-in scaled uniform: every weight and bias of a layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    void initialize(Rng& rng)
    {
        for (const auto& layer : layers_) {
            if (const auto* d = std::get_if<layers::Dense>(&layer)) {
                fill_uniform(d->weight, d->bias, d->in, rng);
            } else if (const auto* cv = std::get_if<layers::Conv3x3>(&layer)) {
                fill_uniform(cv->weight, cv->bias, cv->in_c * 9, rng);
            }
        }
    }

    [[nodiscard]] Batch logits(const Batch& x) const
    {
        ForwardTrace trace;
        return forward(x, trace, false);
    }

    Batch logits(const Batch& x, ForwardTrace& trace) const { return forward(x, trace, true); }

    // Softmax probabilities, one row per example.
    [[nodiscard]] Batch probs(const Batch& x) const { return softmax_rows(logits(x)); }

    [[nodiscard]] std::vector<int> predict(const Batch& x) const
    {
        const Batch p = probs(x);
        std::vector<int> out(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            out[static_cast<std::size_t>(i)] = argmax_row(p.row(i));
        }
        return out;
    }

    // Back-propagates d(loss)/d(logits). Returns d(loss)/d(input); parameter
    // gradients are accumulated into `param_grads` when it is non-null.
    Batch backward(const ForwardTrace& trace, const Batch& grad_logits, Parameters* param_grads) const
    {
        if (trace.inputs.size() != layers_.size()) {
            throw ShapeError("forward trace does not belong to this classifier");
        }
        Batch grad = grad_logits;
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const Batch& in = trace.inputs[li];
            const auto& layer = layers_[li];
            if (const auto* d = std::get_if<layers::Dense>(&layer)) {
                const auto& w = params_[d->weight];
                if (param_grads != nullptr) {
                    (*param_grads)[d->weight].noalias() += grad.transpose() * in;
                    (*param_grads)[d->bias].noalias() += grad.colwise().sum().transpose();
                }
                Batch next = grad * w;
                grad = std::move(next);
            } else if (std::holds_alternative<layers::Relu>(layer)) {
                grad = (in.array() > 0.0).select(grad, 0.0);
            } else if (const auto* cv = std::get_if<layers::Conv3x3>(&layer)) {
                grad = conv_backward(*cv, in, grad, param_grads);
            } else if (std::holds_alternative<layers::MaxPool2>(layer)) {
                Batch g = Batch::Zero(in.rows(), in.cols());
                const auto& idx = trace.pool_index[li];
                const Eigen::Index out_dim = grad.cols();
                for (Eigen::Index i = 0; i < grad.rows(); ++i) {
                    for (Eigen::Index j = 0; j < out_dim; ++j) {
                        g(i, idx[static_cast<std::size_t>(i * out_dim + j)]) += grad(i, j);
                    }
                }
                grad = std::move(g);
            }
        }
        return grad;
    }

private:
    static std::pair<int, int> parse_pair(std::string_view spec, std::string_view full)
    {
        const auto x = spec.find('x');
        int a = 0;
        int b = 0;
        const auto bad = [&] { return ConfigError("malformed architecture '" + std::string(full) + "'"); };
        if (x == std::string_view::npos) {
            throw bad();
        }
        auto r1 = std::from_chars(spec.data(), spec.data() + x, a);
        auto r2 = std::from_chars(spec.data() + x + 1, spec.data() + spec.size(), b);
        if (r1.ec != std::errc{} || r1.ptr != spec.data() + x || r2.ec != std::errc{} ||
            r2.ptr != spec.data() + spec.size() || a < 1 || b < 1) {
            throw bad();
        }
        return {a, b};
    }

    void add_dense(int in, int out)
    {
        layers::Dense d{in, out, params_.size(), params_.size() + 1};
        params_.push_back(Eigen::MatrixXd::Zero(out, in));
        params_.push_back(Eigen::MatrixXd::Zero(out, 1));
        layers_.emplace_back(d);
    }

    void add_conv(int in_c, int out_c, int h, int w)
    {
        layers::Conv3x3 c{in_c, out_c, h, w, params_.size(), params_.size() + 1};
        params_.push_back(Eigen::MatrixXd::Zero(out_c, in_c * 9));
        params_.push_back(Eigen::MatrixXd::Zero(out_c, 1));
        layers_.emplace_back(c);
    }

    void fill_uniform(std::size_t w, std::size_t b, int fan_in, Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto idx : {w, b}) {
            auto& p = params_[idx];
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                p.data()[i] = uniform(rng, -bound, bound);
            }
        }
    }

    Batch forward(const Batch& x, ForwardTrace& trace, bool keep) const
    {
        if (x.cols() != shape_.dim()) {
            throw ShapeError("input has " + std::to_string(x.cols()) + " features, model expects " +
                             std::to_string(shape_.dim()));
        }
        if (keep) {
            trace.inputs.clear();
            trace.pool_index.assign(layers_.size(), {});
        }
        Batch h = x;
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const auto& layer = layers_[li];
            Batch next;
            if (const auto* d = std::get_if<layers::Dense>(&layer)) {
                next = h * params_[d->weight].transpose();
                next.rowwise() += params_[d->bias].col(0).transpose();
            } else if (std::holds_alternative<layers::Relu>(layer)) {
                next = h.cwiseMax(0.0);
            } else if (const auto* cv = std::get_if<layers::Conv3x3>(&layer)) {
                next = conv_forward(*cv, h);
            } else if (const auto* mp = std::get_if<layers::MaxPool2>(&layer)) {
                std::vector<int> idx;
                next = pool_forward(*mp, h, idx);
                if (keep) {
                    trace.pool_index[li] = std::move(idx);
                }
            }
            if (!next.allFinite()) {
                throw NumericError("non-finite activation in layer " + std::to_string(li) + " (" +
                                   layers::name(layer) + ")");
            }
            if (keep) {
                trace.inputs.push_back(std::move(h));
            }
            h = std::move(next);
        }
        if (keep) {
            trace.logits = h;
        }
        return h;
    }

    Batch conv_forward(const layers::Conv3x3& c, const Batch& in) const
    {
        const auto& w = params_[c.weight];
        const auto& b = params_[c.bias];
        const int hw = c.height * c.width;
        Batch out(in.rows(), static_cast<Eigen::Index>(c.out_c) * hw);
        for (Eigen::Index n = 0; n < in.rows(); ++n) {
            const double* src = in.row(n).data();
            double* dst = out.row(n).data();
            for (int co = 0; co < c.out_c; ++co) {
                for (int p = 0; p < hw; ++p) {
                    dst[co * hw + p] = b(co, 0);
                }
                for (int ci = 0; ci < c.in_c; ++ci) {
                    for (int k = 0; k < 9; ++k) {
                        const int dy = k / 3 - 1;
                        const int dx = k % 3 - 1;
                        const double wk = w(co, ci * 9 + k);
                        for (int y = 0; y < c.height; ++y) {
                            const int sy = y + dy;
                            if (sy < 0 || sy >= c.height) {
                                continue;
                            }
                            for (int xx = 0; xx < c.width; ++xx) {
                                const int sx = xx + dx;
                                if (sx < 0 || sx >= c.width) {
                                    continue;
                                }
                                dst[co * hw + y * c.width + xx] += wk * src[ci * hw + sy * c.width + sx];
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    Batch conv_backward(const layers::Conv3x3& c, const Batch& in, const Batch& grad_out,
                        Parameters* param_grads) const
    {
        const auto& w = params_[c.weight];
        const int hw = c.height * c.width;
        Batch grad_in = Batch::Zero(in.rows(), in.cols());
        for (Eigen::Index n = 0; n < in.rows(); ++n) {
            const double* src = in.row(n).data();
            const double* g = grad_out.row(n).data();
            double* gi = grad_in.row(n).data();
            for (int co = 0; co < c.out_c; ++co) {
                if (param_grads != nullptr) {
                    double gb = 0.0;
                    for (int p = 0; p < hw; ++p) {
                        gb += g[co * hw + p];
                    }
                    (*param_grads)[c.bias](co, 0) += gb;
                }
                for (int ci = 0; ci < c.in_c; ++ci) {
                    for (int k = 0; k < 9; ++k) {
                        const int dy = k / 3 - 1;
                        const int dx = k % 3 - 1;
                        const double wk = w(co, ci * 9 + k);
                        double gw = 0.0;
                        for (int y = 0; y < c.height; ++y) {
                            const int sy = y + dy;
                            if (sy < 0 || sy >= c.height) {
                                continue;
                            }
                            for (int xx = 0; xx < c.width; ++xx) {
                                const int sx = xx + dx;
                                if (sx < 0 || sx >= c.width) {
                                    continue;
                                }
                                const double go = g[co * hw + y * c.width + xx];
                                gw += go * src[ci * hw + sy * c.width + sx];
                                gi[ci * hw + sy * c.width + sx] += wk * go;
                            }
                        }
                        if (param_grads != nullptr) {
                            (*param_grads)[c.weight](co, ci * 9 + k) += gw;
                        }
                    }
                }
            }
        }
        return grad_in;
    }

    static Batch pool_forward(const layers::MaxPool2& m, const Batch& in, std::vector<int>& idx)
    {
        const int oh = m.height / 2;
        const int ow = m.width / 2;
        const int out_dim = m.channels * oh * ow;
        Batch out(in.rows(), out_dim);
        idx.assign(static_cast<std::size_t>(in.rows() * out_dim), 0);
        for (Eigen::Index n = 0; n < in.rows(); ++n) {
            const double* src = in.row(n).data();
            for (int c = 0; c < m.channels; ++c) {
                for (int y = 0; y < oh; ++y) {
                    for (int x = 0; x < ow; ++x) {
                        int best = c * m.height * m.width + (2 * y) * m.width + 2 * x;
                        for (int k = 1; k < 4; ++k) {
                            const int cand = c * m.height * m.width + (2 * y + k / 2) * m.width + 2 * x + k % 2;
                            if (src[cand] > src[best]) {
                                best = cand;
                            }
                        }
                        const int o = c * oh * ow + y * ow + x;
                        out(n, o) = src[best];
                        idx[static_cast<std::size_t>(n * out_dim + o)] = best;
                    }
                }
            }
        }
        return out;
    }

    std::string architecture_;
    InputShape shape_{};
    int classes_{0};
    std::vector<layers::Layer> layers_;
    Parameters params_;
};

}  // namespace mat

#endif  // MAT_CORE_CLASSIFIER_HPP
