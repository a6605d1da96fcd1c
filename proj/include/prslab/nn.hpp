#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "prslab/error.hpp"
#include "prslab/rng.hpp"
#include "prslab/tensor.hpp"

namespace prslab {

enum class LayerKind { dense, conv };
enum class Activation { relu, none };

// One linear layer (dense or conv) plus its following activation. The model
// applies flattening automatically when a dense layer follows spatial data,
// so `flatten` needs no spec of its own.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    Activation activation = Activation::relu;
    int units = 0;         // dense output width
    int channels = 0;      // conv output channels
    int kernel = 3;
    int stride = 1;
    int padding = 0;

    static LayerSpec dense(int units, Activation act = Activation::relu) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.units = units;
        s.activation = act;
        return s;
    }
    static LayerSpec conv(int channels, int kernel, int stride, int padding,
                          Activation act = Activation::relu) {
        LayerSpec s;
        s.kind = LayerKind::conv;
        s.channels = channels;
        s.kernel = kernel;
        s.stride = stride;
        s.padding = padding;
        s.activation = act;
        return s;
    }
};

// F(x) = f_L(relu(f_{L-1}(...relu(f_1(x))...))): an ordered stack of linear
// layers with ReLU between them and raw logits at the end. Layer indices are
// 1-based; L is the number of linear layers; L-1 is the penultimate layer.
template <class S>
class Model {
  public:
    Model() = default;

    // input_shape is {C, H, W}; for flat inputs use {D, 1, 1} or {1, 1, D}.
    Model(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed) {
        require(!specs.empty(), ErrorKind::parameter, "model needs at least one layer");
        require(input_shape.size() == 3, ErrorKind::parameter,
                "input_shape must be {C,H,W}");
        require(specs.back().activation == Activation::none, ErrorKind::parameter,
                "final layer must emit raw logits (activation none)");
        specs_ = std::move(specs);
        input_shape_ = std::move(input_shape);
        frozen_.assign(specs_.size(), false);
        Rng rng(seed);
        int c = input_shape_[0], h = input_shape_[1], w = input_shape_[2];
        for (const LayerSpec& spec : specs_) {
            if (spec.kind == LayerKind::conv) {
                require(h > 0 && w > 0, ErrorKind::parameter,
                        "conv layer after flatten is not supported");
                int fan_in = c * spec.kernel * spec.kernel;
                weights_.push_back(init_uniform(
                    {spec.channels, c, spec.kernel, spec.kernel}, fan_in, rng));
                biases_.push_back(Tensor<S>::zeros({spec.channels}, true));
                h = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
                w = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
                require(h > 0 && w > 0, ErrorKind::parameter, "conv output collapsed to zero");
                c = spec.channels;
            } else {
                int fan_in = c * std::max(h, 1) * std::max(w, 1);
                weights_.push_back(init_uniform({spec.units, fan_in}, fan_in, rng));
                biases_.push_back(Tensor<S>::zeros({spec.units}, true));
                c = spec.units;
                h = w = 0;  // flat from here on
            }
        }
        output_classes_ = specs_.back().units;
        require(specs_.back().kind == LayerKind::dense, ErrorKind::parameter,
                "final layer must be dense (logits)");
    }

    int num_layers() const { return static_cast<int>(specs_.size()); }
    int num_classes() const { return output_classes_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    const Shape& input_shape() const { return input_shape_; }
    std::size_t input_size() const { return numel(input_shape_); }

    Tensor<S>& weight(int layer) { return weights_[check_layer(layer) - 1]; }
    Tensor<S>& bias(int layer) { return biases_[check_layer(layer) - 1]; }
    const Tensor<S>& weight(int layer) const { return weights_[check_layer(layer) - 1]; }
    const Tensor<S>& bias(int layer) const { return biases_[check_layer(layer) - 1]; }

    bool frozen(int layer) const { return frozen_[check_layer(layer) - 1]; }
    void set_frozen(int layer, bool on) { frozen_[check_layer(layer) - 1] = on; }

    // Width D_l of the pre-activation feature vector of layer l.
    int feature_width(int layer) const {
        check_layer(layer);
        const LayerSpec& spec = specs_[layer - 1];
        if (spec.kind == LayerKind::dense) return spec.units;
        Shape s = spatial_shape_after(layer);
        return s[0] * s[1] * s[2];
    }

    // Graph-building forward through layer `upto`, returning that layer's
    // pre-activation output (logits when upto == L). x is [N x input dims].
    Tensor<S> forward_features(const Tensor<S>& x, int upto) const {
        check_layer(upto);
        Tensor<S> cur = x;
        int n = x.shape()[0];
        bool spatial = x.shape().size() == 4;
        for (int l = 1; l <= upto; ++l) {
            const LayerSpec& spec = specs_[l - 1];
            if (spec.kind == LayerKind::conv) {
                require(spatial, ErrorKind::contract, "conv layer needs NCHW input");
                cur = conv2d(cur, weights_[l - 1], biases_[l - 1], spec.stride, spec.padding);
            } else {
                if (cur.shape().size() != 2)
                    cur = reshape(cur, {n, static_cast<int>(cur.size()) / n});
                spatial = false;
                cur = linear(cur, weights_[l - 1], biases_[l - 1]);
            }
            if (l == upto) break;
            if (spec.activation == Activation::relu) cur = relu(cur);
            if (spec.kind == LayerKind::dense) spatial = false;
        }
        if (cur.shape().size() != 2) cur = reshape(cur, {n, feature_width(upto)});
        return cur;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return forward_features(x, num_layers());
    }

    // Plain evaluation without graph construction: returns the flattened
    // pre-activation features of layer `upto` for a batch of n inputs. This
    // is the hot path for region analysis; its agreement with
    // forward_features is covered by tests.
    std::vector<S> eval_features(const S* batch, int n, int upto) const {
        check_layer(upto);
        int c = input_shape_[0], h = input_shape_[1], w = input_shape_[2];
        std::vector<S> cur(batch, batch + static_cast<std::size_t>(n) * numel(input_shape_));
        for (int l = 1; l <= upto; ++l) {
            const LayerSpec& spec = specs_[l - 1];
            std::vector<S> next;
            if (spec.kind == LayerKind::conv) {
                int ho = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
                int wo = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
                std::size_t colrows =
                    static_cast<std::size_t>(c) * spec.kernel * spec.kernel;
                std::size_t colcols = static_cast<std::size_t>(ho) * wo;
                next.assign(static_cast<std::size_t>(n) * spec.channels * colcols, S(0));
                std::vector<S> col(colrows * colcols);
                const std::vector<S>& wv = weights_[l - 1].value();
                const std::vector<S>& bv = biases_[l - 1].value();
                for (int i = 0; i < n; ++i) {
                    detail::im2col(cur.data() + static_cast<std::size_t>(i) * c * h * w,
                                   c, h, w, spec.kernel, spec.kernel, spec.stride,
                                   spec.padding, ho, wo, col.data());
                    S* dst = next.data() + static_cast<std::size_t>(i) * spec.channels * colcols;
                    detail::gemm_acc<S, false, false>(wv.data(), col.data(), dst,
                                                      spec.channels,
                                                      static_cast<int>(colrows),
                                                      static_cast<int>(colcols));
                    for (int j = 0; j < spec.channels; ++j)
                        for (std::size_t q = 0; q < colcols; ++q)
                            dst[static_cast<std::size_t>(j) * colcols + q] += bv[j];
                }
                c = spec.channels;
                h = ho;
                w = wo;
            } else {
                int in = static_cast<int>(cur.size()) / n;
                int out = spec.units;
                next.assign(static_cast<std::size_t>(n) * out, S(0));
                const std::vector<S>& wv = weights_[l - 1].value();
                const std::vector<S>& bv = biases_[l - 1].value();
                detail::gemm_acc<S, false, true>(cur.data(), wv.data(), next.data(), n, in, out);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < out; ++j)
                        next[static_cast<std::size_t>(i) * out + j] += bv[j];
                c = out;
                h = w = 0;
            }
            if (l < upto && spec.activation == Activation::relu)
                for (S& v : next)
                    if (v < S(0)) v = S(0);
            cur = std::move(next);
        }
        return cur;
    }

    // Predicted class per sample via argmax of the logits.
    std::vector<int> predict(const S* batch, int n) const {
        std::vector<S> logits = eval_features(batch, n, num_layers());
        int classes = output_classes_;
        std::vector<int> pred(n);
        for (int i = 0; i < n; ++i) {
            const S* row = logits.data() + static_cast<std::size_t>(i) * classes;
            int best = 0;
            for (int j = 1; j < classes; ++j)
                if (row[j] > row[best]) best = j;
            pred[i] = best;
        }
        return pred;
    }

    // All parameter tensors in layer order (W1, b1, W2, b2, ...).
    std::vector<Tensor<S>*> parameters() {
        std::vector<Tensor<S>*> out;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            out.push_back(&weights_[i]);
            out.push_back(&biases_[i]);
        }
        return out;
    }

    // Gradient buffers are scratch state shared through the graph handles, so
    // clearing them is allowed on a const model (forward/backward already
    // mutate them through const access).
    void zero_grads() const {
        for (const Tensor<S>& t : weights_) Tensor<S>(t).zero_grad();
        for (const Tensor<S>& t : biases_) Tensor<S>(t).zero_grad();
    }

  private:
    int check_layer(int layer) const {
        require(layer >= 1 && layer <= static_cast<int>(specs_.size()), ErrorKind::parameter,
                "layer index " + std::to_string(layer) + " out of range [1," +
                    std::to_string(specs_.size()) + "]");
        return layer;
    }

    Shape spatial_shape_after(int layer) const {
        int c = input_shape_[0], h = input_shape_[1], w = input_shape_[2];
        for (int l = 1; l <= layer; ++l) {
            const LayerSpec& spec = specs_[l - 1];
            if (spec.kind == LayerKind::conv) {
                h = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
                w = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
                c = spec.channels;
            } else {
                c = spec.units;
                h = w = 1;
            }
        }
        return {c, std::max(h, 1), std::max(w, 1)};
    }

    static Tensor<S> init_uniform(Shape shape, int fan_in, Rng& rng) {
        // Kaiming-uniform, fan-in mode, ReLU gain.
        double bound = std::sqrt(6.0 / fan_in);
        std::vector<S> data(numel(shape));
        for (S& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
        return Tensor<S>::from_data(std::move(shape), std::move(data), true);
    }

    std::vector<LayerSpec> specs_;
    Shape input_shape_;
    std::vector<Tensor<S>> weights_;
    std::vector<Tensor<S>> biases_;
    std::vector<bool> frozen_;
    int output_classes_ = 0;
};

template <class S>
void freeze_final_layer(Model<S>& model) {
    model.set_frozen(model.num_layers(), true);
}

// Adam with bias correction. Frozen layers receive no update; all gradients
// are cleared after the step.
template <class S>
class Adam {
  public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Model<S>& model) {
        int layers = model.num_layers();
        if (m_.empty()) {
            m_.resize(static_cast<std::size_t>(layers) * 2);
            v_.resize(static_cast<std::size_t>(layers) * 2);
            for (int l = 1; l <= layers; ++l) {
                m_[idx(l, 0)].assign(model.weight(l).size(), 0.0);
                v_[idx(l, 0)].assign(model.weight(l).size(), 0.0);
                m_[idx(l, 1)].assign(model.bias(l).size(), 0.0);
                v_[idx(l, 1)].assign(model.bias(l).size(), 0.0);
            }
        }
        for (int l = 1; l <= layers; ++l) {
            require(model.weight(l).has_grad() && model.bias(l).has_grad(),
                    ErrorKind::contract,
                    "adam_step: missing gradients for layer " + std::to_string(l));
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (int l = 1; l <= layers; ++l) {
            if (model.frozen(l)) continue;
            update(model.weight(l), m_[idx(l, 0)], v_[idx(l, 0)], bc1, bc2);
            update(model.bias(l), m_[idx(l, 1)], v_[idx(l, 1)], bc1, bc2);
        }
        model.zero_grads();
    }

    long step_count() const { return t_; }
    double learning_rate() const { return lr_; }

  private:
    static std::size_t idx(int layer, int which) {
        return static_cast<std::size_t>(layer - 1) * 2 + which;
    }

    void update(Tensor<S>& param, std::vector<double>& m, std::vector<double>& v,
                double bc1, double bc2) {
        std::vector<S>& p = param.value_mut();
        const std::vector<S>& g = param.grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p[i] = static_cast<S>(static_cast<double>(p[i]) -
                                  lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }

    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace prslab
