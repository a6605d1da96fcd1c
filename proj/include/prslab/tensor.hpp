#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "prslab/error.hpp"

namespace prslab {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {
inline std::atomic<std::uint64_t>& node_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}
inline bool& debug_checks_flag() {
    static bool flag = false;
    return flag;
}
}  // namespace detail

// When enabled, every created tensor value buffer is scanned for NaN/Inf.
inline void set_debug_checks(bool on) { detail::debug_checks_flag() = on; }

// Reverse-mode autodiff tensor. A Tensor is a shared handle to a graph node;
// nodes carry a monotonically increasing sequence id, so creation order is a
// topological order and backward can visit reachable nodes exactly once in
// reverse sequence order.
template <class S>
class Tensor {
  public:
    struct Node {
        Shape shape;
        std::vector<S> value;
        std::vector<S> grad;  // sized on demand, same length as value
        bool requires_grad = false;
        std::uint64_t seq = 0;
        std::vector<std::shared_ptr<Node>> parents;
        // Pulls this node's grad into the parents' grads (accumulating).
        std::function<void(Node&)> backward_fn;

        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), S(0));
        }
    };

    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        require(numel(shape) == data.size(), ErrorKind::dimension,
                "tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
        return make_node(std::move(shape), std::move(data), requires_grad, {}, nullptr);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<S> data(numel(shape), S(0));
        return make_node(std::move(shape), std::move(data), requires_grad, {}, nullptr);
    }

    static Tensor scalar(S v) { return from_data({1}, {v}); }

    // Low-level op constructor used by every differentiable operation.
    static Tensor make_op(Shape shape, std::vector<S> value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
        bool needs_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        parents.reserve(inputs.size());
        for (const Tensor& t : inputs) {
            parents.push_back(t.node_);
            needs_grad = needs_grad || t.node_->requires_grad;
        }
        return make_node(std::move(shape), std::move(value), needs_grad,
                         std::move(parents), needs_grad ? std::move(backward_fn) : nullptr);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    const std::vector<S>& value() const { return node_->value; }
    std::vector<S>& value_mut() { return node_->value; }
    const std::vector<S>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    std::size_t size() const { return node_->value.size(); }
    S item() const {
        require(node_->value.size() == 1, ErrorKind::contract, "item() on non-scalar tensor");
        return node_->value[0];
    }

    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }

    std::shared_ptr<Node> node() const { return node_; }

    // Reverse accumulation from a scalar loss. Repeated calls accumulate.
    void backward() const {
        require(node_->value.size() == 1, ErrorKind::contract,
                "backward() requires a scalar loss");
        // Gather reachable nodes, then visit in reverse creation order.
        std::vector<Node*> reachable;
        std::vector<Node*> stack{node_.get()};
        std::vector<const Node*> seen;
        auto mark = [&](Node* n) {
            if (std::find(seen.begin(), seen.end(), n) != seen.end()) return false;
            seen.push_back(n);
            return true;
        };
        mark(node_.get());
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            reachable.push_back(n);
            for (auto& p : n->parents)
                if (p->requires_grad && mark(p.get())) stack.push_back(p.get());
        }
        std::sort(reachable.begin(), reachable.end(),
                  [](const Node* a, const Node* b) { return a->seq > b->seq; });
        node_->ensure_grad();
        node_->grad[0] += S(1);
        for (Node* n : reachable) {
            if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
        }
    }

  private:
    static Tensor make_node(Shape shape, std::vector<S> value, bool requires_grad,
                            std::vector<std::shared_ptr<Node>> parents,
                            std::function<void(Node&)> backward_fn) {
        if (detail::debug_checks_flag()) {
            for (S v : value)
                require(std::isfinite(static_cast<double>(v)), ErrorKind::contract,
                        "non-finite value in tensor");
        }
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(value);
        t.node_->requires_grad = requires_grad;
        t.node_->seq = detail::node_counter().fetch_add(1) + 1;
        t.node_->parents = std::move(parents);
        t.node_->backward_fn = std::move(backward_fn);
        return t;
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

// Accumulate g into parent's grad buffer.
template <class S>
void add_grad(typename Tensor<S>::Node& parent, const S* g, std::size_t n) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) parent.grad[i] += g[i];
}

// C[m x n] += A[m x k] * B[k x n], optionally transposing A or B.
template <class S, bool TA, bool TB>
void gemm_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    if constexpr (!TA && !TB) {
        for (int i = 0; i < m; ++i) {
            const S* arow = a + static_cast<std::size_t>(i) * k;
            S* crow = c + static_cast<std::size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                S av = arow[p];
                if (av == S(0)) continue;
                const S* brow = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if constexpr (TA && !TB) {
        // a is [k x m] interpreted transposed
        for (int p = 0; p < k; ++p) {
            const S* arow = a + static_cast<std::size_t>(p) * m;
            const S* brow = b + static_cast<std::size_t>(p) * n;
            for (int i = 0; i < m; ++i) {
                S av = arow[i];
                if (av == S(0)) continue;
                S* crow = c + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if constexpr (!TA && TB) {
        // b is [n x k] interpreted transposed
        for (int i = 0; i < m; ++i) {
            const S* arow = a + static_cast<std::size_t>(i) * k;
            S* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const S* brow = b + static_cast<std::size_t>(j) * k;
                S acc = S(0);
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    } else {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                S acc = S(0);
                for (int p = 0; p < k; ++p)
                    acc += a[static_cast<std::size_t>(p) * m + i] *
                           b[static_cast<std::size_t>(j) * k + p];
                c[static_cast<std::size_t>(i) * n + j] += acc;
            }
    }
}

}  // namespace detail

// ---- differentiable operations ----

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2, ErrorKind::dimension,
            "matmul expects rank-2 tensors");
    int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    require(k == k2, ErrorKind::dimension,
            "matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
    std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
    detail::gemm_acc<S, false, false>(a.value().data(), b.value().data(), out.data(), m, k, n);
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(
        {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                // dA = G * B^T
                detail::gemm_acc<S, false, true>(self.grad.data(), pb.value.data(),
                                                 pa.grad.data(), m, n, k);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                // dB = A^T * G
                detail::gemm_acc<S, true, false>(pa.value.data(), self.grad.data(),
                                                 pb.grad.data(), k, m, n);
            }
        });
}

// y = x * W^T + b with x:[N x in], W:[out x in] (row i is unit i), b:[out].
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    require(x.shape().size() == 2 && w.shape().size() == 2, ErrorKind::dimension,
            "linear expects rank-2 input and weight");
    int n = x.shape()[0], in = x.shape()[1];
    int out = w.shape()[0];
    require(w.shape()[1] == in, ErrorKind::dimension,
            "linear weight shape " + shape_str(w.shape()) + " incompatible with input " +
                shape_str(x.shape()));
    require(b.shape().size() == 1 && b.shape()[0] == out, ErrorKind::dimension,
            "linear bias shape mismatch");
    std::vector<S> y(static_cast<std::size_t>(n) * out, S(0));
    detail::gemm_acc<S, false, true>(x.value().data(), w.value().data(), y.data(), n, in, out);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out; ++j) y[static_cast<std::size_t>(i) * out + j] += b.value()[j];
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(
        {n, out}, std::move(y), {x, w, b}, [n, in, out](Node& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            if (px.requires_grad) {
                px.ensure_grad();
                // dX = G * W
                detail::gemm_acc<S, false, false>(self.grad.data(), pw.value.data(),
                                                  px.grad.data(), n, out, in);
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                // dW = G^T * X
                detail::gemm_acc<S, true, false>(self.grad.data(), px.value.data(),
                                                 pw.grad.data(), out, n, in);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < out; ++j)
                        pb.grad[j] += self.grad[static_cast<std::size_t>(i) * out + j];
            }
        });
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    std::vector<S> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] > S(0) ? x.value()[i] : S(0);
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(x.shape(), std::move(y), {x}, [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        // subgradient at exactly 0 is 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p.value[i] > S(0)) p.grad[i] += self.grad[i];
    });
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape() == b.shape(), ErrorKind::dimension, "add shape mismatch");
    std::vector<S> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(a.shape(), std::move(y), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k)
            detail::add_grad<S>(*self.parents[k], self.grad.data(), self.grad.size());
    });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape() == b.shape(), ErrorKind::dimension, "mul shape mismatch");
    std::vector<S> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(a.shape(), std::move(y), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * c;
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(a.shape(), std::move(y), {a}, [c](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * c;
    });
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    S total = std::accumulate(x.value().begin(), x.value().end(), S(0));
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op({1}, {total}, {x}, [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
    });
}

// Mean over the batch of -log softmax(logits)[label]; max-subtraction for
// numerical stability. Backward: (softmax - onehot)/N.
template <class S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    require(logits.shape().size() == 2, ErrorKind::dimension,
            "softmax_cross_entropy expects [N x C] logits");
    int n = logits.shape()[0], c = logits.shape()[1];
    require(static_cast<int>(labels.size()) == n, ErrorKind::dimension,
            "label count does not match batch size");
    for (int y : labels)
        require(y >= 0 && y < c, ErrorKind::index,
                "label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
    // softmax probabilities are saved for backward
    auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n) * c);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const S* row = logits.value().data() + static_cast<std::size_t>(i) * c;
        S mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        double logd = std::log(denom);
        for (int j = 0; j < c; ++j)
            (*probs)[static_cast<std::size_t>(i) * c + j] =
                static_cast<S>(std::exp(static_cast<double>(row[j] - mx)) / denom);
        loss += -(static_cast<double>(row[labels[i]] - mx) - logd);
    }
    loss /= n;
    using Node = typename Tensor<S>::Node;
    std::vector<int> labels_copy = labels;
    return Tensor<S>::make_op(
        {1}, {static_cast<S>(loss)}, {logits},
        [probs, labels_copy, n, c](Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            S g = self.grad[0];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    S delta = (j == labels_copy[i]) ? S(1) : S(0);
                    p.grad[static_cast<std::size_t>(i) * c + j] +=
                        g * ((*probs)[static_cast<std::size_t>(i) * c + j] - delta) / S(n);
                }
        });
}

namespace detail {

// Unfold x[C x H x W] into col[(C*kh*kw) x (Ho*Wo)].
template <class S>
void im2col(const S* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, S* col) {
    for (int ch = 0; ch < c; ++ch)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
                std::size_t row = (static_cast<std::size_t>(ch) * kh + dy) * kw + dx;
                S* dst = col + row * (static_cast<std::size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + dy - pad;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + dx - pad;
                        dst[static_cast<std::size_t>(oy) * wo + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? x[(static_cast<std::size_t>(ch) * h + iy) * w + ix]
                                : S(0);
                    }
                }
            }
}

// Scatter-add col back into x (adjoint of im2col).
template <class S>
void col2im_acc(const S* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, S* x) {
    for (int ch = 0; ch < c; ++ch)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
                std::size_t row = (static_cast<std::size_t>(ch) * kh + dy) * kw + dx;
                const S* src = col + row * (static_cast<std::size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + dx - pad;
                        if (ix < 0 || ix >= w) continue;
                        x[(static_cast<std::size_t>(ch) * h + iy) * w + ix] +=
                            src[static_cast<std::size_t>(oy) * wo + ox];
                    }
                }
            }
}

}  // namespace detail

// Cross-correlation with per-filter bias; x:[N x C x H x W], w:[F x C x kh x kw].
// Implemented as im2col + matmul so the backward reuses the same unfolding.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 int stride, int pad) {
    require(x.shape().size() == 4 && w.shape().size() == 4, ErrorKind::dimension,
            "conv2d expects NCHW input and FCKK weight");
    int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    int f = w.shape()[0], kc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    require(kc == c, ErrorKind::dimension, "conv2d channel mismatch");
    require(stride >= 1 && pad >= 0, ErrorKind::parameter, "conv2d invalid stride/padding");
    require(h + 2 * pad >= kh && wd + 2 * pad >= kw, ErrorKind::parameter,
            "conv2d kernel does not fit padded input");
    require(bias.shape().size() == 1 && bias.shape()[0] == f, ErrorKind::dimension,
            "conv2d bias shape mismatch");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    std::size_t colrows = static_cast<std::size_t>(c) * kh * kw;
    std::size_t colcols = static_cast<std::size_t>(ho) * wo;
    std::vector<S> out(static_cast<std::size_t>(n) * f * colcols, S(0));
    std::vector<S> col(colrows * colcols);
    for (int i = 0; i < n; ++i) {
        detail::im2col(x.value().data() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd,
                       kh, kw, stride, pad, ho, wo, col.data());
        // out_i[f x (ho*wo)] = w_mat[f x colrows] * col
        detail::gemm_acc<S, false, false>(w.value().data(), col.data(),
                                          out.data() + static_cast<std::size_t>(i) * f * colcols,
                                          f, static_cast<int>(colrows), static_cast<int>(colcols));
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) {
            S b = bias.value()[j];
            S* dst = out.data() + (static_cast<std::size_t>(i) * f + j) * colcols;
            for (std::size_t q = 0; q < colcols; ++q) dst[q] += b;
        }
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(
        {n, f, ho, wo}, std::move(out), {x, w, bias},
        [n, c, h, wd, f, kh, kw, stride, pad, ho, wo, colrows, colcols](Node& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            std::vector<S> col(colrows * colcols);
            std::vector<S> dcol(colrows * colcols);
            if (px.requires_grad) px.ensure_grad();
            if (pw.requires_grad) pw.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const S* g = self.grad.data() + static_cast<std::size_t>(i) * f * colcols;
                if (pw.requires_grad || px.requires_grad)
                    detail::im2col(px.value.data() + static_cast<std::size_t>(i) * c * h * wd,
                                   c, h, wd, kh, kw, stride, pad, ho, wo, col.data());
                if (pw.requires_grad)
                    // dW += G_i * col^T
                    detail::gemm_acc<S, false, true>(g, col.data(), pw.grad.data(), f,
                                                     static_cast<int>(colcols),
                                                     static_cast<int>(colrows));
                if (px.requires_grad) {
                    std::fill(dcol.begin(), dcol.end(), S(0));
                    // dcol = W^T * G_i
                    detail::gemm_acc<S, true, false>(pw.value.data(), g, dcol.data(),
                                                     static_cast<int>(colrows), f,
                                                     static_cast<int>(colcols));
                    detail::col2im_acc(dcol.data(), c, h, wd, kh, kw, stride, pad, ho, wo,
                                       px.grad.data() + static_cast<std::size_t>(i) * c * h * wd);
                }
                if (pb.requires_grad)
                    for (int j = 0; j < f; ++j) {
                        S acc = S(0);
                        const S* gr = g + static_cast<std::size_t>(j) * colcols;
                        for (std::size_t q = 0; q < colcols; ++q) acc += gr[q];
                        pb.grad[j] += acc;
                    }
            }
        });
}

// Reshape without copy semantics for values (copies buffers; desk scale).
template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    require(numel(shape) == x.size(), ErrorKind::dimension,
            "reshape element count mismatch");
    std::vector<S> y = x.value();
    using Node = typename Tensor<S>::Node;
    return Tensor<S>::make_op(std::move(shape), std::move(y), {x}, [](Node& self) {
        detail::add_grad<S>(*self.parents[0], self.grad.data(), self.grad.size());
    });
}

}  // namespace prslab
