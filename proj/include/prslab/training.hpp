#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prslab/attacks.hpp"
#include "prslab/data.hpp"
#include "prslab/error.hpp"
#include "prslab/nn.hpp"
#include "prslab/regions.hpp"
#include "prslab/tensor.hpp"

namespace prslab {

// L_MRV: (1/N) sum_i || MRV_{l,y_i} - f_{l:1}(x_i) ||^2. The MRV table is a
// constant; gradients flow only into the features.
template <class S>
Tensor<S> loss_mrv(const Tensor<S>& features, const std::vector<int>& labels,
                   const MajorRegionTable<S>& table) {
    require(features.shape().size() == 2, ErrorKind::dimension,
            "loss_mrv expects [N x D] features");
    int n = features.shape()[0], d = features.shape()[1];
    require(d == table.width, ErrorKind::contract, "loss_mrv: feature width mismatch");
    require(static_cast<int>(labels.size()) == n, ErrorKind::dimension,
            "loss_mrv: label count mismatch");
    for (int y : labels)
        require(y >= 0 && y < table.num_classes() && table.occupancy[y] > 0,
                ErrorKind::contract, "loss_mrv: no MRV for class " + std::to_string(y));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const S* f = features.value().data() + static_cast<std::size_t>(i) * d;
        const std::vector<S>& m = table.mrv[labels[i]];
        for (int j = 0; j < d; ++j) {
            double diff = static_cast<double>(m[j]) - static_cast<double>(f[j]);
            acc += diff * diff;
        }
    }
    acc /= n;
    using Node = typename Tensor<S>::Node;
    std::vector<int> labels_copy = labels;
    const MajorRegionTable<S>* tp = &table;  // caller keeps the table alive
    return Tensor<S>::make_op(
        {1}, {static_cast<S>(acc)}, {features}, [labels_copy, tp, n, d](Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            S g = self.grad[0];
            for (int i = 0; i < n; ++i) {
                const std::vector<S>& m = tp->mrv[labels_copy[i]];
                for (int j = 0; j < d; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * d + j;
                    p.grad[k] += g * S(2) * (p.value[k] - m[j]) / S(n);
                }
            }
        });
}

enum class HamMode { exact, surrogate };

// L_ham. Exact mode is the literal Hamming count
// (1/(N*D)) sum_ij [sign(MRV_j) != sign(f_j)], used for reporting (its
// gradient is zero almost everywhere). Surrogate mode is the hinge
// (1/(N*D)) sum_ij max(0, -sign(MRV_j) * f_j), differentiable and zero
// exactly when every feature sign matches its MRV sign. sign(0) = -1 on
// both sides, matching the region convention.
template <class S>
Tensor<S> loss_ham(const Tensor<S>& features, const std::vector<int>& labels,
                   const MajorRegionTable<S>& table, HamMode mode) {
    require(features.shape().size() == 2, ErrorKind::dimension,
            "loss_ham expects [N x D] features");
    int n = features.shape()[0], d = features.shape()[1];
    require(d == table.width, ErrorKind::contract, "loss_ham: feature width mismatch");
    double denom = static_cast<double>(n) * d;
    if (mode == HamMode::exact) {
        double mismatches = 0.0;
        for (int i = 0; i < n; ++i) {
            const S* f = features.value().data() + static_cast<std::size_t>(i) * d;
            const std::vector<S>& m = table.mrv[labels[i]];
            for (int j = 0; j < d; ++j) {
                bool sf = f[j] > S(0);
                bool sm = m[j] > S(0);
                if (sf != sm) mismatches += 1.0;
            }
        }
        return Tensor<S>::scalar(static_cast<S>(mismatches / denom));
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const S* f = features.value().data() + static_cast<std::size_t>(i) * d;
        const std::vector<S>& m = table.mrv[labels[i]];
        for (int j = 0; j < d; ++j) {
            double s = m[j] > S(0) ? 1.0 : -1.0;
            double v = -s * static_cast<double>(f[j]);
            if (v > 0.0) acc += v;
        }
    }
    acc /= denom;
    using Node = typename Tensor<S>::Node;
    std::vector<int> labels_copy = labels;
    const MajorRegionTable<S>* tp = &table;
    return Tensor<S>::make_op(
        {1}, {static_cast<S>(acc)}, {features}, [labels_copy, tp, n, d, denom](Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            S g = self.grad[0];
            for (int i = 0; i < n; ++i) {
                const std::vector<S>& m = tp->mrv[labels_copy[i]];
                for (int j = 0; j < d; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * d + j;
                    S s = m[j] > S(0) ? S(1) : S(-1);
                    if (-s * p.value[k] > S(0))
                        p.grad[k] += g * (-s) / static_cast<S>(denom);
                }
            }
        });
}

struct PrsLossValue {
    double ce = 0.0;
    double mrv = 0.0;
    double ham_surrogate = 0.0;
    double ham_exact = 0.0;
    double total = 0.0;
};

// L_PRS = l1*L_ce + l2*L_MRV + l3*L_ham(surrogate); component values are
// reported alongside the combined tensor.
template <class S>
Tensor<S> loss_prs(const Tensor<S>& logits, const Tensor<S>& features,
                   const std::vector<int>& labels, const MajorRegionTable<S>& table,
                   double l1, double l2, double l3, PrsLossValue* components = nullptr) {
    Tensor<S> ce = softmax_cross_entropy(logits, labels);
    Tensor<S> mrv = loss_mrv(features, labels, table);
    Tensor<S> ham = loss_ham(features, labels, table, HamMode::surrogate);
    Tensor<S> total = add(add(scale(ce, static_cast<S>(l1)), scale(mrv, static_cast<S>(l2))),
                          scale(ham, static_cast<S>(l3)));
    if (components) {
        components->ce = static_cast<double>(ce.item());
        components->mrv = static_cast<double>(mrv.item());
        components->ham_surrogate = static_cast<double>(ham.item());
        components->ham_exact = static_cast<double>(
            loss_ham(features, labels, table, HamMode::exact).item());
        components->total = static_cast<double>(total.item());
    }
    return total;
}

enum class TrainScheme { standard, adversarial, mr, prs };

inline const char* scheme_name(TrainScheme s) {
    switch (s) {
        case TrainScheme::standard: return "standard";
        case TrainScheme::adversarial: return "adversarial";
        case TrainScheme::mr: return "mr";
        case TrainScheme::prs: return "prs";
    }
    return "?";
}

inline TrainScheme scheme_from_name(const std::string& s) {
    if (s == "standard") return TrainScheme::standard;
    if (s == "adversarial") return TrainScheme::adversarial;
    if (s == "mr") return TrainScheme::mr;
    if (s == "prs") return TrainScheme::prs;
    raise(ErrorKind::config, "unknown training scheme '" + s + "'");
}

struct TrainConfig {
    TrainScheme scheme = TrainScheme::standard;
    int warmup_epochs = 5;   // t; only used by mr/prs
    int total_epochs = 25;
    int batch_size = 128;
    double learning_rate = 1e-3;
    double lambda1 = 0.2, lambda2 = 0.8, lambda3 = 1.0;
    int mrv_layer = -1;          // -1 = penultimate (L-1)
    int mrv_refresh_period = 0;  // 0 = compute once at warm-up end
    AttackConfig attack;         // adversarial scheme only
    std::uint64_t seed = 0;
    bool track_prs_ratio = true;

    void validate(int) const {
        require(total_epochs >= 1, ErrorKind::config, "total_epochs must be >= 1");
        require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
        require(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, ErrorKind::config,
                "lambda weights must be >= 0");
        if (scheme == TrainScheme::mr || scheme == TrainScheme::prs)
            require(warmup_epochs >= 1 && warmup_epochs < total_epochs, ErrorKind::config,
                    "warm-up epochs must satisfy 1 <= t < total_epochs");
    }

    double effective_lambda3() const {
        // L_MR is L_PRS with lambda3 = 0
        return scheme == TrainScheme::mr ? 0.0 : lambda3;
    }
};

struct EpochLog {
    int epoch = 0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double prs_ratio = 0.0;
    double loss_ce = 0.0;
    double loss_mrv = 0.0;
    double loss_ham_surrogate = 0.0;
    double loss_ham_exact = 0.0;
    double loss_total = 0.0;
    double seconds = 0.0;
    bool regularized = false;  // epoch ran with L_PRS / L_MR
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int warmup_boundary = 0;  // epoch at which the MRV table was built (0 = never)
};

template <class S>
double accuracy(const Model<S>& model, const Dataset& data, int batch = 512) {
    int correct = 0;
    for (int start = 0; start < data.n; start += batch) {
        int count = std::min(batch, data.n - start);
        std::vector<int> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<S> x = gather_batch<S>(data, idx);
        std::vector<int> pred = model.predict(x.data(), count);
        for (int i = 0; i < count; ++i)
            if (pred[i] == data.labels[start + i]) ++correct;
    }
    return static_cast<double>(correct) / data.n;
}

template <class S>
struct TrainResult {
    TrainLog log;
    std::optional<MajorRegionTable<S>> mrv_table;
    int mrv_layer = 0;
};

// The full training pipeline. standard: L_ce throughout. adversarial: each
// batch is replaced by PGD adversarial examples before the L_ce step. mr /
// prs: warm-up with L_ce for t epochs, then MRV construction at layer l,
// final-layer freeze, and L_MR / L_PRS for the remaining epochs.
template <class S>
TrainResult<S> train(Model<S>& model, const Dataset& data, const Dataset* test,
                     const TrainConfig& config,
                     const std::function<void(int, Model<S>&)>& on_epoch = {}) {
    config.validate(model.num_layers());
    bool regularized_scheme =
        config.scheme == TrainScheme::mr || config.scheme == TrainScheme::prs;
    int layer = config.mrv_layer > 0 ? config.mrv_layer : model.num_layers() - 1;
    require(layer >= 1 && layer <= model.num_layers(), ErrorKind::config,
            "mrv layer out of range");

    Adam<S> optimizer(config.learning_rate);
    BatchIterator batches(data, config.batch_size, config.seed);
    const Shape& in = model.input_shape();

    TrainResult<S> result;
    result.mrv_layer = layer;
    std::optional<MajorRegionTable<S>> table;
    // keep the table alive across the loss graph's backward
    auto rebuild_mrv = [&]() {
        RegionSet prs = build_prs(model, data, layer);
        table = major_regions(prs, model, data, layer);
    };

    for (int epoch = 1; epoch <= config.total_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        bool regularize = regularized_scheme && epoch > config.warmup_epochs;
        if (regularized_scheme && epoch == config.warmup_epochs + 1) {
            rebuild_mrv();
            freeze_final_layer(model);
            result.log.warmup_boundary = config.warmup_epochs;
            // New training stage with a new objective whose gradient scale is
            // very different from cross-entropy's: restart the optimizer so
            // stale curvature estimates cannot amplify the first steps.
            optimizer = Adam<S>(config.learning_rate);
        } else if (regularize && config.mrv_refresh_period > 0 &&
                   (epoch - config.warmup_epochs - 1) % config.mrv_refresh_period == 0 &&
                   epoch > config.warmup_epochs + 1) {
            rebuild_mrv();
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.regularized = regularize;
        int batch_count = 0;
        for (const std::vector<int>& idx : batches.epoch(epoch)) {
            int n = static_cast<int>(idx.size());
            std::vector<S> xbuf = gather_batch<S>(data, idx);
            std::vector<int> y = gather_labels(data, idx);
            if (config.scheme == TrainScheme::adversarial) {
                auto outcomes =
                    attack_batch(model, xbuf.data(), n, y, config.attack,
                                 static_cast<std::uint64_t>(epoch) * 1000003ull +
                                     static_cast<std::uint64_t>(idx[0]));
                for (int i = 0; i < n; ++i)
                    std::copy(outcomes[i].adversarial.begin(), outcomes[i].adversarial.end(),
                              xbuf.begin() + static_cast<std::size_t>(i) * model.input_size());
            }
            Tensor<S> x = Tensor<S>::from_data({n, in[0], in[1], in[2]}, std::move(xbuf));
            Tensor<S> loss;
            if (regularize) {
                Tensor<S> features = model.forward_features(x, layer);
                // logits re-use the regularized layer's features only when l
                // is on the trunk; recompute from the input for generality
                Tensor<S> logits = model.forward(x);
                PrsLossValue comps;
                loss = loss_prs(logits, features, y, *table, config.lambda1, config.lambda2,
                                config.effective_lambda3(), &comps);
                entry.loss_ce += comps.ce;
                entry.loss_mrv += comps.mrv;
                entry.loss_ham_surrogate += comps.ham_surrogate;
                entry.loss_ham_exact += comps.ham_exact;
                entry.loss_total += comps.total;
            } else {
                loss = softmax_cross_entropy(model.forward(x), y);
                entry.loss_ce += static_cast<double>(loss.item());
                entry.loss_total += static_cast<double>(loss.item());
            }
            loss.backward();
            optimizer.step(model);
            ++batch_count;
        }
        if (batch_count > 0) {
            entry.loss_ce /= batch_count;
            entry.loss_mrv /= batch_count;
            entry.loss_ham_surrogate /= batch_count;
            entry.loss_ham_exact /= batch_count;
            entry.loss_total /= batch_count;
        }
        entry.train_accuracy = accuracy(model, data);
        entry.test_accuracy = test ? accuracy(model, *test) : 0.0;
        if (config.track_prs_ratio)
            entry.prs_ratio = prs_ratio(build_prs(model, data, layer), data.n);
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
        result.log.epochs.push_back(entry);
        if (on_epoch) on_epoch(epoch, model);
    }
    result.mrv_table = std::move(table);
    return result;
}

}  // namespace prslab
