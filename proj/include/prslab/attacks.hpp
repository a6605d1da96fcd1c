#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "prslab/data.hpp"
#include "prslab/error.hpp"
#include "prslab/nn.hpp"
#include "prslab/rng.hpp"

namespace prslab {

enum class AttackMethod { fgsm, bim, pgd };

inline const char* attack_method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::fgsm: return "fgsm";
        case AttackMethod::bim: return "bim";
        case AttackMethod::pgd: return "pgd";
    }
    return "?";
}

// L-infinity attack configuration; epsilon and step size are in raw pixel
// units, clip range is [0,1].
struct AttackConfig {
    AttackMethod method = AttackMethod::pgd;
    double epsilon = 0.1;
    double step_size = 2.0 / 255.0;
    int num_steps = 20;
    bool random_start = true;  // PGD convention; BIM/FGSM start clean
    std::uint64_t seed = 0;
    // Robust accuracy counts over all samples by default; the alternative
    // convention restricts to initially correctly-predicted samples.
    bool exclude_misclassified = false;

    static AttackConfig fgsm_at(double eps) {
        AttackConfig c;
        c.method = AttackMethod::fgsm;
        c.epsilon = eps;
        c.step_size = eps;
        c.num_steps = 1;
        c.random_start = false;
        return c;
    }
    static AttackConfig bim_at(double eps, double alpha, int steps = 5) {
        AttackConfig c;
        c.method = AttackMethod::bim;
        c.epsilon = eps;
        c.step_size = alpha;
        c.num_steps = steps;
        c.random_start = false;
        return c;
    }
    static AttackConfig pgd_at(double eps, double alpha, int steps,
                               std::uint64_t seed = 0) {
        AttackConfig c;
        c.method = AttackMethod::pgd;
        c.epsilon = eps;
        c.step_size = alpha;
        c.num_steps = steps;
        c.random_start = true;
        c.seed = seed;
        return c;
    }

    void validate() const {
        require(epsilon >= 0.0, ErrorKind::parameter, "attack epsilon must be >= 0");
        require(num_steps >= 1, ErrorKind::parameter, "attack needs >= 1 step");
        require(step_size >= 0.0, ErrorKind::parameter, "attack step size must be >= 0");
        if (method == AttackMethod::fgsm)
            require(num_steps == 1, ErrorKind::parameter, "fgsm is single-step");
    }
};

template <class S>
struct AttackOutcome {
    std::vector<S> adversarial;  // perturbed input
    bool success = false;        // prediction changed away from the true label
    std::vector<S> initial_logits;
    std::vector<S> final_logits;
    double clean_grad_linf = -1.0;  // input-gradient norm at the clean point; -1 if not computed
    std::vector<double> loss_trace;
};

namespace detail {

template <class S>
int argmax_row(const S* row, int c) {
    int best = 0;
    for (int j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

}  // namespace detail

// Batched sign-gradient attack; per-sample behaviour is independent because
// the mean-CE input gradient of sample i depends only on sample i (scaling
// by 1/N never changes the sign). Random-start noise is drawn from the
// per-sample stream (seed, base_index + i) so batched and one-at-a-time runs
// produce identical adversarial inputs.
template <class S>
std::vector<AttackOutcome<S>> attack_batch(const Model<S>& model, const S* inputs, int n,
                                           const std::vector<int>& labels,
                                           const AttackConfig& config,
                                           std::uint64_t base_index = 0,
                                           bool want_clean_grad = false,
                                           bool want_loss_trace = false) {
    config.validate();
    std::size_t dim = model.input_size();
    const Shape& in = model.input_shape();
    int classes = model.num_classes();

    std::vector<S> x0(inputs, inputs + static_cast<std::size_t>(n) * dim);
    std::vector<S> x = x0;
    std::vector<AttackOutcome<S>> outcomes(n);

    {
        std::vector<S> logits0 = model.eval_features(x0.data(), n, model.num_layers());
        for (int i = 0; i < n; ++i)
            outcomes[i].initial_logits.assign(
                logits0.begin() + static_cast<std::size_t>(i) * classes,
                logits0.begin() + static_cast<std::size_t>(i + 1) * classes);
    }

    if (want_clean_grad) {
        Tensor<S> xt = Tensor<S>::from_data({n, in[0], in[1], in[2]}, x0, true);
        Tensor<S> loss = softmax_cross_entropy(model.forward(xt), labels);
        loss.backward();
        for (int i = 0; i < n; ++i) {
            double linf = 0.0;
            for (std::size_t j = 0; j < dim; ++j)
                linf = std::max(linf, std::abs(static_cast<double>(
                                          xt.grad()[static_cast<std::size_t>(i) * dim + j])));
            outcomes[i].clean_grad_linf = linf;
        }
    }

    S eps = static_cast<S>(config.epsilon);
    S alpha = static_cast<S>(config.step_size);

    if (config.random_start && config.epsilon > 0.0) {
        for (int i = 0; i < n; ++i) {
            Rng rng = Rng::for_index(config.seed, base_index + static_cast<std::uint64_t>(i));
            S* xi = x.data() + static_cast<std::size_t>(i) * dim;
            for (std::size_t j = 0; j < dim; ++j) {
                S v = xi[j] + static_cast<S>(rng.uniform(-config.epsilon, config.epsilon));
                xi[j] = std::clamp(v, S(0), S(1));
            }
        }
    }

    for (int step = 0; step < config.num_steps; ++step) {
        Tensor<S> xt = Tensor<S>::from_data({n, in[0], in[1], in[2]}, x, true);
        Tensor<S> loss = softmax_cross_entropy(model.forward(xt), labels);
        loss.backward();
        if (want_loss_trace)
            for (int i = 0; i < n; ++i)
                outcomes[i].loss_trace.push_back(static_cast<double>(loss.item()));
        const std::vector<S>& g = xt.grad();
        for (std::size_t j = 0; j < x.size(); ++j) {
            S s = g[j] > S(0) ? S(1) : (g[j] < S(0) ? S(-1) : S(0));
            S v = x[j] + alpha * s;
            // project to the eps-ball around x0, then to [0,1]
            v = std::clamp(v, x0[j] - eps, x0[j] + eps);
            x[j] = std::clamp(v, S(0), S(1));
        }
    }

    // The backward passes above accumulate scratch gradients into the model's
    // parameters; clear them so an attack between optimizer steps cannot leak
    // into the next update.
    model.zero_grads();

    std::vector<S> logits = model.eval_features(x.data(), n, model.num_layers());
    for (int i = 0; i < n; ++i) {
        outcomes[i].adversarial.assign(x.begin() + static_cast<std::size_t>(i) * dim,
                                       x.begin() + static_cast<std::size_t>(i + 1) * dim);
        outcomes[i].final_logits.assign(
            logits.begin() + static_cast<std::size_t>(i) * classes,
            logits.begin() + static_cast<std::size_t>(i + 1) * classes);
        int pred = detail::argmax_row(outcomes[i].final_logits.data(), classes);
        outcomes[i].success = pred != labels[i];
    }
    return outcomes;
}

template <class S>
AttackOutcome<S> fgsm(const Model<S>& model, const S* x, int label, AttackConfig config,
                      std::uint64_t sample_index = 0) {
    config.method = AttackMethod::fgsm;
    config.num_steps = 1;
    config.step_size = config.epsilon;
    config.random_start = false;
    return attack_batch(model, x, 1, {label}, config, sample_index, true)[0];
}

template <class S>
AttackOutcome<S> pgd(const Model<S>& model, const S* x, int label, const AttackConfig& config,
                     std::uint64_t sample_index = 0) {
    return attack_batch(model, x, 1, {label}, config, sample_index, true)[0];
}

// Fraction of samples predicted as the true label after the attack.
template <class S>
double robust_accuracy(const Model<S>& model, const Dataset& data, const AttackConfig& config,
                       int batch = 128) {
    int correct = 0, considered = 0;
    for (int start = 0; start < data.n; start += batch) {
        int count = std::min(batch, data.n - start);
        std::vector<int> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<S> x = gather_batch<S>(data, idx);
        std::vector<int> y = gather_labels(data, idx);
        auto outcomes = attack_batch(model, x.data(), count, y, config,
                                     static_cast<std::uint64_t>(start));
        for (int i = 0; i < count; ++i) {
            if (config.exclude_misclassified) {
                int clean_pred =
                    detail::argmax_row(outcomes[i].initial_logits.data(), model.num_classes());
                if (clean_pred != y[i]) continue;
            }
            ++considered;
            if (!outcomes[i].success) ++correct;
        }
    }
    if (considered == 0) return 0.0;
    return static_cast<double>(correct) / considered;
}

// Attack outcome partition: success / failed with nonzero input gradient /
// failed with (numerically) zero input gradient at the clean point.
template <class S>
struct ForensicsReport {
    double success_ratio = 0.0;
    double failed_nonzero_grad_ratio = 0.0;
    double failed_zero_grad_ratio = 0.0;
    // (initial, final) logits of every failed attack, for the parallel-shift
    // inspection
    std::vector<std::pair<std::vector<S>, std::vector<S>>> failure_logits;
    std::vector<int> failure_indices;
    static constexpr double kZeroGradThreshold = 1e-12;
};

template <class S>
ForensicsReport<S> failure_forensics(const Model<S>& model, const Dataset& data,
                                     const AttackConfig& config, int batch = 128) {
    ForensicsReport<S> report;
    int success = 0, failed_nonzero = 0, failed_zero = 0;
    for (int start = 0; start < data.n; start += batch) {
        int count = std::min(batch, data.n - start);
        std::vector<int> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<S> x = gather_batch<S>(data, idx);
        std::vector<int> y = gather_labels(data, idx);
        auto outcomes = attack_batch(model, x.data(), count, y, config,
                                     static_cast<std::uint64_t>(start), true);
        for (int i = 0; i < count; ++i) {
            if (outcomes[i].success) {
                ++success;
                continue;
            }
            if (outcomes[i].clean_grad_linf < ForensicsReport<S>::kZeroGradThreshold)
                ++failed_zero;
            else
                ++failed_nonzero;
            report.failure_logits.emplace_back(outcomes[i].initial_logits,
                                               outcomes[i].final_logits);
            report.failure_indices.push_back(start + i);
        }
    }
    double n = static_cast<double>(data.n);
    report.success_ratio = success / n;
    report.failed_nonzero_grad_ratio = failed_nonzero / n;
    report.failed_zero_grad_ratio = failed_zero / n;
    return report;
}

}  // namespace prslab
