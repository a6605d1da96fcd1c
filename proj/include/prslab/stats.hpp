#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "prslab/attacks.hpp"
#include "prslab/error.hpp"
#include "prslab/nn.hpp"
#include "prslab/regions.hpp"

namespace prslab {

// ---- special functions for the slope significance test ----

namespace special {

// Continued-fraction evaluation of the regularized incomplete beta
// I_x(a, b) by the modified Lentz method.
inline double betacf(double a, double b, double x) {
    const int max_iter = 300;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    raise(ErrorKind::internal, "incomplete beta continued fraction did not converge");
}

inline double reg_incomplete_beta(double a, double b, double x) {
    require(a > 0.0 && b > 0.0, ErrorKind::parameter, "incomplete beta needs a,b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// Two-sided tail probability of Student's t with df degrees of freedom.
inline double t_two_sided_pvalue(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    double x = df / (df + t * t);
    return reg_incomplete_beta(df / 2.0, 0.5, x);
}

}  // namespace special

// C x C cosine similarities between the final-layer weight rows (the linear
// map from penultimate features to logits). Zero-norm rows get similarity 0
// against everything and 1 on the diagonal by convention.
struct CosineMatrix {
    int classes = 0;
    std::vector<double> values;  // row-major

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * classes + j]; }
};

template <class S>
CosineMatrix cosine_similarity_matrix(const Model<S>& model) {
    int final_layer = model.num_layers();
    require(model.specs()[final_layer - 1].kind == LayerKind::dense, ErrorKind::contract,
            "cosine_similarity_matrix requires a dense final layer");
    const Tensor<S>& w = model.weight(final_layer);
    int c = w.shape()[0], d = w.shape()[1];
    std::vector<double> norms(c, 0.0);
    for (int i = 0; i < c; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            double v = static_cast<double>(w.value()[static_cast<std::size_t>(i) * d + j]);
            acc += v * v;
        }
        norms[i] = std::sqrt(acc);
    }
    CosineMatrix m;
    m.classes = c;
    m.values.assign(static_cast<std::size_t>(c) * c, 0.0);
    for (int i = 0; i < c; ++i)
        for (int j = i; j < c; ++j) {
            double v;
            if (i == j) {
                v = 1.0;
            } else if (norms[i] == 0.0 || norms[j] == 0.0) {
                v = 0.0;
            } else {
                double dot = 0.0;
                for (int k = 0; k < d; ++k)
                    dot += static_cast<double>(w.value()[static_cast<std::size_t>(i) * d + k]) *
                           static_cast<double>(w.value()[static_cast<std::size_t>(j) * d + k]);
                v = dot / (norms[i] * norms[j]);
            }
            m.values[static_cast<std::size_t>(i) * c + j] = v;
            m.values[static_cast<std::size_t>(j) * c + i] = v;
        }
    return m;
}

inline double mean_offdiag_similarity(const CosineMatrix& m) {
    require(m.classes >= 2, ErrorKind::parameter,
            "mean_offdiag_similarity needs at least 2 classes");
    double acc = 0.0;
    int count = 0;
    for (int i = 0; i < m.classes; ++i)
        for (int j = 0; j < m.classes; ++j)
            if (i != j) {
                acc += m.at(i, j);
                ++count;
            }
    return acc / count;
}

struct RegressionResult {
    double slope = 0.0;
    double intercept = 0.0;
    double p_value = 1.0;  // two-sided, slope != 0
    double r_squared = 0.0;
    int n = 0;
};

// Simple least squares y = a + b*x with the slope t-test on n-2 dof.
inline RegressionResult ols_regression(const std::vector<double>& x,
                                       const std::vector<double>& y) {
    require(x.size() == y.size(), ErrorKind::parameter, "ols: size mismatch");
    int n = static_cast<int>(x.size());
    require(n >= 3, ErrorKind::parameter, "ols needs n >= 3");
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0, ErrorKind::degeneracy, "ols: regressor is constant");
    RegressionResult r;
    r.n = n;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double ss_res = 0.0;
    for (int i = 0; i < n; ++i) {
        double e = y[i] - (r.intercept + r.slope * x[i]);
        ss_res += e * e;
    }
    r.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    double df = n - 2;
    double sigma2 = ss_res / df;
    if (sigma2 <= 0.0) {
        // perfect fit
        r.p_value = r.slope == 0.0 ? 1.0 : 0.0;
        return r;
    }
    double se = std::sqrt(sigma2 / sxx);
    double t = r.slope / se;
    r.p_value = special::t_two_sided_pvalue(t, df);
    return r;
}

// Per-group robust accuracy and mean true-class logit ("confidence") under
// one attack configuration.
struct GroupStats {
    std::string name;
    int size = 0;
    double robust_accuracy = 0.0;
    double mean_confidence = 0.0;  // clean true-class logit
};

template <class S>
std::vector<GroupStats> group_robustness_report(
    const Model<S>& model, const std::vector<std::pair<std::string, std::vector<int>>>& groups,
    const Dataset& data, const AttackConfig& config) {
    std::vector<GroupStats> out;
    for (const auto& [name, indices] : groups) {
        require(!indices.empty(), ErrorKind::parameter, "empty group '" + name + "'");
        GroupStats g;
        g.name = name;
        g.size = static_cast<int>(indices.size());
        int correct = 0;
        double conf = 0.0;
        const int chunk = 128;
        for (std::size_t start = 0; start < indices.size(); start += chunk) {
            std::size_t end = std::min(indices.size(), start + chunk);
            std::vector<int> idx(indices.begin() + start, indices.begin() + end);
            std::vector<S> x = gather_batch<S>(data, idx);
            std::vector<int> y = gather_labels(data, idx);
            auto outcomes = attack_batch(model, x.data(), static_cast<int>(idx.size()), y,
                                         config, static_cast<std::uint64_t>(indices[start]));
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (!outcomes[i].success) ++correct;
                conf += static_cast<double>(outcomes[i].initial_logits[y[i]]);
            }
        }
        g.robust_accuracy = static_cast<double>(correct) / g.size;
        g.mean_confidence = conf / g.size;
        out.push_back(std::move(g));
    }
    return out;
}

// Per-sample (class, distance-to-MRV, attack success, confidence) records
// plus the OLS slope of confidence against distance over failed samples.
struct MrvDistanceRecord {
    int index = 0;
    int label = 0;
    double distance = 0.0;
    bool attack_success = false;
    double confidence = 0.0;
};

struct MrvDistanceAnalysis {
    std::vector<MrvDistanceRecord> records;
    RegressionResult confidence_vs_distance;  // over failed-attack samples
    bool regression_valid = false;
};

template <class S>
MrvDistanceAnalysis mrv_distance_analysis(const Model<S>& model, const Dataset& data,
                                          const MajorRegionTable<S>& table,
                                          const AttackConfig& config) {
    MrvDistanceAnalysis out;
    int layer = table.layer;
    int width = table.width;
    const int chunk = 128;
    for (int start = 0; start < data.n; start += chunk) {
        int count = std::min(chunk, data.n - start);
        std::vector<int> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<S> x = gather_batch<S>(data, idx);
        std::vector<int> y = gather_labels(data, idx);
        std::vector<S> f = model.eval_features(x.data(), count, layer);
        auto outcomes = attack_batch(model, x.data(), count, y, config,
                                     static_cast<std::uint64_t>(start));
        for (int i = 0; i < count; ++i) {
            MrvDistanceRecord rec;
            rec.index = start + i;
            rec.label = y[i];
            double acc = 0.0;
            for (int j = 0; j < width; ++j) {
                double d = static_cast<double>(f[static_cast<std::size_t>(i) * width + j]) -
                           static_cast<double>(table.mrv[y[i]][j]);
                acc += d * d;
            }
            rec.distance = std::sqrt(acc);
            rec.attack_success = outcomes[i].success;
            rec.confidence = static_cast<double>(outcomes[i].initial_logits[y[i]]);
            out.records.push_back(rec);
        }
    }
    std::vector<double> xs, ys;
    for (const auto& rec : out.records)
        if (!rec.attack_success) {
            xs.push_back(rec.distance);
            ys.push_back(rec.confidence);
        }
    if (xs.size() >= 3) {
        double mn = *std::min_element(xs.begin(), xs.end());
        double mxv = *std::max_element(xs.begin(), xs.end());
        if (mxv > mn) {
            out.confidence_vs_distance = ols_regression(xs, ys);
            out.regression_valid = true;
        }
    }
    return out;
}

}  // namespace prslab
