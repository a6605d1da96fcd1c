#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prslab/attacks.hpp"
#include "prslab/checkpoint.hpp"
#include "prslab/csv.hpp"
#include "prslab/data.hpp"
#include "prslab/error.hpp"
#include "prslab/nn.hpp"
#include "prslab/regions.hpp"
#include "prslab/stats.hpp"
#include "prslab/training.hpp"

namespace prslab {

using nlohmann::json;

namespace cfg {

// Config readers that name the offending field on error.
inline const json& member(const json& j, const std::string& path, const std::string& key) {
    auto it = j.find(key);
    require(it != j.end(), ErrorKind::config, "missing config field " + path + "." + key);
    return *it;
}

template <class T>
T get(const json& j, const std::string& path, const std::string& key) {
    try {
        return member(j, path, key).get<T>();
    } catch (const json::exception&) {
        raise(ErrorKind::config, "config field " + path + "." + key + " has the wrong type");
    }
}

template <class T>
T get_or(const json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return get<T>(j, path, key);
}

}  // namespace cfg

struct DatasetConfig {
    std::string kind;  // blobs | idx | cifar10
    // blobs
    int num_classes = 3, per_class = 200, dims = 16;
    double spread = 0.08;
    // idx / cifar10 file paths
    std::string train_images, train_labels, test_images, test_labels;
    std::vector<std::string> train_batches, test_batches;
    // optional subsetting
    int subset_n = 0;
    bool subset_stratified = true;
    int test_subset_n = 0;
};

struct AnalysisConfig {
    bool prs_profile = true;
    bool inclusion = true;
    bool cosine = true;
    bool mrv_distance = false;
    std::vector<int> slice_anchors;  // 3 sample indices; empty = no slice map
    int slice_nu = 100, slice_nv = 100;
    double slice_margin = 0.25;  // extent padding around the anchor triangle
    int layer = -1;              // -1 = penultimate
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    std::string precision = "float32";
    DatasetConfig dataset;
    std::vector<LayerSpec> layers;
    TrainConfig train;
    std::vector<AttackConfig> attacks;
    AnalysisConfig analysis;
    json raw;
};

inline AttackConfig parse_attack(const json& j, const std::string& path) {
    AttackConfig a;
    std::string method = cfg::get<std::string>(j, path, "method");
    if (method == "fgsm")
        a.method = AttackMethod::fgsm;
    else if (method == "bim")
        a.method = AttackMethod::bim;
    else if (method == "pgd")
        a.method = AttackMethod::pgd;
    else
        raise(ErrorKind::config, "unknown attack method at " + path + ".method");
    a.epsilon = cfg::get<double>(j, path, "epsilon");
    if (a.method == AttackMethod::fgsm) {
        a.num_steps = 1;
        a.step_size = a.epsilon;
        a.random_start = false;
    } else {
        // default alpha: 2/255 when stated, else eps/10 for desk runs
        a.step_size = cfg::get_or<double>(j, path, "step_size", a.epsilon / 10.0);
        a.num_steps = cfg::get_or<int>(j, path, "num_steps",
                                       a.method == AttackMethod::bim ? 5 : 20);
        a.random_start = cfg::get_or<bool>(j, path, "random_start",
                                           a.method == AttackMethod::pgd);
    }
    a.seed = cfg::get_or<std::uint64_t>(j, path, "seed", 0);
    a.exclude_misclassified = cfg::get_or<bool>(j, path, "exclude_misclassified", false);
    a.validate();
    return a;
}

inline LayerSpec parse_layer(const json& j, const std::string& path) {
    LayerSpec s;
    std::string kind = cfg::get<std::string>(j, path, "kind");
    std::string act = cfg::get_or<std::string>(j, path, "activation", "relu");
    require(act == "relu" || act == "none", ErrorKind::config,
            "bad activation at " + path + ".activation");
    s.activation = act == "relu" ? Activation::relu : Activation::none;
    if (kind == "dense") {
        s.kind = LayerKind::dense;
        s.units = cfg::get<int>(j, path, "units");
        require(s.units > 0, ErrorKind::config, "units must be positive at " + path);
    } else if (kind == "conv") {
        s.kind = LayerKind::conv;
        s.channels = cfg::get<int>(j, path, "channels");
        s.kernel = cfg::get_or<int>(j, path, "kernel", 3);
        s.stride = cfg::get_or<int>(j, path, "stride", 1);
        s.padding = cfg::get_or<int>(j, path, "padding", 0);
    } else {
        raise(ErrorKind::config, "unknown layer kind at " + path + ".kind");
    }
    return s;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig c;
    c.raw = j;
    c.seed = cfg::get_or<std::uint64_t>(j, "", "seed", 0);
    c.output_dir = cfg::get_or<std::string>(j, "", "output_dir", "run");
    c.precision = cfg::get_or<std::string>(j, "", "precision", "float32");
    require(c.precision == "float32" || c.precision == "float64", ErrorKind::config,
            "precision must be float32 or float64");

    const json& d = cfg::member(j, "", "dataset");
    c.dataset.kind = cfg::get<std::string>(d, "dataset", "kind");
    if (c.dataset.kind == "blobs") {
        c.dataset.num_classes = cfg::get_or<int>(d, "dataset", "num_classes", 3);
        c.dataset.per_class = cfg::get_or<int>(d, "dataset", "per_class", 200);
        c.dataset.dims = cfg::get_or<int>(d, "dataset", "dims", 16);
        c.dataset.spread = cfg::get_or<double>(d, "dataset", "spread", 0.08);
    } else if (c.dataset.kind == "idx") {
        c.dataset.train_images = cfg::get<std::string>(d, "dataset", "train_images");
        c.dataset.train_labels = cfg::get<std::string>(d, "dataset", "train_labels");
        c.dataset.test_images = cfg::get_or<std::string>(d, "dataset", "test_images", "");
        c.dataset.test_labels = cfg::get_or<std::string>(d, "dataset", "test_labels", "");
    } else if (c.dataset.kind == "cifar10") {
        c.dataset.train_batches =
            cfg::get<std::vector<std::string>>(d, "dataset", "train_batches");
        c.dataset.test_batches =
            cfg::get_or<std::vector<std::string>>(d, "dataset", "test_batches", {});
    } else {
        raise(ErrorKind::config, "unknown dataset kind at dataset.kind");
    }
    c.dataset.subset_n = cfg::get_or<int>(d, "dataset", "subset", 0);
    c.dataset.subset_stratified = cfg::get_or<bool>(d, "dataset", "subset_stratified", true);
    c.dataset.test_subset_n = cfg::get_or<int>(d, "dataset", "test_subset", 0);
    // paths must exist at validation time
    for (const std::string& p :
         {c.dataset.train_images, c.dataset.train_labels, c.dataset.test_images,
          c.dataset.test_labels}) {
        if (!p.empty())
            require(std::filesystem::exists(p), ErrorKind::config,
                    "dataset path does not exist: " + p + " (field dataset.*)");
    }
    for (const auto& list : {c.dataset.train_batches, c.dataset.test_batches})
        for (const std::string& p : list)
            require(std::filesystem::exists(p), ErrorKind::config,
                    "dataset path does not exist: " + p + " (field dataset.*_batches)");

    const json& m = cfg::member(j, "", "model");
    const json& layers = cfg::member(m, "model", "layers");
    require(layers.is_array() && !layers.empty(), ErrorKind::config,
            "model.layers must be a non-empty array");
    for (std::size_t i = 0; i < layers.size(); ++i)
        c.layers.push_back(parse_layer(layers[i], "model.layers[" + std::to_string(i) + "]"));
    require(c.layers.back().activation == Activation::none, ErrorKind::config,
            "final model layer must have activation none");

    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.scheme = scheme_from_name(cfg::get_or<std::string>(t, "train", "scheme",
                                                                   "standard"));
        c.train.warmup_epochs = cfg::get_or<int>(t, "train", "warmup_epochs", 5);
        c.train.total_epochs = cfg::get_or<int>(t, "train", "total_epochs", 25);
        c.train.batch_size = cfg::get_or<int>(t, "train", "batch_size", 128);
        c.train.learning_rate = cfg::get_or<double>(t, "train", "learning_rate", 1e-3);
        c.train.lambda1 = cfg::get_or<double>(t, "train", "lambda1", 0.2);
        c.train.lambda2 = cfg::get_or<double>(t, "train", "lambda2", 0.8);
        c.train.lambda3 = cfg::get_or<double>(t, "train", "lambda3", 1.0);
        c.train.mrv_layer = cfg::get_or<int>(t, "train", "mrv_layer", -1);
        c.train.mrv_refresh_period = cfg::get_or<int>(t, "train", "mrv_refresh_period", 0);
        c.train.track_prs_ratio = cfg::get_or<bool>(t, "train", "track_prs_ratio", true);
        if (t.contains("attack")) c.train.attack = parse_attack(t.at("attack"), "train.attack");
        c.train.seed = c.seed;
    }

    if (j.contains("attacks")) {
        const json& a = j.at("attacks");
        require(a.is_array(), ErrorKind::config, "attacks must be an array");
        for (std::size_t i = 0; i < a.size(); ++i)
            c.attacks.push_back(parse_attack(a[i], "attacks[" + std::to_string(i) + "]"));
    }

    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        c.analysis.prs_profile = cfg::get_or<bool>(a, "analysis", "prs_profile", true);
        c.analysis.inclusion = cfg::get_or<bool>(a, "analysis", "inclusion", true);
        c.analysis.cosine = cfg::get_or<bool>(a, "analysis", "cosine", true);
        c.analysis.mrv_distance = cfg::get_or<bool>(a, "analysis", "mrv_distance", false);
        c.analysis.slice_anchors =
            cfg::get_or<std::vector<int>>(a, "analysis", "slice_anchors", {});
        if (!c.analysis.slice_anchors.empty())
            require(c.analysis.slice_anchors.size() == 3, ErrorKind::parameter,
                    "analysis.slice_anchors needs exactly 3 sample indices");
        c.analysis.slice_nu = cfg::get_or<int>(a, "analysis", "slice_nu", 100);
        c.analysis.slice_nv = cfg::get_or<int>(a, "analysis", "slice_nv", 100);
        c.analysis.layer = cfg::get_or<int>(a, "analysis", "layer", -1);
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::io, "cannot open config " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        raise(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_experiment_config(j);
}

struct LoadedData {
    Dataset train;
    std::optional<Dataset> test;
};

inline LoadedData load_datasets(const DatasetConfig& d, std::uint64_t seed) {
    LoadedData out;
    if (d.kind == "blobs") {
        out.train = make_blobs(d.num_classes, d.per_class, d.dims, d.spread, seed);
        Dataset test = make_blobs(d.num_classes, std::max(1, d.per_class / 4), d.dims,
                                  d.spread, seed, seed + 7919);
        test.split = "test";
        out.test = std::move(test);
    } else if (d.kind == "idx") {
        out.train = load_idx(d.train_images, d.train_labels, "idx", "train");
        if (!d.test_images.empty())
            out.test = load_idx(d.test_images, d.test_labels, "idx", "test");
    } else {
        out.train = load_cifar10(d.train_batches, "train");
        if (!d.test_batches.empty()) out.test = load_cifar10(d.test_batches, "test");
    }
    if (d.subset_n > 0) out.train = subset(out.train, d.subset_n, seed, d.subset_stratified);
    if (d.test_subset_n > 0 && out.test)
        *out.test = subset(*out.test, d.test_subset_n, seed + 1, d.subset_stratified);
    return out;
}

template <class S>
Model<S> build_model(const ExperimentConfig& c, const Dataset& data) {
    return Model<S>(c.layers, {data.channels, data.height, data.width}, c.seed);
}

// The serialized metrics bundle one run produces; every number is also
// traceable to a CSV in the run directory.
struct ExperimentReport {
    double clean_test_accuracy = 0.0;
    double clean_train_accuracy = 0.0;
    std::vector<std::pair<std::string, double>> robust_accuracies;  // "pgd@0.1" -> value
    double prs_ratio = 0.0;
    double inclusion_ratio = -1.0;
    double mean_cosine = 0.0;
    std::string scheme;
    int batch_size = 0;
    std::uint64_t seed = 0;
    int epoch = 0;

    json to_json() const {
        json j;
        j["clean_test_accuracy"] = clean_test_accuracy;
        j["clean_train_accuracy"] = clean_train_accuracy;
        json ra = json::object();
        for (const auto& [k, v] : robust_accuracies) ra[k] = v;
        j["robust_accuracy"] = ra;
        j["prs_ratio"] = prs_ratio;
        j["inclusion_ratio"] = inclusion_ratio;
        j["mean_cosine_similarity"] = mean_cosine;
        j["scheme"] = scheme;
        j["batch_size"] = batch_size;
        j["seed"] = seed;
        j["epoch"] = epoch;
        return j;
    }

    static ExperimentReport from_json(const json& j) {
        ExperimentReport r;
        r.clean_test_accuracy = j.value("clean_test_accuracy", 0.0);
        r.clean_train_accuracy = j.value("clean_train_accuracy", 0.0);
        if (j.contains("robust_accuracy"))
            for (auto it = j.at("robust_accuracy").begin(); it != j.at("robust_accuracy").end();
                 ++it)
                r.robust_accuracies.emplace_back(it.key(), it.value().get<double>());
        r.prs_ratio = j.value("prs_ratio", 0.0);
        r.inclusion_ratio = j.value("inclusion_ratio", -1.0);
        r.mean_cosine = j.value("mean_cosine_similarity", 0.0);
        r.scheme = j.value("scheme", "");
        r.batch_size = j.value("batch_size", 0);
        r.seed = j.value("seed", std::uint64_t(0));
        r.epoch = j.value("epoch", 0);
        return r;
    }
};

inline std::string attack_tag(const AttackConfig& a) {
    return std::string(attack_method_name(a.method)) + "-" + std::to_string(a.num_steps) +
           "@" + format_double(a.epsilon);
}

inline void write_train_log_csv(const TrainLog& log, const std::string& path) {
    CsvWriter csv(path);
    csv.header({"epoch", "train_accuracy", "test_accuracy", "prs_ratio", "loss_ce",
                "loss_mrv", "loss_ham_surrogate", "loss_ham_exact", "loss_total",
                "regularized", "seconds"});
    for (const EpochLog& e : log.epochs) {
        csv.field(e.epoch)
            .field(e.train_accuracy)
            .field(e.test_accuracy)
            .field(e.prs_ratio)
            .field(e.loss_ce)
            .field(e.loss_mrv)
            .field(e.loss_ham_surrogate)
            .field(e.loss_ham_exact)
            .field(e.loss_total)
            .field(e.regularized);
        csv.field(e.seconds);
        csv.end_row();
    }
}

inline void write_slice_map_csv(const SliceMap& map, const std::string& path) {
    CsvWriter csv(path);
    csv.header({"iu", "iv", "u", "v", "region_id", "predicted_class"});
    for (int iv = 0; iv < map.nv; ++iv)
        for (int iu = 0; iu < map.nu; ++iu) {
            double u = map.extent.umin +
                       (map.extent.umax - map.extent.umin) *
                           (map.nu == 1 ? 0.5 : static_cast<double>(iu) / (map.nu - 1));
            double v = map.extent.vmin +
                       (map.extent.vmax - map.extent.vmin) *
                           (map.nv == 1 ? 0.5 : static_cast<double>(iv) / (map.nv - 1));
            csv.field(iu).field(iv).field(u).field(v);
            csv.field(map.region_id[map.cell(iu, iv)]);
            csv.field(map.predicted_class[map.cell(iu, iv)]);
            csv.end_row();
        }
}

}  // namespace prslab
