// prslab: train ReLU classifiers, measure their populated decision regions,
// attack them, and reproduce the decision-region robustness analyses at desk
// scale. Subcommands: train, attack, analyze, regress.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prslab/experiment.hpp"
#include "prslab/threads.hpp"

namespace fs = std::filesystem;
using namespace prslab;

namespace {

struct CliOptions {
    std::string config_path;
    std::string checkpoint_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> batch_size_override;
    int threads = 1;
    std::vector<std::string> report_paths;
};

ExperimentConfig load_config(const CliOptions& opt) {
    require(!opt.config_path.empty(), ErrorKind::config, "--config is required");
    ExperimentConfig cfg = load_experiment_config(opt.config_path);
    if (opt.seed_override) {
        cfg.seed = *opt.seed_override;
        cfg.train.seed = *opt.seed_override;
    }
    if (opt.batch_size_override) cfg.train.batch_size = *opt.batch_size_override;
    if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
    return cfg;
}

void write_report(const ExperimentReport& report, const fs::path& dir) {
    std::ofstream f(dir / "report.json");
    f << report.to_json().dump(2) << "\n";
}

template <class S>
ExperimentReport evaluate_model(const Model<S>& model, const ExperimentConfig& cfg,
                                const Dataset& train_data, const Dataset* test_data,
                                const fs::path& dir) {
    ExperimentReport report;
    report.scheme = scheme_name(cfg.train.scheme);
    report.batch_size = cfg.train.batch_size;
    report.seed = cfg.seed;
    report.epoch = cfg.train.total_epochs;
    report.clean_train_accuracy = accuracy(model, train_data);
    if (test_data) report.clean_test_accuracy = accuracy(model, *test_data);

    int layer = cfg.analysis.layer > 0 ? cfg.analysis.layer : model.num_layers() - 1;
    if (layer < 1) layer = 1;
    RegionSet prs = build_prs(model, train_data, layer);
    report.prs_ratio = prs_ratio(prs, train_data.n);
    if (test_data && cfg.analysis.inclusion) {
        InclusionSplit split = inclusion_split(model, prs, *test_data, layer);
        report.inclusion_ratio = split.inclusion_ratio;
    }
    if (cfg.analysis.cosine)
        report.mean_cosine = mean_offdiag_similarity(cosine_similarity_matrix(model));

    if (!cfg.attacks.empty()) {
        const Dataset& eval_data = test_data ? *test_data : train_data;
        CsvWriter csv((dir / "robust_accuracy.csv").string());
        csv.header({"method", "num_steps", "epsilon", "robust_accuracy"});
        for (const AttackConfig& a : cfg.attacks) {
            double ra = robust_accuracy(model, eval_data, a);
            report.robust_accuracies.emplace_back(attack_tag(a), ra);
            csv.field(attack_method_name(a.method)).field(a.num_steps).field(a.epsilon);
            csv.field(ra);
            csv.end_row();
        }
    }
    return report;
}

template <class S>
int run_train(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "config.json");
        json raw = cfg.raw;
        raw["seed"] = cfg.seed;
        f << raw.dump(2) << "\n";
    }
    LoadedData data = load_datasets(cfg.dataset, cfg.seed);
    data.train.validate();
    Model<S> model = build_model<S>(cfg, data.train);

    int warmup = cfg.train.warmup_epochs;
    bool staged = cfg.train.scheme == TrainScheme::mr || cfg.train.scheme == TrainScheme::prs;
    std::function<void(int, Model<S>&)> on_epoch = [&](int epoch, Model<S>& m) {
        if (staged && epoch == warmup)
            save_checkpoint(m, (dir / "checkpoint_warmup.ckpt").string(), cfg.seed, epoch);
    };
    TrainResult<S> result =
        train(model, data.train, data.test ? &*data.test : nullptr, cfg.train, on_epoch);
    save_checkpoint(model, (dir / "checkpoint_final.ckpt").string(), cfg.seed,
                    cfg.train.total_epochs);
    write_train_log_csv(result.log, (dir / "train_log.csv").string());

    ExperimentReport report = evaluate_model(model, cfg, data.train,
                                             data.test ? &*data.test : nullptr, dir);
    write_report(report, dir);
    std::printf("train: scheme=%s epochs=%d final train_acc=%.4f test_acc=%.4f prs_ratio=%.5f\n",
                scheme_name(cfg.train.scheme), cfg.train.total_epochs,
                report.clean_train_accuracy, report.clean_test_accuracy, report.prs_ratio);
    std::printf("run directory: %s\n", dir.string().c_str());
    return 0;
}

template <class S>
int run_attack(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    require(!opt.checkpoint_path.empty(), ErrorKind::config, "--checkpoint is required");
    require(!cfg.attacks.empty(), ErrorKind::config, "config has no attacks");
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    Model<S> model = load_checkpoint<S>(opt.checkpoint_path);
    LoadedData data = load_datasets(cfg.dataset, cfg.seed);
    const Dataset& eval_data = data.test ? *data.test : data.train;
    require(model.input_size() == eval_data.sample_size(), ErrorKind::format,
            "checkpoint input size does not match dataset sample size");

    CsvWriter table((dir / "robust_accuracy.csv").string());
    table.header({"method", "num_steps", "epsilon", "robust_accuracy", "success_ratio",
                  "failed_nonzero_grad_ratio", "failed_zero_grad_ratio"});
    for (const AttackConfig& a : cfg.attacks) {
        ForensicsReport<S> forensics = failure_forensics(model, eval_data, a);
        double ra = robust_accuracy(model, eval_data, a);
        table.field(attack_method_name(a.method)).field(a.num_steps).field(a.epsilon);
        table.field(ra)
            .field(forensics.success_ratio)
            .field(forensics.failed_nonzero_grad_ratio)
            .field(forensics.failed_zero_grad_ratio);
        table.end_row();
        std::printf("%s-%d eps=%g: robust_acc=%.4f zero_grad_failures=%.4f\n",
                    attack_method_name(a.method), a.num_steps, a.epsilon, ra,
                    forensics.failed_zero_grad_ratio);
    }

    // per-sample rows for the first configured attack
    {
        const AttackConfig& a = cfg.attacks.front();
        CsvWriter csv((dir / ("attack_samples_" + attack_tag(a) + ".csv")).string());
        csv.header({"sample", "label", "success", "budget_linf", "clean_grad_linf",
                    "clean_logit_true", "adv_logit_true"});
        const int chunk = 128;
        for (int start = 0; start < eval_data.n; start += chunk) {
            int count = std::min(chunk, eval_data.n - start);
            std::vector<int> idx(count);
            std::iota(idx.begin(), idx.end(), start);
            std::vector<S> x = gather_batch<S>(eval_data, idx);
            std::vector<int> y = gather_labels(eval_data, idx);
            auto outcomes = attack_batch(model, x.data(), count, y, a,
                                         static_cast<std::uint64_t>(start), true);
            for (int i = 0; i < count; ++i) {
                double budget = 0.0;
                for (std::size_t j = 0; j < model.input_size(); ++j)
                    budget = std::max(
                        budget, std::abs(static_cast<double>(outcomes[i].adversarial[j]) -
                                         static_cast<double>(
                                             x[static_cast<std::size_t>(i) * model.input_size() +
                                               j])));
                csv.field(start + i).field(y[i]).field(outcomes[i].success).field(budget);
                csv.field(outcomes[i].clean_grad_linf);
                csv.field(static_cast<double>(outcomes[i].initial_logits[y[i]]));
                csv.field(static_cast<double>(outcomes[i].final_logits[y[i]]));
                csv.end_row();
            }
        }
    }
    return 0;
}

template <class S>
int run_analyze(const CliOptions& opt) {
    ExperimentConfig cfg = load_config(opt);
    require(!opt.checkpoint_path.empty(), ErrorKind::config, "--checkpoint is required");
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    Model<S> model = load_checkpoint<S>(opt.checkpoint_path);
    LoadedData data = load_datasets(cfg.dataset, cfg.seed);
    int layer = cfg.analysis.layer > 0 ? cfg.analysis.layer : model.num_layers() - 1;
    if (layer < 1) layer = 1;

    if (cfg.analysis.prs_profile) {
        auto profile = prs_depth_profile(model, data.train);
        CsvWriter csv((dir / "prs_depth_profile.csv").string());
        csv.header({"layer", "prs_count", "prs_ratio"});
        for (auto [l, count] : profile) {
            csv.field(l).field(count);
            csv.field(static_cast<double>(count) / data.train.n);
            csv.end_row();
        }
    }

    RegionSet prs = build_prs(model, data.train, layer);
    {
        std::ofstream f(dir / "region_summary.txt");
        f << "layer " << layer << "\n";
        f << "samples " << data.train.n << "\n";
        f << "populated_regions " << prs.size() << "\n";
        f << "prs_ratio " << format_double(prs_ratio(prs, data.train.n)) << "\n";
    }

    MajorRegionTable<S> table = major_regions(prs, model, data.train, layer);
    {
        CsvWriter csv((dir / "major_regions.csv").string());
        csv.header({"class", "occupancy", "pattern", "mrv_norm"});
        for (int c = 0; c < table.num_classes(); ++c) {
            double norm = 0.0;
            for (S v : table.mrv[c]) norm += static_cast<double>(v) * static_cast<double>(v);
            csv.field(c).field(table.occupancy[c]).field(table.patterns[c].to_string());
            csv.field(std::sqrt(norm));
            csv.end_row();
        }
    }

    if (cfg.analysis.inclusion && data.test) {
        InclusionSplit split = inclusion_split(model, prs, *data.test, layer);
        CsvWriter csv((dir / "inclusion.csv").string());
        csv.header({"test_samples", "included", "excluded", "inclusion_ratio"});
        csv.field(data.test->n)
            .field(split.included.size())
            .field(split.excluded.size())
            .field(split.inclusion_ratio);
        csv.end_row();
    }

    if (cfg.analysis.cosine) {
        CosineMatrix m = cosine_similarity_matrix(model);
        CsvWriter csv((dir / "cosine_matrix.csv").string());
        for (int i = 0; i < m.classes; ++i) {
            for (int j = 0; j < m.classes; ++j) csv.field(m.at(i, j));
            csv.end_row();
        }
    }

    if (!cfg.analysis.slice_anchors.empty()) {
        require(cfg.analysis.slice_anchors.size() == 3, ErrorKind::parameter,
                "slice map needs exactly 3 anchor indices");
        for (int a : cfg.analysis.slice_anchors)
            require(a >= 0 && a < data.train.n, ErrorKind::parameter,
                    "slice anchor index out of range");
        std::vector<S> a1 = gather_batch<S>(data.train, {cfg.analysis.slice_anchors[0]});
        std::vector<S> a2 = gather_batch<S>(data.train, {cfg.analysis.slice_anchors[1]});
        std::vector<S> a3 = gather_batch<S>(data.train, {cfg.analysis.slice_anchors[2]});
        // extent covering the anchor triangle with a margin
        SliceExtent extent;
        {
            double n1 = 0.0, d12 = 0.0;
            for (std::size_t i = 0; i < a1.size(); ++i) {
                double e = static_cast<double>(a2[i]) - static_cast<double>(a1[i]);
                n1 += e * e;
            }
            n1 = std::sqrt(n1);
            (void)d12;
            double pad = cfg.analysis.slice_margin * std::max(n1, 1e-6);
            extent.umin = -pad;
            extent.umax = n1 + pad;
            extent.vmin = -pad;
            extent.vmax = n1 + pad;
        }
        SliceMap map = plane_slice_region_map(model, a1.data(), a2.data(), a3.data(),
                                              cfg.analysis.slice_nu, cfg.analysis.slice_nv,
                                              extent, layer);
        write_slice_map_csv(map, (dir / "slice_map.csv").string());
    }

    if (cfg.analysis.mrv_distance && !cfg.attacks.empty()) {
        MrvDistanceAnalysis analysis =
            mrv_distance_analysis(model, data.train, table, cfg.attacks.front());
        CsvWriter csv((dir / "mrv_distance.csv").string());
        csv.header({"sample", "class", "distance", "attack_success", "confidence"});
        for (const auto& rec : analysis.records) {
            csv.field(rec.index).field(rec.label).field(rec.distance);
            csv.field(rec.attack_success).field(rec.confidence);
            csv.end_row();
        }
        if (analysis.regression_valid) {
            std::ofstream f(dir / "mrv_distance_regression.txt");
            f << "confidence_vs_distance slope " << format_double(
                     analysis.confidence_vs_distance.slope)
              << " p " << format_double(analysis.confidence_vs_distance.p_value) << "\n";
        }
    }
    std::printf("analysis written to %s\n", dir.string().c_str());
    return 0;
}

int run_regress(const CliOptions& opt) {
    require(opt.report_paths.size() >= 3, ErrorKind::parameter,
            "regress needs at least 3 report.json files");
    std::vector<ExperimentReport> reports;
    for (const std::string& p : opt.report_paths) {
        std::ifstream f(p);
        require(f.good(), ErrorKind::io, "cannot open report " + p);
        json j;
        try {
            f >> j;
        } catch (const json::exception&) {
            raise(ErrorKind::format, "report is not valid JSON: " + p);
        }
        reports.push_back(ExperimentReport::from_json(j));
    }
    std::vector<double> prs;
    for (const auto& r : reports) prs.push_back(r.prs_ratio);

    fs::path dir(opt.out_dir.empty() ? "." : opt.out_dir);
    fs::create_directories(dir);
    CsvWriter csv((dir / "regression.csv").string());
    csv.header({"pair", "coef", "intercept", "p_value", "r_squared", "n"});
    auto run_pair = [&](const std::string& name, const std::vector<double>& y) {
        RegressionResult r = ols_regression(prs, y);
        csv.field(name).field(r.slope).field(r.intercept).field(r.p_value);
        csv.field(r.r_squared).field(r.n);
        csv.end_row();
        std::printf("%-32s Coef % .5g  P-val %.3g\n", name.c_str(), r.slope, r.p_value);
    };
    {
        std::vector<double> y;
        for (const auto& r : reports) {
            require(!r.robust_accuracies.empty(), ErrorKind::data,
                    "report lacks robust accuracy entries");
            y.push_back(r.robust_accuracies.front().second);
        }
        run_pair("prs_ratio_vs_robust_accuracy", y);
    }
    {
        std::vector<double> y;
        for (const auto& r : reports) y.push_back(r.mean_cosine);
        run_pair("prs_ratio_vs_cosine_similarity", y);
    }
    {
        bool have_inclusion = true;
        for (const auto& r : reports)
            if (r.inclusion_ratio < 0.0) have_inclusion = false;
        if (have_inclusion) {
            std::vector<double> y;
            for (const auto& r : reports) y.push_back(r.inclusion_ratio);
            run_pair("prs_ratio_vs_inclusion_ratio", y);
        }
    }
    return 0;
}

template <int (*FloatFn)(const CliOptions&), int (*DoubleFn)(const CliOptions&)>
int dispatch_precision(const CliOptions& opt) {
    // precision comes from the config; default float32
    std::string precision = "float32";
    if (!opt.config_path.empty()) {
        std::ifstream f(opt.config_path);
        if (f.good()) {
            json j;
            try {
                f >> j;
                precision = j.value("precision", "float32");
            } catch (const json::exception&) {
                // full parse errors surface later with a proper message
            }
        }
    }
    return precision == "float64" ? DoubleFn(opt) : FloatFn(opt);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"populated-region-set training and analysis lab"};
    app.require_subcommand(1);
    CliOptions opt;

    auto add_common = [&](CLI::App* cmd, bool needs_checkpoint) {
        cmd->add_option("--config", opt.config_path, "experiment config JSON");
        if (needs_checkpoint)
            cmd->add_option("--checkpoint", opt.checkpoint_path, "model checkpoint file");
        cmd->add_option("--out", opt.out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", opt.seed_override, "seed override");
        cmd->add_option("--threads", opt.threads, "worker threads for region analysis");
    };

    CLI::App* cmd_train = app.add_subcommand("train", "train a model per the config");
    add_common(cmd_train, false);
    cmd_train->add_option("--batch-size", opt.batch_size_override,
                          "batch size override (for sweep recipes)");
    CLI::App* cmd_attack = app.add_subcommand("attack", "robust accuracy and forensics");
    add_common(cmd_attack, true);
    CLI::App* cmd_analyze = app.add_subcommand("analyze", "region geometry and statistics");
    add_common(cmd_analyze, true);
    CLI::App* cmd_regress = app.add_subcommand("regress", "OLS across experiment reports");
    cmd_regress->add_option("reports", opt.report_paths, "report.json files");
    cmd_regress->add_option("--out", opt.out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    set_num_threads(opt.threads);
    try {
        if (app.got_subcommand(cmd_train))
            return dispatch_precision<run_train<float>, run_train<double>>(opt);
        if (app.got_subcommand(cmd_attack))
            return dispatch_precision<run_attack<float>, run_attack<double>>(opt);
        if (app.got_subcommand(cmd_analyze))
            return dispatch_precision<run_analyze<float>, run_analyze<double>>(opt);
        if (app.got_subcommand(cmd_regress)) return run_regress(opt);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return error_exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime-error: %s\n", e.what());
        return 4;
    }
    return 2;
}
