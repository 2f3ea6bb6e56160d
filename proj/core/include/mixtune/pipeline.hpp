#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mixtune/blo.hpp"
#include "mixtune/config.hpp"
#include "mixtune/data.hpp"
#include "mixtune/metrics.hpp"
#include "mixtune/model.hpp"

namespace mixtune::pipeline {

enum class Method { ours, vanilla, joint, random_alpha, model_soup };

Method method_from_string(const std::string& name);
std::string method_name(Method m);

/// One experiment = one config file. Field defaults mirror the standard
/// finetuning recipe (AdamW, warmup 10%, weight decay 0.01, rank 1).
struct RunConfig {
    // data
    bool use_synthetic = true;
    SyntheticTaskSpec synth;
    std::filesystem::path source_csv;
    std::filesystem::path train_csv;
    std::filesystem::path test_csv;
    std::string dataset_name = "synthetic";

    // model
    std::vector<std::int64_t> hidden = {32, 32};
    ActKind act = ActKind::tanh;
    std::int64_t rank = 1;

    // pretraining budget
    long pretrain_epochs = 3;
    double pretrain_lr = 5e-3;
    long pretrain_batch = 64;
    double pretrain_weight_decay = 0.01;
    double pretrain_warmup_ratio = 0.1;
    std::uint64_t pretrain_seed = 1000;

    // search phase
    blo::SearchConfig search;  // .seed/.total_steps resolved per run seed
    long search_epochs = 3;
    bool explicit_search_steps = false;

    // finetune phase grid
    std::vector<long> finetune_epochs = {1, 3};
    std::vector<double> finetune_lrs = {2e-5, 3e-6};
    long finetune_batch = 16;
    double finetune_weight_decay = 0.01;
    double finetune_warmup_ratio = 0.1;
    bool reset_w = false;

    // experiment
    Method method = Method::ours;
    double random_alpha_sigma = 0.005;
    long soup_models = 5;
    std::vector<std::uint64_t> seeds = {0};
    long samples = 0;  // 0 = full low-resource set
    std::string metric_str = "auto";
    std::filesystem::path out_dir = "run-out";
    std::filesystem::path checkpoint_path = "pretrained.bin";
    int workers = 1;

    std::string config_dump;  // canonical copy persisted with the run
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_kv(KvConfig& kv);

struct PhaseTiming {
    std::uint64_t seed = 0;
    std::string phase;
    double seconds = 0.0;
};

struct ExperimentReport {
    std::string method;
    std::string dataset;
    std::string metric;
    std::vector<std::uint64_t> seeds;
    std::vector<double> values;  // per-seed metric, seed-ordered
    double mean = 0.0;
    double stddev = 0.0;  // population
    std::vector<PhaseTiming> timings;
};

ExperimentReport make_report(std::string method, std::string dataset, std::string metric,
                             std::vector<std::uint64_t> seeds, std::vector<double> values,
                             std::vector<PhaseTiming> timings);

/// Trains the source model and writes the pretrained checkpoint.
void cmd_pretrain(const RunConfig& cfg);

/// Search + finetune ("ours") across all seeds; persists per-seed artifacts
/// and the aggregate report under cfg.out_dir.
ExperimentReport cmd_run(const RunConfig& cfg);

/// Search only; persists coefficients.bin / search_state.bin / steps.csv.
void cmd_search(const RunConfig& cfg);

/// Finetune from previously saved search artifacts in cfg.out_dir.
ExperimentReport cmd_finetune(const RunConfig& cfg);

/// vanilla / joint / random_alpha / model_soup, per cfg.method.
ExperimentReport cmd_baseline(const RunConfig& cfg);

/// Aggregates completed run directories into an aligned table plus an optional
/// combined CSV. Missing artifacts are listed and skipped.
void cmd_report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& table_out,
                const std::optional<std::filesystem::path>& csv_out);

// Exposed for tests and the report command.
double evaluate_network(const Network& net, const Dataset& ds, MetricKind kind);
MetricKind resolve_metric(const std::string& metric_str, const Dataset& ds);
void write_report_csv(const ExperimentReport& report, const std::filesystem::path& path);
ExperimentReport read_report_csv(const std::filesystem::path& path);
void write_timings_csv(const ExperimentReport& report, const std::filesystem::path& path);
std::vector<PhaseTiming> read_timings_csv(const std::filesystem::path& path);

NamedTensors coefficients_to_named(const blo::Coefficients& coefficients);
blo::Coefficients named_to_coefficients(const NamedTensors& named);

/// Loads every layer of a plain network from checkpoint names (including the
/// head); used to evaluate saved and averaged models.
Network build_loaded_network(const NetSpec& spec, const NamedTensors& weights);

}  // namespace mixtune::pipeline
