#include "mixtune/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "mixtune/errors.hpp"
#include "mixtune/rng.hpp"

namespace mixtune::pipeline {

namespace fs = std::filesystem;

namespace {

std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double_or_throw(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw FormatError(where + ": bad number '" + s + "'");
    }
}

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Append-only per-step log, header step,stage,loss,epsilon,alpha_mean,...
class StepCsvLogger {
public:
    explicit StepCsvLogger(const fs::path& path) : out_(path, std::ios::trunc) {
        if (!out_) {
            throw ConfigError("cannot open " + path.string() + " for writing");
        }
        out_ << "step,stage,loss,epsilon,alpha_mean,alpha_min,alpha_max\n";
    }

    blo::StepObserver observer() {
        return [this](const blo::StepRecord& r) {
            out_ << r.step << ',' << r.stage << ',' << g17(r.loss) << ',' << g17(r.epsilon) << ','
                 << g17(r.alpha_mean) << ',' << g17(r.alpha_min) << ',' << g17(r.alpha_max)
                 << '\n';
        };
    }

private:
    std::ofstream out_;
};

struct Workspace {
    Dataset source;
    Dataset train;  // low-resource downstream pool
    Dataset test;
    NamedTensors pretrained;
    NetSpec spec;
    MetricKind metric = MetricKind::accuracy;
};

NetSpec spec_for(const RunConfig& cfg, const Dataset& ds) {
    NetSpec spec;
    spec.input_dim = ds.dim();
    spec.hidden = cfg.hidden;
    spec.act = cfg.act;
    spec.task = ds.task;
    spec.classes = ds.classes;
    return spec;
}

Workspace load_workspace(const RunConfig& cfg, bool need_pretrained, bool need_source) {
    Workspace ws;
    if (cfg.use_synthetic) {
        TransferTriplet triplet = make_synthetic_transfer(cfg.synth);
        ws.source = std::move(triplet.source);
        ws.train = std::move(triplet.target);
        ws.test = std::move(triplet.test);
    } else {
        if (need_source) {
            ws.source = load_csv_dataset(cfg.source_csv);
        }
        ws.train = load_csv_dataset(cfg.train_csv);
        ws.test = load_csv_dataset(cfg.test_csv);
        if (ws.train.task != ws.test.task || ws.train.dim() != ws.test.dim()) {
            throw ConfigError("train/test datasets disagree on task kind or feature width");
        }
        ws.train.classes = ws.test.classes = std::max(ws.train.classes, ws.test.classes);
    }
    ws.spec = spec_for(cfg, ws.train);
    ws.metric = resolve_metric(cfg.metric_str, ws.train);
    if (need_pretrained) {
        if (!fs::exists(cfg.checkpoint_path)) {
            throw ConfigError("pretrained checkpoint not found: " + cfg.checkpoint_path.string() +
                              " (run `pretrain` first)");
        }
        ws.pretrained = load_checkpoint(cfg.checkpoint_path);
    }
    return ws;
}

std::vector<std::int64_t> all_indices(const Dataset& ds) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(ds.size()));
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        idx[static_cast<std::size_t>(i)] = i;
    }
    return idx;
}

Dataset seed_train_set(const RunConfig& cfg, const Workspace& ws, std::uint64_t seed) {
    const std::int64_t n =
        cfg.samples > 0 ? std::min<std::int64_t>(cfg.samples, ws.train.size()) : ws.train.size();
    return subsample(ws.train, n, derive_seed(seed, "subsample"));
}

blo::SearchConfig seed_search_config(const RunConfig& cfg, std::int64_t train_rows,
                                     std::uint64_t downstream_seed, bool split_for_steps) {
    blo::SearchConfig scfg = cfg.search;
    scfg.rank = cfg.rank;
    scfg.seed = downstream_seed;
    if (!cfg.explicit_search_steps) {
        std::int64_t rows = train_rows;
        if (split_for_steps) {
            const std::int64_t val_n = split_val_count(train_rows, scfg.split_ratio);
            rows = train_rows - val_n;
        }
        scfg.total_steps = blo::steps_for_epochs(rows, scfg.batch_size, cfg.search_epochs);
    }
    return scfg;
}

blo::NetworkFactory mixup_factory(const RunConfig& cfg, const Workspace& ws) {
    return [&cfg, &ws](int, std::uint64_t replicate_seed) {
        return build_mixup_network(ws.spec, ws.pretrained, cfg.rank,
                                   cfg.search.alpha_init_mean, cfg.search.alpha_init_stddev,
                                   derive_seed(replicate_seed, "alpha"),
                                   derive_seed(replicate_seed, "head"));
    };
}

void reset_task_weights_to_pretrained(Network& net) {
    for (MixupLinear* layer : net.mixup_layers()) {
        layer->task_weight->data = layer->pretrained_weight->data;
    }
}

struct GridChoice {
    Network net;
    long epochs = 0;
    double lr = 0.0;
    double selection_score = 0.0;
};

/// Trains one candidate per (epochs, lr) pair and keeps the one scoring best
/// on the selection rows; ties resolve to the earliest pair.
GridChoice select_over_grid(const RunConfig& cfg, const Dataset& ds_tr,
                            const std::vector<std::int64_t>& sel_rows, MetricKind metric_kind,
                            std::uint64_t seed,
                            const std::function<Network()>& make_candidate,
                            const std::optional<blo::Coefficients>& coefficients,
                            const blo::StepObserver& observer) {
    const Dataset selection = take(ds_tr, sel_rows);
    const std::vector<std::int64_t> train_rows = all_indices(ds_tr);
    GridChoice best;
    bool have_best = false;
    long combo = 0;
    for (const long epochs : cfg.finetune_epochs) {
        for (const double lr : cfg.finetune_lrs) {
            Network candidate = make_candidate();
            blo::TrainConfig tcfg;
            tcfg.lr = lr;
            tcfg.weight_decay = cfg.finetune_weight_decay;
            tcfg.warmup_ratio = cfg.finetune_warmup_ratio;
            tcfg.batch_size = cfg.finetune_batch;
            tcfg.adam = cfg.search.adam;
            tcfg.cycler_seed = derive_seed(seed, "finetune", static_cast<std::uint64_t>(combo));
            if (coefficients.has_value()) {
                blo::finetune_phase(candidate, ds_tr, train_rows, *coefficients, epochs, tcfg,
                                    observer);
            } else {
                tcfg.total_steps = blo::steps_for_epochs(ds_tr.size(), tcfg.batch_size, epochs);
                blo::train_supervised(candidate, ds_tr, train_rows, tcfg, observer);
            }
            const double score = evaluate_network(candidate, selection, metric_kind);
            if (!have_best || score > best.selection_score) {
                best = GridChoice{std::move(candidate), epochs, lr, score};
                have_best = true;
            }
            ++combo;
        }
    }
    if (!have_best) {
        throw ConfigError("empty finetune grid");
    }
    return best;
}

struct SeedOutcome {
    double value = 0.0;
    double search_seconds = 0.0;
    double finetune_seconds = 0.0;
    double total_seconds = 0.0;
};

SeedOutcome run_one_seed(const RunConfig& cfg, const Workspace& ws, std::uint64_t seed,
                         const fs::path& seed_dir) {
    fs::create_directories(seed_dir);
    StepCsvLogger logger(seed_dir / "steps.csv");
    const blo::StepObserver observer = logger.observer();

    const Timer total_timer;
    SeedOutcome out;
    const std::uint64_t ds_seed = derive_seed(seed, "downstream");
    const Dataset ds_tr = seed_train_set(cfg, ws, seed);
    const SplitPair selection = split_dataset(ds_tr, cfg.search.split_ratio, ds_seed);

    std::optional<blo::Coefficients> coefficients;
    Network start_net;
    double search_seconds = 0.0;

    switch (cfg.method) {
        case Method::ours: {
            const Timer t;
            const blo::SearchConfig scfg = seed_search_config(cfg, ds_tr.size(), ds_seed, true);
            blo::KReplicateResult kres =
                blo::k_replicate_search(ds_tr, scfg, mixup_factory(cfg, ws), observer);
            search_seconds = t.seconds();
            coefficients = kres.coefficients;
            start_net = std::move(kres.net);
            if (cfg.reset_w) {
                reset_task_weights_to_pretrained(start_net);
            }
            break;
        }
        case Method::joint: {
            const Timer t;
            const blo::SearchConfig scfg = seed_search_config(cfg, ds_tr.size(), ds_seed, false);
            Network net = mixup_factory(cfg, ws)(0, ds_seed);
            blo::joint_train(net, ds_tr, all_indices(ds_tr), scfg, observer);
            search_seconds = t.seconds();
            coefficients = blo::extract_coefficients(net);
            start_net = std::move(net);
            if (cfg.reset_w) {
                reset_task_weights_to_pretrained(start_net);
            }
            break;
        }
        case Method::random_alpha: {
            Network net = build_mixup_network(ws.spec, ws.pretrained, cfg.rank,
                                              cfg.search.alpha_init_mean, cfg.random_alpha_sigma,
                                              derive_seed(ds_seed, "alpha"),
                                              derive_seed(ds_seed, "head"));
            coefficients = blo::extract_coefficients(net);
            start_net = std::move(net);
            break;
        }
        case Method::vanilla: {
            start_net = build_warm_plain_network(ws.spec, ws.pretrained,
                                                 derive_seed(ds_seed, "head"));
            break;
        }
        case Method::model_soup: {
            const Timer t;
            std::vector<NamedTensors> members;
            for (long j = 0; j < cfg.soup_models; ++j) {
                const std::uint64_t member_seed =
                    derive_seed(seed, "soup", static_cast<std::uint64_t>(j));
                Network member = build_warm_plain_network(ws.spec, ws.pretrained,
                                                          derive_seed(member_seed, "head"));
                blo::TrainConfig tcfg;
                tcfg.lr = cfg.finetune_lrs.front();
                tcfg.weight_decay = cfg.finetune_weight_decay;
                tcfg.warmup_ratio = cfg.finetune_warmup_ratio;
                tcfg.batch_size = cfg.finetune_batch;
                tcfg.adam = cfg.search.adam;
                tcfg.total_steps = blo::steps_for_epochs(ds_tr.size(), tcfg.batch_size,
                                                         cfg.finetune_epochs.front());
                tcfg.cycler_seed = derive_seed(member_seed, "cycler");
                const std::vector<std::int64_t> rows = all_indices(ds_tr);
                blo::train_supervised(member, ds_tr, rows, tcfg, observer);
                members.push_back(export_effective_weights(member));
            }
            const NamedTensors averaged = average_named_tensors(members);
            Network avg_net = build_loaded_network(ws.spec, averaged);
            out.value = evaluate_network(avg_net, ws.test, ws.metric);
            out.finetune_seconds = t.seconds();
            out.total_seconds = total_timer.seconds();
            save_checkpoint(averaged, seed_dir / "checkpoint.bin");
            return out;
        }
    }

    out.search_seconds = search_seconds;
    const Timer finetune_timer;
    GridChoice best = select_over_grid(
        cfg, ds_tr, selection.val_indices, ws.metric, seed,
        [&]() { return clone_network(start_net); }, coefficients, observer);
    out.finetune_seconds = finetune_timer.seconds();
    out.value = evaluate_network(best.net, ws.test, ws.metric);
    out.total_seconds = total_timer.seconds();

    save_checkpoint(export_effective_weights(best.net), seed_dir / "checkpoint.bin");
    if (coefficients.has_value()) {
        save_checkpoint(coefficients_to_named(*coefficients), seed_dir / "coefficients.bin");
    }
    return out;
}

void parallel_over_seeds(int workers, std::size_t count,
                         const std::function<void(std::size_t)>& fn) {
    if (count == 0) {
        return;
    }
    std::size_t pool = workers > 0 ? static_cast<std::size_t>(workers)
                                   : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    pool = std::min(pool, count);
    if (pool <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (std::size_t w = 0; w < pool; ++w) {
        threads.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) {
                    return;
                }
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : threads) {
        t.join();
    }
    for (const std::exception_ptr& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

void persist_run(const RunConfig& cfg, const ExperimentReport& report) {
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream out(cfg.out_dir / "config.txt", std::ios::trunc);
        out << cfg.config_dump;
    }
    write_report_csv(report, cfg.out_dir / "report.csv");
    write_timings_csv(report, cfg.out_dir / "timings.csv");
    // Root-level copies of the first seed's artifacts.
    const fs::path first = cfg.out_dir / ("seed_" + std::to_string(cfg.seeds.front()));
    for (const char* name : {"steps.csv", "checkpoint.bin", "coefficients.bin"}) {
        if (fs::exists(first / name)) {
            fs::copy_file(first / name, cfg.out_dir / name, fs::copy_options::overwrite_existing);
        }
    }
}

ExperimentReport run_all_seeds(const RunConfig& cfg, const Workspace& ws) {
    if (cfg.seeds.empty()) {
        throw ConfigError("no seeds configured");
    }
    fs::create_directories(cfg.out_dir);
    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    parallel_over_seeds(cfg.workers, cfg.seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        const fs::path seed_dir = cfg.out_dir / ("seed_" + std::to_string(seed));
        outcomes[i] = run_one_seed(cfg, ws, seed, seed_dir);
    });

    std::vector<double> values;
    std::vector<PhaseTiming> timings;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        values.push_back(outcomes[i].value);
        timings.push_back({cfg.seeds[i], "search", outcomes[i].search_seconds});
        timings.push_back({cfg.seeds[i], "finetune", outcomes[i].finetune_seconds});
        timings.push_back({cfg.seeds[i], "total", outcomes[i].total_seconds});
    }
    ExperimentReport report =
        make_report(method_name(cfg.method), cfg.dataset_name, metric_name(ws.metric), cfg.seeds,
                    std::move(values), std::move(timings));
    persist_run(cfg, report);
    return report;
}

}  // namespace

Method method_from_string(const std::string& name) {
    if (name == "ours") return Method::ours;
    if (name == "vanilla") return Method::vanilla;
    if (name == "joint") return Method::joint;
    if (name == "random_alpha") return Method::random_alpha;
    if (name == "model_soup") return Method::model_soup;
    throw ConfigError("unknown method '" + name + "'");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::ours: return "ours";
        case Method::vanilla: return "vanilla";
        case Method::joint: return "joint";
        case Method::random_alpha: return "random_alpha";
        case Method::model_soup: return "model_soup";
    }
    return "?";
}

RunConfig load_run_config(const fs::path& path) {
    KvConfig kv = KvConfig::parse_file(path);
    return run_config_from_kv(kv);
}

RunConfig run_config_from_kv(KvConfig& kv) {
    RunConfig cfg;

    const std::string source = kv.get_string("task.source", "synthetic");
    if (source == "synthetic") {
        cfg.use_synthetic = true;
        cfg.synth.input_dim = kv.get_long("synthetic.input_dim", 20);
        cfg.synth.source_n = kv.get_long("synthetic.source_n", 20000);
        cfg.synth.target_n = kv.get_long("synthetic.target_n", 300);
        cfg.synth.test_n = kv.get_long("synthetic.test_n", 2000);
        cfg.synth.teacher_hidden = kv.get_long("synthetic.teacher_hidden", 32);
        cfg.synth.shift_angle = kv.get_double("synthetic.shift_angle", 0.3);
        cfg.synth.label_noise = kv.get_double("synthetic.label_noise", 0.1);
        cfg.synth.seed = kv.get_seed("synthetic.seed", 7);
        cfg.dataset_name = kv.get_string("task.name", "synthetic");
    } else if (source == "csv") {
        cfg.use_synthetic = false;
        if (kv.has("data.source_csv")) {
            cfg.source_csv = kv.require_string("data.source_csv");
        }
        cfg.train_csv = kv.require_string("data.train_csv");
        cfg.test_csv = kv.require_string("data.test_csv");
        cfg.dataset_name = kv.get_string("task.name", cfg.train_csv.stem().string());
    } else {
        throw ConfigError("task.source must be 'synthetic' or 'csv'");
    }

    cfg.hidden = kv.get_dims("model.hidden", {32, 32});
    const std::string act = kv.get_string("model.activation", "tanh");
    if (act == "tanh") {
        cfg.act = ActKind::tanh;
    } else if (act == "relu") {
        cfg.act = ActKind::relu;
    } else {
        throw ConfigError("model.activation must be 'tanh' or 'relu'");
    }
    cfg.rank = kv.get_long("model.rank", 1);
    if (cfg.rank < 1) {
        throw ConfigError("model.rank must be >= 1");
    }

    cfg.checkpoint_path = kv.get_string("checkpoint", "pretrained.bin");

    cfg.pretrain_epochs = kv.get_long("pretrain.epochs", 3);
    cfg.pretrain_lr = kv.get_double("pretrain.lr", 5e-3);
    cfg.pretrain_batch = kv.get_long("pretrain.batch", 64);
    cfg.pretrain_weight_decay = kv.get_double("pretrain.weight_decay", 0.01);
    cfg.pretrain_warmup_ratio = kv.get_double("pretrain.warmup_ratio", 0.1);
    cfg.pretrain_seed = kv.get_seed("pretrain.seed", 1000);

    cfg.search.task_lr = kv.get_double("search.task_lr", 2e-5);
    cfg.search.alpha_lr = kv.get_double("search.alpha_lr", 2e-3);
    cfg.search.task_weight_decay = kv.get_double("search.task_weight_decay", 0.01);
    cfg.search.alpha_weight_decay = kv.get_double("search.alpha_weight_decay", 0.01);
    cfg.search.task_warmup_ratio = kv.get_double("search.task_warmup_ratio", 0.1);
    cfg.search.alpha_warmup_ratio = kv.get_double("search.alpha_warmup_ratio", 0.1);
    cfg.search_epochs = kv.get_long("search.epochs", 3);
    if (kv.has("search.total_steps")) {
        cfg.search.total_steps = kv.get_long("search.total_steps", 0);
        cfg.explicit_search_steps = true;
    }
    cfg.search.batch_size = kv.get_long("search.batch", 16);
    cfg.search.split_ratio = kv.get_double("search.split_ratio", 0.8);
    cfg.search.replicates = static_cast<int>(kv.get_long("search.k", 1));
    cfg.search.alpha_init_mean = kv.get_double("search.alpha_mean", 1.0);
    cfg.search.alpha_init_stddev = kv.get_double("search.alpha_sigma", 0.005);
    cfg.search.average_factors = kv.get_bool("search.average_factors", false);

    cfg.finetune_epochs = kv.get_longs("finetune.epochs", {1, 3});
    cfg.finetune_lrs = kv.get_doubles("finetune.lrs", {2e-5, 3e-6});
    cfg.finetune_batch = kv.get_long("finetune.batch", 16);
    cfg.finetune_weight_decay = kv.get_double("finetune.weight_decay", 0.01);
    cfg.finetune_warmup_ratio = kv.get_double("finetune.warmup_ratio", 0.1);
    cfg.reset_w = kv.get_bool("finetune.reset_w", false);

    cfg.method = method_from_string(kv.get_string("method", "ours"));
    cfg.random_alpha_sigma = kv.get_double("random_alpha.sigma", 0.005);
    cfg.soup_models = kv.get_long("soup.models", 5);

    cfg.seeds.clear();
    for (const long s : kv.get_longs("seeds", {0})) {
        if (s < 0) {
            throw ConfigError("seeds must be non-negative");
        }
        cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    cfg.samples = kv.get_long("samples", 0);
    cfg.metric_str = kv.get_string("eval.metric", "auto");
    cfg.out_dir = kv.get_string("out", "run-out");
    cfg.workers = static_cast<int>(kv.get_long("run.workers", 1));

    kv.require_all_consumed();
    cfg.config_dump = kv.dump();
    return cfg;
}

ExperimentReport make_report(std::string method, std::string dataset, std::string metric,
                             std::vector<std::uint64_t> seeds, std::vector<double> values,
                             std::vector<PhaseTiming> timings) {
    ExperimentReport r;
    r.method = std::move(method);
    r.dataset = std::move(dataset);
    r.metric = std::move(metric);
    r.seeds = std::move(seeds);
    r.values = std::move(values);
    r.timings = std::move(timings);
    r.mean = mean_of(r.values);
    r.stddev = population_stddev(r.values);
    return r;
}

double evaluate_network(const Network& net, const Dataset& ds, MetricKind kind) {
    if (ds.task == TaskKind::classification) {
        const std::vector<int> pred = predict_classes(net, ds.features);
        return metric(pred, ds.labels, kind);
    }
    const std::vector<double> pred = predict_values(net, ds.features);
    return metric(pred, ds.targets, kind);
}

MetricKind resolve_metric(const std::string& metric_str, const Dataset& ds) {
    if (metric_str == "auto") {
        return ds.task == TaskKind::classification ? MetricKind::accuracy : MetricKind::spearman;
    }
    return metric_from_string(metric_str);
}

void write_report_csv(const ExperimentReport& report, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot open " + path.string() + " for writing");
    }
    out << "method,dataset,metric,seed,value\n";
    for (std::size_t i = 0; i < report.values.size(); ++i) {
        out << report.method << ',' << report.dataset << ',' << report.metric << ','
            << report.seeds[i] << ',' << g17(report.values[i]) << '\n';
    }
    out << report.method << ',' << report.dataset << ',' << report.metric << ",mean,"
        << g17(report.mean) << '\n';
    out << report.method << ',' << report.dataset << ',' << report.metric << ",std,"
        << g17(report.stddev) << '\n';
}

ExperimentReport read_report_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open report " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "method,dataset,metric,seed,value") {
        throw FormatError(path.string() + ": bad report header");
    }
    ExperimentReport r;
    std::vector<double> values;
    std::optional<double> mean, stddev;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string method, dataset, metric, seed, value;
        if (!std::getline(ss, method, ',') || !std::getline(ss, dataset, ',') ||
            !std::getline(ss, metric, ',') || !std::getline(ss, seed, ',') ||
            !std::getline(ss, value)) {
            throw FormatError(path.string() + ": bad row '" + line + "'");
        }
        r.method = method;
        r.dataset = dataset;
        r.metric = metric;
        const double v = parse_double_or_throw(value, path.string());
        if (seed == "mean") {
            mean = v;
        } else if (seed == "std") {
            stddev = v;
        } else {
            r.seeds.push_back(static_cast<std::uint64_t>(std::stoull(seed)));
            values.push_back(v);
        }
    }
    if (values.empty() || !mean.has_value() || !stddev.has_value()) {
        throw FormatError(path.string() + ": incomplete report");
    }
    r.values = std::move(values);
    r.mean = *mean;
    r.stddev = *stddev;
    return r;
}

void write_timings_csv(const ExperimentReport& report, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot open " + path.string() + " for writing");
    }
    out << "seed,phase,seconds\n";
    for (const PhaseTiming& t : report.timings) {
        out << t.seed << ',' << t.phase << ',' << g17(t.seconds) << '\n';
    }
}

std::vector<PhaseTiming> read_timings_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open timings " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "seed,phase,seconds") {
        throw FormatError(path.string() + ": bad timings header");
    }
    std::vector<PhaseTiming> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string seed, phase, seconds;
        if (!std::getline(ss, seed, ',') || !std::getline(ss, phase, ',') ||
            !std::getline(ss, seconds)) {
            throw FormatError(path.string() + ": bad row '" + line + "'");
        }
        out.push_back({static_cast<std::uint64_t>(std::stoull(seed)), phase,
                       parse_double_or_throw(seconds, path.string())});
    }
    return out;
}

NamedTensors coefficients_to_named(const blo::Coefficients& coefficients) {
    NamedTensors out;
    for (std::size_t l = 0; l < coefficients.size(); ++l) {
        out.add("hidden" + std::to_string(l) + ".coeff_w", *coefficients[l].coeff_w);
        out.add("hidden" + std::to_string(l) + ".coeff_w0", *coefficients[l].coeff_w0);
    }
    return out;
}

blo::Coefficients named_to_coefficients(const NamedTensors& named) {
    blo::Coefficients out;
    for (std::size_t l = 0;; ++l) {
        const std::string w_name = "hidden" + std::to_string(l) + ".coeff_w";
        const std::string w0_name = "hidden" + std::to_string(l) + ".coeff_w0";
        if (!named.contains(w_name)) {
            break;
        }
        const NamedTensor& w = named.at(w_name);
        const NamedTensor& w0 = named.at(w0_name);
        blo::CoefficientPair pair;
        pair.coeff_w = Tensor::from_data(w.shape, w.data);
        pair.coeff_w0 = Tensor::from_data(w0.shape, w0.data);
        out.push_back(std::move(pair));
    }
    if (out.empty()) {
        throw FormatError("no coefficient tensors found");
    }
    return out;
}

Network build_loaded_network(const NetSpec& spec, const NamedTensors& weights) {
    Network net;
    net.task = spec.task;
    net.classes = spec.classes;
    std::int64_t in = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::int64_t out_dim = spec.hidden[i];
        PlainLinear lin;
        const NamedTensor& w = weights.at("hidden" + std::to_string(i) + ".weight");
        const NamedTensor& b = weights.at("hidden" + std::to_string(i) + ".bias");
        if (w.shape != std::vector<std::int64_t>{in, out_dim}) {
            throw DimensionError("loaded tensor 'hidden" + std::to_string(i) +
                                 ".weight' has shape " + shape_to_string(w.shape));
        }
        lin.weight = Tensor::from_data(w.shape, w.data, true);
        lin.bias = Tensor::from_data(b.shape, b.data, true);
        net.layers.emplace_back(std::move(lin));
        net.layers.emplace_back(spec.act);
        in = out_dim;
    }
    PlainLinear head;
    const NamedTensor& hw = weights.at("head.weight");
    const NamedTensor& hb = weights.at("head.bias");
    head.weight = Tensor::from_data(hw.shape, hw.data, true);
    head.bias = Tensor::from_data(hb.shape, hb.data, true);
    net.layers.emplace_back(std::move(head));
    return net;
}

void cmd_pretrain(const RunConfig& cfg) {
    Workspace ws = load_workspace(cfg, false, true);
    if (ws.source.size() == 0) {
        throw ConfigError("pretraining needs a source dataset (data.source_csv or synthetic)");
    }
    NetSpec spec = spec_for(cfg, ws.source);
    Network net = build_plain_network(spec, derive_seed(cfg.pretrain_seed, "init"));

    blo::TrainConfig tcfg;
    tcfg.lr = cfg.pretrain_lr;
    tcfg.weight_decay = cfg.pretrain_weight_decay;
    tcfg.warmup_ratio = cfg.pretrain_warmup_ratio;
    tcfg.batch_size = cfg.pretrain_batch;
    tcfg.adam = cfg.search.adam;
    tcfg.total_steps =
        blo::steps_for_epochs(ws.source.size(), cfg.pretrain_batch, cfg.pretrain_epochs);
    tcfg.cycler_seed = derive_seed(cfg.pretrain_seed, "cycler");

    const std::vector<std::int64_t> rows = all_indices(ws.source);
    const double final_loss = blo::train_supervised(net, ws.source, rows, tcfg);
    const double train_metric = evaluate_network(net, ws.source, ws.metric);

    if (!cfg.checkpoint_path.parent_path().empty()) {
        fs::create_directories(cfg.checkpoint_path.parent_path());
    }
    save_checkpoint(export_effective_weights(net), cfg.checkpoint_path);
    std::cout << "pretrained on " << ws.source.size() << " rows: final loss " << final_loss
              << ", source " << metric_name(ws.metric) << " " << train_metric << ", saved "
              << cfg.checkpoint_path.string() << "\n";
}

ExperimentReport cmd_run(const RunConfig& cfg) {
    if (cfg.method != Method::ours) {
        throw ConfigError("`run` expects method = ours (use `baseline` for other methods)");
    }
    const Workspace ws = load_workspace(cfg, true, false);
    return run_all_seeds(cfg, ws);
}

ExperimentReport cmd_baseline(const RunConfig& cfg) {
    if (cfg.method == Method::ours) {
        throw ConfigError("`baseline` expects a non-ours method");
    }
    const Workspace ws = load_workspace(cfg, true, false);
    return run_all_seeds(cfg, ws);
}

void cmd_search(const RunConfig& cfg) {
    if (cfg.method != Method::ours) {
        throw ConfigError("`search` expects method = ours");
    }
    const Workspace ws = load_workspace(cfg, true, false);
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream out(cfg.out_dir / "config.txt", std::ios::trunc);
        out << cfg.config_dump;
    }
    parallel_over_seeds(cfg.workers, cfg.seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        const fs::path seed_dir = cfg.out_dir / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);
        StepCsvLogger logger(seed_dir / "steps.csv");
        const std::uint64_t ds_seed = derive_seed(seed, "downstream");
        const Dataset ds_tr = seed_train_set(cfg, ws, seed);
        const blo::SearchConfig scfg = seed_search_config(cfg, ds_tr.size(), ds_seed, true);
        blo::KReplicateResult kres =
            blo::k_replicate_search(ds_tr, scfg, mixup_factory(cfg, ws), logger.observer());
        save_checkpoint(coefficients_to_named(kres.coefficients), seed_dir / "coefficients.bin");
        save_checkpoint(export_effective_weights(kres.net), seed_dir / "search_model.bin");
        NamedTensors state;
        std::size_t l = 0;
        for (const MixupLinear* layer : kres.net.mixup_layers()) {
            state.add("hidden" + std::to_string(l) + ".weight", *layer->task_weight);
            state.add("hidden" + std::to_string(l) + ".bias", *layer->bias);
            ++l;
        }
        for (const Layer& layer : kres.net.layers) {
            if (const auto* p = std::get_if<PlainLinear>(&layer)) {
                state.add("head.weight", *p->weight);
                state.add("head.bias", *p->bias);
            }
        }
        save_checkpoint(state, seed_dir / "search_state.bin");
    });
    const fs::path first = cfg.out_dir / ("seed_" + std::to_string(cfg.seeds.front()));
    for (const char* name : {"steps.csv", "coefficients.bin"}) {
        if (fs::exists(first / name)) {
            fs::copy_file(first / name, cfg.out_dir / name, fs::copy_options::overwrite_existing);
        }
    }
}

ExperimentReport cmd_finetune(const RunConfig& cfg) {
    if (cfg.method != Method::ours) {
        throw ConfigError("`finetune` expects method = ours");
    }
    const Workspace ws = load_workspace(cfg, true, false);
    fs::create_directories(cfg.out_dir);
    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    parallel_over_seeds(cfg.workers, cfg.seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        const fs::path seed_dir = cfg.out_dir / ("seed_" + std::to_string(seed));
        const fs::path coeff_path = seed_dir / "coefficients.bin";
        const fs::path state_path = seed_dir / "search_state.bin";
        if (!fs::exists(coeff_path)) {
            throw ConfigError("missing " + coeff_path.string() + " (run `search` first)");
        }
        const blo::Coefficients coefficients = named_to_coefficients(load_checkpoint(coeff_path));

        const Timer total_timer;
        StepCsvLogger logger(seed_dir / "steps.csv");
        const std::uint64_t ds_seed = derive_seed(seed, "downstream");
        const Dataset ds_tr = seed_train_set(cfg, ws, seed);
        const SplitPair selection = split_dataset(ds_tr, cfg.search.split_ratio, ds_seed);

        Network start_net = build_mixup_network(
            ws.spec, ws.pretrained, cfg.rank, cfg.search.alpha_init_mean,
            cfg.search.alpha_init_stddev, derive_seed(ds_seed, "alpha"),
            derive_seed(ds_seed, "head"));
        if (!cfg.reset_w && fs::exists(state_path)) {
            const NamedTensors state = load_checkpoint(state_path);
            std::size_t l = 0;
            for (MixupLinear* layer : start_net.mixup_layers()) {
                const std::string base = "hidden" + std::to_string(l);
                layer->task_weight->data = state.at(base + ".weight").data;
                layer->bias->data = state.at(base + ".bias").data;
                ++l;
            }
            for (Layer& layer : start_net.layers) {
                if (auto* p = std::get_if<PlainLinear>(&layer)) {
                    p->weight->data = state.at("head.weight").data;
                    p->bias->data = state.at("head.bias").data;
                }
            }
        }

        const Timer finetune_timer;
        GridChoice best = select_over_grid(
            cfg, ds_tr, selection.val_indices, ws.metric, seed,
            [&]() { return clone_network(start_net); }, coefficients, logger.observer());
        outcomes[i].finetune_seconds = finetune_timer.seconds();
        outcomes[i].value = evaluate_network(best.net, ws.test, ws.metric);
        outcomes[i].total_seconds = total_timer.seconds();
        save_checkpoint(export_effective_weights(best.net), seed_dir / "checkpoint.bin");
    });

    std::vector<double> values;
    std::vector<PhaseTiming> timings;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        values.push_back(outcomes[i].value);
        timings.push_back({cfg.seeds[i], "search", 0.0});
        timings.push_back({cfg.seeds[i], "finetune", outcomes[i].finetune_seconds});
        timings.push_back({cfg.seeds[i], "total", outcomes[i].total_seconds});
    }
    ExperimentReport report =
        make_report(method_name(cfg.method), cfg.dataset_name, metric_name(ws.metric), cfg.seeds,
                    std::move(values), std::move(timings));
    persist_run(cfg, report);
    return report;
}

void cmd_report(const std::vector<fs::path>& run_dirs, std::ostream& table_out,
                const std::optional<fs::path>& csv_out) {
    struct Row {
        ExperimentReport report;
        double train_seconds = 0.0;
    };
    std::vector<Row> rows;
    double vanilla_seconds = -1.0;
    for (const fs::path& dir : run_dirs) {
        const fs::path report_path = dir / "report.csv";
        if (!fs::exists(report_path)) {
            std::cerr << "skipping " << dir.string() << ": no report.csv\n";
            continue;
        }
        Row row;
        try {
            row.report = read_report_csv(report_path);
        } catch (const Error& e) {
            std::cerr << "skipping " << dir.string() << ": " << e.what() << "\n";
            continue;
        }
        if (fs::exists(dir / "timings.csv")) {
            for (const PhaseTiming& t : read_timings_csv(dir / "timings.csv")) {
                if (t.phase == "search" || t.phase == "finetune") {
                    row.train_seconds += t.seconds;
                }
            }
        }
        if (row.report.method == "vanilla" && row.train_seconds > 0.0) {
            vanilla_seconds = row.train_seconds;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw ConfigError("no completed runs to report");
    }

    table_out << std::left << std::setw(14) << "method" << std::setw(12) << "dataset"
              << std::setw(10) << "metric" << std::right << std::setw(10) << "mean"
              << std::setw(10) << "std" << std::setw(6) << "n" << std::setw(16)
              << "time_vs_vanilla" << "\n";
    std::ostringstream csv;
    csv << "method,dataset,metric,mean,std,n,train_seconds,time_vs_vanilla\n";
    for (const Row& row : rows) {
        const ExperimentReport& r = row.report;
        std::string ratio = "-";
        if (vanilla_seconds > 0.0 && row.train_seconds > 0.0) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", row.train_seconds / vanilla_seconds);
            ratio = buf;
        }
        char mean_buf[32], std_buf[32];
        std::snprintf(mean_buf, sizeof(mean_buf), "%.4f", r.mean);
        std::snprintf(std_buf, sizeof(std_buf), "%.4f", r.stddev);
        table_out << std::left << std::setw(14) << r.method << std::setw(12) << r.dataset
                  << std::setw(10) << r.metric << std::right << std::setw(10) << mean_buf
                  << std::setw(10) << std_buf << std::setw(6) << r.values.size() << std::setw(16)
                  << ratio << "\n";
        csv << r.method << ',' << r.dataset << ',' << r.metric << ',' << g17(r.mean) << ','
            << g17(r.stddev) << ',' << r.values.size() << ',' << g17(row.train_seconds) << ','
            << (ratio == "-" ? "" : ratio) << '\n';
    }
    if (csv_out.has_value()) {
        std::ofstream out(*csv_out, std::ios::trunc);
        if (!out) {
            throw ConfigError("cannot open " + csv_out->string() + " for writing");
        }
        out << csv.str();
    }
}

}  // namespace mixtune::pipeline
