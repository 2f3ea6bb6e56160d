#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mixtune/errors.hpp"
#include "mixtune/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using mixtune::pipeline::RunConfig;

struct CommonArgs {
    std::string config_path;
    std::optional<long> seed;
    std::optional<std::string> out;
    bool reset_w = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_reset = false) {
    cmd->add_option("--config", args.config_path, "run configuration file")->required();
    cmd->add_option("--seed", args.seed, "override the config seed list with one seed");
    cmd->add_option("--out", args.out, "override the output directory");
    if (with_reset) {
        cmd->add_flag("--reset-w", args.reset_w,
                      "start the finetune phase from the pretrained weights instead of the "
                      "search-phase task weights");
    }
}

RunConfig load_config(const CommonArgs& args) {
    mixtune::KvConfig kv = mixtune::KvConfig::parse_file(args.config_path);
    if (args.seed.has_value()) {
        kv.set("seeds", std::to_string(*args.seed));
    }
    if (args.out.has_value()) {
        kv.set("out", *args.out);
    }
    if (args.reset_w) {
        kv.set("finetune.reset_w", "true");
    }
    return mixtune::pipeline::run_config_from_kv(kv);
}

void print_report(const mixtune::pipeline::ExperimentReport& report) {
    std::cout << report.method << " on " << report.dataset << ": " << report.metric << " = "
              << report.mean << " +/- " << report.stddev << " over " << report.values.size()
              << " seed(s)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-guided weight-mixup finetuning engine"};
    app.require_subcommand(1);

    CommonArgs pretrain_args, search_args, finetune_args, run_args, baseline_args;
    std::vector<std::string> report_dirs;
    std::string report_csv;

    CLI::App* pretrain = app.add_subcommand("pretrain", "train the source model checkpoint");
    add_common(pretrain, pretrain_args);

    CLI::App* search = app.add_subcommand("search", "bi-level search for mixing coefficients");
    add_common(search, search_args);

    CLI::App* finetune =
        app.add_subcommand("finetune", "frozen-coefficient finetune from saved search artifacts");
    add_common(finetune, finetune_args, true);

    CLI::App* run = app.add_subcommand("run", "search + finetune end to end");
    add_common(run, run_args, true);

    CLI::App* baseline =
        app.add_subcommand("baseline", "vanilla / joint / random_alpha / model_soup runs");
    add_common(baseline, baseline_args);

    CLI::App* report = app.add_subcommand("report", "aggregate completed run directories");
    report->add_option("dirs", report_dirs, "run directories")->required()->expected(-1);
    report->add_option("--out", report_csv, "write the combined CSV to this path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) {
            mixtune::pipeline::cmd_pretrain(load_config(pretrain_args));
        } else if (search->parsed()) {
            mixtune::pipeline::cmd_search(load_config(search_args));
            std::cout << "search artifacts written\n";
        } else if (finetune->parsed()) {
            print_report(mixtune::pipeline::cmd_finetune(load_config(finetune_args)));
        } else if (run->parsed()) {
            print_report(mixtune::pipeline::cmd_run(load_config(run_args)));
        } else if (baseline->parsed()) {
            print_report(mixtune::pipeline::cmd_baseline(load_config(baseline_args)));
        } else if (report->parsed()) {
            std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
            std::optional<fs::path> csv;
            if (!report_csv.empty()) {
                csv = report_csv;
            }
            mixtune::pipeline::cmd_report(dirs, std::cout, csv);
        }
    } catch (const mixtune::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const mixtune::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
