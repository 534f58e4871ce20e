// Command-line front end: cost analysis, training runners, layer profiling,
// and the combination search. All artifacts land in the --out directory; the
// resolved configuration is echoed next to them so a run can be reproduced
// from its own outputs.

#include <CLI11.hpp>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "bconv/basisconv.hpp"
#include "bconv/config.hpp"
#include "bconv/costmodel.hpp"
#include "bconv/costoracle.hpp"
#include "bconv/pipeline.hpp"
#include "bconv/rng.hpp"

namespace fs = std::filesystem;
using namespace bconv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    int jobs = 0;
    bool overwrite = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "configuration file");
    if (config_required) opt->required();
    cmd->add_option("--out", flags.out_dir, "output directory (overrides run.out)");
    cmd->add_option("--seed", flags.seed, "master seed (overrides run.seed)");
    cmd->add_option("--jobs", flags.jobs, "worker threads for profiling");
    cmd->add_flag("--overwrite", flags.overwrite, "allow reuse of a non-empty output directory");
}

RunConfig load_config(const CommonFlags& flags) {
    ConfigFile file = flags.config_path.empty() ? ConfigFile{} : ConfigFile::load(flags.config_path);
    RunConfig cfg = parse_run_config(file);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(flags.seed);
        cfg.train.seed = cfg.seed;
    }
    if (flags.jobs > 0) cfg.jobs = flags.jobs;
    if (flags.overwrite) cfg.overwrite = true;
    return cfg;
}

// Creates the output directory and echoes the resolved config. A directory
// that already holds a run is refused unless --overwrite is given.
void prepare_out_dir(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const fs::path echo_path = fs::path(cfg.out_dir) / "config_echo.ini";
    if (fs::exists(echo_path) && !cfg.overwrite) {
        throw ConfigError("output directory already holds a run (use --overwrite): " +
                          cfg.out_dir);
    }
    write_text_file(echo_path.string(), echo_config(cfg));
}

std::pair<Dataset, Dataset> load_data(const RunConfig& cfg) {
    if (cfg.data_source == "cifar10") {
        if (cfg.data_dir.empty()) throw ConfigError("data.dir required for cifar10");
        return load_cifar10(cfg.data_dir, cfg.max_per_class);
    }
    return synth_dataset(cfg.n_per_class, cfg.model.num_classes, cfg.model.image_size, cfg.seed);
}

void write_metrics(const RunConfig& cfg, const std::string& stem, const MetricsLog& log) {
    write_text_file((fs::path(cfg.out_dir) / (stem + ".csv")).string(), log.to_csv());
    std::ostringstream plot;
    plot.precision(17);
    plot << "epoch,valid_acc\n";
    for (const MetricsRow& r : log.rows) plot << r.epoch << ',' << r.valid_acc << '\n';
    write_text_file((fs::path(cfg.out_dir) / (stem + "_accuracy_vs_epoch.csv")).string(),
                    plot.str());
}

SkipConfig skip_from_config(const RunConfig& cfg) {
    SkipConfig skip;
    skip.skip = cfg.skip;
    skip.basis_layers = cfg.basis_layers;
    skip.mode = cfg.basis_mode;
    skip.r_or_alpha = cfg.r_or_alpha;
    skip.beta = cfg.beta;
    return skip;
}

// ---- cost -----------------------------------------------------------------

struct ArchEntry {
    std::string name;
    ConvSpec spec;
};

std::vector<ArchEntry> arch_from_file(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<ArchEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        std::istringstream ls(line);
        ArchEntry e;
        std::int64_t c_in, c_out, k, stride, padding, h_in, w_in;
        if (!(ls >> e.name)) continue;  // blank line
        if (!(ls >> c_in >> c_out >> k >> stride >> padding >> h_in >> w_in)) {
            throw ConfigError("arch file line " + std::to_string(lineno) +
                              ": expected 'name c_in c_out k stride padding h_in w_in'");
        }
        e.spec = make_conv_spec(c_in, c_out, k, stride, padding, h_in, w_in);
        entries.push_back(e);
    }
    if (entries.empty()) throw ConfigError("arch file holds no layers: " + path);
    return entries;
}

std::vector<ArchEntry> arch_from_model(const RunConfig& cfg) {
    Model model = build_model(cfg.model, cfg.seed, nullptr);
    std::vector<ArchEntry> entries;
    for (int idx : model.conv_nodes) {
        entries.push_back({model.nodes[idx].name, model.nodes[idx].conv.spec});
    }
    return entries;
}

int cmd_cost(const CommonFlags& flags, const std::string& arch_file, const std::string& mode_arg) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);
    const std::vector<ArchEntry> entries =
        arch_file.empty() ? arch_from_model(cfg) : arch_from_file(arch_file);

    std::vector<BasisMode> modes;
    if (mode_arg == "all") {
        modes = {BasisMode::Full, BasisMode::WeightCompose, BasisMode::OutputCompose,
                 BasisMode::RestrictedCompose};
    } else {
        modes = {basis_mode_from_string(mode_arg)};
    }

    std::ostringstream csv;
    csv << cost_csv_header() << '\n';
    std::cout << "layer            mode                 r   n0_f        nb_f        delta_b     "
                 "delta_c     fwd_thr  accel\n";
    for (const ArchEntry& e : entries) {
        for (BasisMode mode : modes) {
            std::int64_t r = 0;
            double alpha = cfg.r_or_alpha, beta = cfg.beta;
            if (mode == BasisMode::WeightCompose || mode == BasisMode::OutputCompose) {
                r = resolve_basis_count(e.spec, cfg.r_or_alpha);
            } else if (mode == BasisMode::RestrictedCompose && alpha >= 1.0) {
                alpha = std::min(1.0, alpha / static_cast<double>(e.spec.c_out));
            }
            const CostReport rep = report(e.spec, mode, r, alpha, beta);
            csv << cost_csv_row(e.name, rep) << '\n';
            std::ostringstream row;
            row.precision(6);
            row << e.name;
            row << std::string(e.name.size() < 17 ? 17 - e.name.size() : 1, ' ');
            row << to_string(rep.mode) << std::string(21 - std::string(to_string(rep.mode)).size(), ' ');
            row << rep.r << "   " << rep.n0_f << "  " << rep.nb_f << "  " << rep.delta_b << "  "
                << rep.delta_c << "  " << rep.forward_threshold << "  "
                << (rep.mode == BasisMode::RestrictedCompose
                        ? (rep.mode_c_accelerated ? "C-yes" : "C-no")
                        : (rep.total_accelerated_b ? "B-yes" : "B-no"));
            std::cout << row.str() << '\n';
        }
    }
    write_text_file((fs::path(cfg.out_dir) / "cost.csv").string(), csv.str());
    return kExitOk;
}

// Re-derives every count column of a cost CSV with the loop oracles and
// reports the number of mismatching cells.
int cmd_verify_costs(const std::string& csv_path) {
    std::istringstream in(read_text_file(csv_path));
    std::string line;
    if (!std::getline(in, line) || line != cost_csv_header()) {
        throw ConfigError("not a cost CSV (bad header): " + csv_path);
    }
    std::int64_t mismatches = 0, rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() < 21) throw ConfigError("short cost CSV row: " + line);
        ConvSpec spec;
        spec.c_in = std::stoll(cells[2]);
        spec.c_out = std::stoll(cells[3]);
        spec.k = std::stoll(cells[4]);
        spec.stride = std::stoll(cells[5]);
        spec.padding = std::stoll(cells[6]);
        spec.h_out = std::stoll(cells[7]);
        spec.w_out = std::stoll(cells[8]);
        const std::int64_t r = std::stoll(cells[9]);
        const double alpha = std::stod(cells[10]);
        const double beta = std::stod(cells[11]);
        const BasisMode mode = basis_mode_from_string(cells[1]);

        auto expect = [&](std::size_t col, std::int64_t oracle_value) {
            if (std::stoll(cells[col]) != oracle_value) ++mismatches;
        };
        expect(14, mac_count_forward(spec, BasisMode::Full, spec.c_out, 0.0, 0.0));
        expect(18, dependency_count_backward(spec, BasisMode::Full, spec.c_out, 0.0, 0.0));
        if (mode != BasisMode::Full) {
            expect(15, mac_count_forward(spec, BasisMode::WeightCompose, r, 0.0, 0.0));
            expect(16, mac_count_forward(spec, BasisMode::OutputCompose, r, 0.0, 0.0));
            expect(17, mac_count_forward(spec, BasisMode::RestrictedCompose, r, alpha, beta));
            expect(19, dependency_count_backward(spec, BasisMode::OutputCompose, r, 0.0, 0.0));
            expect(20, dependency_count_backward(spec, BasisMode::RestrictedCompose, r, alpha, beta));
        }
    }
    std::cout << rows << " rows checked, " << mismatches << " mismatches\n";
    return mismatches == 0 ? kExitOk : 1;
}

// ---- runners ----------------------------------------------------------------

int finish_run(const RunConfig& cfg, const std::string& stem, const RunResult& run) {
    write_metrics(cfg, stem, run.log);
    if (run.diverged) {
        std::cerr << "training diverged; partial log kept\n";
        return kExitDiverged;
    }
    save_checkpoint(run.model, (fs::path(cfg.out_dir) / (stem + ".ckpt")).string());
    std::cout << stem << ": final valid accuracy " << run.log.final_valid_acc() << ", "
              << run.log.total_seconds() << " s\n";
    return kExitOk;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);
    auto [train_data, valid_data] = load_data(cfg);
    RunResult run =
        train_baseline(cfg.model, cfg.train, train_data, valid_data, cfg.timer, cfg.augment);
    return finish_run(cfg, "train", run);
}

int cmd_skip_train(const CommonFlags& flags) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);
    auto [train_data, valid_data] = load_data(cfg);
    RunResult run = skip_train(cfg.model, cfg.train, skip_from_config(cfg), train_data,
                               valid_data, cfg.timer, cfg.augment);
    if (run.transition_epoch >= 0) {
        std::cout << "transition after epoch " << run.transition_epoch
                  << " (valid acc before/after: " << run.transition_pre_acc << " / "
                  << run.transition_post_acc << ")\n";
    }
    return finish_run(cfg, "skip_train", run);
}

int cmd_sanity(const CommonFlags& flags, const std::string& checkpoint) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);
    auto [train_data, valid_data] = load_data(cfg);

    Model pretrained;
    const Model* pretrained_ptr = nullptr;
    if (!checkpoint.empty()) {
        pretrained = load_checkpoint(checkpoint);
        pretrained_ptr = &pretrained;
    }
    SanityReport rep =
        sanity_check(cfg.model, cfg.train, cfg.extraction, cfg.r_fractions, train_data,
                     valid_data, cfg.resume_fraction, cfg.timer, cfg.augment, pretrained_ptr);

    std::ostringstream csv;
    csv.precision(17);
    csv << "r_fraction,extracted_params,pre_resume_acc,final_acc,baseline_acc,random_acc,"
           "copy_paste_acc\n";
    for (const SanityOutcome& o : rep.outcomes) {
        csv << o.r_fraction << ',' << o.extracted_params << ',' << o.pre_resume_acc << ','
            << o.final_acc << ',' << rep.baseline_final_acc << ',' << rep.random_final_acc << ','
            << rep.copy_paste_final_acc << '\n';
    }
    write_text_file((fs::path(cfg.out_dir) / "sanity.csv").string(), csv.str());
    std::cout << "sanity: baseline " << rep.baseline_final_acc << ", copy-paste "
              << rep.copy_paste_final_acc << ", random " << rep.random_final_acc << "\n";
    return kExitOk;
}

int cmd_profile(const CommonFlags& flags) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);
    auto [train_data, valid_data] = load_data(cfg);

    BasisApplication tmpl;
    tmpl.mode = cfg.basis_mode;
    tmpl.r_or_alpha = cfg.r_or_alpha;
    tmpl.beta = cfg.beta;

    const SensitivityRecord baseline =
        profile_baseline(cfg.model, cfg.train, train_data, valid_data, cfg.timer, cfg.augment);
    Model probe = build_model(cfg.model, cfg.seed, nullptr);
    const int layer_count = static_cast<int>(probe.conv_nodes.size());

    std::vector<SensitivityRecord> records(static_cast<std::size_t>(layer_count));
    std::atomic<int> next{1};
    auto worker = [&]() {
        for (int ordinal = next.fetch_add(1); ordinal <= layer_count;
             ordinal = next.fetch_add(1)) {
            records[ordinal - 1] = profile_layer(cfg.model, ordinal, cfg.train, tmpl, baseline,
                                                 train_data, valid_data, cfg.timer, cfg.augment);
        }
    };
    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    write_text_file((fs::path(cfg.out_dir) / "profile.csv").string(),
                    records_csv(records, baseline));
    std::cout << "profiled " << layer_count << " layers + baseline\n";
    return kExitOk;
}

int cmd_search(const CommonFlags& flags, const std::string& profile_csv,
               const std::string& estimates_csv_path, double baseline_time_arg) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);

    std::vector<CombinationEstimate> cloud;
    SensitivityRecord baseline;
    if (!profile_csv.empty()) {
        std::vector<SensitivityRecord> records;
        parse_records_csv(read_text_file(profile_csv), records, baseline);
        LimitPolicy policy;
        policy.sample_count = cfg.sample_count;
        policy.seed = derive_seed(cfg.seed, "search/sampling");
        cloud = enumerate_combinations(records, baseline, policy);
    } else if (!estimates_csv_path.empty()) {
        // Pre-built estimate cloud: selection only, no enumeration.
        if (!(baseline_time_arg > 0.0)) {
            throw ConfigError("--estimates needs --baseline-time");
        }
        cloud = parse_estimates_csv(read_text_file(estimates_csv_path));
        baseline.train_time = baseline_time_arg;
    } else {
        throw ConfigError("search needs --profile or --estimates");
    }

    write_text_file((fs::path(cfg.out_dir) / "estimates.csv").string(),
                    estimates_csv(cloud, baseline.final_accuracy));
    {
        std::ostringstream time_plot, size_plot;
        time_plot.precision(17);
        size_plot.precision(17);
        time_plot << "time_s,drop\n";
        size_plot << "params,drop\n";
        for (const auto& e : cloud) {
            time_plot << e.est_time << ',' << e.est_drop << '\n';
            size_plot << e.est_size << ',' << e.est_drop << '\n';
        }
        write_text_file((fs::path(cfg.out_dir) / "drop_vs_time.csv").string(), time_plot.str());
        write_text_file((fs::path(cfg.out_dir) / "drop_vs_size.csv").string(), size_plot.str());
    }

    const ParetoSelection sel = pareto_select(cloud, baseline.train_time, cfg.n_buckets);
    if (sel.none_below_baseline) {
        std::cerr << "warning: no combination estimate beats the baseline time\n";
    }
    std::ostringstream selected;
    selected.precision(17);
    selected << "bitmask,layers,drop,time_s,params\n";
    for (const auto& e : sel.selected) {
        selected << e.subset << ',' << '"' << subset_to_string(e.subset) << '"' << ','
                 << e.est_drop << ',' << e.est_time << ',' << e.est_size << '\n';
    }
    write_text_file((fs::path(cfg.out_dir) / "selected.csv").string(), selected.str());
    {
        std::ostringstream plot;
        plot.precision(17);
        plot << "time_s,drop\n";
        for (const auto& e : sel.selected) plot << e.est_time << ',' << e.est_drop << '\n';
        write_text_file((fs::path(cfg.out_dir) / "selected_drop_vs_time.csv").string(),
                        plot.str());
    }
    std::cout << "selected " << sel.selected.size() << " combinations out of " << cloud.size()
              << " estimates\n";
    for (const auto& e : sel.selected) {
        std::cout << "  " << subset_to_string(e.subset) << "  time " << e.est_time << "  drop "
                  << e.est_drop << "\n";
    }
    return kExitOk;
}

int cmd_run_selected(const CommonFlags& flags, const std::string& selected_csv,
                     const std::string& combos_arg) {
    RunConfig cfg = load_config(flags);
    prepare_out_dir(cfg);
    auto [train_data, valid_data] = load_data(cfg);

    std::vector<std::set<int>> combos;
    if (!combos_arg.empty()) {
        std::istringstream in(combos_arg);
        std::string part;
        while (std::getline(in, part, ';')) combos.push_back(parse_layer_set(part));
    } else if (!selected_csv.empty()) {
        std::istringstream in(read_text_file(selected_csv));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            combos.push_back(mask_to_subset(std::stoull(line.substr(0, line.find(',')))));
        }
    } else {
        throw ConfigError("run-selected needs --selected CSV or --combos");
    }
    if (combos.empty()) throw ConfigError("no combinations to run");

    RunResult baseline =
        train_baseline(cfg.model, cfg.train, train_data, valid_data, cfg.timer, cfg.augment);
    write_metrics(cfg, "baseline", baseline.log);

    SkipConfig tmpl = skip_from_config(cfg);
    std::vector<RunResult> runs = run_selected_combinations(cfg.model, cfg.train, combos, tmpl,
                                                            train_data, valid_data, cfg.timer,
                                                            cfg.augment);
    bool any_diverged = baseline.diverged;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        write_metrics(cfg, "combo_" + std::to_string(i), runs[i].log);
        any_diverged = any_diverged || runs[i].diverged;
    }
    write_text_file((fs::path(cfg.out_dir) / "summary.csv").string(),
                    combinations_summary_csv(combos, runs, baseline));
    std::cout << "ran " << runs.size() << " combinations; baseline acc "
              << baseline.log.final_valid_acc() << "\n";
    return any_diverged ? kExitDiverged : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"basis-convolution training engine and acceleration planner"};
    app.require_subcommand(1);

    CommonFlags cost_flags, train_flags, skip_flags, sanity_flags, profile_flags, search_flags,
        selected_flags;
    std::string arch_file, cost_mode = "all", verify_csv, sanity_ckpt, profile_csv, selected_csv,
                combos_arg, estimates_csv_arg;
    double baseline_time_arg = 0.0;

    auto* cost = app.add_subcommand("cost", "closed-form operation counts per layer and mode");
    add_common(cost, cost_flags, false);
    cost->add_option("--arch", arch_file, "arch file: name c_in c_out k stride padding h_in w_in");
    cost->add_option("--mode", cost_mode, "full|weight|output|restricted|all");

    auto* verify = app.add_subcommand("verify-costs", "re-check a cost CSV with the loop oracles");
    verify->add_option("--csv", verify_csv, "cost CSV produced by the cost subcommand")
        ->required();

    auto* train = app.add_subcommand("train", "standard training run");
    add_common(train, train_flags);

    auto* skip = app.add_subcommand("skip-train", "basis phase, composition, continuation");
    add_common(skip, skip_flags);

    auto* sanity = app.add_subcommand("sanity", "extraction and resume protocol");
    add_common(sanity, sanity_flags);
    sanity->add_option("--checkpoint", sanity_ckpt, "trained checkpoint to extract from");

    auto* profile = app.add_subcommand("profile", "one-layer-only sensitivity runs");
    add_common(profile, profile_flags);

    auto* search = app.add_subcommand("search", "enumerate combinations and select the frontier");
    add_common(search, search_flags);
    search->add_option("--profile", profile_csv, "profiling CSV (profile subcommand output)");
    search->add_option("--estimates", estimates_csv_arg,
                       "pre-built estimates CSV (skip enumeration, select only)");
    search->add_option("--baseline-time", baseline_time_arg,
                       "baseline time for --estimates input");

    auto* selected = app.add_subcommand("run-selected", "skip-train the chosen combinations");
    add_common(selected, selected_flags);
    selected->add_option("--selected", selected_csv, "selected.csv from the search subcommand");
    selected->add_option("--combos", combos_arg, "inline combinations, e.g. '4,15;12,15,20'");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cost->parsed()) return cmd_cost(cost_flags, arch_file, cost_mode);
        if (verify->parsed()) return cmd_verify_costs(verify_csv);
        if (train->parsed()) return cmd_train(train_flags);
        if (skip->parsed()) return cmd_skip_train(skip_flags);
        if (sanity->parsed()) return cmd_sanity(sanity_flags, sanity_ckpt);
        if (profile->parsed()) return cmd_profile(profile_flags);
        if (search->parsed()) {
            return cmd_search(search_flags, profile_csv, estimates_csv_arg, baseline_time_arg);
        }
        if (selected->parsed()) return cmd_run_selected(selected_flags, selected_csv, combos_arg);
    } catch (const DivergedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
