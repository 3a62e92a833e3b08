// rrouter: command-line front end.
//
//   rrouter gen-data  --out DIR [--n N --seed S ...]
//   rrouter estimate  --data FILE --lambda-grid L0,L1,.. --out DIR
//   rrouter train     --data FILE --method M --lambda L --out DIR
//   rrouter sweep     --data FILE --method M1,M2 --lambda-grid .. --out DIR
//   rrouter interval  --data FILE --lambda-grid .. --eval-lambdas .. --out DIR
//
// Every option can also come from an INI file passed with --config; keys in a
// [sweep] section apply to the sweep command and so on. Progress goes to
// stderr as metric=value lines. Exit codes: 0 ok, 2 config, 3 data, 4 other.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "regret_router.hpp"

namespace {

using namespace rr;

struct Options {
    std::string data, world, out, format = "csv";
    std::vector<std::string> methods;
    std::string lambda_grid = "0,100,200,300,400,500,600,700,800,900,1000";
    std::string eval_lambdas = "100,300,500,700,900";
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t trials = 10;

    TrainConfig train;
    double interval_tau = 1000.0;
    std::size_t knn_k = 50;
    bool no_clip = false;
    double clip_lower = 5.0, clip_upper = 95.0;
    std::size_t propensity_iterations = 500;
    double validation_fraction = 0.1, test_fraction = 0.1;

    std::size_t n = 2000;
    WorldSpec world_spec;
    std::string logging = "softmax_accuracy";
};

void add_training_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--max-epochs", o.train.max_epochs, "Epoch budget")->capture_default_str();
    cmd->add_option("--patience", o.train.patience, "Early-stopping patience")->capture_default_str();
    cmd->add_option("--batch-size", o.train.batch_size)->capture_default_str();
    cmd->add_option("--lr", o.train.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--tau", o.train.tau, "Softmax temperature of rm_softmax")->capture_default_str();
    cmd->add_option("--hidden", o.train.hidden, "Hidden width")->capture_default_str();
    cmd->add_option("--knn-k", o.knn_k, "Neighbours for carrot_knn")->capture_default_str();
    cmd->add_flag("--no-clip", o.no_clip, "Disable propensity-weight clipping");
    cmd->add_option("--clip-lower", o.clip_lower, "Lower clipping percentile")->capture_default_str();
    cmd->add_option("--clip-upper", o.clip_upper, "Upper clipping percentile")->capture_default_str();
    cmd->add_option("--propensity-iterations", o.propensity_iterations)->capture_default_str();
    cmd->add_option("--validation-fraction", o.validation_fraction)->capture_default_str();
    cmd->add_option("--test-fraction", o.test_fraction)->capture_default_str();
}

/// Comma-separated list kept as one string; config files split such values
/// into items, which are joined back here.
CLI::Option* add_list_option(CLI::App* cmd, const std::string& name, std::string& target, const std::string& desc) {
    return cmd->add_option(name, target, desc)->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::Join);
}

void add_data_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--data", o.data, "Full-feedback or observational CSV/JSONL file")->required();
    cmd->add_option("--world", o.world, "World file; its logging policy replaces the default when redrawing treatments");
}

std::vector<double> parse_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::string_view rest(s);
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const auto item = rest.substr(0, comma);
        try {
            out.push_back(parse_double(item, what));
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
    return out;
}

std::vector<PolicyKind> parse_methods(const std::vector<std::string>& raw, std::vector<PolicyKind> fallback) {
    std::vector<PolicyKind> out;
    for (const auto& entry : raw) {
        std::string_view rest(entry);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            if (const auto name = rest.substr(0, comma); !name.empty()) out.push_back(parse_policy_kind(name));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    }
    return out.empty() ? fallback : out;
}

ExperimentConfig experiment_config(const Options& o) {
    ExperimentConfig c;
    c.train = o.train;
    c.train.seed = o.seed;
    c.interval_tau = o.interval_tau;
    c.knn_k = o.knn_k;
    c.clip = {!o.no_clip, o.clip_lower, o.clip_upper};
    c.propensity.iterations = o.propensity_iterations;
    c.fractions = {1.0 - o.validation_fraction - o.test_fraction, o.validation_fraction, o.test_fraction};
    c.jobs = o.jobs;
    c.seeds.clear();
    if (o.trials == 0) throw ConfigError("trials must be >= 1");
    for (std::size_t k = 0; k < o.trials; ++k) c.seeds.push_back(o.seed + k);
    return c;
}

void log_metric(const std::string& line) { std::cerr << line << '\n'; }

std::string metric(const std::string& key, double v) { return key + '=' + format_double(v) + '\n'; }

/// Writes every file to a temporary sibling first and only then renames, so
/// a failure leaves none of the outputs behind.
void commit(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir);
    std::vector<fs::path> tmps;
    auto cleanup = [&] {
        for (const auto& t : tmps) fs::remove(t, ec);
    };
    for (const auto& [name, content] : files) {
        const fs::path tmp = fs::path(dir) / (name + ".tmp");
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (os) tmps.push_back(tmp);
        os << content;
        os.flush();
        if (!os) {
            cleanup();
            throw DataError("cannot write " + tmp.string());
        }
    }
    for (std::size_t k = 0; k < files.size(); ++k) {
        fs::rename(tmps[k], fs::path(dir) / files[k].first, ec);
        if (ec) {
            cleanup();
            throw DataError("cannot move " + tmps[k].string() + " into place");
        }
    }
}

struct LoadedData {
    std::optional<std::vector<FullFeedbackRecord>> records;
    Dataset observational;
    std::optional<SyntheticWorld> world;
};

/// Observational view of the input. Full-feedback files get treatments drawn
/// per seed; observational files are used as logged.
LoadedData load_data(const Options& o, std::uint64_t draw_seed) {
    LoadedData d;
    if (!o.world.empty()) d.world = load_world(o.world);
    if (detect_kind(o.data) == DataKind::full_feedback) {
        d.records = read_full_feedback(o.data);
        d.observational = d.world ? observe(*d.world, *d.records, draw_seed) : make_observational(*d.records, draw_seed);
    } else {
        d.observational = read_observational(o.data);
    }
    return d;
}

ExperimentData experiment_data(const Options& o) {
    if (detect_kind(o.data) != DataKind::full_feedback) throw DataError("evaluation needs a full-feedback file: " + o.data);
    ExperimentData e;
    e.records = read_full_feedback(o.data);
    if (!o.world.empty()) e.world = load_world(o.world);
    return e;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o) {
    WorldSpec spec = o.world_spec;
    spec.logging = parse_logging_kind(o.logging);
    spec.seed = o.seed;
    if (o.n == 0) throw ConfigError("n must be >= 1");
    if (o.format != "csv" && o.format != "jsonl") throw ConfigError("format must be csv or jsonl");
    const FileFormat fmt = o.format == "csv" ? FileFormat::csv : FileFormat::jsonl;
    const SyntheticWorld w = make_world(spec);
    const GeneratedData g = generate(w, o.n, o.seed + 1);
    commit(o.out, {{"full_feedback." + o.format, full_feedback_text(g.records, fmt)},
                   {"observational." + o.format, observational_text(g.observational, fmt)},
                   {"world.json", world_to_json(w).dump(1) + '\n'}});
    log_metric("rows=" + std::to_string(o.n));
    return 0;
}

int cmd_estimate(const Options& o) {
    const ExperimentConfig cfg = experiment_config(o);
    const auto lambdas = parse_list(o.lambda_grid, "lambda");
    const LoadedData d = load_data(o, o.seed);
    const Dataset ds = split_dataset(d.observational, cfg.fractions, o.seed);
    const PropensityModel prop = fit_propensity(ds, cfg.propensity);
    std::vector<std::pair<std::string, std::string>> files;
    std::string metrics;
    for (double lv : lambdas) {
        const CostSensitivity lambda(lv);
        TrainConfig tc = cfg.train;
        tc.seed = o.seed;
        const UtilityMatrix um = dr_estimate(ds, fit_outcome(ds, lambda, tc), prop, lambda, cfg.clip);
        files.push_back({"utility_lambda_" + format_double(lv) + ".csv", utility_matrix_text(um)});
        for (std::size_t t = 0; t < ds.T; ++t) {
            const std::string key = "dr_mean_lambda_" + format_double(lv) + "_t" + std::to_string(t);
            const double m = um.values.col(static_cast<Eigen::Index>(t)).mean();
            metrics += metric(key, m);
            log_metric(key + '=' + format_double(m));
        }
    }
    std::string split;
    for (auto s : ds.split) split += std::string(to_string(s)) + '\n';
    files.push_back({"split.txt", split});
    files.push_back({"metrics.txt", metrics});
    commit(o.out, files);
    return 0;
}

int cmd_train(const Options& o) {
    const auto kinds = parse_methods(o.methods, {PolicyKind::rm_softmax});
    if (kinds.size() != 1) throw ConfigError("train takes exactly one method");
    const PolicyKind kind = kinds.front();
    const ExperimentConfig cfg = experiment_config(o);
    const CostSensitivity lambda(o.lambda);
    const LoadedData d = load_data(o, o.seed);
    const Dataset ds = split_dataset(d.observational, cfg.fractions, o.seed);
    TrainConfig tc = cfg.train;
    tc.seed = o.seed;

    std::optional<UtilityMatrix> um;
    if (needs_counterfactual(kind)) {
        const PropensityModel prop = fit_propensity(ds, cfg.propensity);
        um = dr_estimate(ds, fit_outcome(ds, lambda, tc), prop, lambda, cfg.clip);
    }
    std::string metrics = metric("lambda", o.lambda);
    std::string history;
    std::optional<RouterPolicy> policy;
    auto train_net = [&](const Dataset& tds, const UtilityMatrix& tum, const LossSpec& spec) {
        const TrainResult r = train(tds, tum, spec, tc);
        history = "epoch,validation_metric\n";
        for (std::size_t e = 0; e < r.val_history.size(); ++e) history += std::to_string(e) + ',' + format_double(r.val_history[e]) + '\n';
        metrics += metric("best_epoch", static_cast<double>(r.best_epoch)) + metric("epochs_run", static_cast<double>(r.epochs_run)) +
                   metric("validation_regret", r.best_metric);
        log_metric("validation_regret=" + format_double(r.best_metric));
        return r.params;
    };
    switch (kind) {
        case PolicyKind::baseline_decoupled: policy = fit_baseline_decoupled(ds, lambda, tc); break;
        case PolicyKind::regress_compare: policy = fit_regress_compare(*um, ds, tc); break;
        case PolicyKind::carrot_knn: policy = fit_carrot_knn(*um, ds, cfg.knn_k); break;
        case PolicyKind::cf_regression: policy = RouterPolicy::from_network(kind, lambda, train_net(ds, *um, LossSpec::cf_regression())); break;
        case PolicyKind::rm_classification:
            policy = RouterPolicy::from_network(kind, lambda, train_net(ds, *um, LossSpec::rm_classification()));
            break;
        case PolicyKind::rm_softmax: policy = RouterPolicy::from_network(kind, lambda, train_net(ds, *um, LossSpec::rm_softmax(tc.tau))); break;
        case PolicyKind::full_feedback: {
            if (!d.records) throw DataError("full_feedback needs a full-feedback file");
            const Dataset fds = records_as_dataset(*d.records, ds.split);
            policy = RouterPolicy::from_network(kind, lambda, train_net(fds, true_utility_matrix(*d.records, lambda), LossSpec::rm_classification()));
            break;
        }
    }
    if (d.records) {
        std::vector<FullFeedbackRecord> test;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.split[i] == Split::test) test.push_back((*d.records)[i]);
        const TrialResult r = evaluate_policy(*policy, test, lambda);
        metrics += metric("test_utility", 100.0 * r.utility) + metric("test_accuracy", r.accuracy) + metric("test_cost", r.cost) +
                   metric("test_regret", 100.0 * r.regret);
        log_metric("test_utility=" + format_double(100.0 * r.utility));
    }
    std::vector<std::pair<std::string, std::string>> files{{"policy.json", policy_to_json(*policy).dump() + '\n'}, {"metrics.txt", metrics}};
    if (!history.empty()) files.push_back({"history.csv", history});
    commit(o.out, files);
    return 0;
}

void write_reports(const std::string& dir, const std::vector<TrialResult>& results, bool with_curves) {
    const auto rows = summarize(results);
    std::vector<std::pair<std::string, std::string>> files{
        {"trials.csv", trials_csv(results)}, {"report.csv", report_csv(rows)}, {"report.txt", report_table(rows)}};
    if (with_curves) {
        files.push_back({"curves.csv", curves_csv(results)});
        files.push_back({"auc.csv", auc_csv(results)});
    }
    commit(dir, files);
    for (const auto& r : rows) log_metric("mean_utility method=" + r.method + " lambda=" + format_double(r.lambda) + " mean=" + format_double(r.mean) + " std=" + format_double(r.std));
}

int cmd_sweep(const Options& o) {
    ExperimentConfig cfg = experiment_config(o);
    cfg.methods = parse_methods(o.methods, {PolicyKind::baseline_decoupled, PolicyKind::regress_compare, PolicyKind::carrot_knn, PolicyKind::cf_regression,
                                            PolicyKind::rm_classification, PolicyKind::rm_softmax, PolicyKind::full_feedback});
    cfg.lambdas = parse_list(o.lambda_grid, "lambda");
    cfg.validate();
    const ExperimentData data = experiment_data(o);
    write_reports(o.out, run_trials(data, cfg, log_metric), true);
    return 0;
}

int cmd_interval(const Options& o) {
    const ExperimentConfig cfg = experiment_config(o);
    const LambdaGrid grid(parse_list(o.lambda_grid, "lambda"));
    const auto eval = parse_list(o.eval_lambdas, "evaluation lambda");
    cfg.validate();
    for (double l : eval) (void)grid.bracket(l);
    const ExperimentData data = experiment_data(o);
    write_reports(o.out, run_interval_trials(data, cfg, grid, eval, log_metric), false);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"Regret-minimizing cost-aware model routing"};
    app.set_config("--config", "", "INI file with one section per command");
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic world and draw data from it");
    gen->add_option("--out", o.out, "Output directory")->required();
    gen->add_option("--n", o.n, "Number of records")->capture_default_str();
    gen->add_option("--seed", o.seed, "World and sampling seed")->capture_default_str();
    gen->add_option("--format", o.format, "csv or jsonl")->capture_default_str();
    gen->add_option("--dim", o.world_spec.d, "Feature dimension")->capture_default_str();
    gen->add_option("--treatments", o.world_spec.T, "Number of models")->capture_default_str();
    gen->add_option("--logging", o.logging, "uniform, softmax_accuracy or adversarial")->capture_default_str();
    gen->add_option("--weight-scale", o.world_spec.weight_scale)->capture_default_str();
    gen->add_option("--bias-spread", o.world_spec.bias_spread)->capture_default_str();
    gen->add_option("--cost-weight-scale", o.world_spec.cost_weight_scale)->capture_default_str();
    gen->add_option("--min-cost-scale", o.world_spec.min_cost_scale)->capture_default_str();
    gen->add_option("--max-cost-scale", o.world_spec.max_cost_scale)->capture_default_str();
    gen->add_option("--noise-sigma", o.world_spec.noise_sigma)->capture_default_str();

    auto* est = app.add_subcommand("estimate", "Write doubly robust utility matrices");
    add_data_options(est, o);
    add_list_option(est, "--lambda-grid", o.lambda_grid, "Comma-separated cost sensitivities")->capture_default_str();
    est->add_option("--seed", o.seed)->capture_default_str();
    est->add_option("--out", o.out, "Output directory")->required();
    add_training_options(est, o);

    auto* tr = app.add_subcommand("train", "Fit one routing policy");
    add_data_options(tr, o);
    tr->add_option("--method", o.methods, "Policy kind")->delimiter(',');
    tr->add_option("--lambda", o.lambda, "Cost sensitivity")->capture_default_str();
    tr->add_option("--seed", o.seed)->capture_default_str();
    tr->add_option("--out", o.out, "Output directory")->required();
    add_training_options(tr, o);

    auto* sw = app.add_subcommand("sweep", "Multi-seed comparison over a lambda grid");
    add_data_options(sw, o);
    sw->add_option("--method", o.methods, "Comma-separated policy kinds")->delimiter(',');
    add_list_option(sw, "--lambda-grid", o.lambda_grid, "Comma-separated cost sensitivities")->capture_default_str();
    sw->add_option("--seed", o.seed, "First trial seed")->capture_default_str();
    sw->add_option("--trials", o.trials, "Number of seeds")->capture_default_str();
    sw->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
    sw->add_option("--out", o.out, "Output directory")->required();
    add_training_options(sw, o);

    auto* iv = app.add_subcommand("interval", "Train interval routers on a grid and evaluate at held-out lambdas");
    add_data_options(iv, o);
    add_list_option(iv, "--lambda-grid", o.lambda_grid, "Training grid")->default_str("0,200,400,600,800,1000");
    add_list_option(iv, "--eval-lambdas", o.eval_lambdas, "Held-out cost sensitivities")->capture_default_str();
    iv->add_option("--interval-tau", o.interval_tau, "Softmax temperature of the joint fine-tuning")->capture_default_str();
    iv->add_option("--seed", o.seed, "First trial seed")->capture_default_str();
    iv->add_option("--trials", o.trials, "Number of seeds")->capture_default_str();
    iv->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
    iv->add_option("--out", o.out, "Output directory")->required();
    add_training_options(iv, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (iv->parsed() && iv->get_option("--lambda-grid")->count() == 0) o.lambda_grid = "0,200,400,600,800,1000";

    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (est->parsed()) return cmd_estimate(o);
        if (tr->parsed()) return cmd_train(o);
        if (sw->parsed()) return cmd_sweep(o);
        return cmd_interval(o);
    } catch (const ConfigError& e) {
        std::cerr << "error=config message=\"" << e.what() << "\"\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error=data message=\"" << e.what() << "\"\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error=runtime message=\"" << e.what() << "\"\n";
        return 4;
    }
}
