// volreg: synthetic-data generation, training, evaluation and ablation
// harnesses for slice-set age regression, driven by flat key=value configs.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "volreg/config.hpp"
#include "volreg/data.hpp"
#include "volreg/models.hpp"
#include "volreg/training.hpp"

namespace fs = std::filesystem;
using namespace volreg;
using nlohmann::json;

namespace {

fs::path manifest_path_from(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) return p / "manifest.csv";
    return p;
}

std::vector<int64_t> parse_dims_arg(const std::string& text) {
    std::vector<int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

struct TrainSugar {
    std::string config_file;
    std::vector<std::string> sets;
    std::string model, axis;
    std::optional<int64_t> epochs, batch_size;
    std::optional<double> lr;
    std::optional<uint64_t> seed;
};

void add_train_options(CLI::App* cmd, TrainSugar& sugar) {
    cmd->add_option("--config", sugar.config_file, "key = value config file");
    cmd->add_option("--set", sugar.sets, "config override key=value (strongest, repeatable)");
    cmd->add_option("--model", sugar.model,
                    "model family (slice_mean|slice_max|slice_attention|slice_rnn|cnn3d)");
    cmd->add_option("--axis", sugar.axis, "slicing axis (sagittal|coronal|axial)");
    cmd->add_option("--epochs", sugar.epochs, "training epochs");
    cmd->add_option("--lr", sugar.lr, "learning rate");
    cmd->add_option("--batch", sugar.batch_size, "batch size");
    cmd->add_option("--seed", sugar.seed, "run seed");
}

KvMap merge_config(const TrainSugar& sugar, const std::string& data) {
    KvMap kv;
    if (!sugar.config_file.empty()) kv = parse_config_file(sugar.config_file);
    if (!sugar.model.empty()) kv["model.family"] = sugar.model;
    if (!sugar.axis.empty()) kv["model.axis"] = sugar.axis;
    if (sugar.epochs) kv["train.epochs"] = std::to_string(*sugar.epochs);
    if (sugar.lr) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g", *sugar.lr);
        kv["train.lr"] = buf;
    }
    if (sugar.batch_size) kv["train.batch_size"] = std::to_string(*sugar.batch_size);
    if (sugar.seed) kv["train.seed"] = std::to_string(*sugar.seed);
    for (const auto& assignment : sugar.sets) apply_override(kv, assignment);
    if (!data.empty()) kv["data.manifest"] = manifest_path_from(data).string();
    return kv;
}

// input_dims follow the data unless configured explicitly
void infer_input_dims(RunConfig& rc, const KvMap& kv, const Dataset& dataset) {
    if (kv.count("model.input_dims")) return;
    if (!dataset.train.empty()) rc.model.input_dims = dataset.train.front().dims;
}

struct TrainOutputs {
    RunReport report;
    fs::path checkpoint;
};

TrainOutputs run_training(const KvMap& kv, const fs::path& out_dir) {
    RunConfig rc = resolve_run_config(kv);
    if (rc.data_manifest.empty()) throw ConfigError("no dataset given (use --data)");
    Dataset dataset = load_dataset(rc.data_manifest);
    infer_input_dims(rc, kv, dataset);

    fs::create_directories(out_dir);
    write_text(out_dir / "config.resolved", rc.to_text());

    auto model = make_model<float>(rc.model, rc.train.seed);
    const fs::path ckpt = out_dir / "checkpoint.vrck";
    RunReport report = train_model(*model, dataset, rc.train, &ckpt);
    report.write_json(out_dir / "report.json");
    report.write_curve_csv(out_dir / "curve.csv");
    return {std::move(report), ckpt};
}

int cmd_synth(int64_t n, const std::string& dims_text, uint64_t seed, double noise,
              const std::string& split_text, const std::string& out) {
    SynthConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    cfg.noise_level = noise;
    auto dims = parse_dims_arg(dims_text);
    if (dims.size() != 3) throw ConfigError("--dims needs 3 comma-separated extents");
    cfg.dims = {dims[0], dims[1], dims[2]};
    if (!split_text.empty()) {
        auto split = parse_dims_arg(split_text);
        if (split.size() != 3) throw ConfigError("--split needs train,val,test counts");
        cfg.split_counts = std::array<int64_t, 3>{split[0], split[1], split[2]};
    }
    const fs::path out_dir(out);
    const auto manifest = synth_dataset(cfg, out_dir);

    std::ostringstream cfg_text;
    cfg_text << "synth.n = " << (cfg.n ? cfg.n : (*cfg.split_counts)[0] + (*cfg.split_counts)[1] +
                                                     (*cfg.split_counts)[2])
             << "\n"
             << "synth.dims = " << dims[0] << "," << dims[1] << "," << dims[2] << "\n"
             << "synth.seed = " << seed << "\n"
             << "synth.noise = " << noise << "\n";
    if (cfg.split_counts)
        cfg_text << "synth.split = " << (*cfg.split_counts)[0] << "," << (*cfg.split_counts)[1]
                 << "," << (*cfg.split_counts)[2] << "\n";
    write_text(out_dir / "config.resolved", cfg_text.str());

    std::cout << "manifest=" << manifest.string() << "\n";
    return 0;
}

int cmd_train(const TrainSugar& sugar, const std::string& data, const std::string& out) {
    const KvMap kv = merge_config(sugar, data);
    auto outputs = run_training(kv, fs::path(out));
    std::printf("test_mae=%.6f params=%lld best_epoch=%lld\n", outputs.report.test_mae,
                static_cast<long long>(outputs.report.param_count),
                static_cast<long long>(outputs.report.best_epoch));
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& drop_text, bool impute, const std::string& axis_text,
             int64_t seeds, uint64_t seed, const std::string& out) {
    auto model = load_checkpoint(checkpoint);
    Dataset dataset = load_dataset(manifest_path_from(data));
    const auto& volumes = dataset.split(split_from_string(split));
    if (volumes.empty()) throw DataError("split '" + split + "' is empty");

    DropSpec drop = DropSpec::parse(drop_text);
    drop.seed = seed;
    drop.runs = seeds;
    const Axis axis = axis_text.empty() ? model->spec().axis : axis_from_string(axis_text);

    const auto maes = evaluate_mae_runs(*model, volumes, axis, drop, impute);
    double mean = 0.0;
    for (double m : maes) mean += m;
    mean /= static_cast<double>(maes.size());
    double var = 0.0;
    for (double m : maes) var += (m - mean) * (m - mean);
    const double stdev = maes.size() > 1 ? std::sqrt(var / static_cast<double>(maes.size())) : 0.0;

    json j;
    j["checkpoint"] = checkpoint;
    j["split"] = split;
    j["axis"] = axis_to_string(axis);
    j["drop"] = drop.to_string();
    j["impute"] = impute;
    j["runs"] = maes.size();
    j["mae"] = mean;
    if (maes.size() > 1) {
        j["mae_std"] = stdev;
        j["per_run"] = maes;
    }
    const std::string text = j.dump(2) + "\n";
    if (!out.empty())
        write_text(out, text);
    else
        std::cout << text;
    std::printf("mae=%.6f\n", mean);
    return 0;
}

// rows of a paper-style table: one method per row, one grid value per column
struct AblationTable {
    std::string value_header;
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;

    std::string to_csv() const {
        std::ostringstream os;
        os << "method";
        for (const auto& c : columns) os << "," << c;
        os << "\n";
        for (const auto& [name, cells] : rows) {
            os << name;
            for (const auto& cell : cells) os << "," << cell;
            os << "\n";
        }
        return os.str();
    }
};

std::vector<std::pair<std::string, std::string>> parse_checkpoints_arg(
    const std::vector<std::string>& items) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const auto eq = part.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--checkpoints entries must be family=path, got '" + part + "'");
            out.emplace_back(part.substr(0, eq), part.substr(eq + 1));
        }
    }
    return out;
}

std::string format_mae(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

int cmd_ablate(const std::string& suite, const std::string& data, const std::string& out,
               const std::vector<std::string>& checkpoint_args,
               const std::string& models_text, int64_t seeds, const TrainSugar& sugar) {
    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    const fs::path manifest = manifest_path_from(data);
    AblationTable table;

    if (suite == "missing_kth" || suite == "missing_rand") {
        auto checkpoints = parse_checkpoints_arg(checkpoint_args);
        if (checkpoints.empty())
            throw ConfigError(
                "suite '" + suite +
                "' evaluates trained checkpoints; required: --checkpoints "
                "slice_mean=RUN/checkpoint.vrck[,slice_attention=...,slice_rnn=...,cnn3d=...]");
        Dataset dataset = load_dataset(manifest);
        if (dataset.test.empty()) throw DataError("test split is empty");

        std::vector<DropSpec> grid;
        if (suite == "missing_kth") {
            for (int64_t k : {1, 2, 4, 5, 10}) {
                DropSpec d;
                d.kind = DropSpec::Kind::every_kth;
                d.k = k;
                grid.push_back(d);
                table.columns.push_back("k=" + std::to_string(k));
            }
        } else {
            for (double f : {1.0, 0.5, 0.25, 0.2, 0.1}) {
                DropSpec d;
                d.kind = DropSpec::Kind::random_fraction;
                d.fraction = f;
                d.runs = seeds;
                grid.push_back(d);
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%g%%", f * 100.0);
                table.columns.push_back(buf);
            }
        }

        for (const auto& [label, path] : checkpoints) {
            auto model = load_checkpoint(path);
            const auto family = model->spec().family;
            if (family_to_string(family) != label)
                throw ConfigError("checkpoint " + path + " is a " +
                                  family_to_string(family) + " model, labeled " + label);
            // imputation per family: mandatory for cnn3d, both ways for the
            // order-dependent rnn ("*" marks imputed evaluation)
            std::vector<bool> impute_variants;
            if (family == ModelFamily::cnn3d)
                impute_variants = {true};
            else if (family == ModelFamily::slice_rnn)
                impute_variants = {false, true};
            else
                impute_variants = {false};
            for (bool impute : impute_variants) {
                std::vector<std::string> cells;
                for (const auto& drop : grid)
                    cells.push_back(format_mae(
                        evaluate_mae(*model, dataset.test, model->spec().axis, drop, impute)));
                table.rows.push_back({impute ? label + "*" : label, std::move(cells)});
            }
        }
    } else if (suite == "less_data") {
        std::string models = models_text.empty() ? "slice_mean" : models_text;
        Dataset probe = load_dataset(manifest);
        const int64_t full_n = static_cast<int64_t>(probe.train.size());
        const std::vector<int64_t> ns = {full_n / 8, full_n / 4, full_n / 2};
        for (int64_t n : ns) table.columns.push_back("n=" + std::to_string(n));

        std::stringstream ss(models);
        std::string fam;
        while (std::getline(ss, fam, ',')) {
            std::vector<std::string> cells;
            for (int64_t n : ns) {
                if (n < 1) throw ConfigError("training split too small for the less_data grid");
                TrainSugar s = sugar;
                s.model = fam;
                KvMap kv = merge_config(s, data);
                RunConfig probe_rc = resolve_run_config(kv);
                TrainConfig sub =
                    subsample(probe_rc.train, full_n, n, mix_seed(probe_rc.train.seed, 0x6c64));
                kv["train.subsample_n"] = std::to_string(*sub.subsample_n);
                kv["train.subsample_seed"] = std::to_string(sub.subsample_seed);
                kv["train.fixed_updates"] = std::to_string(*sub.fixed_updates);
                auto outputs =
                    run_training(kv, out_dir / "runs" / (fam + "_n" + std::to_string(n)));
                cells.push_back(format_mae(outputs.report.test_mae));
            }
            table.rows.push_back({fam, std::move(cells)});
        }
    } else if (suite == "axes") {
        std::string models = models_text.empty() ? "slice_attention,slice_rnn" : models_text;
        const std::vector<std::string> axes = {"sagittal", "coronal", "axial"};
        table.columns = axes;

        std::stringstream ss(models);
        std::string fam;
        while (std::getline(ss, fam, ',')) {
            std::vector<std::string> cells;
            for (const auto& axis : axes) {
                TrainSugar s = sugar;
                s.model = fam;
                s.axis = axis;
                KvMap kv = merge_config(s, data);
                const fs::path run_dir = out_dir / "runs" / (fam + "_" + axis);
                try {
                    auto outputs = run_training(kv, run_dir);
                    cells.push_back(format_mae(outputs.report.test_mae));
                } catch (const NumericError&) {
                    // diverged; retry once at the documented reduced rate
                    kv["train.lr"] = "1e-5";
                    auto outputs = run_training(kv, run_dir);
                    cells.push_back(format_mae(outputs.report.test_mae) + "*");
                }
            }
            table.rows.push_back({fam, std::move(cells)});
        }
    } else {
        throw ConfigError("unknown suite '" + suite +
                          "' (expected missing_kth|missing_rand|less_data|axes)");
    }

    const fs::path csv_path = out_dir / (suite + ".csv");
    write_text(csv_path, table.to_csv());
    std::cout << table.to_csv();
    std::cout << "table=" << csv_path.string() << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& csv_out) {
    if (runs.empty()) throw ConfigError("report: provide at least one --run directory");
    std::ostringstream csv;
    csv << "run,test_mae,param_count,best_epoch,epochs,total_steps\n";
    for (const auto& run : runs) {
        fs::path dir(run);
        const auto report = RunReport::read_json(
            fs::is_directory(dir) ? dir / "report.json" : dir);
        std::printf("%s: test_mae=%.6f params=%lld best_epoch=%lld epochs=%zu steps=%lld\n",
                    run.c_str(), report.test_mae, static_cast<long long>(report.param_count),
                    static_cast<long long>(report.best_epoch), report.epochs.size(),
                    static_cast<long long>(report.total_steps));
        csv << run << "," << report.test_mae << "," << report.param_count << ","
            << report.best_epoch << "," << report.epochs.size() << "," << report.total_steps
            << "\n";
    }
    if (!csv_out.empty()) write_text(csv_out, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"slice-set networks for volumetric age regression"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    int64_t synth_n = 0;
    std::string synth_dims = "32,40,32", synth_split, synth_out;
    uint64_t synth_seed = 0;
    double synth_noise = 0.0;
    synth->add_option("--n", synth_n, "total volume count (split 70/9/21)");
    synth->add_option("--dims", synth_dims, "volume extents D1,D2,D3")->capture_default_str();
    synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
    synth->add_option("--noise", synth_noise, "voxel noise level")->capture_default_str();
    synth->add_option("--split", synth_split, "explicit train,val,test counts");
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model and write checkpoint + report");
    TrainSugar train_sugar;
    std::string train_data, train_out;
    train->add_option("--data", train_data, "dataset manifest (or its directory)")->required();
    train->add_option("--out", train_out, "run output directory")->required();
    add_train_options(train, train_sugar);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under missing-slice protocols");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_drop = "none", eval_axis,
                eval_out;
    bool eval_impute = false;
    int64_t eval_seeds = 10;
    uint64_t eval_seed = 0;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset manifest (or its directory)")->required();
    eval->add_option("--split", eval_split, "dataset split")->capture_default_str();
    eval->add_option("--drop", eval_drop, "drop spec: none | kth:K | rand:FRACTION")
        ->capture_default_str();
    eval->add_flag("--impute", eval_impute, "impute missing slices from nearest neighbors");
    eval->add_option("--axis", eval_axis, "slicing axis (defaults to the training axis)");
    eval->add_option("--seeds", eval_seeds, "evaluation runs for random drops")
        ->capture_default_str();
    eval->add_option("--seed", eval_seed, "base seed for random drops")->capture_default_str();
    eval->add_option("--out", eval_out, "metrics JSON path (stdout when absent)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run a full ablation grid, one CSV per suite");
    std::string ablate_suite, ablate_data, ablate_out, ablate_models;
    std::vector<std::string> ablate_ckpts;
    int64_t ablate_seeds = 10;
    TrainSugar ablate_sugar;
    ablate->add_option("--suite", ablate_suite,
                       "missing_kth | missing_rand | less_data | axes")->required();
    ablate->add_option("--data", ablate_data, "dataset manifest (or its directory)")->required();
    ablate->add_option("--out", ablate_out, "output directory")->required();
    ablate->add_option("--checkpoints", ablate_ckpts,
                       "family=path list for evaluation suites (repeatable/comma-separated)");
    ablate->add_option("--models", ablate_models, "comma-separated families for training suites");
    ablate->add_option("--seeds", ablate_seeds, "evaluation runs for random drops")
        ->capture_default_str();
    add_train_options(ablate, ablate_sugar);

    // report
    auto* report = app.add_subcommand("report", "summarize run reports");
    std::vector<std::string> report_runs;
    std::string report_csv;
    report->add_option("--run,--runs", report_runs, "run directories (or report.json paths)");
    report->add_option("--csv", report_csv, "write the summary as CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_n, synth_dims, synth_seed, synth_noise, synth_split,
                             synth_out);
        if (train->parsed()) return cmd_train(train_sugar, train_data, train_out);
        if (eval->parsed())
            return cmd_eval(eval_ckpt, eval_data, eval_split, eval_drop, eval_impute, eval_axis,
                            eval_seeds, eval_seed, eval_out);
        if (ablate->parsed())
            return cmd_ablate(ablate_suite, ablate_data, ablate_out, ablate_ckpts,
                              ablate_models, ablate_seeds, ablate_sugar);
        if (report->parsed()) return cmd_report(report_runs, report_csv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
