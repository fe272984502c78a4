#include "volreg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "volreg/optim.hpp"

namespace volreg {

std::map<std::string, std::string> TrainConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["train.epochs"] = std::to_string(epochs);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", learning_rate);
    kv["train.lr"] = buf;
    std::snprintf(buf, sizeof(buf), "%.9g", weight_decay);
    kv["train.weight_decay"] = buf;
    kv["train.batch_size"] = std::to_string(batch_size);
    if (grad_clip) {
        std::snprintf(buf, sizeof(buf), "%.9g", *grad_clip);
        kv["train.grad_clip"] = buf;
    } else {
        kv["train.grad_clip"] = "none";
    }
    kv["train.seed"] = std::to_string(seed);
    if (subsample_n) {
        kv["train.subsample_n"] = std::to_string(*subsample_n);
        kv["train.subsample_seed"] = std::to_string(subsample_seed);
    }
    if (fixed_updates) kv["train.fixed_updates"] = std::to_string(*fixed_updates);
    return kv;
}

// ---- report -------------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs) {
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"train_mse", e.train_mse},
                               {"val_mae", e.val_mae},
                               {"seconds", e.seconds},
                               {"grad_norm_max", e.grad_norm_max}});
    }
    j["best_epoch"] = best_epoch;
    if (std::isfinite(test_mae))
        j["test_mae"] = test_mae;
    else
        j["test_mae"] = nullptr;
    j["param_count"] = param_count;
    j["step0_train_mse"] = step0_train_mse;
    j["total_steps"] = total_steps;
    j["config"] = config_echo;
    j["environment"] = environment;
    return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
    RunReport r;
    for (const auto& e : j.at("epochs")) {
        EpochStats s;
        s.epoch = e.at("epoch").get<int64_t>();
        s.train_mse = e.at("train_mse").get<double>();
        s.val_mae = e.at("val_mae").get<double>();
        s.seconds = e.at("seconds").get<double>();
        s.grad_norm_max = e.at("grad_norm_max").get<double>();
        r.epochs.push_back(s);
    }
    r.best_epoch = j.at("best_epoch").get<int64_t>();
    r.test_mae = j.at("test_mae").is_null() ? std::nan("") : j.at("test_mae").get<double>();
    r.param_count = j.at("param_count").get<int64_t>();
    r.step0_train_mse = j.at("step0_train_mse").get<double>();
    r.total_steps = j.at("total_steps").get<int64_t>();
    r.config_echo = j.at("config").get<std::map<std::string, std::string>>();
    r.environment = j.at("environment").get<std::string>();
    return r;
}

void RunReport::write_json(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write report: " + path.string());
    out << to_json().dump(2) << "\n";
}

RunReport RunReport::read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

void RunReport::write_curve_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write curve csv: " + path.string());
    out << "epoch,train_mse,val_mae,seconds\n";
    char buf[160];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.6g\n",
                      static_cast<long long>(e.epoch), e.train_mse, e.val_mae, e.seconds);
        out << buf;
    }
}

bool deterministic_equal(const RunReport& a, const RunReport& b) {
    if (a.epochs.size() != b.epochs.size()) return false;
    for (size_t i = 0; i < a.epochs.size(); ++i) {
        const auto& x = a.epochs[i];
        const auto& y = b.epochs[i];
        if (x.epoch != y.epoch || x.train_mse != y.train_mse || x.val_mae != y.val_mae ||
            x.grad_norm_max != y.grad_norm_max)
            return false;
    }
    const bool test_equal = (std::isnan(a.test_mae) && std::isnan(b.test_mae)) ||
                            a.test_mae == b.test_mae;
    return test_equal && a.best_epoch == b.best_epoch && a.param_count == b.param_count &&
           a.step0_train_mse == b.step0_train_mse && a.total_steps == b.total_steps &&
           a.config_echo == b.config_echo;
}

// ---- drop spec ------------------------------------------------------------------

DropSpec DropSpec::parse(const std::string& text) {
    DropSpec spec;
    if (text == "none" || text.empty()) return spec;
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    if (head == "kth") {
        if (colon == std::string::npos)
            throw ConfigError("drop spec 'kth' needs a value, e.g. kth:5");
        spec.kind = Kind::every_kth;
        try {
            spec.k = std::stoll(text.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad drop spec '" + text + "'");
        }
        if (spec.k < 1) throw ConfigError("drop spec: k must be >= 1");
        return spec;
    }
    if (head == "rand") {
        if (colon == std::string::npos)
            throw ConfigError("drop spec 'rand' needs a fraction, e.g. rand:0.25");
        spec.kind = Kind::random_fraction;
        try {
            spec.fraction = std::stod(text.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad drop spec '" + text + "'");
        }
        if (!(spec.fraction > 0.0 && spec.fraction <= 1.0))
            throw ConfigError("drop spec: fraction must be in (0, 1]");
        return spec;
    }
    throw ConfigError("unknown drop spec '" + text + "' (expected none|kth:K|rand:F)");
}

std::string DropSpec::to_string() const {
    switch (kind) {
        case Kind::none: return "none";
        case Kind::every_kth: return "kth:" + std::to_string(k);
        default: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "rand:%g", fraction);
            return buf;
        }
    }
}

// ---- helpers --------------------------------------------------------------------

namespace {

std::string environment_stamp() {
    std::ostringstream os;
    os << "volreg 0.1.0; compiler " <<
#if defined(__VERSION__)
        __VERSION__
#else
        "unknown"
#endif
       << "; float32 training; single-threaded";
    return os.str();
}

Tensor scan_input(const ModelSpec& spec, const Volume& volume) {
    if (spec.family == ModelFamily::cnn3d) return volume_to_tensor<float>(volume);
    return slices_to_tensor<float>(slice_volume(volume, spec.axis));
}

// batched predictions over prepared scan tensors, no graph
std::vector<double> predict_all(ModelT<float>& model, std::span<const Tensor> scans,
                                int64_t batch_size) {
    NoGradGuard guard;
    std::vector<double> out;
    out.reserve(scans.size());
    for (size_t start = 0; start < scans.size(); start += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(static_cast<size_t>(batch_size), scans.size() - start);
        auto preds = model.predict_batch(scans.subspan(start, count));
        for (float v : preds.values()) out.push_back(static_cast<double>(v));
    }
    return out;
}

double mae_from_predictions(std::span<const double> preds, std::span<const Volume> volumes) {
    double acc = 0.0;
    for (size_t i = 0; i < preds.size(); ++i)
        acc += std::abs(preds[i] - static_cast<double>(volumes[i].age));
    return acc / static_cast<double>(preds.size());
}

}  // namespace

double mean_label(std::span<const Volume> volumes) {
    if (volumes.empty()) throw DataError("mean_label: no volumes");
    double acc = 0.0;
    for (const auto& v : volumes) acc += static_cast<double>(v.age);
    return acc / static_cast<double>(volumes.size());
}

double mean_predictor_mae(std::span<const Volume> train, std::span<const Volume> eval) {
    const double mean = mean_label(train);
    if (eval.empty()) throw DataError("mean_predictor_mae: no volumes");
    double acc = 0.0;
    for (const auto& v : eval) acc += std::abs(static_cast<double>(v.age) - mean);
    return acc / static_cast<double>(eval.size());
}

int64_t fixed_updates_for(int64_t train_size, int64_t batch_size, int64_t epochs) {
    if (train_size < 1 || batch_size < 1 || epochs < 1)
        throw ConfigError("fixed_updates_for: sizes must be >= 1");
    return epochs * ((train_size + batch_size - 1) / batch_size);
}

std::vector<int64_t> select_subsample(int64_t train_size, int64_t n, uint64_t seed) {
    if (n < 1) throw ConfigError("subsample: n must be >= 1");
    if (n > train_size)
        throw ConfigError("subsample: n=" + std::to_string(n) + " exceeds training size " +
                          std::to_string(train_size));
    std::vector<int64_t> all(static_cast<size_t>(train_size));
    for (int64_t i = 0; i < train_size; ++i) all[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    for (int64_t i = 0; i < n; ++i) {
        const int64_t j =
            i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(train_size - i)));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
    }
    all.resize(static_cast<size_t>(n));
    std::sort(all.begin(), all.end());
    return all;
}

TrainConfig subsample(const TrainConfig& config, int64_t train_size, int64_t n, uint64_t seed) {
    TrainConfig out = config;
    out.subsample_n = n;
    out.subsample_seed = seed;
    out.fixed_updates = fixed_updates_for(train_size, config.batch_size, config.epochs);
    // validates n against the training size
    select_subsample(train_size, n, seed);
    return out;
}

// ---- training loop -----------------------------------------------------------------

RunReport train_model(ModelT<float>& model, const Dataset& dataset, const TrainConfig& config,
                      const std::filesystem::path* checkpoint_path) {
    if (dataset.train.empty()) throw ConfigError("train: empty training split");
    if (dataset.val.empty()) throw ConfigError("train: empty validation split");
    if (config.batch_size < 1 || config.epochs < 1)
        throw ConfigError("train: batch_size and epochs must be >= 1");

    const ModelSpec& spec = model.spec();

    // subjects used for training
    std::vector<int64_t> subjects;
    if (config.subsample_n) {
        if (!config.fixed_updates)
            throw ConfigError("train: subsample_n requires fixed_updates (see subsample())");
        subjects = select_subsample(static_cast<int64_t>(dataset.train.size()),
                                    *config.subsample_n, config.subsample_seed);
    } else {
        subjects.resize(dataset.train.size());
        for (size_t i = 0; i < subjects.size(); ++i) subjects[i] = static_cast<int64_t>(i);
    }

    // scan tensors are reused across epochs; they carry no grad state
    std::vector<Tensor> train_inputs;
    train_inputs.reserve(subjects.size());
    std::vector<float> train_ages;
    for (int64_t idx : subjects) {
        train_inputs.push_back(scan_input(spec, dataset.train[static_cast<size_t>(idx)]));
        train_ages.push_back(dataset.train[static_cast<size_t>(idx)].age);
    }
    std::vector<Tensor> val_inputs;
    val_inputs.reserve(dataset.val.size());
    for (const auto& v : dataset.val) val_inputs.push_back(scan_input(spec, v));

    const double mean_age = mean_label(dataset.train);
    model.set_output_bias(static_cast<float>(mean_age));
    model.zero_output_weights();

    auto params = model.parameter_tensors();
    typename AdamT<float>::Options adam_options;
    adam_options.learning_rate = static_cast<float>(config.learning_rate);
    adam_options.weight_decay = static_cast<float>(config.weight_decay);
    Adam optimizer(params, adam_options);

    Rng shuffle_rng(mix_seed(config.seed, 0x73687566));
    const int64_t n_train = static_cast<int64_t>(train_inputs.size());
    const int64_t max_steps =
        config.fixed_updates ? *config.fixed_updates
                             : fixed_updates_for(n_train, config.batch_size, config.epochs);

    RunReport report;
    report.param_count = model.param_count();
    report.environment = environment_stamp();
    for (const auto& [k, v] : config.to_kv()) report.config_echo[k] = v;
    for (const auto& [k, v] : spec.to_kv()) report.config_echo["model." + k] = v;

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_params;
    int64_t steps = 0;
    double last_grad_norm = 0.0;
    std::vector<int64_t> order(subjects.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    int64_t epoch = 0;
    bool done = false;
    while (!done) {
        ++epoch;
        const auto epoch_start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);

        double sq_err_sum = 0.0;
        int64_t sample_count = 0;
        double grad_norm_max = 0.0;
        for (int64_t start = 0; start < n_train && steps < max_steps;
             start += config.batch_size) {
            const int64_t count = std::min(config.batch_size, n_train - start);
            std::vector<Tensor> scans;
            scans.reserve(static_cast<size_t>(count));
            std::vector<float> targets;
            targets.reserve(static_cast<size_t>(count));
            for (int64_t i = 0; i < count; ++i) {
                const int64_t idx = order[static_cast<size_t>(start + i)];
                scans.push_back(train_inputs[static_cast<size_t>(idx)]);
                targets.push_back(train_ages[static_cast<size_t>(idx)]);
            }
            auto preds = model.predict_batch(scans);
            auto target = Tensor::from_values({count}, std::move(targets));
            auto loss = mse_loss(preds, target);
            const double loss_value = static_cast<double>(loss.item());
            if (steps == 0) report.step0_train_mse = loss_value;
            if (!std::isfinite(loss_value)) {
                std::ostringstream os;
                os << "non-finite training loss at step " << steps << " (epoch " << epoch
                   << ", lr=" << config.learning_rate << ", last gradient norm "
                   << last_grad_norm << ")";
                if (spec.family == ModelFamily::slice_rnn)
                    os << "; documented remedy for slice_rnn runs: reduce the learning rate to "
                          "1e-5 (train.lr=1e-5)";
                throw NumericError(os.str());
            }
            backward(loss);
            double grad_norm;
            if (config.grad_clip) {
                grad_norm = static_cast<double>(clip_grad_norm(
                    std::span<Tensor>(params), static_cast<float>(*config.grad_clip)));
            } else {
                grad_norm = static_cast<double>(
                    global_grad_norm(std::span<const Tensor>(params.data(), params.size())));
            }
            if (!std::isfinite(grad_norm)) {
                std::ostringstream os;
                os << "non-finite gradient at step " << steps << " (epoch " << epoch
                   << ", lr=" << config.learning_rate << ", loss " << loss_value << ")";
                if (spec.family == ModelFamily::slice_rnn)
                    os << "; documented remedy for slice_rnn runs: reduce the learning rate to "
                          "1e-5 (train.lr=1e-5)";
                throw NumericError(os.str());
            }
            last_grad_norm = grad_norm;
            const double post_clip =
                config.grad_clip ? std::min(grad_norm, *config.grad_clip) : grad_norm;
            grad_norm_max = std::max(grad_norm_max, post_clip);
            optimizer.step();
            optimizer.zero_grad();
            sq_err_sum += loss_value * static_cast<double>(count);
            sample_count += count;
            ++steps;
        }

        auto val_preds = predict_all(model, val_inputs, config.batch_size);
        const double val_mae = mae_from_predictions(val_preds, dataset.val);
        if (!std::isfinite(val_mae))
            throw NumericError("non-finite validation MAE after epoch " + std::to_string(epoch) +
                               " (lr=" + std::to_string(config.learning_rate) + ")");
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                .count();
        report.epochs.push_back({epoch,
                                 sample_count > 0 ? sq_err_sum / static_cast<double>(sample_count)
                                                  : 0.0,
                                 val_mae, seconds, grad_norm_max});

        if (val_mae < best_val) {
            best_val = val_mae;
            report.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : params)
                best_params.emplace_back(p.values().begin(), p.values().end());
        }

        done = config.fixed_updates ? steps >= max_steps
                                    : epoch >= config.epochs;
    }
    report.total_steps = steps;

    // restore the best-validation parameters; everything reported downstream
    // (test MAE, checkpoint) refers to that model
    for (size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].values();
        std::copy(best_params[i].begin(), best_params[i].end(), dst.begin());
    }

    if (!dataset.test.empty()) {
        std::vector<Tensor> test_inputs;
        test_inputs.reserve(dataset.test.size());
        for (const auto& v : dataset.test) test_inputs.push_back(scan_input(spec, v));
        auto test_preds = predict_all(model, test_inputs, config.batch_size);
        report.test_mae = mae_from_predictions(test_preds, dataset.test);
    } else {
        report.test_mae = std::nan("");
    }

    if (checkpoint_path) save_checkpoint(*checkpoint_path, model);
    return report;
}

// ---- evaluation -----------------------------------------------------------------

std::vector<double> evaluate_mae_runs(ModelT<float>& model, std::span<const Volume> volumes,
                                      Axis axis, const DropSpec& drop, bool impute) {
    if (volumes.empty()) throw DataError("evaluate_mae: no volumes");
    const bool has_drops = drop.kind != DropSpec::Kind::none &&
                           !(drop.kind == DropSpec::Kind::every_kth && drop.k == 1) &&
                           !(drop.kind == DropSpec::Kind::random_fraction && drop.fraction >= 1.0);
    if (model.spec().family == ModelFamily::cnn3d && has_drops && !impute)
        throw ConfigError(
            "the 3D model cannot evaluate with missing slices unless --impute is set");

    const int64_t runs = drop.kind == DropSpec::Kind::random_fraction ? drop.runs : 1;
    if (runs < 1) throw ConfigError("evaluate_mae: runs must be >= 1");

    NoGradGuard guard;
    std::vector<double> maes;
    maes.reserve(static_cast<size_t>(runs));
    constexpr int64_t kEvalBatch = 8;
    for (int64_t run = 0; run < runs; ++run) {
        std::vector<Tensor> inputs;
        inputs.reserve(volumes.size());
        for (size_t vi = 0; vi < volumes.size(); ++vi) {
            SliceSet set = slice_volume(volumes[vi], axis);
            switch (drop.kind) {
                case DropSpec::Kind::none: break;
                case DropSpec::Kind::every_kth: set = drop_all_but_kth(set, drop.k); break;
                case DropSpec::Kind::random_fraction:
                    set = drop_random_fraction(
                        set, drop.fraction,
                        mix_seed(drop.seed, mix_seed(static_cast<uint64_t>(run),
                                                     static_cast<uint64_t>(vi))));
                    break;
            }
            if (impute) set = impute_nearest(set);
            if (model.spec().family == ModelFamily::cnn3d)
                inputs.push_back(volume_to_tensor<float>(stack_slices(set)));
            else
                inputs.push_back(slices_to_tensor<float>(set));
        }
        auto preds = predict_all(model, inputs, kEvalBatch);
        maes.push_back(mae_from_predictions(preds, volumes));
    }
    return maes;
}

double evaluate_mae(ModelT<float>& model, std::span<const Volume> volumes, Axis axis,
                    const DropSpec& drop, bool impute) {
    const auto maes = evaluate_mae_runs(model, volumes, axis, drop, impute);
    double acc = 0.0;
    for (double m : maes) acc += m;
    return acc / static_cast<double>(maes.size());
}

}  // namespace volreg
