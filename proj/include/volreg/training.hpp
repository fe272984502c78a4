#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "volreg/data.hpp"
#include "volreg/models.hpp"

#include "json.hpp"

namespace volreg {

// Training protocol defaults: 100 epochs, Adam, lr 1e-4, weight decay 1e-4,
// batch size 8. Gradient clipping is only set for slice_rnn runs (value 1).
struct TrainConfig {
    int64_t epochs = 100;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    int64_t batch_size = 8;
    std::optional<double> grad_clip;
    uint64_t seed = 0;
    std::optional<int64_t> subsample_n;   // train on this many subjects
    uint64_t subsample_seed = 0;          // subject selection stream
    std::optional<int64_t> fixed_updates; // stop after exactly this many steps

    std::map<std::string, std::string> to_kv() const;
};

struct EpochStats {
    int64_t epoch = 0;  // 1-based
    double train_mse = 0.0;
    double val_mae = 0.0;
    double seconds = 0.0;
    double grad_norm_max = 0.0;  // post-clip
};

struct RunReport {
    std::vector<EpochStats> epochs;
    int64_t best_epoch = 0;  // epoch with minimal validation MAE (1-based)
    double test_mae = 0.0;   // of the best-validation checkpoint
    int64_t param_count = 0;
    double step0_train_mse = 0.0;  // first-batch loss before any update
    int64_t total_steps = 0;
    std::map<std::string, std::string> config_echo;
    std::string environment;

    nlohmann::json to_json() const;
    static RunReport from_json(const nlohmann::json& j);
    void write_json(const std::filesystem::path& path) const;
    static RunReport read_json(const std::filesystem::path& path);
    // epoch,train_mse,val_mae,seconds
    void write_curve_csv(const std::filesystem::path& path) const;
};

// Equality over the deterministic fields (wall-clock times and environment
// stamp excluded).
bool deterministic_equal(const RunReport& a, const RunReport& b);

// Missing-slice protocol for evaluation.
struct DropSpec {
    enum class Kind { none, every_kth, random_fraction };
    Kind kind = Kind::none;
    int64_t k = 1;
    double fraction = 1.0;
    uint64_t seed = 0;
    int64_t runs = 10;  // evaluation runs averaged for random drops

    static DropSpec parse(const std::string& text);  // none | kth:K | rand:F
    std::string to_string() const;
};

// Runs the full protocol: bias initialized to the training-set mean age with
// zeroed final-layer weights, per-epoch shuffling, validation after each
// epoch, best-validation checkpoint selection, test MAE from that checkpoint.
// Deterministic for a fixed seed on one thread.
RunReport train_model(ModelT<float>& model, const Dataset& dataset, const TrainConfig& config,
                      const std::filesystem::path* checkpoint_path = nullptr);

// Mean |prediction - age| in canonical volume order. Random drops are
// resampled independently per scan per run and averaged over drop.runs runs.
double evaluate_mae(ModelT<float>& model, std::span<const Volume> volumes, Axis axis,
                    const DropSpec& drop, bool impute);
// One MAE per evaluation run (single entry unless drop is random).
std::vector<double> evaluate_mae_runs(ModelT<float>& model, std::span<const Volume> volumes,
                                      Axis axis, const DropSpec& drop, bool impute);

// epochs * ceil(train_size / batch_size)
int64_t fixed_updates_for(int64_t train_size, int64_t batch_size, int64_t epochs);

// n subjects chosen uniformly without replacement; ascending indices
std::vector<int64_t> select_subsample(int64_t train_size, int64_t n, uint64_t seed);

// Reduced-data protocol: train on n subjects but keep the update count of
// full-data training.
TrainConfig subsample(const TrainConfig& config, int64_t train_size, int64_t n, uint64_t seed);

double mean_label(std::span<const Volume> volumes);
// MAE of the constant predictor that outputs the training-set mean age.
double mean_predictor_mae(std::span<const Volume> train, std::span<const Volume> eval);

}  // namespace volreg
