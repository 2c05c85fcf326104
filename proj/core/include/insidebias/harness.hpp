#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "insidebias/dataset.hpp"
#include "insidebias/detector.hpp"
#include "insidebias/model.hpp"

namespace insidebias::harness {

using LogFn = std::function<void(const std::string&)>;

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t lr_decay_epoch = 4;  // 1-based; 0 disables the decay step
    double lr_decay = 0.1;
    double scale = 1.0;              // fraction of the training set (desk-scale switch)
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Per-group accuracy plus the across-group summary: Avg is the mean of
/// per-group accuracies, Std their population standard deviation (lower
/// means the groups are treated more alike).
struct EvaluationResult {
    std::map<std::string, std::size_t> group_total;
    std::map<std::string, std::size_t> group_correct;
    std::map<std::string, double> group_accuracy;
    double avg = 0.0;
    double stddev = 0.0;
    double overall_accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

/// SGD training over the dataset; returns the final-epoch mean loss.
/// Deterministic given the config seed (shuffling, dropout, subsampling).
/// With `epoch_losses` non-null, the mean loss of every epoch is appended.
double train_model(Model& model, const data::GroupedDataset& train, const TrainConfig& cfg,
                   const LogFn& log = {}, std::vector<double>* epoch_losses = nullptr);

EvaluationResult evaluate(Model& model, const data::GroupedDataset& test,
                          const std::string& criterion, std::size_t batch_size = 64);

/// Population standard deviation (the Std summary in evaluation reports).
double population_stddev(const std::vector<double>& values);

// ---------------------------------------------------------------------------
// Studies

struct ColoredMnistStudy {
    std::filesystem::path mnist_dir;
    std::filesystem::path out_dir;
    std::string arch = "vgg_small";
    TrainConfig train;
    detect::AuditOptions audit;                       // criterion fixed to "color"
    /// Biased runs as (primary digit, primary color); empty = all 30.
    std::vector<std::pair<int, data::Color>> biased_runs;
    bool include_unbiased = true;
    std::uint64_t seed = 1;

    static ColoredMnistStudy from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct GroupedStudy {
    /// Either a manifest pair (train/test pools) or the synthetic generator.
    std::filesystem::path train_manifest;  // empty -> synthetic
    std::filesystem::path test_manifest;
    std::size_t synth_per_group_per_class = 600;
    std::size_t synth_test_per_group_per_class = 200;
    std::size_t image_size = 32;

    std::filesystem::path out_dir;
    std::string arch = "vgg_small";
    std::size_t train_total = 1800;
    std::size_t test_total = 0;  // 0 = use the full test pool
    std::vector<double> biased_fractions = {0.90, 0.05, 0.05};
    TrainConfig train{.epochs = 20, .batch_size = 32};
    detect::AuditOptions audit;  // criterion fixed to "group"
    std::uint64_t seed = 1;

    static GroupedStudy from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Trains the configured biased models plus the unbiased one, evaluates each
/// on the uniformly colored test set, audits by color, and writes artifacts
/// under out_dir/<run-id>/. Returns the study manifest (also written to
/// out_dir/study_manifest.json). A diverging run is recorded and skipped.
nlohmann::json run_colored_mnist_study(const ColoredMnistStudy& cfg, const LogFn& log = {});

/// Biased(k) for every group plus Unbiased, on manifest data or the synthetic
/// grouped set; train/test identifier disjointness is asserted up front.
nlohmann::json run_grouped_study(const GroupedStudy& cfg, const LogFn& log = {});

/// Serialize JSON deterministically (sorted keys, 2-space indent, '\n' EOF)
/// and write atomically (temp + rename).
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
std::string json_to_text(const nlohmann::json& j);

}  // namespace insidebias::harness
