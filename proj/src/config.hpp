#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "engine.hpp"
#include "models.hpp"

namespace gradal::config {

struct GeneratorSpec {
    int classes = 4;
    int per_class = 1250;
    int dim = 2;
    double separation = 2.2;
    uint64_t seed = 9;
};

struct CsvSpec {
    std::string path;
    std::string label_column;
};

struct IdxSpec {
    std::string images;
    std::string labels;
};

struct DatasetSpec {
    // exactly one source is set
    std::optional<GeneratorSpec> generator;
    std::optional<CsvSpec> csv;
    std::optional<IdxSpec> idx;
    double eval_fraction = 0.2;
    bool normalize = true;
    std::optional<std::vector<double>> imbalance_ratios;
    uint64_t imbalance_seed = 0;
    std::optional<uint64_t> split_seed;  // defaults to the generator seed

    uint64_t effective_split_seed() const;
};

struct ModelSectionSpec {
    models::ModelSpec::Kind kind = models::ModelSpec::Kind::Mlp;
    std::vector<int> hidden = {64, 64};
    models::CnnSpec cnn;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSectionSpec model;
    std::vector<std::string> strategies = {"entropy-gradnorm"};
    int cycles = 7;
    int budget = 200;
    double initial_fraction = 0.10;
    int subset_multiplier = 10;
    bool retrain_from_scratch = true;
    bool last_layer_only = false;
    models::TrainConfig train;
    engine::ProbeToggles probes;
    std::optional<ModelSectionSpec> transfer_model;
    std::vector<uint64_t> seeds = {1};
    std::string out_dir = "out";
};

// Strict parse: unknown keys are rejected with their JSON path; all values
// are validated before any compute.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization: fixed key order, defaults materialized. Parsing
// the output yields a field-identical config.
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a over the canonical serialization, excluding out_dir and seeds (both
// are carried on artifacts separately).
std::string config_hash(const ExperimentConfig& cfg);

// Materializes the dataset (generate or read, imbalance, normalize) and the
// deterministic train/eval split.
data::Split build_dataset(const DatasetSpec& spec);

// Completes the model section with the dataset-derived geometry.
models::ModelSpec resolve_model(const ModelSectionSpec& section, const data::Dataset& ds);

engine::ALConfig resolve_al_config(const ExperimentConfig& cfg, const std::string& strategy,
                                   uint64_t seed, const data::Dataset& train_ds);

}  // namespace gradal::config
