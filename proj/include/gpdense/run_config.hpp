#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "gpdense/data.hpp"
#include "gpdense/evolution.hpp"
#include "gpdense/plan.hpp"
#include "gpdense/train.hpp"

namespace gpdense {

/// Everything an experiment needs. Defaults are the reference search
/// settings; the dataset defaults to the built-in "trigram4" task.
struct RunConfig {
    EvoConfig evo;
    TrainConfig train;
    PlanConfig plan;

    // Dataset: CSV files when train_csv is set, otherwise a synthetic task.
    std::string task = "trigram4";
    std::size_t task_train = 2000;
    std::size_t task_validation = 500;
    std::size_t task_test = 500;
    std::string train_csv;
    std::string test_csv;
    int num_classes = 0;
    std::optional<double> validation_fraction;

    // Execution only; never part of the echoed configuration.
    std::string out = "out";
    int workers = 1;

    void validate() const;
};

/// Flat snake_case document. Execution-only keys (out, workers) are omitted
/// unless requested.
nlohmann::json config_to_json(const RunConfig& cfg, bool include_execution = false);

/// Applies the keys of `patch` on top of `base`. Unknown keys are an error.
RunConfig apply_config(RunConfig base, const nlohmann::json& patch);

/// Loads the dataset named by the config. The seed drives the validation
/// split (CSV) or the generator (synthetic task).
DatasetSplit load_dataset(const RunConfig& cfg, std::uint64_t seed);

}  // namespace gpdense
