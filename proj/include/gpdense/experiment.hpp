#pragma once

#include <filesystem>
#include <optional>

#include "gpdense/evolution.hpp"
#include "gpdense/run_config.hpp"

namespace gpdense {

/// Network settings for a loaded dataset (alphabet and class count filled in).
PlanConfig plan_for_dataset(const RunConfig& cfg, const DatasetSplit& data);

/// Seed that picks the validation split or synthetic samples for a run.
std::uint64_t data_seed(std::uint64_t run_seed);

struct ExperimentOptions {
    std::optional<EvolutionState> resume;
    int stop_after_generation = -1;
    /// Write artifacts here; nothing is written when empty.
    std::filesystem::path out_dir;
};

/// One evolutionary run with seed cfg.evo.master_seed. Writes report.json,
/// generations.csv, checkpoint.json (after every generation) and, once the
/// run completes, best_genotype.txt, best_plan.json, best_plan.dot and
/// training_curve.csv.
RunReport run_experiment(const RunConfig& cfg, const ExperimentOptions& options = {});

/// Config stored in a checkpoint or report, applied over the defaults.
RunConfig config_from_echo(const nlohmann::json& echo);

std::string read_text(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see a partial file.
void write_text(const std::filesystem::path& path, const std::string& text);

/// "seed 7  fitness 0.9420  test 0.9300  params 123456  S(5;E,E)"
std::string summary_line(const RunReport& report);

}  // namespace gpdense
