#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpdense/genotype.hpp"
#include "gpdense/operators.hpp"
#include "gpdense/plan.hpp"
#include "gpdense/train.hpp"

namespace gpdense {

enum class Origin { Init, Crossover, Mutation, Clone, Elite };

std::string origin_name(Origin o);
Origin origin_from_name(const std::string& s);

struct Individual {
    Genotype genotype;
    std::optional<double> fitness;
    std::optional<FitnessRecord> record;
    Origin origin = Origin::Init;
};

struct EvoConfig {
    int pop_size = 20;
    int generations = 20;
    int tournament_k = 3;
    double p_crossover = 0.5;
    double p_mutation = 0.1;
    double elitism_rate = 0.1;
    int depth_init_min = 1;
    int depth_init_max = 10;
    int depth_max = kMaxTreeDepth;
    double p_decorate = 0.1;
    int mutation_depth_min = 1;
    int mutation_depth_max = 3;
    int runs = 30;
    std::uint64_t master_seed = 0;
    /// Final retrain budget as a multiple of the per-candidate epoch budget.
    int retrain_epoch_factor = 3;

    void validate() const;
    [[nodiscard]] int elite_count() const;
};

/// Trains one genotype with the given seed and returns its record.
using Evaluator = std::function<FitnessRecord(const Genotype&, std::uint64_t seed)>;
using FitnessCache = std::map<std::string, FitnessRecord>;

/// Seed for the individual at `index` of `generation`.
std::uint64_t training_seed(std::uint64_t master_seed, int generation, std::size_t index);

/// Scores every individual lacking fitness. Unknown genotype ids are trained
/// (up to `workers` at a time) and committed to the cache in population
/// order; cached ids are reused. Returns the number of trainings performed.
std::size_t evaluate_population(std::vector<Individual>& pop, int generation, const Evaluator& evaluate,
                                FitnessCache& cache, std::uint64_t master_seed, int workers = 1);

/// k distinct individuals drawn uniformly; the fittest wins, ties to the lower index.
std::size_t tournament_select(std::span<const Individual> pop, int k, Rng& rng);

/// Elites (copied with their fitness) followed by tournament-bred offspring.
std::vector<Individual> next_generation(std::span<const Individual> pop, const EvoConfig& cfg, Rng& rng);

struct GenotypeStats {
    int num_seq = 0;
    int num_par = 0;
    int depth = 0;
    int decorated = 0;
    bool operator==(const GenotypeStats&) const = default;
};

GenotypeStats genotype_stats(const Genotype& g);

struct GenerationRow {
    int generation = 0;
    double best = 0.0;
    double mean = 0.0;
    double min = 0.0;
    double best_so_far = 0.0;
    std::string best_genotype;
    int best_num_seq = 0;
    int best_num_par = 0;
    std::size_t trained = 0;
    std::vector<Individual> individuals;
};

struct FinalResult {
    std::string genotype;
    double evolved_fitness = 0.0;
    std::int64_t parameter_count = 0;
    GenotypeStats stats;
    FitnessRecord retrain;
};

struct RunReport {
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<GenerationRow> generations;
    std::optional<FinalResult> final_result;
};

/// Everything needed to continue a run after `generation` was evaluated.
struct EvolutionState {
    int generation = -1;
    std::vector<Individual> population;
    FitnessCache cache;
    std::string rng;
    std::vector<GenerationRow> rows;
    nlohmann::json config;
};

struct RunHooks {
    Evaluator evaluate;
    /// Trains the fittest genotype on the full training split and fills test_accuracy.
    Evaluator retrain;
    std::function<void(const EvolutionState&)> on_generation;
    std::optional<EvolutionState> resume;
    /// Stop (without the final retrain) after this generation; -1 runs to completion.
    int stop_after_generation = -1;
    int workers = 1;
    nlohmann::json config_echo;
};

RunReport run_evolution(const EvoConfig& cfg, const RunHooks& hooks);

/// Decode-and-train evaluator over a dataset; exceptions become failed records.
Evaluator make_evaluator(const PlanConfig& plan_cfg, const TrainConfig& train_cfg, const DatasetSplit& data);
/// Full-training-split retrain for cfg.retrain_epoch_factor x the epoch budget.
Evaluator make_retrainer(const PlanConfig& plan_cfg, const TrainConfig& train_cfg, const DatasetSplit& data,
                         int epoch_factor);

nlohmann::json report_to_json(const RunReport& report);
std::string generations_csv(const RunReport& report);

nlohmann::json individual_to_json(const Individual& ind);
Individual individual_from_json(const nlohmann::json& j);
nlohmann::json state_to_json(const EvolutionState& state);
EvolutionState state_from_json(const nlohmann::json& j);

}  // namespace gpdense
