#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpdense/data.hpp"
#include "gpdense/model.hpp"
#include "gpdense/plan.hpp"

namespace gpdense {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 128;
    double lr0 = 0.01;
    double momentum = 0.9;
    int halve_every = 3;
    double data_fraction = 0.25;
    std::uint64_t seed = 0;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
    int eval_batch_size = 256;

    void validate() const;
};

/// lr0 * 0.5^floor(epoch / halve_every)
double lr_at_epoch(int epoch, const TrainConfig& cfg);

/// v <- mu*v - lr*g; w <- w + v for every parameter.
template <typename T>
void sgd_momentum_step(const std::vector<Param<T>*>& params, double lr, double mu);

/// Per-candidate training trace. Everything except wall_seconds is a
/// deterministic function of (plan, data, config).
struct FitnessRecord {
    std::uint64_t seed = 0;
    std::vector<double> train_loss;
    std::vector<double> train_accuracy;
    std::vector<double> val_loss;
    std::vector<double> val_accuracy;
    double fitness = 0.0;  // max(val_accuracy), 0 when failed
    std::int64_t parameter_count = 0;
    bool failed = false;
    std::string failure;
    std::optional<double> test_accuracy;
    double wall_seconds = 0.0;

    [[nodiscard]] bool same_result(const FitnessRecord& other) const;
};

nlohmann::json record_to_json(const FitnessRecord& r);
FitnessRecord record_from_json(const nlohmann::json& j);

/// Per-epoch curve rows (epoch, split, metric, value).
std::string curves_csv(const FitnessRecord& r);

struct TrainOptions {
    /// Evaluate the final model on the test split.
    bool evaluate_test = false;
    /// Evaluate on the validation split after each epoch.
    bool evaluate_validation = true;
};

/// Trains a fresh model for the plan. A non-finite loss marks the record
/// failed with fitness 0 instead of throwing.
/// When `model_out` is given it receives the trained model.
FitnessRecord train_model(const NetworkPlan& plan, const DatasetSplit& data, const TrainConfig& cfg,
                          const TrainOptions& options = {},
                          std::unique_ptr<DenseNetModel<float>>* model_out = nullptr);

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
};

template <typename T>
EvalResult evaluate(DenseNetModel<T>& model, const std::vector<Sample>& samples, int max_len, int batch_size = 256);

}  // namespace gpdense
