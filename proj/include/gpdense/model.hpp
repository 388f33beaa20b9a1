#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpdense/layers.hpp"
#include "gpdense/plan.hpp"

namespace gpdense {

/// The trainable phenotype of a NetworkPlan: embedding + 3-wide stem conv,
/// the dense-block DAG with per-block transition layers, and the k-max
/// pooling classifier head.
template <typename T>
class DenseNetModel {
public:
    explicit DenseNetModel(const NetworkPlan& plan);
    ~DenseNetModel();
    DenseNetModel(DenseNetModel&&) noexcept;
    DenseNetModel& operator=(DenseNetModel&&) noexcept;

    /// Kaiming-normal convolution and hidden FC weights, a zero output layer,
    /// zero biases, batch-norm scale 1 / shift 0, N(0,1) embeddings with a
    /// zero PAD row.
    void init(Rng& rng);

    /// Logits [B, classes]. In Train mode each block with drop_prob p is
    /// bypassed with probability p (draws come from `rng`, required then).
    Tensor<T> forward(const TokenBatch& batch, Mode mode, Rng* rng = nullptr);

    /// Backpropagates d(loss)/d(logits) from the most recent forward call,
    /// accumulating parameter gradients.
    void backward(const Tensor<T>& dlogits);

    std::vector<Param<T>*> params();
    /// Parameters with dotted, stable names, e.g. "block2.unit0.conv.weight".
    std::vector<std::pair<std::string, Param<T>*>> named_params();
    /// Named non-trainable state (batch-norm running statistics).
    std::vector<std::pair<std::string, Tensor<T>*>> buffers();
    void zero_grad();
    [[nodiscard]] std::int64_t parameter_count();

    /// Per-block bypass decisions of the latest forward call, indexed by block id.
    [[nodiscard]] const std::vector<bool>& last_dropped() const;
    Linear<T>& output_layer();
    [[nodiscard]] const NetworkPlan& plan() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

extern template class DenseNetModel<float>;
extern template class DenseNetModel<double>;

/// Parameter and buffer snapshot plus a training cursor.
template <typename T>
nlohmann::json model_to_json(DenseNetModel<T>& model, const nlohmann::json& cursor = {});
template <typename T>
nlohmann::json load_model_json(DenseNetModel<T>& model, const nlohmann::json& j);

}  // namespace gpdense
