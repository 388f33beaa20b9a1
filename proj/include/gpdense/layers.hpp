#pragma once

// Layers with explicit forward/backward. Each layer caches what its backward
// pass needs from the most recent forward call. Parameter gradients are
// accumulated; call zero_grad() between steps.

#include <cstdint>
#include <vector>

#include "gpdense/random.hpp"
#include "gpdense/tensor.hpp"

namespace gpdense {

enum class Mode { Train, Eval };

/// Zero-mean normal with variance 2 / fan_in.
template <typename T>
void kaiming_normal(Tensor<T>& t, std::size_t fan_in, Rng& rng);

template <typename T>
class Embedding {
public:
    Embedding(int vocab, int dim);
    void init(Rng& rng);
    /// [B, L] indices -> [B, dim, L]. Index 0 is PAD and embeds to zeros.
    Tensor<T> forward(const TokenBatch& batch);
    void backward(const Tensor<T>& dy);
    std::vector<Param<T>*> params() { return {&weight_}; }
    Param<T>& weight() { return weight_; }

private:
    int vocab_, dim_;
    Param<T> weight_;
    TokenBatch cached_;
};

/// 1-D convolution, stride 1, zero padding kernel/2 (length preserving for odd kernels).
template <typename T>
class Conv1d {
public:
    Conv1d(int in_channels, int out_channels, int kernel = 3);
    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    std::vector<Param<T>*> params() { return {&weight_, &bias_}; }
    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }
    [[nodiscard]] int in_channels() const { return in_; }
    [[nodiscard]] int out_channels() const { return out_; }
    [[nodiscard]] int kernel() const { return kernel_; }

private:
    int in_, out_, kernel_;
    Param<T> weight_;  // [out, in, kernel]
    Param<T> bias_;    // [out]
    Tensor<T> input_;
};

template <typename T>
class BatchNorm1d {
public:
    explicit BatchNorm1d(int channels, double eps = 1e-5, double momentum = 0.1);
    void init();
    Tensor<T> forward(const Tensor<T>& x, Mode mode);
    Tensor<T> backward(const Tensor<T>& dy);
    std::vector<Param<T>*> params() { return {&gamma_, &beta_}; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }
    Param<T>& gamma() { return gamma_; }
    Param<T>& beta() { return beta_; }

private:
    int channels_;
    double eps_, momentum_;
    Param<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    Mode last_mode_ = Mode::Train;
};

template <typename T>
class Relu {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);

private:
    std::vector<std::uint8_t> mask_;
    std::vector<std::size_t> dims_;
};

/// 1x2 max-pool, stride 2, ceil mode: L -> ceil(L/2). Ties pick the earlier position.
template <typename T>
class MaxPool2 {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);

private:
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_dims_;
};

/// Keeps the k largest values per (batch, channel) in original temporal order.
template <typename T>
class KMaxPool {
public:
    explicit KMaxPool(int k) : k_(k) {}
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    [[nodiscard]] const std::vector<std::size_t>& selected() const { return selected_; }

private:
    int k_;
    std::vector<std::size_t> selected_;  // flat input index per output element
    std::vector<std::size_t> in_dims_;
};

/// y = x W^T + b over [rows, in].
template <typename T>
class Linear {
public:
    Linear(int in_features, int out_features);
    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    std::vector<Param<T>*> params() { return {&weight_, &bias_}; }
    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }

private:
    int in_, out_;
    Param<T> weight_;  // [out, in]
    Param<T> bias_;    // [out]
    Tensor<T> input_;
};

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Mean softmax cross-entropy over the rows of `logits`. When `dlogits` is
/// non-null it receives the gradient of the mean loss.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* dlogits);

/// Channel-axis helpers for [B, C, L] tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
void add_channels(Tensor<T>& dst, std::size_t begin, const Tensor<T>& src);

}  // namespace gpdense
