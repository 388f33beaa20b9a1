#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpdense/genotype.hpp"

namespace gpdense {

// Graph endpoints that are not dense blocks.
inline constexpr int kStemNode = -1;
inline constexpr int kHeadNode = -2;

enum class MergeMode { Sum };

struct StemSpec {
    int alphabet_size = 70;  // 69 characters + PAD
    int embed_dim = 16;
    int max_len = 256;
    int out_channels = 32;   // 3-wide stem convolution after the embedding
    bool operator==(const StemSpec&) const = default;
};

struct HeadSpec {
    int k = 8;
    int fc1 = 1024;
    int fc2 = 1024;
    int num_classes = 4;
    bool operator==(const HeadSpec&) const = default;
};

struct DenseBlockSpec {
    int id = 0;
    int num_conv_blocks = 2;
    double drop_prob = 0.0;
    int in_channels = 32;
    int out_channels = 32;
    int growth = 32;
    int in_length = 0;
    int out_length = 0;
    bool pooled = true;  // false when the transition pool is floored to identity

    [[nodiscard]] int concat_channels() const { return in_channels + num_conv_blocks * growth; }
    bool operator==(const DenseBlockSpec&) const = default;
};

/// Directed connection. `align_pools` is the number of extra 1x2 max-pools
/// applied to this operand so its length matches the other fan-in operands.
struct Edge {
    int from = kStemNode;
    int to = kHeadNode;
    int align_pools = 0;
    bool operator==(const Edge&) const = default;
};

struct NetworkPlan {
    StemSpec stem;
    HeadSpec head;
    MergeMode merge = MergeMode::Sum;
    std::vector<DenseBlockSpec> blocks;
    std::vector<Edge> edges;
    int head_in_length = 0;
    int head_in_channels = 32;

    [[nodiscard]] std::vector<int> in_edges(int node) const;
    [[nodiscard]] std::vector<int> out_edges(int node) const;
    bool operator==(const NetworkPlan&) const = default;
};

struct PlanConfig {
    StemSpec stem;
    HeadSpec head;
    int channels = 32;
    int growth = 32;
    int ancestor_conv_blocks = 2;
};

/// One 1x2 ceil-mode max-pool step, floored to identity below k.
constexpr int pooled_length(int length, int k) {
    const int half = (length + 1) / 2;
    return half >= k ? half : length;
}

/// Execute the genotype depth-first against the ancestor network.
NetworkPlan decode(const Genotype& g, const PlanConfig& cfg = {});

/// Empty when the plan is a valid feed-forward DenseNet DAG.
std::vector<std::string> validate_plan(const NetworkPlan& plan);

/// Topological order of block ids (ties broken by smallest id). Throws on cycles.
std::vector<int> topological_order(const NetworkPlan& plan);

/// Trainable scalars: embedding, convolutions, batch-norm affine pairs, FC layers.
std::int64_t count_parameters(const NetworkPlan& plan);

nlohmann::json plan_to_json(const NetworkPlan& plan);
NetworkPlan plan_from_json(const nlohmann::json& j);
std::string plan_to_dot(const NetworkPlan& plan);

}  // namespace gpdense
