#include <algorithm>
#include <functional>
#include <queue>
#include <stdexcept>

#include "gpdense/plan.hpp"

namespace gpdense {

namespace {

class Builder {
public:
    Builder(const Genotype& g, const PlanConfig& cfg) : g_(g), cfg_(cfg) {
        plan_.stem = cfg.stem;
        plan_.head = cfg.head;
        plan_.head_in_channels = cfg.channels;
        add_block(cfg.ancestor_conv_blocks, 0.0);
        plan_.edges.push_back({kStemNode, 0, 0});
        plan_.edges.push_back({0, kHeadNode, 0});
    }

    NetworkPlan build() {
        const std::size_t end = execute(0, 0);
        if (end != g_.size()) throw std::logic_error("decoder did not consume the whole genotype");
        assign_lengths();
        return std::move(plan_);
    }

private:
    int add_block(int conv_blocks, double drop) {
        DenseBlockSpec b;
        b.id = static_cast<int>(plan_.blocks.size());
        b.num_conv_blocks = conv_blocks;
        b.drop_prob = drop;
        b.in_channels = cfg_.channels;
        b.out_channels = cfg_.channels;
        b.growth = cfg_.growth;
        plan_.blocks.push_back(b);
        return b.id;
    }

    // Runs the symbol at `pos` on `cell`; returns the position after its subtree.
    std::size_t execute(std::size_t pos, int cell) {
        const Symbol& s = g_.symbols()[pos];
        if (s.op == Op::End) return pos + 1;

        const int child = add_block(s.block_count, s.dropout.value_or(0.0));
        auto& edges = plan_.edges;
        if (s.op == Op::Seq) {
            // The child takes over the mother's outputs; mother feeds child.
            for (Edge& e : edges)
                if (e.from == cell) e.from = child;
            edges.push_back({cell, child, 0});
        } else {
            // The child duplicates every connection of the mother.
            const std::size_t n = edges.size();
            for (std::size_t i = 0; i < n; ++i)
                if (edges[i].to == cell) edges.push_back({edges[i].from, child, 0});
            for (std::size_t i = 0; i < n; ++i)
                if (edges[i].from == cell) edges.push_back({child, edges[i].to, 0});
        }
        std::size_t next = execute(pos + 1, cell);
        return execute(next, child);
    }

    void assign_lengths() {
        const int k = plan_.head.k;
        auto source_length = [&](int node) {
            return node == kStemNode ? plan_.stem.max_len : plan_.blocks[node].out_length;
        };
        auto align = [&](int node) {
            const auto ins = plan_.in_edges(node);
            int target = source_length(plan_.edges[ins.front()].from);
            for (int e : ins) target = std::min(target, source_length(plan_.edges[e].from));
            for (int e : ins) {
                int len = source_length(plan_.edges[e].from);
                int steps = 0;
                while (len > target) {
                    const int next = pooled_length(len, k);
                    if (next == len) break;
                    len = next;
                    ++steps;
                }
                plan_.edges[e].align_pools = steps;
            }
            return target;
        };
        for (int id : topological_order(plan_)) {
            DenseBlockSpec& b = plan_.blocks[id];
            b.in_length = align(id);
            b.pooled = (b.in_length + 1) / 2 >= k;
            b.out_length = pooled_length(b.in_length, k);
        }
        plan_.head_in_length = align(kHeadNode);
    }

    const Genotype& g_;
    const PlanConfig& cfg_;
    NetworkPlan plan_;
};

}  // namespace

std::vector<int> NetworkPlan::in_edges(int node) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < edges.size(); ++i)
        if (edges[i].to == node) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> NetworkPlan::out_edges(int node) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < edges.size(); ++i)
        if (edges[i].from == node) out.push_back(static_cast<int>(i));
    return out;
}

NetworkPlan decode(const Genotype& g, const PlanConfig& cfg) { return Builder(g, cfg).build(); }

std::vector<int> topological_order(const NetworkPlan& plan) {
    const int n = static_cast<int>(plan.blocks.size());
    std::vector<int> indegree(n, 0);
    std::vector<std::vector<int>> succ(n);
    for (const Edge& e : plan.edges) {
        if (e.to < 0 || e.to >= n) continue;
        if (e.from >= 0 && e.from < n) {
            ++indegree[e.to];
            succ[e.from].push_back(e.to);
        }
    }
    std::priority_queue<int, std::vector<int>, std::greater<>> ready;
    for (int i = 0; i < n; ++i)
        if (indegree[i] == 0) ready.push(i);
    std::vector<int> order;
    order.reserve(n);
    while (!ready.empty()) {
        const int id = ready.top();
        ready.pop();
        order.push_back(id);
        for (int s : succ[id])
            if (--indegree[s] == 0) ready.push(s);
    }
    if (static_cast<int>(order.size()) != n) throw std::runtime_error("network plan contains a cycle");
    return order;
}

std::vector<std::string> validate_plan(const NetworkPlan& plan) {
    std::vector<std::string> v;
    const int n = static_cast<int>(plan.blocks.size());
    const int k = plan.head.k;
    auto name = [](int node) {
        if (node == kStemNode) return std::string("stem");
        if (node == kHeadNode) return std::string("head");
        return "block " + std::to_string(node);
    };

    if (n == 0) v.push_back("plan has no dense blocks");
    if (k < 1) v.push_back("k-max pooling k must be >= 1");
    if (plan.stem.max_len < 1) v.push_back("input length must be positive");
    if (plan.stem.alphabet_size < 1 || plan.stem.embed_dim < 1) v.push_back("stem dimensions must be positive");
    if (plan.head.fc1 < 1 || plan.head.fc2 < 1 || plan.head.num_classes < 2) v.push_back("head widths invalid");
    for (int i = 0; i < n; ++i) {
        const DenseBlockSpec& b = plan.blocks[i];
        if (b.id != i) v.push_back("block at index " + std::to_string(i) + " has id " + std::to_string(b.id));
        if (b.num_conv_blocks < kMinBlockCount || b.num_conv_blocks > kMaxBlockCount)
            v.push_back(name(i) + ": conv block count out of range");
        if (!(b.drop_prob >= 0.0 && b.drop_prob <= kMaxDropout)) v.push_back(name(i) + ": drop probability out of range");
        if (b.in_channels < 1 || b.out_channels < 1 || b.growth < 1) v.push_back(name(i) + ": non-positive channels");
    }

    bool endpoints_ok = true;
    for (const Edge& e : plan.edges) {
        const bool from_ok = e.from == kStemNode || (e.from >= 0 && e.from < n);
        const bool to_ok = e.to == kHeadNode || (e.to >= 0 && e.to < n);
        if (!from_ok || !to_ok) {
            v.push_back("edge " + name(e.from) + " -> " + name(e.to) + " has an invalid endpoint");
            endpoints_ok = false;
        } else if (e.from == e.to) {
            v.push_back("self-loop on " + name(e.from));
        }
        if (e.from == kStemNode && e.to == kHeadNode) v.push_back("stem connects directly to head");
        if (e.align_pools < 0) v.push_back("negative alignment on edge " + name(e.from) + " -> " + name(e.to));
    }
    if (!endpoints_ok) return v;

    // Single source / single sink.
    if (plan.out_edges(kStemNode).empty()) v.push_back("stem has no outgoing edge");
    if (plan.in_edges(kHeadNode).empty()) v.push_back("head has no incoming edge");
    for (int i = 0; i < n; ++i) {
        if (plan.in_edges(i).empty()) v.push_back(name(i) + " has no input (extra source)");
        if (plan.out_edges(i).empty()) v.push_back(name(i) + " has no output (extra sink)");
    }

    std::vector<int> order;
    try {
        order = topological_order(plan);
    } catch (const std::runtime_error&) {
        v.push_back("graph is not acyclic");
        return v;
    }

    // Channel equality at every merge point.
    auto source_channels = [&](int node) {
        return node == kStemNode ? plan.stem.out_channels : plan.blocks[node].out_channels;
    };
    for (const Edge& e : plan.edges) {
        const int want = e.to == kHeadNode ? plan.head_in_channels : plan.blocks[e.to].in_channels;
        if (source_channels(e.from) != want)
            v.push_back("channel mismatch on edge " + name(e.from) + " -> " + name(e.to) + ": " +
                        std::to_string(source_channels(e.from)) + " vs " + std::to_string(want));
    }

    // Temporal lengths: recompute from the stem and check every alignment.
    std::vector<int> out_len(n, 0);
    auto source_length = [&](int node) { return node == kStemNode ? plan.stem.max_len : out_len[node]; };
    auto check_merge = [&](int node, int declared) {
        const auto ins = plan.in_edges(node);
        if (ins.empty()) return declared;
        int target = -1;
        for (int ei : ins) {
            const Edge& e = plan.edges[ei];
            int len = source_length(e.from);
            for (int s = 0; s < e.align_pools; ++s) len = pooled_length(len, k);
            if (target < 0) target = len;
            if (len != target) {
                v.push_back("length mismatch at " + name(node) + ": operand from " + name(e.from) + " has length " +
                            std::to_string(len) + ", expected " + std::to_string(target));
            }
        }
        if (target != declared)
            v.push_back(name(node) + " declares input length " + std::to_string(declared) + " but receives " +
                        std::to_string(target));
        return target;
    };
    for (int id : order) {
        const DenseBlockSpec& b = plan.blocks[id];
        const int in_len = check_merge(id, b.in_length);
        const bool pooled = (in_len + 1) / 2 >= k;
        if (pooled != b.pooled) v.push_back(name(id) + ": transition pooling flag inconsistent with length");
        out_len[id] = pooled ? (in_len + 1) / 2 : in_len;
        if (out_len[id] != b.out_length) v.push_back(name(id) + ": output length inconsistent");
    }
    const int head_len = check_merge(kHeadNode, plan.head_in_length);
    if (head_len < k)
        v.push_back("head input length " + std::to_string(head_len) + " shorter than k=" + std::to_string(k));
    return v;
}

std::int64_t count_parameters(const NetworkPlan& plan) {
    using I = std::int64_t;
    constexpr I kernel = 3;
    const StemSpec& s = plan.stem;
    I total = I{s.alphabet_size} * s.embed_dim;
    total += I{s.embed_dim} * s.out_channels * kernel + s.out_channels;
    for (const DenseBlockSpec& b : plan.blocks) {
        for (int i = 0; i < b.num_conv_blocks; ++i) {
            const I cin = b.in_channels + I{i} * b.growth;
            total += 2 * cin;                        // batch-norm scale and shift
            total += cin * b.growth * kernel + b.growth;
        }
        total += I{b.concat_channels()} * b.out_channels * kernel + b.out_channels;  // transition
    }
    const HeadSpec& h = plan.head;
    const I flat = I{plan.head_in_channels} * h.k;
    total += flat * h.fc1 + h.fc1;
    total += I{h.fc1} * h.fc2 + h.fc2;
    total += I{h.fc2} * h.num_classes + h.num_classes;
    return total;
}

}  // namespace gpdense
