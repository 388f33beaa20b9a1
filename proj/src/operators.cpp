#include "gpdense/operators.hpp"

#include <stdexcept>

namespace gpdense {

namespace {

void grow(Rng& rng, int depth, int min_depth, int max_depth, double p_decorate, std::vector<Symbol>& out) {
    bool terminal = false;
    if (depth >= max_depth) {
        terminal = true;
    } else if (depth >= min_depth) {
        // END is one of three primitives.
        terminal = uniform_int(rng, 0, 2) == 0;
    }
    if (terminal) {
        out.push_back(Symbol::end());
        return;
    }
    Symbol s;
    s.op = uniform_int(rng, 0, 1) == 0 ? Op::Seq : Op::Par;
    s.block_count = uniform_int(rng, kMinBlockCount, kMaxBlockCount);
    if (bernoulli(rng, p_decorate)) s.dropout = uniform_real(rng, 0.0, kMaxDropout);
    out.push_back(s);
    grow(rng, depth + 1, min_depth, max_depth, p_decorate, out);
    grow(rng, depth + 1, min_depth, max_depth, p_decorate, out);
}

}  // namespace

std::vector<Symbol> grow_tree(Rng& rng, int depth_min, int depth_max, double p_decorate) {
    if (depth_min < 1 || depth_min > depth_max || depth_max > kMaxTreeDepth)
        throw std::invalid_argument("invalid depth range [" + std::to_string(depth_min) + "," +
                                    std::to_string(depth_max) + "]");
    const int cap = uniform_int(rng, depth_min, depth_max);
    std::vector<Symbol> out;
    grow(rng, 1, depth_min, cap, p_decorate, out);
    return out;
}

Genotype random_genotype(Rng& rng, int depth_min, int depth_max, double p_decorate) {
    return Genotype(grow_tree(rng, depth_min, depth_max, p_decorate));
}

std::pair<std::vector<Symbol>, std::vector<Symbol>> swap_subtrees(const Genotype& a, std::size_t pos_a,
                                                                  const Genotype& b, std::size_t pos_b) {
    return {splice(a.symbols(), pos_a, b.subtree(pos_b)), splice(b.symbols(), pos_b, a.subtree(pos_a))};
}

std::pair<Genotype, Genotype> crossover(const Genotype& a, const Genotype& b, Rng& rng, int max_depth) {
    for (int attempt = 0; attempt <= kDepthRetries; ++attempt) {
        const std::size_t i = uniform_index(rng, a.size());
        const std::size_t j = uniform_index(rng, b.size());
        auto [x, y] = swap_subtrees(a, i, b, j);
        if (tree_depth(x) <= max_depth && tree_depth(y) <= max_depth)
            return {Genotype(std::move(x)), Genotype(std::move(y))};
    }
    return {a, b};
}

std::optional<Genotype> mutate_at(const Genotype& g, std::size_t pos, Rng& rng, const MutationParams& params) {
    const std::vector<Symbol> fresh = grow_tree(rng, params.grow_min, params.grow_max, params.p_decorate);
    std::vector<Symbol> out = splice(g.symbols(), pos, fresh);
    if (tree_depth(out) > params.max_depth) return std::nullopt;
    return Genotype(std::move(out));
}

Genotype mutate(const Genotype& g, Rng& rng, const MutationParams& params) {
    for (int attempt = 0; attempt <= kDepthRetries; ++attempt) {
        if (auto out = mutate_at(g, uniform_index(rng, g.size()), rng, params)) return *std::move(out);
    }
    return g;
}

}  // namespace gpdense
