#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "gpdense/genotype.hpp"
#include "gpdense/random.hpp"

namespace gpdense {

inline constexpr int kDepthRetries = 3;

/// Grow-method tree with depth in [depth_min, depth_max]. The depth cap is
/// drawn uniformly from the range; nodes above depth_min are forced to be
/// functions. Each SEQ/PAR is decorated with probability p_decorate.
Genotype random_genotype(Rng& rng, int depth_min = 1, int depth_max = 10, double p_decorate = 0.1);

/// Same as random_genotype but returns the raw prefix sequence.
std::vector<Symbol> grow_tree(Rng& rng, int depth_min, int depth_max, double p_decorate);

/// Single-point subtree crossover. Up to kDepthRetries re-draws when an
/// offspring exceeds max_depth; after that both parents are returned.
std::pair<Genotype, Genotype> crossover(const Genotype& a, const Genotype& b, Rng& rng,
                                        int max_depth = kMaxTreeDepth);

/// Raw swap of the subtrees at `pos_a` in `a` and `pos_b` in `b`.
std::pair<std::vector<Symbol>, std::vector<Symbol>> swap_subtrees(const Genotype& a, std::size_t pos_a,
                                                                  const Genotype& b, std::size_t pos_b);

struct MutationParams {
    int grow_min = 1;
    int grow_max = 3;
    double p_decorate = 0.1;
    int max_depth = kMaxTreeDepth;
};

/// Uniform mutation: a uniformly chosen subtree is replaced by a freshly
/// grown one. Same retry-then-copy depth policy as crossover.
Genotype mutate(const Genotype& g, Rng& rng, const MutationParams& params = {});

/// Replace the subtree at `pos` with a grown subtree. Returns nullopt if the
/// result would exceed params.max_depth.
std::optional<Genotype> mutate_at(const Genotype& g, std::size_t pos, Rng& rng, const MutationParams& params = {});

}  // namespace gpdense
