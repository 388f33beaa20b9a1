#pragma once

// Genotype representation: a binary GP tree of cell-division program symbols,
// stored as a prefix-order symbol sequence.
//
// Textual grammar (canonical, no whitespace):
//   node = "E" | op "(" int ["," "d=" real] ";" node "," node ")"
//   op   = "S" | "P"
// e.g. S(5;P(3;E,E),S(2,d=0.2;E,E))

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gpdense {

enum class Op : std::uint8_t { Seq, Par, End };

inline constexpr int kMinBlockCount = 1;
inline constexpr int kMaxBlockCount = 10;
inline constexpr double kMaxDropout = 0.5;
inline constexpr int kMaxTreeDepth = 17;

/// One program symbol. SEQ/PAR carry the conv-block count of the child cell
/// they create and an optional block-drop probability for that child.
struct Symbol {
    Op op = Op::End;
    int block_count = 0;
    std::optional<double> dropout;

    static Symbol end() { return {}; }
    static Symbol seq(int blocks, std::optional<double> drop = std::nullopt) { return {Op::Seq, blocks, drop}; }
    static Symbol par(int blocks, std::optional<double> drop = std::nullopt) { return {Op::Par, blocks, drop}; }

    [[nodiscard]] bool is_function() const { return op != Op::End; }
    bool operator==(const Symbol&) const = default;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    [[nodiscard]] std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class Genotype {
public:
    /// The single END leaf.
    Genotype();
    /// Throws std::invalid_argument unless `prefix` is one complete tree with
    /// in-range terminals and depth <= kMaxTreeDepth.
    explicit Genotype(std::vector<Symbol> prefix);

    static Genotype parse(std::string_view text);

    [[nodiscard]] std::string to_string() const;
    /// 16 hex digits of a 64-bit FNV-1a hash of the canonical text.
    [[nodiscard]] const std::string& id() const { return id_; }

    [[nodiscard]] std::span<const Symbol> symbols() const { return symbols_; }
    [[nodiscard]] std::size_t size() const { return symbols_.size(); }
    [[nodiscard]] int depth() const;
    /// One past the last symbol of the subtree rooted at `pos`.
    [[nodiscard]] std::size_t subtree_end(std::size_t pos) const;
    [[nodiscard]] std::span<const Symbol> subtree(std::size_t pos) const;
    /// Depth (root = 1) of every symbol, in prefix order.
    [[nodiscard]] std::vector<int> node_depths() const;

    friend bool operator==(const Genotype& a, const Genotype& b) { return a.symbols_ == b.symbols_; }

private:
    std::vector<Symbol> symbols_;
    std::string id_;
};

// Free helpers over raw prefix sequences, used by the variation operators
// before a candidate is known to satisfy the depth limit.
std::size_t subtree_end(std::span<const Symbol> prefix, std::size_t pos);
int tree_depth(std::span<const Symbol> prefix);
std::vector<Symbol> splice(std::span<const Symbol> prefix, std::size_t pos, std::span<const Symbol> replacement);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_real(double value);

}  // namespace gpdense
