#include "gpdense/genotype.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>

#include "gpdense/random.hpp"

namespace gpdense {

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void append_text(std::span<const Symbol> prefix, std::size_t& pos, std::string& out) {
    const Symbol& s = prefix[pos++];
    if (s.op == Op::End) {
        out += 'E';
        return;
    }
    out += s.op == Op::Seq ? 'S' : 'P';
    out += '(';
    out += std::to_string(s.block_count);
    if (s.dropout) {
        out += ",d=";
        out += format_real(*s.dropout);
    }
    out += ';';
    append_text(prefix, pos, out);
    out += ',';
    append_text(prefix, pos, out);
    out += ')';
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    std::vector<Symbol> run() {
        if (text_.empty()) throw ParseError("empty genotype", 0);
        node(1);
        if (pos_ != text_.size()) throw ParseError("trailing characters", pos_);
        return std::move(out_);
    }

private:
    [[nodiscard]] char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    void expect(char c, const char* context) {
        if (peek() != c) {
            std::string msg = "expected '";
            msg += c;
            msg += "' ";
            msg += context;
            throw ParseError(msg, pos_);
        }
        ++pos_;
    }

    void node(int depth) {
        if (depth > kMaxTreeDepth) throw ParseError("tree deeper than " + std::to_string(kMaxTreeDepth), pos_);
        const std::size_t start = pos_;
        const char c = peek();
        if (c == 'E') {
            ++pos_;
            out_.push_back(Symbol::end());
            return;
        }
        if (c != 'S' && c != 'P') throw ParseError("expected 'S', 'P' or 'E'", pos_);
        ++pos_;
        expect('(', "after operator");

        Symbol sym{c == 'S' ? Op::Seq : Op::Par, 0, std::nullopt};
        const std::size_t int_start = pos_;
        if (!std::isdigit(static_cast<unsigned char>(peek()))) throw ParseError("expected block count", pos_);
        auto [p, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), sym.block_count);
        if (ec != std::errc{}) throw ParseError("bad block count", int_start);
        pos_ = static_cast<std::size_t>(p - text_.data());
        if (sym.block_count < kMinBlockCount || sym.block_count > kMaxBlockCount)
            throw ParseError("block count out of range [1,10]", int_start);

        if (peek() == ',') {
            ++pos_;
            expect('d', "in decorator");
            expect('=', "in decorator");
            const std::size_t real_start = pos_;
            if (!std::isdigit(static_cast<unsigned char>(peek()))) throw ParseError("expected dropout value", pos_);
            double d = 0.0;
            auto [q, ec2] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), d);
            if (ec2 != std::errc{}) throw ParseError("bad dropout value", real_start);
            pos_ = static_cast<std::size_t>(q - text_.data());
            if (!(d >= 0.0 && d <= kMaxDropout)) throw ParseError("dropout out of range [0,0.5]", real_start);
            sym.dropout = d;
        }
        expect(';', "before children");
        out_.push_back(sym);
        if (peek() == ')') throw ParseError(std::string(1, text_[start]) + "-node requires two children", pos_);
        node(depth + 1);
        if (peek() != ',') throw ParseError(std::string(1, text_[start]) + "-node requires two children", pos_);
        ++pos_;
        node(depth + 1);
        expect(')', "after second child");
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::vector<Symbol> out_;
};

}  // namespace

std::string format_real(double value) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, p);
}

std::size_t subtree_end(std::span<const Symbol> prefix, std::size_t pos) {
    long open = 1;
    while (open > 0) {
        if (pos >= prefix.size()) throw std::invalid_argument("incomplete prefix tree");
        open += prefix[pos++].is_function() ? 1 : -1;
    }
    return pos;
}

int tree_depth(std::span<const Symbol> prefix) {
    // Stack of remaining-children counts; its height is the current depth.
    std::vector<int> pending;
    int best = 0;
    for (const Symbol& s : prefix) {
        best = std::max(best, static_cast<int>(pending.size()) + 1);
        if (s.is_function()) {
            pending.push_back(2);
            continue;
        }
        while (!pending.empty() && --pending.back() == 0) pending.pop_back();
    }
    return best;
}

std::vector<Symbol> splice(std::span<const Symbol> prefix, std::size_t pos, std::span<const Symbol> replacement) {
    const std::size_t end = subtree_end(prefix, pos);
    std::vector<Symbol> out;
    out.reserve(prefix.size() - (end - pos) + replacement.size());
    out.insert(out.end(), prefix.begin(), prefix.begin() + static_cast<std::ptrdiff_t>(pos));
    out.insert(out.end(), replacement.begin(), replacement.end());
    out.insert(out.end(), prefix.begin() + static_cast<std::ptrdiff_t>(end), prefix.end());
    return out;
}

Genotype::Genotype() : Genotype(std::vector<Symbol>{Symbol::end()}) {}

Genotype::Genotype(std::vector<Symbol> prefix) : symbols_(std::move(prefix)) {
    if (symbols_.empty()) throw std::invalid_argument("empty genotype");
    for (const Symbol& s : symbols_) {
        if (s.op == Op::End) {
            if (s.block_count != 0 || s.dropout) throw std::invalid_argument("END symbol carries no terminals");
            continue;
        }
        if (s.block_count < kMinBlockCount || s.block_count > kMaxBlockCount)
            throw std::invalid_argument("block count out of range [1,10]");
        if (s.dropout && !(*s.dropout >= 0.0 && *s.dropout <= kMaxDropout))
            throw std::invalid_argument("dropout out of range [0,0.5]");
    }
    if (gpdense::subtree_end(symbols_, 0) != symbols_.size())
        throw std::invalid_argument("prefix sequence is not a single tree");
    if (tree_depth(symbols_) > kMaxTreeDepth) throw std::invalid_argument("tree deeper than 17");
    id_ = hex64(fnv1a64(to_string()));
}

Genotype Genotype::parse(std::string_view text) { return Genotype(Parser(text).run()); }

std::string Genotype::to_string() const {
    std::string out;
    std::size_t pos = 0;
    append_text(symbols_, pos, out);
    return out;
}

int Genotype::depth() const { return tree_depth(symbols_); }

std::size_t Genotype::subtree_end(std::size_t pos) const { return gpdense::subtree_end(symbols_, pos); }

std::span<const Symbol> Genotype::subtree(std::size_t pos) const {
    return std::span<const Symbol>(symbols_).subspan(pos, subtree_end(pos) - pos);
}

std::vector<int> Genotype::node_depths() const {
    std::vector<int> depths;
    depths.reserve(symbols_.size());
    std::vector<int> pending;
    for (const Symbol& s : symbols_) {
        depths.push_back(static_cast<int>(pending.size()) + 1);
        if (s.is_function()) {
            pending.push_back(2);
            continue;
        }
        while (!pending.empty() && --pending.back() == 0) pending.pop_back();
    }
    return depths;
}

}  // namespace gpdense
