#include "gpdense/data.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "gpdense/random.hpp"

namespace gpdense {

namespace {

void shuffle_in_place(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string unescape_newlines(std::string s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == 'n') {
            out += '\n';
            ++i;
        } else {
            out += s[i];
        }
    }
    return out;
}

struct RawRow {
    int label;  // 1-based as in the file
    std::string text;
};

std::vector<RawRow> read_rows(const std::string& path) {
    const auto records = parse_csv(read_file(path));
    if (records.empty()) throw DataError(path + ": empty file");
    std::vector<RawRow> rows;
    rows.reserve(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& f = records[r];
        const std::string where = path + ": row " + std::to_string(r + 1);
        if (f.size() < 2 || f.size() > 3)
            throw DataError(where + ": expected 2 or 3 columns, got " + std::to_string(f.size()));
        int label = 0;
        const std::string& cls = f[0];
        auto [p, ec] = std::from_chars(cls.data(), cls.data() + cls.size(), label);
        if (ec != std::errc{} || p != cls.data() + cls.size() || cls.empty())
            throw DataError(where + ": class '" + cls + "' is not an integer");
        if (label < 1) throw DataError(where + ": class " + cls + " out of range (classes are 1-based)");
        rows.push_back({label, unescape_newlines(f[1] + " " + (f.size() == 3 ? f[2] : std::string()))});
    }
    return rows;
}

}  // namespace

Alphabet::Alphabet(std::string chars) : chars_(std::move(chars)) {
    if (chars_.size() > 255) throw std::invalid_argument("alphabet too large");
    for (std::size_t i = 0; i < chars_.size(); ++i) {
        auto& slot = lookup_[static_cast<unsigned char>(chars_[i])];
        if (slot != 0) throw std::invalid_argument("duplicate alphabet character");
        slot = static_cast<std::uint8_t>(i + 1);
    }
}

Alphabet Alphabet::standard() {
    return Alphabet("abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/\\|_@#$%^&*~`+=<>()[]{}\n");
}

std::vector<std::uint8_t> quantize(std::string_view text, const Alphabet& alphabet, int max_len) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(std::max(max_len, 0)), 0);
    const std::size_t n = std::min(out.size(), text.size());
    for (std::size_t i = 0; i < n; ++i)
        out[i] = alphabet.index(static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(text[i]))));
    return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view content) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false, field_started = false;
    auto end_field = [&] {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(fields.size() == 1 && fields[0].empty())) records.push_back(std::move(fields));
        fields.clear();
    };
    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
        } else if (c == '\r') {
            // CRLF line endings
        } else {
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) throw DataError("unterminated quoted field in record " + std::to_string(records.size() + 1));
    if (!field.empty() || !fields.empty()) end_record();
    return records;
}

std::size_t validation_size(std::size_t n_train, std::size_t n_test, std::optional<double> fraction) {
    if (fraction) {
        if (!(*fraction >= 0.0 && *fraction < 1.0)) throw std::invalid_argument("validation fraction must be in [0,1)");
        return static_cast<std::size_t>(std::ceil(*fraction * static_cast<double>(n_train) - 1e-9));
    }
    const std::uint64_t total = n_train + n_test;
    if (total == 0) return 0;
    return static_cast<std::size_t>((std::uint64_t{n_train} * n_test + total - 1) / total);
}

DatasetSplit load_csv(const std::string& train_path, const std::string& test_path, const CsvOptions& options) {
    if (options.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    const auto train_rows = read_rows(train_path);
    const auto test_rows = read_rows(test_path);

    int classes = options.num_classes;
    if (classes == 0) {
        for (const auto& r : train_rows) classes = std::max(classes, r.label);
        for (const auto& r : test_rows) classes = std::max(classes, r.label);
    }
    auto check = [&](const std::vector<RawRow>& rows, const std::string& path) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].label > classes)
                throw DataError(path + ": row " + std::to_string(i + 1) + ": class " + std::to_string(rows[i].label) +
                                " out of range [1," + std::to_string(classes) + "]");
    };
    check(train_rows, train_path);
    check(test_rows, test_path);

    DatasetSplit split;
    split.max_len = options.max_len;
    split.num_classes = classes;
    auto to_sample = [&](const RawRow& r) {
        return Sample{r.label - 1, quantize(r.text, split.alphabet, options.max_len)};
    };

    std::vector<std::size_t> order(train_rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(stable_hash(options.seed, 0x73706c6974ULL));
    shuffle_in_place(order, rng);
    const std::size_t n_val = validation_size(train_rows.size(), test_rows.size(), options.validation_fraction);
    split.validation.reserve(n_val);
    split.train.reserve(order.size() - n_val);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? split.validation : split.train).push_back(to_sample(train_rows[order[i]]));
    split.test.reserve(test_rows.size());
    for (const auto& r : test_rows) split.test.push_back(to_sample(r));
    return split;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, double fraction,
                                              std::uint64_t seed, int epoch) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("data fraction must be in (0,1]");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng subsample_rng(stable_hash(seed, 0x737562ULL));
    shuffle_in_place(pool, subsample_rng);
    std::size_t m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    if (m == 0 && n > 0) m = 1;
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    Rng epoch_rng(stable_hash(seed, static_cast<std::uint64_t>(epoch) + 1));
    shuffle_in_place(pool, epoch_rng);

    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < m; i += batch_size)
        out.emplace_back(pool.begin() + static_cast<long>(i), pool.begin() + static_cast<long>(std::min(m, i + batch_size)));
    return out;
}

TokenBatch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, int max_len) {
    TokenBatch b;
    b.batch = indices.size();
    b.length = static_cast<std::size_t>(max_len);
    b.ids.reserve(b.batch * b.length);
    b.labels.reserve(b.batch);
    for (std::size_t i : indices) {
        const Sample& s = samples.at(i);
        if (s.chars.size() != b.length) throw std::invalid_argument("sample length does not match max_len");
        b.ids.insert(b.ids.end(), s.chars.begin(), s.chars.end());
        b.labels.push_back(s.label);
    }
    return b;
}

const std::array<std::string_view, 4>& trigram4_markers() {
    static const std::array<std::string_view, 4> markers{"qxz", "jvk", "wpy", "fgb"};
    return markers;
}

namespace {

int count_markers(std::string_view s) {
    int n = 0;
    for (std::size_t i = 0; i + 3 <= s.size(); ++i)
        for (auto m : trigram4_markers())
            if (s.substr(i, 3) == m) ++n;
    return n;
}

std::vector<Sample> trigram4_split(std::size_t n, int length, const Alphabet& alphabet, Rng& rng,
                                   std::set<std::string>& seen) {
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % 4;
    shuffle_in_place(labels, rng);
    std::vector<Sample> out;
    out.reserve(n);
    std::string s(static_cast<std::size_t>(length), 'a');
    for (std::size_t label : labels) {
        for (;;) {
            for (char& c : s) c = static_cast<char>('a' + uniform_int(rng, 0, 25));
            const auto pos = static_cast<std::size_t>(uniform_int(rng, 0, length - 3));
            s.replace(pos, 3, trigram4_markers()[label]);
            if (count_markers(s) == 1 && seen.insert(s).second) break;
        }
        out.push_back({static_cast<int>(label), quantize(s, alphabet, length)});
    }
    return out;
}

}  // namespace

std::vector<std::string> synthetic_task_names() { return {"trigram4"}; }

DatasetSplit synthetic_task(const std::string& name, const SyntheticSizes& sizes, std::uint64_t seed) {
    if (name != "trigram4") throw std::invalid_argument("unknown synthetic task '" + name + "'");
    if (sizes.length < 3) throw std::invalid_argument("trigram4 needs length >= 3");
    DatasetSplit split;
    split.max_len = sizes.length;
    split.num_classes = 4;
    Rng rng(stable_hash(seed, fnv1a64(name)));
    std::set<std::string> seen;
    split.train = trigram4_split(sizes.train, sizes.length, split.alphabet, rng, seen);
    split.validation = trigram4_split(sizes.validation, sizes.length, split.alphabet, rng, seen);
    split.test = trigram4_split(sizes.test, sizes.length, split.alphabet, rng, seen);
    return split;
}

}  // namespace gpdense
