#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gpdense/tensor.hpp"

namespace gpdense {

/// Fixed character alphabet. Index 0 is PAD/unknown; characters map to 1..N.
class Alphabet {
public:
    explicit Alphabet(std::string chars);
    /// 26 letters, 10 digits, 32 symbols and newline (69 characters).
    static Alphabet standard();

    [[nodiscard]] const std::string& chars() const { return chars_; }
    /// Number of embedding rows, PAD included.
    [[nodiscard]] int size() const { return static_cast<int>(chars_.size()) + 1; }
    [[nodiscard]] std::uint8_t index(unsigned char c) const { return lookup_[c]; }

private:
    std::string chars_;
    std::array<std::uint8_t, 256> lookup_{};
};

struct Sample {
    int label = 0;
    std::vector<std::uint8_t> chars;
    bool operator==(const Sample&) const = default;
};

struct DatasetSplit {
    std::vector<Sample> train, validation, test;
    Alphabet alphabet = Alphabet::standard();
    int max_len = 0;
    int num_classes = 0;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Lowercases, keeps the first max_len characters, maps unknown characters to
/// 0 and right-pads with 0.
std::vector<std::uint8_t> quantize(std::string_view text, const Alphabet& alphabet, int max_len);

struct CsvOptions {
    int max_len = 256;
    /// Declared class count; 0 infers it from the largest label in the files.
    int num_classes = 0;
    /// Fraction of the training file held out for validation. When unset the
    /// held-out share mirrors the test file's share of the whole corpus:
    /// ceil(N_train * N_test / (N_train + N_test)).
    std::optional<double> validation_fraction;
    std::uint64_t seed = 0;
};

/// Rows of "class","title"[,"body"], classes 1-based. Text is title + " " + body.
DatasetSplit load_csv(const std::string& train_path, const std::string& test_path, const CsvOptions& options);

/// Row-level parser exposed for tests: fields of every CSV record.
std::vector<std::vector<std::string>> parse_csv(std::string_view content);

std::size_t validation_size(std::size_t n_train, std::size_t n_test, std::optional<double> fraction);

/// Sample indices per batch for one epoch: a subsample of floor(fraction*N)
/// fixed by `seed`, reshuffled by (seed, epoch). The last partial batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, double fraction,
                                              std::uint64_t seed, int epoch);

TokenBatch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, int max_len);

struct SyntheticSizes {
    std::size_t train = 2000;
    std::size_t validation = 500;
    std::size_t test = 500;
    int length = 32;
};

/// Registered generators: "trigram4" (label = which of four marker trigrams
/// occurs in a random lowercase string).
DatasetSplit synthetic_task(const std::string& name, const SyntheticSizes& sizes, std::uint64_t seed);
std::vector<std::string> synthetic_task_names();

/// The four marker trigrams of "trigram4", indexed by label.
const std::array<std::string_view, 4>& trigram4_markers();

}  // namespace gpdense
