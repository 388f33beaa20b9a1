#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

#include "gpdense/data.hpp"

using namespace gpdense;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("gpdense_data_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(path / name, std::ios::binary) << content;
        return (path / name).string();
    }
};

std::string decode_chars(const std::vector<std::uint8_t>& chars, const Alphabet& a) {
    std::string s;
    for (auto c : chars)
        if (c != 0) s += a.chars()[c - 1];
    return s;
}

}  // namespace

TEST_CASE("standard alphabet") {
    const Alphabet a = Alphabet::standard();
    CHECK(a.chars() == std::string("abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/\\|_@#$%^&*~`+=<>()[]{}\n"));
    CHECK(a.chars().size() == 69);
    CHECK(a.size() == 70);
    CHECK(a.index('a') == 1);
    CHECK(a.index('z') == 26);
    CHECK(a.index('0') == 27);
    CHECK(a.index('-') == 37);
    CHECK(a.index('\n') == 69);
    CHECK(a.index('A') == 0);
    CHECK(a.index(' ') == 0);
    CHECK(a.index(0xC3) == 0);
    CHECK_THROWS(Alphabet("abca"));
}

TEST_CASE("quantize") {
    const Alphabet a = Alphabet::standard();
    CHECK(quantize("ab", a, 4) == std::vector<std::uint8_t>{1, 2, 0, 0});
    CHECK(quantize("Ab", a, 4) == quantize("ab", a, 4));
    CHECK(quantize("a b", a, 3) == std::vector<std::uint8_t>{1, 0, 2});
    CHECK(quantize("abcdef", a, 3) == std::vector<std::uint8_t>{1, 2, 3});
    CHECK(quantize("", a, 2) == std::vector<std::uint8_t>{0, 0});

    const std::string outlier(1012, 'q');
    CHECK(quantize(outlier, a, 256).size() == 256);
    CHECK(quantize(outlier, a, 512).size() == 512);
    CHECK(quantize("short", a, 512).size() == 512);
}

TEST_CASE("csv parser handles quoting") {
    const auto rows = parse_csv("\"1\",\"a, b\",\"say \"\"hi\"\"\"\n2,plain\r\n\"3\",\"multi\nline\",\"\"\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"1", "a, b", "say \"hi\""});
    CHECK(rows[1] == std::vector<std::string>{"2", "plain"});
    CHECK(rows[2] == std::vector<std::string>{"3", "multi\nline", ""});
    CHECK_THROWS_AS(parse_csv("\"1\",\"open"), DataError);
}

TEST_CASE("validation split sizes") {
    CHECK(validation_size(120000, 7600, std::nullopt) == 7148);
    CHECK(validation_size(650000, 50000, std::nullopt) == 46429);
    CHECK(validation_size(1000, 100, 0.1) == 100);
    CHECK(validation_size(1000, 100, 0.0) == 0);
}

TEST_CASE("load_csv builds text, labels and splits") {
    TempDir dir;
    std::string train;
    for (int i = 0; i < 40; ++i)
        train += "\"" + std::to_string(i % 3 + 1) + "\",\"Title " + std::to_string(i) + "\",\"Body\\nline\"\n";
    const std::string tr = dir.write("train.csv", train);
    const std::string te = dir.write("test.csv", "\"2\",\"only a title\"\n\"3\",\"x\",\"y\"\n");

    CsvOptions opts;
    opts.max_len = 24;
    opts.seed = 9;
    const DatasetSplit d = load_csv(tr, te, opts);
    CHECK(d.num_classes == 3);
    CHECK(d.max_len == 24);
    CHECK(d.test.size() == 2);
    CHECK(d.validation.size() == validation_size(40, 2, std::nullopt));
    CHECK(d.train.size() + d.validation.size() == 40);
    CHECK(d.test[0].label == 1);
    CHECK(decode_chars(d.test[0].chars, d.alphabet) == "onlyatitle");
    CHECK(decode_chars(d.test[1].chars, d.alphabet) == "xy");

    std::set<std::string> texts;
    for (const auto* split : {&d.train, &d.validation}) {
        for (const Sample& s : *split) {
            CHECK(s.chars.size() == 24);
            CHECK(s.label >= 0);
            CHECK(s.label < 3);
            const std::string t = decode_chars(s.chars, d.alphabet);
            CHECK(t.find("body\nline") != std::string::npos);
            texts.insert(t);
        }
    }
    CHECK(texts.size() == 40);  // disjoint: every row lands in exactly one split

    const DatasetSplit again = load_csv(tr, te, opts);
    CHECK(again.train == d.train);
    CHECK(again.validation == d.validation);
    opts.seed = 10;
    CHECK(load_csv(tr, te, opts).validation != d.validation);

    opts.num_classes = 5;
    CHECK(load_csv(tr, te, opts).num_classes == 5);
    opts.validation_fraction = 0.25;
    CHECK(load_csv(tr, te, opts).validation.size() == 10);
}

TEST_CASE("load_csv errors name the row") {
    TempDir dir;
    const std::string te = dir.write("test.csv", "1,a\n");
    const auto message = [&](const std::string& content) {
        try {
            load_csv(dir.write("bad.csv", content), te, {});
        } catch (const DataError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("1,a\n0,b\n").find("row 2") != std::string::npos);
    CHECK(message("1,a\nx,b\n").find("row 2") != std::string::npos);
    CHECK(message("1,a\n1\n").find("row 2") != std::string::npos);
    CHECK(message("1,a,b,c\n").find("row 1") != std::string::npos);
    CHECK(message("").find("empty") != std::string::npos);
    CsvOptions opts;
    opts.num_classes = 2;
    CHECK_THROWS_AS(load_csv(dir.write("three.csv", "3,a\n"), te, opts), DataError);
    CHECK_THROWS_AS(load_csv((dir.path / "missing.csv").string(), te, {}), DataError);
}

TEST_CASE("batches") {
    const auto b = batches(1000, 128, 0.25, 1, 0);
    REQUIRE(b.size() == 2);
    CHECK(b[0].size() == 128);
    CHECK(b[1].size() == 122);

    CHECK(batches(1000, 128, 0.25, 1, 0) == b);
    CHECK(batches(1000, 128, 0.25, 1, 1) != b);
    // the subsample is fixed by the seed; epochs only reorder it
    const auto members = [](const std::vector<std::vector<std::size_t>>& bs) {
        std::set<std::size_t> s;
        for (const auto& x : bs) s.insert(x.begin(), x.end());
        return s;
    };
    CHECK(members(batches(1000, 128, 0.25, 1, 3)) == members(b));
    CHECK(members(b).size() == 250);

    const auto full = batches(1000, 64, 1.0, 2, 0);
    std::vector<std::size_t> all;
    for (const auto& x : full) all.insert(all.end(), x.begin(), x.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(1000);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(all == expected);

    CHECK(batches(3, 128, 0.1, 1, 0).at(0).size() == 1);
    CHECK_THROWS(batches(10, 0, 1.0, 1, 0));
    CHECK_THROWS(batches(10, 4, 0.0, 1, 0));
    CHECK_THROWS(batches(10, 4, 1.5, 1, 0));
}

TEST_CASE("make_batch lays out ids row-major") {
    std::vector<Sample> s{{0, {1, 2, 3}}, {2, {4, 5, 6}}};
    const TokenBatch b = make_batch(s, {1, 0}, 3);
    CHECK(b.batch == 2);
    CHECK(b.length == 3);
    CHECK(b.ids == std::vector<std::uint8_t>{4, 5, 6, 1, 2, 3});
    CHECK(b.labels == std::vector<int>{2, 0});
}

TEST_CASE("trigram4 synthetic task") {
    SyntheticSizes sizes;
    const DatasetSplit d = synthetic_task("trigram4", sizes, 5);
    CHECK(d.train.size() == 2000);
    CHECK(d.validation.size() == 500);
    CHECK(d.test.size() == 500);
    CHECK(d.num_classes == 4);
    CHECK(d.max_len == 32);

    const auto& markers = trigram4_markers();
    std::set<std::string> seen;
    for (const auto* split : {&d.train, &d.validation, &d.test}) {
        std::vector<int> counts(4, 0);
        for (const Sample& s : *split) {
            ++counts[static_cast<std::size_t>(s.label)];
            const std::string text = decode_chars(s.chars, d.alphabet);
            CHECK(text.size() == 32);
            // rule oracle: the label is the unique marker present
            int found = -1, hits = 0;
            for (int m = 0; m < 4; ++m)
                if (text.find(markers[static_cast<std::size_t>(m)]) != std::string::npos) {
                    found = m;
                    ++hits;
                }
            CHECK(hits == 1);
            CHECK(found == s.label);
            seen.insert(text);
        }
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        CHECK(*hi - *lo <= 1);
    }
    CHECK(seen.size() == 3000);

    CHECK(synthetic_task("trigram4", sizes, 5).train == d.train);
    CHECK(synthetic_task("trigram4", sizes, 6).train != d.train);
    CHECK_THROWS(synthetic_task("nope", sizes, 5));
    CHECK(synthetic_task_names() == std::vector<std::string>{"trigram4"});
}
