#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "xghsi/corpus.hpp"

using namespace xghsi;

namespace {

const char* kValid = R"({"feature_dim": 4, "num_classes": 3}
{"id": "a", "label": 0, "split": "train", "embedding": [1, 0, 0, 0], "text": "first post"}
{"id": "b", "label": 2, "split": "val", "embedding": [0.5, 0.25, -1, 2]}
{"id": "c", "label": 1, "split": null, "embedding": [0, 0, 1e-3, 7]}
)";

EmbeddingCorpus parse(const std::string& text) {
    std::istringstream in(text);
    return read_corpus(in);
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

EmbeddingCorpus untagged(std::size_t n) {
    EmbeddingCorpus c;
    c.feature_dim = 2;
    c.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
        c.nodes.push_back({"n" + std::to_string(i), static_cast<int>(i % 2), std::nullopt,
                           {1.0, static_cast<double>(i)}, std::nullopt});
    }
    return c;
}

} // namespace

TEST_CASE("load_corpus happy path") {
    auto c = parse(kValid);
    CHECK(c.size() == 3);
    CHECK(c.feature_dim == 4);
    CHECK(c.num_classes == 3);
    CHECK(c.nodes[0].text == std::optional<std::string>("first post"));
    CHECK(c.nodes[1].split == Split::Val);
    CHECK_FALSE(c.nodes[2].split.has_value());
    CHECK(c.features().shape == Shape{3, 4});
    CHECK(c.labels() == std::vector<int>{0, 2, 1});
}

TEST_CASE("load_corpus validation errors") {
    const std::string header = "{\"feature_dim\": 4, \"num_classes\": 3}\n";
    auto dim = error_of(header + R"({"id": "short", "label": 0, "split": "train", "embedding": [1, 2, 3]})");
    CHECK(dim.find("'short'") != std::string::npos);
    CHECK(dim.find("expected 4") != std::string::npos);

    CHECK(error_of("") == "empty corpus");
    CHECK(error_of(header) == "empty corpus");
    CHECK(error_of(header + R"({"id": "x", "label": 0, "split": "dev", "embedding": [1, 2, 3, 4]})")
              .find("unknown split tag 'dev'") != std::string::npos);
    CHECK(error_of(header + R"({"id": "x", "label": 0, "embedding": [1, 2, 3, 4]}
{"id": "x", "label": 1, "embedding": [1, 2, 3, 4]})")
              .find("duplicate node id 'x'") != std::string::npos);
    CHECK(error_of(header + R"({"id": "x", "label": 3, "embedding": [1, 2, 3, 4]})").find("label 3") !=
          std::string::npos);
    CHECK(error_of(header + "{not json").find("malformed JSON") != std::string::npos);
    CHECK(error_of(R"({"feature_dim": 4})").find("header") != std::string::npos);
}

TEST_CASE("load_corpus reports missing files as I/O errors") {
    CHECK_THROWS_AS(load_corpus("/nonexistent/dir/corpus.jsonl"), IoError);
}

TEST_CASE("load -> serialize -> load is the identity") {
    auto first = parse(kValid);
    std::ostringstream out;
    write_corpus(out, first);
    auto second = parse(out.str());
    CHECK(first == second);

    // through a file as well, with awkward doubles
    first.nodes[1].embedding = {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789};
    const auto path = std::filesystem::temp_directory_path() / "xghsi_corpus_roundtrip.jsonl";
    save_corpus(path, first);
    CHECK(load_corpus(path) == first);
    std::filesystem::remove(path);
}

TEST_CASE("assign_splits sizes") {
    auto count = [](const EmbeddingCorpus& c) {
        return std::array<std::size_t, 3>{c.indices(Split::Train).size(), c.indices(Split::Val).size(),
                                          c.indices(Split::Test).size()};
    };
    CHECK(count(assign_splits(untagged(10), {})) == std::array<std::size_t, 3>{6, 2, 2});
    CHECK(count(assign_splits(untagged(5), {})) == std::array<std::size_t, 3>{3, 1, 1});
    // 7 * (0.6, 0.2, 0.2) floors to (4, 1, 1); the leftover goes to train
    CHECK(count(assign_splits(untagged(7), {})) == std::array<std::size_t, 3>{5, 1, 1});
    // 9 floors to (5, 1, 1): train then val
    CHECK(count(assign_splits(untagged(9), {})) == std::array<std::size_t, 3>{6, 2, 1});
}

TEST_CASE("assign_splits is a deterministic partition within one record of each ratio") {
    for (std::size_t n : {3u, 10u, 57u, 200u}) {
        for (std::uint64_t seed : {0u, 1u, 99u}) {
            SplitSpec spec;
            spec.seed = seed;
            auto a = assign_splits(untagged(n), spec);
            auto b = assign_splits(untagged(n), spec);
            CHECK(a == b);
            std::set<std::size_t> all;
            for (Split s : {Split::Train, Split::Val, Split::Test}) {
                auto idx = a.indices(s);
                const double exact = spec.ratios[static_cast<std::size_t>(s)] * static_cast<double>(n);
                CHECK(std::abs(static_cast<double>(idx.size()) - exact) < 1.0);
                all.insert(idx.begin(), idx.end());
            }
            CHECK(all.size() == n);
        }
    }
}

TEST_CASE("assign_splits passes tagged corpora through and rejects bad input") {
    auto tagged = parse(R"({"feature_dim": 1, "num_classes": 2}
{"id": "a", "label": 0, "split": "test", "embedding": [1]}
{"id": "b", "label": 1, "split": "test", "embedding": [2]})");
    CHECK(assign_splits(tagged, {}) == tagged);

    auto mixed = parse(kValid);
    CHECK_THROWS_AS(assign_splits(mixed, {}), ValidationError);

    SplitSpec bad;
    bad.ratios = {0.5, 0.2, 0.2};
    CHECK_THROWS_AS(assign_splits(untagged(10), bad), ConfigError);
    bad.ratios = {1.0, 0.0, 0.0};
    CHECK_THROWS_AS(assign_splits(untagged(10), bad), ConfigError);
}
