#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xghsi/tensor.hpp"

namespace xghsi {

enum class Split { Train, Val, Test };

std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view name);

/// One post: its embedding, gold label and split membership.
struct NodeRecord {
    std::string id;
    int label = 0;
    std::optional<Split> split;
    std::vector<double> embedding;
    std::optional<std::string> text;

    friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

/// Labeled node features X (N x F) for the whole graph.
struct EmbeddingCorpus {
    std::size_t feature_dim = 0;
    int num_classes = 0;
    std::vector<NodeRecord> nodes;

    std::size_t size() const { return nodes.size(); }

    /// Throws ValidationError on the first violated invariant.
    void validate() const;

    std::unordered_map<std::string, std::size_t> id_index() const;
    Tensor<double> features() const;
    std::vector<int> labels() const;
    /// Node indices of one split, ascending.
    std::vector<std::size_t> indices(Split split) const;

    friend bool operator==(const EmbeddingCorpus&, const EmbeddingCorpus&) = default;
};

struct SplitSpec {
    std::array<double, 3> ratios{0.6, 0.2, 0.2}; // train, val, test
    std::uint64_t seed = 0;
};

EmbeddingCorpus read_corpus(std::istream& in);
EmbeddingCorpus load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const EmbeddingCorpus& corpus);
void save_corpus(const std::filesystem::path& path, const EmbeddingCorpus& corpus);

/// Shuffles by seed and cuts contiguous blocks by ratio. Flooring remainders
/// go to train, then val. A fully tagged corpus is returned unchanged.
EmbeddingCorpus assign_splits(EmbeddingCorpus corpus, const SplitSpec& spec);

/// Split sizes for n nodes under the flooring rule used by assign_splits.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

} // namespace xghsi
