#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xghsi/corpus.hpp"

namespace xghsi {

inline constexpr double kDefaultSimilarityThreshold = 0.725;

/// Undirected edge, stored with i < j.
struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double similarity = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected similarity graph over corpus nodes 0..N-1.
///
/// Edges are kept twice: as a flat list sorted by (i, j), and as per-node
/// ascending neighbor lists (CSR) where each entry also records the index of
/// its undirected edge in the flat list.
class SimilarityGraph {
public:
    SimilarityGraph() = default;

    /// Endpoint order in `edges` is irrelevant. Self-loops, duplicates and
    /// out-of-range endpoints are rejected.
    static SimilarityGraph from_edges(std::size_t num_nodes, std::vector<Edge> edges,
                                      double threshold = kDefaultSimilarityThreshold);

    std::size_t num_nodes() const { return num_nodes_; }
    std::size_t num_edges() const { return edges_.size(); }
    double threshold() const { return threshold_; }

    const std::vector<Edge>& edges() const { return edges_; }
    std::span<const std::size_t> neighbors(std::size_t node) const;
    /// Edge ids aligned with neighbors(node).
    std::span<const std::size_t> incident_edges(std::size_t node) const;
    std::size_t degree(std::size_t node) const { return offsets_[node + 1] - offsets_[node]; }
    std::optional<std::size_t> find_edge(std::size_t a, std::size_t b) const;

    friend bool operator==(const SimilarityGraph&, const SimilarityGraph&) = default;

private:
    std::size_t num_nodes_ = 0;
    double threshold_ = kDefaultSimilarityThreshold;
    std::vector<Edge> edges_;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::size_t> adjacency_;
    std::vector<std::size_t> adjacency_edge_;
};

/// u.v / (|u| |v|), clamped to [-1, 1]. Zero-norm input is a ValidationError.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Exact pair scan: edge (i, j) iff cosine similarity >= threshold.
/// `threads` = 0 picks the hardware concurrency; results do not depend on it.
SimilarityGraph build_graph(const EmbeddingCorpus& corpus, double threshold = kDefaultSimilarityThreshold,
                            unsigned threads = 1);

struct GraphStats {
    std::size_t num_nodes = 0;
    std::size_t num_edges = 0;
    std::size_t min_degree = 0;
    double mean_degree = 0.0;
    std::size_t max_degree = 0;
    std::size_t isolated = 0;
    std::size_t components = 0;
};

GraphStats graph_stats(const SimilarityGraph& graph);
std::string format_stats(const GraphStats& stats);

/// Line-delimited export keyed by corpus node ids.
void write_graph(std::ostream& out, const SimilarityGraph& graph, const EmbeddingCorpus& corpus);
void save_graph(const std::filesystem::path& path, const SimilarityGraph& graph, const EmbeddingCorpus& corpus);
/// Rejects node-count mismatches and ids unknown to the corpus, naming them.
SimilarityGraph read_graph(std::istream& in, const EmbeddingCorpus& corpus);
SimilarityGraph load_graph(const std::filesystem::path& path, const EmbeddingCorpus& corpus);

} // namespace xghsi
