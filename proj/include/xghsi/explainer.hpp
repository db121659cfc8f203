#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xghsi/corpus.hpp"
#include "xghsi/graph.hpp"
#include "xghsi/model.hpp"

namespace xghsi {

struct ExplainerConfig {
    std::size_t epochs = 100;
    double learning_rate = 0.01;
    double edge_size_coeff = 0.005;
    double edge_entropy_coeff = 1.0;
    double feature_size_coeff = 0.1;
    double feature_entropy_coeff = 0.1;
    std::size_t top_k_edges = 10;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

/// The receptive field of one node: every node within two hops, and every
/// edge with an endpoint in the closed one-hop neighbourhood. Both lists are
/// ascending global indices.
struct ComputationalSubgraph {
    std::size_t target = 0;
    std::vector<std::size_t> nodes;
    std::vector<std::size_t> edges;
};

ComputationalSubgraph computational_subgraph(const SimilarityGraph& graph, std::size_t node);

struct Explanation {
    std::size_t node = 0;
    int predicted_class = 0;
    ComputationalSubgraph subgraph;
    std::vector<double> edge_mask;    // aligned with subgraph.edges
    std::vector<double> feature_mask; // one value per feature
    /// Objective before each update, then after the last one (epochs + 1 values).
    std::vector<double> objective;
};

enum class ExplainMode {
    Subgraph,  // optimise on the extracted receptive field
    FullGraph, // run every forward on the whole graph
};

/// Learns sigmoid edge and feature masks that keep the model's own
/// prediction for `node`. Parameters stay frozen.
Explanation explain_node(const Tensor<double>& features, const SimilarityGraph& graph, const ModelParams& params,
                         std::size_t node, const ExplainerConfig& cfg, ExplainMode mode = ExplainMode::Subgraph);

struct SubgraphEdge {
    std::size_t edge = 0; // global edge id
    std::size_t i = 0;
    std::size_t j = 0;
    double mask = 0.0;
};

struct ExplanationSubgraph {
    std::size_t target = 0;
    std::vector<SubgraphEdge> edges; // mask descending, ties by edge id
    std::vector<std::size_t> nodes;  // ascending, always contains target
};

/// The k highest-mask edges with their endpoints.
ExplanationSubgraph extract_subgraph(const Explanation& expl, const SimilarityGraph& graph, std::size_t k);

enum class RenderFormat { Dot, Json };

/// Throws ConfigError on anything but "dot" or "json".
RenderFormat parse_render_format(std::string_view name);

std::string render_explanation(const Explanation& expl, const EmbeddingCorpus& corpus, const SimilarityGraph& graph,
                               std::size_t k, RenderFormat format);

} // namespace xghsi
