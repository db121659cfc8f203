#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xghsi/autodiff.hpp"
#include "xghsi/graph.hpp"

namespace xghsi {

struct ModelConfig {
    std::size_t feature_dim = 0;
    std::size_t hidden_dim = 64;
    int num_classes = 2;
    double leaky_slope = 0.2;
    std::uint64_t init_seed = 0;

    /// Throws ConfigError.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weights are stored [out x in], so a layer computes x * W^T + b.
struct ModelParams {
    static constexpr std::size_t kCount = 10;
    static constexpr std::array<const char*, kCount> kNames{"w_in",   "b_in",   "w1_mean", "w2_mean", "w1_sum",
                                                            "w2_sum", "theta",  "attn",    "w_out",   "b_out"};

    ModelConfig config;
    Tensor<double> w_in;    // h x F
    Tensor<double> b_in;    // h
    Tensor<double> w1_mean; // h x h
    Tensor<double> w2_mean; // h x h
    Tensor<double> w1_sum;  // h x h
    Tensor<double> w2_sum;  // h x h
    Tensor<double> theta;   // h x 2h
    Tensor<double> attn;    // 2h, destination half first
    Tensor<double> w_out;   // K x 2h
    Tensor<double> b_out;   // K

    /// In kNames order.
    std::vector<Tensor<double>> list() const;
    static ModelParams from_list(const ModelConfig& config, std::vector<Tensor<double>> tensors);
    std::vector<Shape> expected_shapes() const;
    /// Shapes and finiteness; throws DimensionError / ValidationError.
    void validate() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform weights, zero biases, deterministic in config.init_seed.
ModelParams init_params(const ModelConfig& config);

void write_checkpoint(std::ostream& out, const ModelParams& params);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Precomputed gather/scatter indices for one graph.
struct MessageIndex {
    std::size_t num_nodes = 0;
    std::size_t num_edges = 0;

    // One entry per directed message src -> dst, grouped by dst.
    std::vector<std::size_t> msg_src;
    std::vector<std::size_t> msg_dst;
    std::vector<std::size_t> msg_edge;
    std::vector<double> inv_degree; // 0 for isolated nodes

    // Closed neighborhood pairs (dst, src): the self pair first, then neighbors ascending.
    std::vector<std::size_t> pair_dst;
    std::vector<std::size_t> pair_src;
    /// 0 for the self pair, edge id + 1 otherwise.
    std::vector<std::size_t> pair_slot;

    explicit MessageIndex(const SimilarityGraph& graph);
};

template <typename T>
struct ParamVars {
    ad::Var<T> w_in, b_in, w1_mean, w2_mean, w1_sum, w2_sum, theta, attn, w_out, b_out;

    static ParamVars from_list(std::span<const ad::Var<T>> vars);
    std::vector<ad::Var<T>> list() const;
};

/// Puts params on the tape as trainable leaves or as constants.
template <typename T>
ParamVars<T> bind_params(ad::Tape<T>& tape, const ModelParams& params, bool trainable);

/// Optional multiplicative masks: edge [M] scales every message along that
/// undirected edge, feature [F] scales input columns.
template <typename T>
struct Masks {
    std::optional<ad::Var<T>> edge;
    std::optional<ad::Var<T>> feature;
};

template <typename T>
ad::Var<T> linear_in(const ad::Var<T>& x, const ParamVars<T>& p, const Masks<T>& masks = {});
template <typename T>
ad::Var<T> mean_agg_layer(const ad::Var<T>& x1, const MessageIndex& index, const ParamVars<T>& p,
                          const Masks<T>& masks = {});
template <typename T>
ad::Var<T> sum_agg_layer(const ad::Var<T>& x1, const MessageIndex& index, const ParamVars<T>& p,
                         const Masks<T>& masks = {});
template <typename T>
ad::Var<T> concat_23(const ad::Var<T>& x2, const ad::Var<T>& x3);

template <typename T>
struct AttentionOut {
    ad::Var<T> x4;
    ad::Var<T> alpha; // aligned with MessageIndex pairs
};

template <typename T>
AttentionOut<T> attention_layer(const ad::Var<T>& x23, const MessageIndex& index, const ParamVars<T>& p,
                                T leaky_slope, const Masks<T>& masks = {});

template <typename T>
struct HeadOut {
    ad::Var<T> logits;
    ad::Var<T> probs;
};

template <typename T>
HeadOut<T> head(const ad::Var<T>& x1, const ad::Var<T>& x4, const ParamVars<T>& p);

template <typename T>
struct ForwardTrace {
    ad::Var<T> x1, x2, x3, x23, x4, alpha, logits, probs;
};

template <typename T>
ForwardTrace<T> forward(const ad::Var<T>& x, const MessageIndex& index, const ParamVars<T>& p, T leaky_slope,
                        const Masks<T>& masks = {});

/// Untaped double-precision inference.
struct Prediction {
    Tensor<double> probs; // N x K
    Tensor<double> alpha; // per MessageIndex pair
};

Prediction predict(const ModelParams& params, const Tensor<double>& x, const MessageIndex& index);

} // namespace xghsi
