#include "xghsi/model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include <json.hpp>

#include "io_util.hpp"

namespace xghsi {

using nlohmann::json;
using nlohmann::ordered_json;

void ModelConfig::validate() const {
    if (feature_dim < 1) {
        throw ConfigError("feature_dim must be >= 1");
    }
    if (hidden_dim < 1) {
        throw ConfigError("hidden_dim must be >= 1");
    }
    if (num_classes < 1) {
        throw ConfigError("num_classes must be >= 1");
    }
    if (!std::isfinite(leaky_slope)) {
        throw ConfigError("leaky_slope must be finite");
    }
}

std::vector<Tensor<double>> ModelParams::list() const {
    return {w_in, b_in, w1_mean, w2_mean, w1_sum, w2_sum, theta, attn, w_out, b_out};
}

std::vector<Shape> ModelParams::expected_shapes() const {
    const auto f = config.feature_dim, h = config.hidden_dim, k = static_cast<std::size_t>(config.num_classes);
    return {{h, f}, {h}, {h, h}, {h, h}, {h, h}, {h, h}, {h, 2 * h}, {2 * h}, {k, 2 * h}, {k}};
}

ModelParams ModelParams::from_list(const ModelConfig& config, std::vector<Tensor<double>> t) {
    if (t.size() != kCount) {
        throw DimensionError("expected " + std::to_string(kCount) + " parameter tensors, got " +
                             std::to_string(t.size()));
    }
    ModelParams p;
    p.config = config;
    p.w_in = std::move(t[0]);
    p.b_in = std::move(t[1]);
    p.w1_mean = std::move(t[2]);
    p.w2_mean = std::move(t[3]);
    p.w1_sum = std::move(t[4]);
    p.w2_sum = std::move(t[5]);
    p.theta = std::move(t[6]);
    p.attn = std::move(t[7]);
    p.w_out = std::move(t[8]);
    p.b_out = std::move(t[9]);
    p.validate();
    return p;
}

void ModelParams::validate() const {
    config.validate();
    const auto tensors = list();
    const auto shapes = expected_shapes();
    for (std::size_t k = 0; k < kCount; ++k) {
        if (tensors[k].shape != shapes[k]) {
            throw DimensionError(std::string(kNames[k]) + " has shape " + shape_string(tensors[k].shape) +
                                 ", expected " + shape_string(shapes[k]));
        }
        for (double v : tensors[k].data) {
            if (!std::isfinite(v)) {
                throw ValidationError(std::string(kNames[k]) + " contains a non-finite value");
            }
        }
    }
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    std::mt19937_64 rng(config.init_seed);
    const auto shapes = p.expected_shapes();
    std::vector<Tensor<double>> tensors;
    for (const auto& shape : shapes) {
        tensors.emplace_back(shape);
    }
    // Biases (b_in, b_out) stay zero. The attention vector is a 1 x 2h weight.
    for (std::size_t k = 0; k < ModelParams::kCount; ++k) {
        if (k == 1 || k == 9) {
            continue;
        }
        const std::size_t fan_out = shapes[k].size() == 2 ? shapes[k][0] : 1;
        const std::size_t fan_in = shapes[k].size() == 2 ? shapes[k][1] : shapes[k][0];
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-s, s);
        for (auto& v : tensors[k].data) {
            do {
                v = dist(rng);
            } while (v == -s);
        }
    }
    return ModelParams::from_list(config, std::move(tensors));
}

void write_checkpoint(std::ostream& out, const ModelParams& params) {
    params.validate();
    ordered_json doc;
    doc["format"] = "xghsi-checkpoint";
    doc["version"] = 1;
    const auto& c = params.config;
    doc["config"] = ordered_json{{"feature_dim", c.feature_dim},
                                 {"hidden_dim", c.hidden_dim},
                                 {"num_classes", c.num_classes},
                                 {"leaky_slope", c.leaky_slope},
                                 {"init_seed", c.init_seed}};
    ordered_json tensors = ordered_json::object();
    const auto list = params.list();
    for (std::size_t k = 0; k < ModelParams::kCount; ++k) {
        tensors[ModelParams::kNames[k]] = ordered_json{{"shape", list[k].shape}, {"data", list[k].data}};
    }
    doc["params"] = std::move(tensors);
    out << doc.dump(1) << '\n';
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    auto out = detail::open_output(path);
    write_checkpoint(out, params);
    detail::finish_output(out, path);
}

ModelParams read_checkpoint(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("checkpoint: malformed JSON (") + e.what() + ")");
    }
    try {
        if (doc.value("format", "") != "xghsi-checkpoint" || doc.value("version", 0) != 1) {
            throw ValidationError("checkpoint: unrecognised format or version");
        }
        ModelConfig c;
        const auto& jc = doc.at("config");
        c.feature_dim = jc.at("feature_dim").get<std::size_t>();
        c.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
        c.num_classes = jc.at("num_classes").get<int>();
        c.leaky_slope = jc.at("leaky_slope").get<double>();
        c.init_seed = jc.at("init_seed").get<std::uint64_t>();
        std::vector<Tensor<double>> tensors;
        for (const char* name : ModelParams::kNames) {
            const auto& jt = doc.at("params").at(name);
            tensors.emplace_back(jt.at("shape").get<Shape>(), jt.at("data").get<std::vector<double>>());
        }
        return ModelParams::from_list(c, std::move(tensors));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return read_checkpoint(in);
}

MessageIndex::MessageIndex(const SimilarityGraph& graph) : num_nodes(graph.num_nodes()), num_edges(graph.num_edges()) {
    inv_degree.assign(num_nodes, 0.0);
    for (std::size_t v = 0; v < num_nodes; ++v) {
        const auto nb = graph.neighbors(v);
        const auto ids = graph.incident_edges(v);
        if (!nb.empty()) {
            inv_degree[v] = 1.0 / static_cast<double>(nb.size());
        }
        pair_dst.push_back(v);
        pair_src.push_back(v);
        pair_slot.push_back(0);
        for (std::size_t k = 0; k < nb.size(); ++k) {
            msg_src.push_back(nb[k]);
            msg_dst.push_back(v);
            msg_edge.push_back(ids[k]);
            pair_dst.push_back(v);
            pair_src.push_back(nb[k]);
            pair_slot.push_back(ids[k] + 1);
        }
    }
}

template <typename T>
ParamVars<T> ParamVars<T>::from_list(std::span<const ad::Var<T>> v) {
    if (v.size() != ModelParams::kCount) {
        throw DimensionError("expected " + std::to_string(ModelParams::kCount) + " parameter variables");
    }
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
}

template <typename T>
std::vector<ad::Var<T>> ParamVars<T>::list() const {
    return {w_in, b_in, w1_mean, w2_mean, w1_sum, w2_sum, theta, attn, w_out, b_out};
}

template <typename T>
ParamVars<T> bind_params(ad::Tape<T>& tape, const ModelParams& params, bool trainable) {
    std::vector<ad::Var<T>> vars;
    for (const auto& t : params.list()) {
        auto cast = t.template cast<T>();
        vars.push_back(trainable ? tape.parameter(std::move(cast)) : tape.constant(std::move(cast)));
    }
    return ParamVars<T>::from_list(vars);
}

namespace {

template <typename T>
void check_edge_mask(const Masks<T>& masks, const MessageIndex& index) {
    if (masks.edge && masks.edge->shape() != Shape{index.num_edges}) {
        throw DimensionError("edge mask has shape " + shape_string(masks.edge->shape()) + ", expected [" +
                             std::to_string(index.num_edges) + "]");
    }
}

template <typename T>
ad::Var<T> linear(const ad::Var<T>& x, const ad::Var<T>& w) {
    return ad::matmul(x, ad::transpose(w));
}

// Sum over incoming messages, each scaled by its edge mask when present.
template <typename T>
ad::Var<T> neighbor_sum(const ad::Var<T>& x1, const MessageIndex& index, const Masks<T>& masks) {
    check_edge_mask(masks, index);
    auto msgs = ad::gather_rows(x1, std::span<const std::size_t>(index.msg_src));
    if (masks.edge) {
        msgs = ad::mul_rows(msgs, ad::gather_rows(*masks.edge, std::span<const std::size_t>(index.msg_edge)));
    }
    return ad::segment_sum(msgs, std::span<const std::size_t>(index.msg_dst), index.num_nodes);
}

} // namespace

template <typename T>
ad::Var<T> linear_in(const ad::Var<T>& x, const ParamVars<T>& p, const Masks<T>& masks) {
    auto input = x;
    if (masks.feature) {
        input = ad::mul_columns(input, *masks.feature);
    }
    return ad::add_row_vector(linear(input, p.w_in), p.b_in);
}

template <typename T>
ad::Var<T> mean_agg_layer(const ad::Var<T>& x1, const MessageIndex& index, const ParamVars<T>& p,
                          const Masks<T>& masks) {
    Tensor<T> inv({index.num_nodes});
    for (std::size_t v = 0; v < index.num_nodes; ++v) {
        inv.data[v] = static_cast<T>(index.inv_degree[v]);
    }
    auto mean = ad::mul_rows(neighbor_sum(x1, index, masks), x1.tape().constant(std::move(inv)));
    return ad::add(linear(x1, p.w1_mean), linear(mean, p.w2_mean));
}

template <typename T>
ad::Var<T> sum_agg_layer(const ad::Var<T>& x1, const MessageIndex& index, const ParamVars<T>& p,
                         const Masks<T>& masks) {
    return ad::add(linear(x1, p.w1_sum), linear(neighbor_sum(x1, index, masks), p.w2_sum));
}

template <typename T>
ad::Var<T> concat_23(const ad::Var<T>& x2, const ad::Var<T>& x3) {
    return ad::concat_columns(x2, x3);
}

template <typename T>
AttentionOut<T> attention_layer(const ad::Var<T>& x23, const MessageIndex& index, const ParamVars<T>& p,
                                T leaky_slope, const Masks<T>& masks) {
    check_edge_mask(masks, index);
    const std::span<const std::size_t> dst(index.pair_dst), src(index.pair_src);
    auto z = linear(x23, p.theta);
    auto z_dst = ad::gather_rows(z, dst);
    auto z_src = ad::gather_rows(z, src);
    auto scores = ad::leaky_relu(ad::matvec(ad::concat_columns(z_dst, z_src), p.attn), leaky_slope);
    auto alpha = ad::segment_softmax(scores, dst, index.num_nodes);
    auto weight = alpha;
    if (masks.edge) {
        // slot 0 holds the unmasked self pair
        auto slots = ad::concat_rows(x23.tape().constant(Tensor<T>::filled({1}, T(1))), *masks.edge);
        weight = ad::mul(alpha, ad::gather_rows(slots, std::span<const std::size_t>(index.pair_slot)));
    }
    auto x4 = ad::segment_sum(ad::mul_rows(z_src, weight), dst, index.num_nodes);
    return {x4, alpha};
}

template <typename T>
HeadOut<T> head(const ad::Var<T>& x1, const ad::Var<T>& x4, const ParamVars<T>& p) {
    auto logits = ad::add_row_vector(linear(ad::concat_columns(x1, x4), p.w_out), p.b_out);
    return {logits, ad::softmax(logits)};
}

template <typename T>
ForwardTrace<T> forward(const ad::Var<T>& x, const MessageIndex& index, const ParamVars<T>& p, T leaky_slope,
                        const Masks<T>& masks) {
    if (x.shape().size() != 2 || x.shape()[0] != index.num_nodes) {
        throw DimensionError("forward: features " + shape_string(x.shape()) + " for " +
                             std::to_string(index.num_nodes) + " nodes");
    }
    ForwardTrace<T> t;
    t.x1 = linear_in(x, p, masks);
    t.x2 = mean_agg_layer(t.x1, index, p, masks);
    t.x3 = sum_agg_layer(t.x1, index, p, masks);
    t.x23 = concat_23(t.x2, t.x3);
    auto att = attention_layer(t.x23, index, p, leaky_slope, masks);
    t.x4 = att.x4;
    t.alpha = att.alpha;
    auto out = head(t.x1, t.x4, p);
    t.logits = out.logits;
    t.probs = out.probs;
    return t;
}

Prediction predict(const ModelParams& params, const Tensor<double>& x, const MessageIndex& index) {
    ad::Tape<double> tape;
    auto p = bind_params(tape, params, false);
    auto trace = forward(tape.constant(x), index, p, params.config.leaky_slope);
    return {trace.probs.value(), trace.alpha.value()};
}

#define XGHSI_INSTANTIATE(T)                                                                                   \
    template struct ParamVars<T>;                                                                              \
    template ParamVars<T> bind_params(ad::Tape<T>&, const ModelParams&, bool);                                 \
    template ad::Var<T> linear_in(const ad::Var<T>&, const ParamVars<T>&, const Masks<T>&);                    \
    template ad::Var<T> mean_agg_layer(const ad::Var<T>&, const MessageIndex&, const ParamVars<T>&,            \
                                       const Masks<T>&);                                                       \
    template ad::Var<T> sum_agg_layer(const ad::Var<T>&, const MessageIndex&, const ParamVars<T>&,             \
                                      const Masks<T>&);                                                        \
    template ad::Var<T> concat_23(const ad::Var<T>&, const ad::Var<T>&);                                       \
    template AttentionOut<T> attention_layer(const ad::Var<T>&, const MessageIndex&, const ParamVars<T>&, T,   \
                                             const Masks<T>&);                                                 \
    template HeadOut<T> head(const ad::Var<T>&, const ad::Var<T>&, const ParamVars<T>&);                       \
    template ForwardTrace<T> forward(const ad::Var<T>&, const MessageIndex&, const ParamVars<T>&, T,           \
                                     const Masks<T>&);

XGHSI_INSTANTIATE(float)
XGHSI_INSTANTIATE(double)

#undef XGHSI_INSTANTIATE

} // namespace xghsi
