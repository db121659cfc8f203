#include "xghsi/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include <json.hpp>

#include "xghsi/trainer.hpp"

namespace xghsi {

using nlohmann::ordered_json;

void ExplainerConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("explainer epochs must be >= 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("explainer learning_rate must be positive");
    }
    for (double c : {edge_size_coeff, edge_entropy_coeff, feature_size_coeff, feature_entropy_coeff}) {
        if (!(c >= 0.0) || !std::isfinite(c)) {
            throw ConfigError("explainer coefficients must be finite and >= 0");
        }
    }
    if (top_k_edges < 1) {
        throw ConfigError("top_k_edges must be >= 1");
    }
}

ComputationalSubgraph computational_subgraph(const SimilarityGraph& graph, std::size_t node) {
    if (node >= graph.num_nodes()) {
        throw ValidationError("unknown node index " + std::to_string(node));
    }
    ComputationalSubgraph sub;
    sub.target = node;
    std::vector<std::size_t> ring{node};
    for (auto v : graph.neighbors(node)) {
        ring.push_back(v);
    }
    for (auto v : ring) {
        sub.nodes.push_back(v);
        for (std::size_t k = 0; k < graph.degree(v); ++k) {
            sub.nodes.push_back(graph.neighbors(v)[k]);
            sub.edges.push_back(graph.incident_edges(v)[k]);
        }
    }
    for (auto* list : {&sub.nodes, &sub.edges}) {
        std::sort(list->begin(), list->end());
        list->erase(std::unique(list->begin(), list->end()), list->end());
    }
    return sub;
}

namespace {

double open_unit(double s) {
    return std::clamp(s, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
}

struct Problem {
    SimilarityGraph graph;
    Tensor<double> features;
    std::size_t target = 0;
    /// Per graph edge: 0 when fixed at 1, otherwise 1 + position in the mask vector.
    std::vector<std::size_t> edge_slot;
};

Problem make_problem(const Tensor<double>& x, const SimilarityGraph& g, const ComputationalSubgraph& sub,
                     ExplainMode mode) {
    Problem p;
    if (mode == ExplainMode::FullGraph) {
        p.graph = g;
        p.features = x;
        p.target = sub.target;
        p.edge_slot.assign(g.num_edges(), 0);
        for (std::size_t k = 0; k < sub.edges.size(); ++k) {
            p.edge_slot[sub.edges[k]] = k + 1;
        }
        return p;
    }
    // Local ids follow ascending global ids, so neighbour order and edge order are preserved.
    std::vector<std::size_t> local(g.num_nodes(), 0);
    for (std::size_t k = 0; k < sub.nodes.size(); ++k) {
        local[sub.nodes[k]] = k;
    }
    std::vector<Edge> edges;
    for (auto e : sub.edges) {
        const auto& ge = g.edges()[e];
        edges.push_back({local[ge.i], local[ge.j], ge.similarity});
    }
    p.graph = SimilarityGraph::from_edges(sub.nodes.size(), std::move(edges), g.threshold());
    const std::size_t f = x.cols();
    p.features = Tensor<double>({sub.nodes.size(), f});
    for (std::size_t k = 0; k < sub.nodes.size(); ++k) {
        std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(sub.nodes[k] * f), f,
                    p.features.data.begin() + static_cast<std::ptrdiff_t>(k * f));
    }
    p.target = local[sub.target];
    p.edge_slot.resize(sub.edges.size());
    for (std::size_t k = 0; k < sub.edges.size(); ++k) {
        p.edge_slot[k] = k + 1;
    }
    return p;
}

} // namespace

Explanation explain_node(const Tensor<double>& features, const SimilarityGraph& graph, const ModelParams& params,
                         std::size_t node, const ExplainerConfig& cfg, ExplainMode mode) {
    cfg.validate();
    params.validate();
    if (features.rank() != 2 || features.rows() != graph.num_nodes() ||
        features.cols() != params.config.feature_dim) {
        throw DimensionError("explain_node: features " + shape_string(features.shape) + " do not match graph and model");
    }
    Explanation expl;
    expl.node = node;
    expl.subgraph = computational_subgraph(graph, node);
    const auto problem = make_problem(features, graph, expl.subgraph, mode);
    const MessageIndex index(problem.graph);
    const std::size_t num_masked = expl.subgraph.edges.size();
    const std::size_t num_features = params.config.feature_dim;
    const double slope = params.config.leaky_slope;

    {
        const auto pred = predict(params, problem.features, index);
        std::size_t best = 0;
        for (std::size_t c = 1; c < pred.probs.cols(); ++c) {
            if (pred.probs(problem.target, c) > pred.probs(problem.target, best)) {
                best = c;
            }
        }
        expl.predicted_class = static_cast<int>(best);
    }
    const std::vector<int> wanted(problem.graph.num_nodes(), expl.predicted_class);
    const std::vector<std::size_t> target_row{problem.target};

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> init(0.0, 0.1);
    std::vector<Tensor<double>> logits{Tensor<double>({num_masked}), Tensor<double>({num_features})};
    for (auto& t : logits) {
        for (auto& v : t.data) {
            v = init(rng);
        }
    }
    Adam<double> adam({logits[0].shape, logits[1].shape}, cfg.learning_rate);

    // Returns the objective; fills gradients when asked.
    auto objective = [&](std::vector<Tensor<double>>* grads) {
        ad::Tape<double> tape;
        auto edge_logits = tape.parameter(logits[0]);
        auto feature_logits = tape.parameter(logits[1]);
        auto edge_sigma = ad::sigmoid(edge_logits);
        auto feature_sigma = ad::sigmoid(feature_logits);
        auto slots = ad::concat_rows(tape.constant(Tensor<double>::filled({1}, 1.0)), edge_sigma);
        Masks<double> masks{ad::gather_rows(slots, std::span<const std::size_t>(problem.edge_slot)), feature_sigma};
        auto p = bind_params(tape, params, false);
        auto trace = forward(tape.constant(problem.features), index, p, slope, masks);
        auto loss = ad::nll_loss(trace.probs, std::span<const int>(wanted), std::span<const std::size_t>(target_row));
        if (num_masked > 0) {
            loss = ad::add(loss, ad::scale(ad::sum(edge_sigma), cfg.edge_size_coeff));
            loss = ad::add(loss, ad::scale(ad::mean(ad::binary_entropy_from_logits(edge_logits)), cfg.edge_entropy_coeff));
        }
        loss = ad::add(loss, ad::scale(ad::sum(feature_sigma), cfg.feature_size_coeff));
        loss = ad::add(loss, ad::scale(ad::mean(ad::binary_entropy_from_logits(feature_logits)),
                                       cfg.feature_entropy_coeff));
        const double value = loss.value().data[0];
        if (grads && std::isfinite(value)) {
            tape.backward(loss);
            *grads = {edge_logits.grad(), feature_logits.grad()};
        }
        return value;
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<Tensor<double>> grads;
        const double value = objective(&grads);
        if (!std::isfinite(value)) {
            throw DivergenceError("explainer diverged: non-finite objective at epoch " + std::to_string(epoch));
        }
        expl.objective.push_back(value);
        adam.step(logits, grads);
    }
    const double final_value = objective(nullptr);
    if (!std::isfinite(final_value)) {
        throw DivergenceError("explainer diverged: non-finite final objective");
    }
    expl.objective.push_back(final_value);

    auto sigma = [](double x) { return open_unit(1.0 / (1.0 + std::exp(-x))); };
    for (double v : logits[0].data) {
        expl.edge_mask.push_back(sigma(v));
    }
    for (double v : logits[1].data) {
        expl.feature_mask.push_back(sigma(v));
    }
    return expl;
}

ExplanationSubgraph extract_subgraph(const Explanation& expl, const SimilarityGraph& graph, std::size_t k) {
    if (k < 1) {
        throw ConfigError("top-k must be >= 1");
    }
    std::vector<std::size_t> order(expl.subgraph.edges.size());
    for (std::size_t n = 0; n < order.size(); ++n) {
        order[n] = n;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return expl.edge_mask[a] > expl.edge_mask[b]; });
    ExplanationSubgraph out;
    out.target = expl.node;
    out.nodes.push_back(expl.node);
    for (std::size_t n = 0; n < std::min(k, order.size()); ++n) {
        const auto id = expl.subgraph.edges[order[n]];
        const auto& e = graph.edges().at(id);
        out.edges.push_back({id, e.i, e.j, expl.edge_mask[order[n]]});
        out.nodes.push_back(e.i);
        out.nodes.push_back(e.j);
    }
    std::sort(out.nodes.begin(), out.nodes.end());
    out.nodes.erase(std::unique(out.nodes.begin(), out.nodes.end()), out.nodes.end());
    return out;
}

RenderFormat parse_render_format(std::string_view name) {
    if (name == "dot") {
        return RenderFormat::Dot;
    }
    if (name == "json") {
        return RenderFormat::Json;
    }
    throw ConfigError("unknown format '" + std::string(name) + "' (expected dot or json)");
}

namespace {

std::string dot_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out += '\\';
            out += c;
        } else if (c == '\n' || c == '\r') {
            out += ' ';
        } else {
            out += c;
        }
    }
    return out;
}

std::string snippet(const std::string& text, std::size_t limit = 40) {
    if (text.size() <= limit) {
        return text;
    }
    // stay on a UTF-8 boundary
    std::size_t cut = limit;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) {
        --cut;
    }
    return text.substr(0, cut) + "...";
}

std::string three_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace

std::string render_explanation(const Explanation& expl, const EmbeddingCorpus& corpus, const SimilarityGraph& graph,
                               std::size_t k, RenderFormat format) {
    if (corpus.size() != graph.num_nodes()) {
        throw ValidationError("corpus and graph sizes differ");
    }
    const auto sub = extract_subgraph(expl, graph, k);
    const auto& nodes = corpus.nodes;
    if (format == RenderFormat::Json) {
        ordered_json doc;
        doc["node"] = nodes[expl.node].id;
        doc["predicted_class"] = expl.predicted_class;
        auto edges = ordered_json::array();
        for (const auto& e : sub.edges) {
            edges.push_back(ordered_json{{"i", nodes[e.i].id}, {"j", nodes[e.j].id}, {"mask", e.mask}});
        }
        doc["edges"] = std::move(edges);
        doc["features"] = expl.feature_mask;
        return doc.dump(1) + "\n";
    }
    std::ostringstream out;
    out << "graph explanation {\n";
    for (auto v : sub.nodes) {
        std::string label = dot_escape(nodes[v].id);
        if (nodes[v].text) {
            label += "\\n" + dot_escape(snippet(*nodes[v].text));
        }
        out << "  \"" << dot_escape(nodes[v].id) << "\" [label=\"" << label << "\""
            << (v == expl.node ? ", shape=doublecircle" : "") << "];\n";
    }
    for (const auto& e : sub.edges) {
        out << "  \"" << dot_escape(nodes[e.i].id) << "\" -- \"" << dot_escape(nodes[e.j].id) << "\" [label=\""
            << three_decimals(e.mask) << "\"];\n";
    }
    out << "}\n";
    return out.str();
}

} // namespace xghsi
