#include "xghsi/graph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "io_util.hpp"

namespace xghsi {

using nlohmann::json;
using nlohmann::ordered_json;

SimilarityGraph SimilarityGraph::from_edges(std::size_t num_nodes, std::vector<Edge> edges, double threshold) {
    for (auto& e : edges) {
        if (e.i >= num_nodes || e.j >= num_nodes) {
            throw ValidationError("edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                                  ") out of range for " + std::to_string(num_nodes) + " nodes");
        }
        if (e.i == e.j) {
            throw ValidationError("self-loop on node " + std::to_string(e.i));
        }
        if (e.i > e.j) {
            std::swap(e.i, e.j);
        }
    }
    std::sort(edges.begin(), edges.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    for (std::size_t k = 1; k < edges.size(); ++k) {
        if (edges[k].i == edges[k - 1].i && edges[k].j == edges[k - 1].j) {
            throw ValidationError("duplicate edge (" + std::to_string(edges[k].i) + ", " +
                                  std::to_string(edges[k].j) + ")");
        }
    }

    SimilarityGraph g;
    g.num_nodes_ = num_nodes;
    g.threshold_ = threshold;
    g.edges_ = std::move(edges);
    g.offsets_.assign(num_nodes + 1, 0);
    for (const auto& e : g.edges_) {
        ++g.offsets_[e.i + 1];
        ++g.offsets_[e.j + 1];
    }
    for (std::size_t n = 0; n < num_nodes; ++n) {
        g.offsets_[n + 1] += g.offsets_[n];
    }
    g.adjacency_.resize(2 * g.edges_.size());
    g.adjacency_edge_.resize(2 * g.edges_.size());
    // With edges in (i, j) order every neighbor list comes out ascending.
    std::vector<std::size_t> fill(g.offsets_.begin(), g.offsets_.end() - 1);
    for (std::size_t k = 0; k < g.edges_.size(); ++k) {
        const auto& e = g.edges_[k];
        g.adjacency_[fill[e.i]] = e.j;
        g.adjacency_edge_[fill[e.i]++] = k;
        g.adjacency_[fill[e.j]] = e.i;
        g.adjacency_edge_[fill[e.j]++] = k;
    }
    return g;
}

std::span<const std::size_t> SimilarityGraph::neighbors(std::size_t node) const {
    return {adjacency_.data() + offsets_[node], degree(node)};
}

std::span<const std::size_t> SimilarityGraph::incident_edges(std::size_t node) const {
    return {adjacency_edge_.data() + offsets_[node], degree(node)};
}

std::optional<std::size_t> SimilarityGraph::find_edge(std::size_t a, std::size_t b) const {
    if (a >= num_nodes_ || b >= num_nodes_) {
        return std::nullopt;
    }
    auto nb = neighbors(a);
    auto it = std::lower_bound(nb.begin(), nb.end(), b);
    if (it == nb.end() || *it != b) {
        return std::nullopt;
    }
    return incident_edges(a)[static_cast<std::size_t>(it - nb.begin())];
}

namespace {

double dot(std::span<const double> u, std::span<const double> v) {
    double acc = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        acc += u[k] * v[k];
    }
    return acc;
}

double norm(std::span<const double> u) {
    return std::sqrt(dot(u, u));
}

// Shared by cosine_similarity and the cached-norm scan so both agree bit for bit.
double cosine_from_parts(double uv, double nu, double nv) {
    return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

} // namespace

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw DimensionError("cosine_similarity: vectors of length " + std::to_string(u.size()) + " and " +
                             std::to_string(v.size()));
    }
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu == 0.0 || nv == 0.0) {
        throw ValidationError("degenerate input: zero-norm embedding");
    }
    return cosine_from_parts(dot(u, v), nu, nv);
}

SimilarityGraph build_graph(const EmbeddingCorpus& corpus, double threshold, unsigned threads) {
    const std::size_t n = corpus.size();
    if (n == 0) {
        throw ValidationError("build_graph: empty corpus");
    }
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = norm(corpus.nodes[i].embedding);
        if (norms[i] == 0.0) {
            throw ValidationError("degenerate input: zero-norm embedding for node '" + corpus.nodes[i].id + "'");
        }
        if (corpus.nodes[i].embedding.size() != corpus.feature_dim) {
            throw DimensionError("node '" + corpus.nodes[i].id + "' has the wrong embedding length");
        }
    }

    if (threads == 0) {
        threads = std::max(1u, std::thread::hardware_concurrency());
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));

    // Rows are dealt round-robin so the triangular workload stays balanced;
    // per-row results are concatenated in row order afterwards.
    std::vector<std::vector<Edge>> per_row(n);
    auto scan = [&](unsigned worker) {
        for (std::size_t i = worker; i < n; i += threads) {
            const auto& u = corpus.nodes[i].embedding;
            for (std::size_t j = i + 1; j < n; ++j) {
                const auto& v = corpus.nodes[j].embedding;
                const double sim = cosine_from_parts(dot(u, v), norms[i], norms[j]);
                if (sim >= threshold) {
                    per_row[i].push_back({i, j, sim});
                }
            }
        }
    };
    if (threads == 1) {
        scan(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back(scan, w);
        }
    }

    std::vector<Edge> edges;
    for (auto& row : per_row) {
        edges.insert(edges.end(), row.begin(), row.end());
    }
    return SimilarityGraph::from_edges(n, std::move(edges), threshold);
}

GraphStats graph_stats(const SimilarityGraph& graph) {
    GraphStats s;
    s.num_nodes = graph.num_nodes();
    s.num_edges = graph.num_edges();
    if (s.num_nodes == 0) {
        return s;
    }
    s.min_degree = std::numeric_limits<std::size_t>::max();
    std::size_t total = 0;
    for (std::size_t v = 0; v < s.num_nodes; ++v) {
        const auto d = graph.degree(v);
        s.min_degree = std::min(s.min_degree, d);
        s.max_degree = std::max(s.max_degree, d);
        total += d;
        if (d == 0) {
            ++s.isolated;
        }
    }
    s.mean_degree = static_cast<double>(total) / static_cast<double>(s.num_nodes);

    std::vector<bool> seen(s.num_nodes, false);
    std::vector<std::size_t> stack;
    for (std::size_t root = 0; root < s.num_nodes; ++root) {
        if (seen[root]) {
            continue;
        }
        ++s.components;
        seen[root] = true;
        stack.push_back(root);
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            for (auto w : graph.neighbors(v)) {
                if (!seen[w]) {
                    seen[w] = true;
                    stack.push_back(w);
                }
            }
        }
    }
    return s;
}

std::string format_stats(const GraphStats& s) {
    std::ostringstream out;
    out << "nodes: " << s.num_nodes << '\n'
        << "edges: " << s.num_edges << '\n'
        << "degree: min " << s.min_degree << " mean " << s.mean_degree << " max " << s.max_degree << '\n'
        << "isolated: " << s.isolated << '\n'
        << "components: " << s.components << '\n';
    return out.str();
}

void write_graph(std::ostream& out, const SimilarityGraph& graph, const EmbeddingCorpus& corpus) {
    if (graph.num_nodes() != corpus.size()) {
        throw ValidationError("graph has " + std::to_string(graph.num_nodes()) + " nodes but corpus has " +
                              std::to_string(corpus.size()));
    }
    ordered_json header;
    header["num_nodes"] = graph.num_nodes();
    header["threshold"] = graph.threshold();
    out << header.dump() << '\n';
    for (const auto& e : graph.edges()) {
        ordered_json line;
        line["i"] = corpus.nodes[e.i].id;
        line["j"] = corpus.nodes[e.j].id;
        line["sim"] = e.similarity;
        out << line.dump() << '\n';
    }
}

void save_graph(const std::filesystem::path& path, const SimilarityGraph& graph, const EmbeddingCorpus& corpus) {
    auto out = detail::open_output(path);
    write_graph(out, graph, corpus);
    detail::finish_output(out, path);
}

SimilarityGraph read_graph(std::istream& in, const EmbeddingCorpus& corpus) {
    const auto index = corpus.id_index();
    std::optional<std::size_t> num_nodes;
    double threshold = kDefaultSimilarityThreshold;
    std::vector<Edge> edges;
    std::vector<std::string> missing;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; })) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError("graph line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        if (!num_nodes) {
            if (!j.is_object() || !j.contains("num_nodes") || !j["num_nodes"].is_number_unsigned() ||
                !j.contains("threshold") || !j["threshold"].is_number()) {
                throw ValidationError("graph header must be {\"num_nodes\": N, \"threshold\": t}");
            }
            num_nodes = j["num_nodes"].get<std::size_t>();
            threshold = j["threshold"].get<double>();
            continue;
        }
        if (!j.is_object() || !j.contains("i") || !j["i"].is_string() || !j.contains("j") || !j["j"].is_string() ||
            !j.contains("sim") || !j["sim"].is_number()) {
            throw ValidationError("graph line " + std::to_string(line_no) +
                                  ": expected {\"i\": id, \"j\": id, \"sim\": float}");
        }
        const auto a = j["i"].get<std::string>();
        const auto b = j["j"].get<std::string>();
        const auto ia = index.find(a);
        const auto ib = index.find(b);
        for (const auto& [id, it] : {std::pair{a, ia}, std::pair{b, ib}}) {
            if (it == index.end() && std::find(missing.begin(), missing.end(), id) == missing.end()) {
                missing.push_back(id);
            }
        }
        if (ia != index.end() && ib != index.end()) {
            edges.push_back({ia->second, ib->second, j["sim"].get<double>()});
        }
    }
    if (!num_nodes) {
        throw ValidationError("graph file is empty");
    }
    if (!missing.empty()) {
        std::string names;
        for (std::size_t k = 0; k < missing.size() && k < 10; ++k) {
            names += (k ? ", " : "") + missing[k];
        }
        if (missing.size() > 10) {
            names += ", ... (" + std::to_string(missing.size()) + " total)";
        }
        throw ValidationError("graph references node ids missing from the corpus: " + names);
    }
    if (*num_nodes != corpus.size()) {
        throw ValidationError("graph has " + std::to_string(*num_nodes) + " nodes but corpus has " +
                              std::to_string(corpus.size()));
    }
    return SimilarityGraph::from_edges(*num_nodes, std::move(edges), threshold);
}

SimilarityGraph load_graph(const std::filesystem::path& path, const EmbeddingCorpus& corpus) {
    auto in = detail::open_input(path);
    return read_graph(in, corpus);
}

} // namespace xghsi
