#pragma once

// Synthetic benchmarks with known structure.

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "xghsi/corpus.hpp"
#include "xghsi/graph.hpp"

namespace xghsi::testing {

struct TwoClusterSpec {
    std::size_t num_nodes = 200;
    std::size_t feature_dim = 16;
    std::size_t group_size = 8;
    double separation = 0.12;  // +/- offset of the class coordinate
    double topic_spread = 0.5; // std of the shared per-group offset
    double noise = 0.15;       // per-node std
    double label_noise = 0.1;  // flip rate on train/val supervision
    std::uint64_t seed = 0;
};

/// Two Gaussian classes. Nodes come in small groups sharing a random offset
/// and a class; a single node's class coordinate is weak. Train and val labels
/// are flipped with probability `label_noise`, test labels are the true cluster.
inline EmbeddingCorpus two_cluster_corpus(const TwoClusterSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t groups = (spec.num_nodes + spec.group_size - 1) / spec.group_size;

    std::vector<int> group_class(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        group_class[g] = static_cast<int>(g % 2);
    }
    std::shuffle(group_class.begin(), group_class.end(), rng);
    std::vector<std::vector<double>> offset(groups, std::vector<double>(spec.feature_dim, 0.0));
    for (auto& o : offset) {
        for (std::size_t d = 2; d < spec.feature_dim; ++d) {
            o[d] = spec.topic_spread * nd(rng);
        }
    }
    std::vector<std::size_t> member(spec.num_nodes);
    for (std::size_t i = 0; i < spec.num_nodes; ++i) {
        member[i] = i % groups;
    }
    std::shuffle(member.begin(), member.end(), rng);

    EmbeddingCorpus c;
    c.feature_dim = spec.feature_dim;
    c.num_classes = 2;
    std::vector<std::size_t> order(spec.num_nodes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = spec.num_nodes * 3 / 5, n_val = spec.num_nodes / 5;
    std::vector<Split> split(spec.num_nodes, Split::Test);
    for (std::size_t k = 0; k < spec.num_nodes; ++k) {
        split[order[k]] = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
    }
    for (std::size_t i = 0; i < spec.num_nodes; ++i) {
        const auto g = member[i];
        const int truth = group_class[g];
        NodeRecord r;
        r.id = "c" + std::to_string(i);
        r.split = split[i];
        r.embedding.assign(spec.feature_dim, 0.0);
        r.embedding[0] = 1.0;
        r.embedding[1] = truth == 0 ? spec.separation : -spec.separation;
        for (std::size_t d = 0; d < spec.feature_dim; ++d) {
            r.embedding[d] += offset[g][d] + spec.noise * nd(rng);
        }
        const bool flip = unit(rng) < spec.label_noise;
        r.label = (flip && split[i] != Split::Test) ? 1 - truth : truth;
        c.nodes.push_back(std::move(r));
    }
    return c;
}

struct MotifSpec {
    std::size_t base_nodes = 300;
    std::size_t extra_edges = 60; // on top of the random spanning tree
    std::size_t motifs = 40;      // centre + 4 marked leaves, label 1
    std::size_t decoys = 40;      // centre + 3 marked leaves, label 0
    std::size_t feature_dim = 8;
    double noise = 0.3;
    std::uint64_t seed = 0;
};

struct MotifBenchmark {
    EmbeddingCorpus corpus;
    SimilarityGraph graph;
    std::vector<std::size_t> centers;
    std::vector<std::set<std::size_t>> motif_edges; // edge ids of each centre's star
};

/// A random tree with a few extra edges, plus planted stars hanging off it.
/// Feature 0 marks star leaves, feature 1 is constant, the rest is noise.
/// A node is positive exactly when a complete 4-edge star lies in its
/// receptive field: the star centre, its leaves and its attachment node.
/// Decoy stars have 3 marked leaves and label 0.
inline MotifBenchmark planted_motif(const MotifSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t v = 1; v < spec.base_nodes; ++v) {
        edges.emplace(std::uniform_int_distribution<std::size_t>(0, v - 1)(rng), v);
    }
    std::uniform_int_distribution<std::size_t> any_base(0, spec.base_nodes - 1);
    while (edges.size() < spec.base_nodes - 1 + spec.extra_edges) {
        auto a = any_base(rng), b = any_base(rng);
        if (a != b) {
            edges.emplace(std::min(a, b), std::max(a, b));
        }
    }
    std::vector<std::size_t> hosts(spec.base_nodes);
    std::iota(hosts.begin(), hosts.end(), std::size_t{0});
    std::shuffle(hosts.begin(), hosts.end(), rng);

    std::size_t n = spec.base_nodes;
    std::vector<bool> marked, positive;
    marked.assign(spec.base_nodes, false);
    positive.assign(spec.base_nodes, false);
    MotifBenchmark b;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> stars;
    auto plant = [&](std::size_t leaves, std::size_t host, bool is_motif) {
        const std::size_t c = n;
        n += leaves + 1;
        marked.resize(n, false);
        positive.resize(n, false);
        std::vector<std::pair<std::size_t, std::size_t>> star;
        for (std::size_t l = 1; l <= leaves; ++l) {
            edges.emplace(c, c + l);
            star.emplace_back(c, c + l);
            marked[c + l] = true;
            positive[c + l] = is_motif;
        }
        edges.emplace(host, c);
        if (is_motif) {
            positive[c] = true;
            positive[host] = true;
            b.centers.push_back(c);
            stars.push_back(std::move(star));
        }
    };
    for (std::size_t m = 0; m < spec.motifs; ++m) {
        plant(4, hosts[m], true);
    }
    for (std::size_t m = 0; m < spec.decoys; ++m) {
        plant(3, any_base(rng), false);
    }

    std::normal_distribution<double> nd;
    b.corpus.feature_dim = spec.feature_dim;
    b.corpus.num_classes = 2;
    for (std::size_t v = 0; v < n; ++v) {
        NodeRecord r;
        r.id = "m" + std::to_string(v);
        r.label = positive[v] ? 1 : 0;
        r.embedding.resize(spec.feature_dim);
        for (auto& x : r.embedding) {
            x = spec.noise * nd(rng);
        }
        r.embedding[0] = marked[v] ? 1.0 : 0.0;
        r.embedding[1] = 1.0;
        b.corpus.nodes.push_back(std::move(r));
    }
    b.corpus = assign_splits(std::move(b.corpus), SplitSpec{{0.6, 0.2, 0.2}, spec.seed});

    std::vector<Edge> list;
    for (const auto& [i, j] : edges) {
        list.push_back({i, j, 1.0});
    }
    b.graph = SimilarityGraph::from_edges(n, std::move(list));
    for (const auto& star : stars) {
        std::set<std::size_t> ids;
        for (const auto& [i, j] : star) {
            ids.insert(*b.graph.find_edge(i, j));
        }
        b.motif_edges.push_back(std::move(ids));
    }
    return b;
}

} // namespace xghsi::testing
