#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>
#include <set>
#include <utility>

#include "xghsi/corpus.hpp"
#include "xghsi/graph.hpp"
#include "xghsi/model.hpp"

namespace xghsi::testing {

inline EmbeddingCorpus random_corpus(std::size_t n, std::size_t f, int k, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> label(0, k - 1);
    EmbeddingCorpus c;
    c.feature_dim = f;
    c.num_classes = k;
    for (std::size_t i = 0; i < n; ++i) {
        NodeRecord r;
        r.id = "n" + std::to_string(i);
        r.label = label(rng);
        r.embedding.resize(f);
        for (auto& x : r.embedding) {
            x = nd(rng);
        }
        c.nodes.push_back(std::move(r));
    }
    return c;
}

/// Every unordered pair, textbook cosine, nothing cached.
inline std::set<std::pair<std::size_t, std::size_t>> brute_force_edges(const EmbeddingCorpus& c, double threshold) {
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = i + 1; j < c.size(); ++j) {
            const auto& u = c.nodes[i].embedding;
            const auto& v = c.nodes[j].embedding;
            double uv = 0, uu = 0, vv = 0;
            for (std::size_t d = 0; d < u.size(); ++d) {
                uv += u[d] * v[d];
            }
            for (std::size_t d = 0; d < u.size(); ++d) {
                uu += u[d] * u[d];
            }
            for (std::size_t d = 0; d < u.size(); ++d) {
                vv += v[d] * v[d];
            }
            double s = uv / (std::sqrt(uu) * std::sqrt(vv));
            s = std::fmax(-1.0, std::fmin(1.0, s));
            if (s >= threshold) {
                out.emplace(i, j);
            }
        }
    }
    return out;
}

inline SimilarityGraph random_graph(std::size_t n, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(p);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (coin(rng)) {
                edges.push_back({i, j, 1.0});
            }
        }
    }
    return SimilarityGraph::from_edges(n, std::move(edges));
}

inline ModelParams random_params(const ModelConfig& cfg, std::mt19937_64& rng, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    auto p = init_params(cfg);
    std::vector<Tensor<double>> list = p.list();
    for (auto& t : list) {
        for (auto& v : t.data) {
            v = u(rng);
        }
    }
    return ModelParams::from_list(cfg, std::move(list));
}

using Matrix = std::vector<std::vector<double>>;

/// Dense-adjacency model: materialises A, D^-1 A and the full N x N attention
/// matrix. Optional masks: per undirected edge (graph edge order) and per feature.
struct DenseModel {
    Matrix adjacency;   // A, masked entries when an edge mask is given
    Matrix mean_op;     // D^-1 A with D the unmasked degree
    Matrix alpha;       // row i: attention of i over its closed neighbourhood
    Matrix x1, x2, x3, x23, z, x4, logits, probs;
};

inline Matrix dense_affine(const Matrix& x, const Tensor<double>& w, const Tensor<double>* b) {
    const std::size_t out = w.shape[0], in = w.shape[1];
    Matrix y(x.size(), std::vector<double>(out, 0.0));
    for (std::size_t r = 0; r < x.size(); ++r) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b ? b->data[o] : 0.0;
            for (std::size_t k = 0; k < in; ++k) {
                acc += w(o, k) * x[r][k];
            }
            y[r][o] = acc;
        }
    }
    return y;
}

inline Matrix dense_matmul(const Matrix& a, const Matrix& b) {
    Matrix y(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            for (std::size_t j = 0; j < y[i].size(); ++j) {
                y[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    return y;
}

inline Matrix dense_add(const Matrix& a, const Matrix& b) {
    Matrix y = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            y[i][j] += b[i][j];
        }
    }
    return y;
}

inline DenseModel dense_forward(const ModelParams& p, const Tensor<double>& x, const SimilarityGraph& g,
                                const std::vector<double>* edge_mask = nullptr,
                                const std::vector<double>* feature_mask = nullptr) {
    const std::size_t n = g.num_nodes(), h = p.config.hidden_dim;
    DenseModel d;
    d.adjacency.assign(n, std::vector<double>(n, 0.0));
    std::vector<double> degree(n, 0.0);
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
        const auto& edge = g.edges()[e];
        const double w = edge_mask ? (*edge_mask)[e] : 1.0;
        d.adjacency[edge.i][edge.j] = w;
        d.adjacency[edge.j][edge.i] = w;
        degree[edge.i] += 1.0;
        degree[edge.j] += 1.0;
    }
    d.mean_op = d.adjacency;
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : d.mean_op[i]) {
            v = degree[i] > 0 ? v / degree[i] : 0.0;
        }
    }

    Matrix xin(n, std::vector<double>(x.shape[1]));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < x.shape[1]; ++f) {
            xin[i][f] = x(i, f) * (feature_mask ? (*feature_mask)[f] : 1.0);
        }
    }
    d.x1 = dense_affine(xin, p.w_in, &p.b_in);
    d.x2 = dense_add(dense_affine(d.x1, p.w1_mean, nullptr),
                     dense_affine(dense_matmul(d.mean_op, d.x1), p.w2_mean, nullptr));
    d.x3 = dense_add(dense_affine(d.x1, p.w1_sum, nullptr),
                     dense_affine(dense_matmul(d.adjacency, d.x1), p.w2_sum, nullptr));
    d.x23.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
        d.x23[i] = d.x2[i];
        d.x23[i].insert(d.x23[i].end(), d.x3[i].begin(), d.x3[i].end());
    }
    d.z = dense_affine(d.x23, p.theta, nullptr);

    // full attention matrix over closed neighbourhoods
    d.alpha.assign(n, std::vector<double>(n, 0.0));
    Matrix weight(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> score(n, 0.0);
        double top = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            const bool linked = (i == j) || g.find_edge(i, j).has_value();
            if (!linked) {
                continue;
            }
            double e = 0.0;
            for (std::size_t k = 0; k < h; ++k) {
                e += p.attn.data[k] * d.z[i][k] + p.attn.data[h + k] * d.z[j][k];
            }
            e = e > 0 ? e : p.config.leaky_slope * e;
            score[j] = e;
            top = std::max(top, e);
            weight[i][j] = i == j ? 1.0 : d.adjacency[i][j];
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || g.find_edge(i, j)) {
                d.alpha[i][j] = std::exp(score[j] - top);
                total += d.alpha[i][j];
            }
        }
        for (auto& a : d.alpha[i]) {
            a /= total;
        }
    }
    Matrix effective = d.alpha;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            effective[i][j] *= weight[i][j];
        }
    }
    d.x4 = dense_matmul(effective, d.z);

    Matrix xc(n);
    for (std::size_t i = 0; i < n; ++i) {
        xc[i] = d.x1[i];
        xc[i].insert(xc[i].end(), d.x4[i].begin(), d.x4[i].end());
    }
    d.logits = dense_affine(xc, p.w_out, &p.b_out);
    d.probs = d.logits;
    for (auto& row : d.probs) {
        const double top = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (auto& v : row) {
            v = std::exp(v - top);
            total += v;
        }
        for (auto& v : row) {
            v /= total;
        }
    }
    return d;
}

/// Largest |a - b| between a row-major tensor and a dense matrix.
inline double max_abs_diff(const Tensor<double>& t, const Matrix& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m[i].size(); ++j) {
            worst = std::max(worst, std::abs(t(i, j) - m[i][j]));
        }
    }
    return worst;
}

/// Accuracy and macro F1 from an explicit K x K confusion matrix, F1 taken as
/// the harmonic mean of precision and recall (0 when undefined).
inline std::pair<double, double> confusion_metrics(const Tensor<double>& probs, const std::vector<int>& labels,
                                                   const std::vector<std::size_t>& rows, int k) {
    const auto kk = static_cast<std::size_t>(k);
    std::vector<std::vector<double>> confusion(kk, std::vector<double>(kk, 0.0)); // [truth][pred]
    for (auto r : rows) {
        const auto begin = probs.data.begin() + static_cast<std::ptrdiff_t>(r * kk);
        const auto pred = static_cast<std::size_t>(std::max_element(begin, begin + k) - begin);
        confusion[static_cast<std::size_t>(labels[r])][pred] += 1.0;
    }
    double trace = 0.0;
    for (std::size_t c = 0; c < kk; ++c) {
        trace += confusion[c][c];
    }
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < kk; ++c) {
        double predicted = 0.0, actual = 0.0;
        for (std::size_t o = 0; o < kk; ++o) {
            predicted += confusion[o][c];
            actual += confusion[c][o];
        }
        const double precision = predicted > 0 ? confusion[c][c] / predicted : 0.0;
        const double recall = actual > 0 ? confusion[c][c] / actual : 0.0;
        f1_sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    return {trace / static_cast<double>(rows.size()), f1_sum / k};
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (all pairs enumerated).
inline double roc_auc(const std::vector<double>& score, const std::vector<bool>& positive) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t a = 0; a < score.size(); ++a) {
        if (!positive[a]) {
            continue;
        }
        for (std::size_t b = 0; b < score.size(); ++b) {
            if (positive[b]) {
                continue;
            }
            pairs += 1.0;
            wins += score[a] > score[b] ? 1.0 : (score[a] == score[b] ? 0.5 : 0.0);
        }
    }
    return pairs > 0 ? wins / pairs : 0.5;
}

} // namespace xghsi::testing
