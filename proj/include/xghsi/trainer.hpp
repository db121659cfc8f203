#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xghsi/corpus.hpp"
#include "xghsi/graph.hpp"
#include "xghsi/model.hpp"

namespace xghsi {

enum class Precision { Float32, Float64 };

std::string_view precision_name(Precision p);
std::optional<Precision> parse_precision(std::string_view name);

struct TrainConfig {
    std::size_t epochs = 200;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Split shuffling seed, used only when the corpus carries no split tags.
    std::uint64_t seed = 0;
    std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
    Precision precision = Precision::Float64;

    /// Throws ConfigError.
    void validate() const;
};

/// Bias-corrected Adam over a fixed list of tensors.
template <typename T>
class Adam {
public:
    Adam(const std::vector<Shape>& shapes, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double epsilon = 1e-8);

    void step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads);

    std::size_t steps() const { return t_; }
    const std::vector<Tensor<T>>& first_moment() const { return m_; }
    const std::vector<Tensor<T>>& second_moment() const { return v_; }

private:
    double lr_, beta1_, beta2_, epsilon_;
    std::size_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

/// Mean of -log(max(p[i, label_i], 1e-12)) over `rows`.
double cross_entropy(const Tensor<double>& probs, std::span<const int> labels, std::span<const std::size_t> rows);

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Row-wise argmax (ties to the lowest class); macro F1 averages all K
/// classes, a class with no predicted and no actual members scoring 0.
Metrics evaluate(const Tensor<double>& probs, std::span<const int> labels, std::span<const std::size_t> rows,
                 int num_classes);

struct EpochRecord {
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainReport {
    std::size_t epochs = 0;
    double learning_rate = 0.0;
    Precision precision = Precision::Float64;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0; // 1-based
    Metrics best_val;
    std::optional<Metrics> test; // absent when the test split is empty
    std::array<std::size_t, 3> split_sizes{};
};

void write_report(std::ostream& out, const TrainReport& report);
void save_report(const std::filesystem::path& path, const TrainReport& report);

struct TrainResult {
    ModelParams params;
    TrainReport report;
};

/// Called with row-stochastic probabilities and attention coefficients after
/// every forward pass the trainer makes.
using ForwardObserver = std::function<void(const Tensor<double>& probs, const Tensor<double>& alpha)>;

/// Full-batch training; keeps the parameters of the epoch with the best
/// validation macro F1 (earliest on ties).
TrainResult train(const EmbeddingCorpus& corpus, const SimilarityGraph& graph, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const ForwardObserver& observer = {});

} // namespace xghsi
