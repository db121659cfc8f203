#include "xghsi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "io_util.hpp"

namespace xghsi {

using nlohmann::ordered_json;

std::string_view precision_name(Precision p) {
    return p == Precision::Float32 ? "f32" : "f64";
}

std::optional<Precision> parse_precision(std::string_view name) {
    if (name == "f32") {
        return Precision::Float32;
    }
    if (name == "f64") {
        return Precision::Float64;
    }
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("Adam epsilon must be positive");
    }
}

template <typename T>
Adam<T>::Adam(const std::vector<Shape>& shapes, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    for (const auto& s : shapes) {
        m_.emplace_back(s);
        v_.emplace_back(s);
    }
}

template <typename T>
void Adam<T>::step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("Adam::step: tensor count mismatch");
    }
    ++t_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(epsilon_);
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].shape != m_[k].shape || grads[k].shape != m_[k].shape) {
            throw DimensionError("Adam::step: shape mismatch for tensor " + std::to_string(k));
        }
        auto& m = m_[k].data;
        auto& v = v_[k].data;
        auto& p = params[k].data;
        const auto& g = grads[k].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T m_hat = m[i] / c1;
            const T v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

template class Adam<float>;
template class Adam<double>;

double cross_entropy(const Tensor<double>& probs, std::span<const int> labels, std::span<const std::size_t> rows) {
    ad::Tape<double> tape;
    return ad::nll_loss(tape.constant(probs), labels, rows).value().data[0];
}

Metrics evaluate(const Tensor<double>& probs, std::span<const int> labels, std::span<const std::size_t> rows,
                 int num_classes) {
    if (rows.empty()) {
        throw ValidationError("no nodes in split");
    }
    const auto k = static_cast<std::size_t>(num_classes);
    if (probs.rank() != 2 || probs.cols() != k) {
        throw DimensionError("evaluate: probabilities " + shape_string(probs.shape) + " for " +
                             std::to_string(num_classes) + " classes");
    }
    std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
    std::size_t correct = 0;
    for (auto r : rows) {
        std::size_t pred = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (probs(r, c) > probs(r, pred)) {
                pred = c;
            }
        }
        const auto truth = static_cast<std::size_t>(labels[r]);
        if (pred == truth) {
            ++correct;
            ++tp[pred];
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    Metrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
    double f1_total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const auto denom = 2 * tp[c] + fp[c] + fn[c];
        f1_total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    m.macro_f1 = f1_total / static_cast<double>(k);
    return m;
}

namespace {

ordered_json metrics_json(const Metrics& m) {
    return ordered_json{{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}};
}

template <typename T>
Tensor<double> to_double(const Tensor<T>& t) {
    if constexpr (std::is_same_v<T, double>) {
        return t;
    } else {
        return t.template cast<double>();
    }
}

template <typename T>
TrainResult train_impl(const EmbeddingCorpus& corpus, const SimilarityGraph& graph, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, const ForwardObserver& observer) {
    const auto split = assign_splits(corpus, SplitSpec{cfg.split_ratios, cfg.seed});
    const auto train_rows = split.indices(Split::Train);
    const auto val_rows = split.indices(Split::Val);
    const auto test_rows = split.indices(Split::Test);
    if (train_rows.empty() || val_rows.empty()) {
        throw ValidationError("no nodes in split: training needs non-empty train and val splits");
    }
    const auto labels = split.labels();
    const MessageIndex index(graph);
    const auto x = split.features().template cast<T>();
    const T slope = static_cast<T>(model_cfg.leaky_slope);

    auto init = init_params(model_cfg);
    std::vector<Tensor<T>> params;
    std::vector<Shape> shapes;
    for (const auto& t : init.list()) {
        params.push_back(t.template cast<T>());
        shapes.push_back(t.shape);
    }
    Adam<T> adam(shapes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    auto run_forward = [&](ad::Tape<T>& tape, bool trainable) {
        std::vector<ad::Var<T>> vars;
        for (const auto& p : params) {
            vars.push_back(trainable ? tape.parameter(p) : tape.constant(p));
        }
        auto trace = forward(tape.constant(x), index, ParamVars<T>::from_list(vars), slope);
        if (observer) {
            observer(to_double(trace.probs.value()), to_double(trace.alpha.value()));
        }
        return std::pair{vars, trace};
    };

    TrainReport report;
    report.epochs = cfg.epochs;
    report.learning_rate = cfg.learning_rate;
    report.precision = cfg.precision;
    report.split_sizes = {train_rows.size(), val_rows.size(), test_rows.size()};
    std::vector<Tensor<T>> best = params;
    double best_f1 = -1.0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        {
            ad::Tape<T> tape;
            auto [vars, trace] = run_forward(tape, true);
            auto loss = ad::nll_loss(trace.probs, std::span<const int>(labels), std::span<const std::size_t>(train_rows));
            rec.train_loss = static_cast<double>(loss.value().data[0]);
            if (!std::isfinite(rec.train_loss)) {
                throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            std::vector<Tensor<T>> grads;
            for (const auto& v : vars) {
                grads.push_back(v.grad());
            }
            adam.step(params, grads);
        }
        {
            ad::Tape<T> tape;
            auto [vars, trace] = run_forward(tape, false);
            const auto val = evaluate(to_double(trace.probs.value()), labels, val_rows, model_cfg.num_classes);
            rec.val_accuracy = val.accuracy;
            rec.val_macro_f1 = val.macro_f1;
            if (val.macro_f1 > best_f1) {
                best_f1 = val.macro_f1;
                best = params;
                report.best_epoch = epoch;
                report.best_val = val;
            }
        }
        report.history.push_back(rec);
    }

    std::vector<Tensor<double>> stored;
    for (const auto& t : best) {
        stored.push_back(to_double(t));
    }
    auto result_params = ModelParams::from_list(model_cfg, std::move(stored));
    if (!test_rows.empty()) {
        const auto pred = predict(result_params, split.features(), index);
        report.test = evaluate(pred.probs, labels, test_rows, model_cfg.num_classes);
    }
    return {std::move(result_params), std::move(report)};
}

} // namespace

TrainResult train(const EmbeddingCorpus& corpus, const SimilarityGraph& graph, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const ForwardObserver& observer) {
    train_cfg.validate();
    model_cfg.validate();
    corpus.validate();
    if (graph.num_nodes() != corpus.size()) {
        throw ValidationError("graph has " + std::to_string(graph.num_nodes()) + " nodes but corpus has " +
                              std::to_string(corpus.size()));
    }
    if (model_cfg.feature_dim != corpus.feature_dim || model_cfg.num_classes != corpus.num_classes) {
        throw ConfigError("model config does not match the corpus header");
    }
    if (train_cfg.precision == Precision::Float32) {
        return train_impl<float>(corpus, graph, model_cfg, train_cfg, observer);
    }
    return train_impl<double>(corpus, graph, model_cfg, train_cfg, observer);
}

void write_report(std::ostream& out, const TrainReport& r) {
    ordered_json doc;
    doc["epochs"] = r.epochs;
    doc["learning_rate"] = r.learning_rate;
    doc["precision"] = precision_name(r.precision);
    doc["split_sizes"] = ordered_json{{"train", r.split_sizes[0]}, {"val", r.split_sizes[1]}, {"test", r.split_sizes[2]}};
    doc["best_epoch"] = r.best_epoch;
    doc["best_val"] = metrics_json(r.best_val);
    doc["test"] = r.test ? metrics_json(*r.test) : ordered_json(nullptr);
    auto loss = ordered_json::array(), acc = ordered_json::array(), f1 = ordered_json::array();
    for (const auto& e : r.history) {
        loss.push_back(e.train_loss);
        acc.push_back(e.val_accuracy);
        f1.push_back(e.val_macro_f1);
    }
    doc["train_loss"] = std::move(loss);
    doc["val_accuracy"] = std::move(acc);
    doc["val_macro_f1"] = std::move(f1);
    out << doc.dump(1) << '\n';
}

void save_report(const std::filesystem::path& path, const TrainReport& report) {
    auto out = detail::open_output(path);
    write_report(out, report);
    detail::finish_output(out, path);
}

} // namespace xghsi
