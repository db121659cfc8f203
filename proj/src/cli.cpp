#include "xghsi/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "io_util.hpp"

namespace xghsi {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
T field(const json& obj, const char* section, const char* key) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: ") + section + "." + key + " has the wrong type");
    }
}

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw ConfigError(std::string("config: ") + section + " must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw ConfigError(std::string("config: unknown key '") + section + "." + key + "'");
        }
    }
}

template <typename T>
void maybe(const json& obj, const char* section, const char* key, T& dst) {
    if (obj.contains(key)) {
        dst = field<T>(obj, section, key);
    }
}

} // namespace

RunConfig parse_run_config(std::string_view text, RunConfig cfg) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON (") + e.what() + ")");
    }
    check_keys(doc, "config", {"seed", "graph", "model", "train", "explainer", "paths"});
    maybe(doc, "config", "seed", cfg.seed);
    if (doc.contains("graph")) {
        const auto& g = doc["graph"];
        check_keys(g, "graph", {"threshold", "threads"});
        maybe(g, "graph", "threshold", cfg.threshold);
        maybe(g, "graph", "threads", cfg.threads);
    }
    if (doc.contains("model")) {
        const auto& m = doc["model"];
        check_keys(m, "model", {"hidden_dim", "leaky_slope"});
        maybe(m, "model", "hidden_dim", cfg.model.hidden_dim);
        maybe(m, "model", "leaky_slope", cfg.model.leaky_slope);
    }
    if (doc.contains("train")) {
        const auto& t = doc["train"];
        check_keys(t, "train", {"epochs", "learning_rate", "beta1", "beta2", "epsilon", "split_ratios", "precision"});
        maybe(t, "train", "epochs", cfg.train.epochs);
        maybe(t, "train", "learning_rate", cfg.train.learning_rate);
        maybe(t, "train", "beta1", cfg.train.beta1);
        maybe(t, "train", "beta2", cfg.train.beta2);
        maybe(t, "train", "epsilon", cfg.train.epsilon);
        maybe(t, "train", "split_ratios", cfg.train.split_ratios);
        if (t.contains("precision")) {
            const auto name = field<std::string>(t, "train", "precision");
            const auto p = parse_precision(name);
            if (!p) {
                throw ConfigError("config: unknown precision '" + name + "' (expected f32 or f64)");
            }
            cfg.train.precision = *p;
        }
    }
    if (doc.contains("explainer")) {
        const auto& e = doc["explainer"];
        check_keys(e, "explainer",
                   {"epochs", "learning_rate", "edge_size", "edge_entropy", "feature_size", "feature_entropy", "top_k"});
        maybe(e, "explainer", "epochs", cfg.explainer.epochs);
        maybe(e, "explainer", "learning_rate", cfg.explainer.learning_rate);
        maybe(e, "explainer", "edge_size", cfg.explainer.edge_size_coeff);
        maybe(e, "explainer", "edge_entropy", cfg.explainer.edge_entropy_coeff);
        maybe(e, "explainer", "feature_size", cfg.explainer.feature_size_coeff);
        maybe(e, "explainer", "feature_entropy", cfg.explainer.feature_entropy_coeff);
        maybe(e, "explainer", "top_k", cfg.explainer.top_k_edges);
    }
    if (doc.contains("paths")) {
        const auto& p = doc["paths"];
        check_keys(p, "paths", {"corpus", "graph", "checkpoint", "out"});
        maybe(p, "paths", "corpus", cfg.corpus);
        maybe(p, "paths", "graph", cfg.graph);
        maybe(p, "paths", "checkpoint", cfg.checkpoint);
        maybe(p, "paths", "out", cfg.out);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
    auto in = detail::open_input(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config(text, std::move(base));
}

std::string dump_run_config(const RunConfig& cfg) {
    ordered_json doc;
    doc["seed"] = cfg.seed;
    doc["graph"] = ordered_json{{"threshold", cfg.threshold}, {"threads", cfg.threads}};
    doc["model"] = ordered_json{{"hidden_dim", cfg.model.hidden_dim}, {"leaky_slope", cfg.model.leaky_slope}};
    doc["train"] = ordered_json{{"epochs", cfg.train.epochs},
                                {"learning_rate", cfg.train.learning_rate},
                                {"beta1", cfg.train.beta1},
                                {"beta2", cfg.train.beta2},
                                {"epsilon", cfg.train.epsilon},
                                {"split_ratios", cfg.train.split_ratios},
                                {"precision", precision_name(cfg.train.precision)}};
    doc["explainer"] = ordered_json{{"epochs", cfg.explainer.epochs},
                                    {"learning_rate", cfg.explainer.learning_rate},
                                    {"edge_size", cfg.explainer.edge_size_coeff},
                                    {"edge_entropy", cfg.explainer.edge_entropy_coeff},
                                    {"feature_size", cfg.explainer.feature_size_coeff},
                                    {"feature_entropy", cfg.explainer.feature_entropy_coeff},
                                    {"top_k", cfg.explainer.top_k_edges}};
    doc["paths"] = ordered_json{
        {"corpus", cfg.corpus}, {"graph", cfg.graph}, {"checkpoint", cfg.checkpoint}, {"out", cfg.out}};
    return doc.dump(1) + "\n";
}

namespace {

// Flags write into a staging config; after the config file is merged, only
// the flags that were actually given are copied over.
class Flags {
public:
    Flags(CLI::App* app, RunConfig& staging) : app_(app), staging_(staging) {}

    template <typename Get>
    CLI::Option* add(const std::string& name, Get get, const std::string& help) {
        auto* opt = app_->add_option(name, get(staging_), help);
        copies_.emplace_back(opt, [get](RunConfig& dst, RunConfig& src) { get(dst) = get(src); });
        return opt;
    }

    void apply(RunConfig& dst) const {
        for (const auto& [opt, copy] : copies_) {
            if (opt->count() > 0) {
                copy(dst, staging_);
            }
        }
    }

private:
    CLI::App* app_;
    RunConfig& staging_;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, RunConfig&)>>> copies_;
};

void add_common(Flags& flags, std::string& config_path, CLI::App* app, const char* out_help) {
    flags.add("--seed", [](RunConfig& c) -> auto& { return c.seed; }, "Seed for splits, initialisation and explainer");
    flags.add("--out", [](RunConfig& c) -> auto& { return c.out; }, out_help);
    app->add_option("--config", config_path, "JSON run config; flags given on the command line win");
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw ConfigError(std::string(flag) + " is required (flag or config paths section)");
    }
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

ModelParams checked_checkpoint(const RunConfig& cfg, const EmbeddingCorpus& corpus) {
    auto params = load_checkpoint(cfg.checkpoint);
    if (params.config.feature_dim != corpus.feature_dim || params.config.num_classes != corpus.num_classes) {
        throw ConfigError("checkpoint expects feature_dim " + std::to_string(params.config.feature_dim) +
                          " and " + std::to_string(params.config.num_classes) + " classes, corpus has " +
                          std::to_string(corpus.feature_dim) + " and " + std::to_string(corpus.num_classes));
    }
    return params;
}

void write_text(const std::string& path, const std::string& text) {
    auto out = detail::open_output(path);
    out << text;
    detail::finish_output(out, path);
}

void cmd_build_graph(const RunConfig& cfg, std::ostream& out) {
    require(cfg.corpus, "--corpus");
    require(cfg.out, "--out");
    const auto corpus = load_corpus(cfg.corpus);
    const auto graph = build_graph(corpus, cfg.threshold, cfg.threads);
    save_graph(cfg.out, graph, corpus);
    out << format_stats(graph_stats(graph));
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
    require(cfg.corpus, "--corpus");
    require(cfg.graph, "--graph");
    require(cfg.out, "--out");
    const auto corpus = load_corpus(cfg.corpus);
    const auto graph = load_graph(cfg.graph, corpus);
    auto model_cfg = cfg.model;
    model_cfg.feature_dim = corpus.feature_dim;
    model_cfg.num_classes = corpus.num_classes;
    model_cfg.init_seed = cfg.seed;
    auto train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;

    const auto result = train(corpus, graph, model_cfg, train_cfg);
    const std::filesystem::path dir(cfg.out);
    save_checkpoint(dir / "checkpoint.json", result.params);
    save_report(dir / "report.json", result.report);
    write_text((dir / "config.json").string(), dump_run_config(cfg));

    const auto& r = result.report;
    out << "best epoch: " << r.best_epoch << " (val macro F1 " << fixed(r.best_val.macro_f1) << ")\n";
    if (r.test) {
        out << "test accuracy: " << fixed(r.test->accuracy) << "\n";
        out << "test macro F1: " << fixed(r.test->macro_f1) << "\n";
    } else {
        out << "test split is empty\n";
    }
}

void cmd_eval(const RunConfig& cfg, const std::string& split_name_arg, std::ostream& out) {
    require(cfg.corpus, "--corpus");
    require(cfg.graph, "--graph");
    require(cfg.checkpoint, "--checkpoint");
    const auto split = parse_split(split_name_arg);
    if (!split) {
        throw ConfigError("unknown split '" + split_name_arg + "' (expected train, val or test)");
    }
    const auto corpus = assign_splits(load_corpus(cfg.corpus), SplitSpec{cfg.train.split_ratios, cfg.seed});
    const auto graph = load_graph(cfg.graph, corpus);
    const auto params = checked_checkpoint(cfg, corpus);
    const auto pred = predict(params, corpus.features(), MessageIndex(graph));
    const auto m = evaluate(pred.probs, corpus.labels(), corpus.indices(*split), corpus.num_classes);
    ordered_json doc{{"split", split_name_arg}, {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}};
    if (!cfg.out.empty()) {
        write_text(cfg.out, doc.dump(1) + "\n");
    }
    out << split_name_arg << " accuracy: " << fixed(m.accuracy) << "\n";
    out << split_name_arg << " macro F1: " << fixed(m.macro_f1) << "\n";
}

void cmd_explain(const RunConfig& cfg, const std::string& node_id, const std::string& format_name, std::ostream& out) {
    require(cfg.corpus, "--corpus");
    require(cfg.graph, "--graph");
    require(cfg.checkpoint, "--checkpoint");
    const auto format = parse_render_format(format_name);
    const auto corpus = load_corpus(cfg.corpus);
    const auto graph = load_graph(cfg.graph, corpus);
    const auto params = checked_checkpoint(cfg, corpus);
    const auto ids = corpus.id_index();
    const auto it = ids.find(node_id);
    if (it == ids.end()) {
        throw ValidationError("unknown node id '" + node_id + "'");
    }
    auto ecfg = cfg.explainer;
    ecfg.seed = cfg.seed;
    const auto expl = explain_node(corpus.features(), graph, params, it->second, ecfg);
    const auto doc = render_explanation(expl, corpus, graph, ecfg.top_k_edges, format);
    if (cfg.out.empty()) {
        out << doc;
    } else {
        write_text(cfg.out, doc);
    }
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Similarity-graph node classification with per-node explanations", "xghsi"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    RunConfig staging;
    std::string config_path;
    std::string split_arg = "test";
    std::string node_id;
    std::string format_name = "dot";

    auto* build = app.add_subcommand("build-graph", "Connect posts whose embeddings have cosine similarity >= threshold");
    Flags build_flags(build, staging);
    build_flags.add("--corpus", [](RunConfig& c) -> auto& { return c.corpus; }, "Corpus file");
    build_flags.add("--threshold", [](RunConfig& c) -> auto& { return c.threshold; }, "Similarity threshold");
    build_flags.add("--threads", [](RunConfig& c) -> auto& { return c.threads; }, "Worker threads");
    add_common(build_flags, config_path, build, "Graph file to write");

    auto add_train_flags = [](Flags& f) {
        f.add("--split-ratios", [](RunConfig& c) -> auto& { return c.train.split_ratios; },
              "Train/val/test ratios for untagged corpora")
            ->expected(3);
    };

    auto* trn = app.add_subcommand("train", "Train the classifier; writes checkpoint.json, report.json, config.json");
    Flags train_flags(trn, staging);
    train_flags.add("--corpus", [](RunConfig& c) -> auto& { return c.corpus; }, "Corpus file");
    train_flags.add("--graph", [](RunConfig& c) -> auto& { return c.graph; }, "Graph file");
    train_flags.add("--epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }, "Training epochs");
    train_flags.add("--lr", [](RunConfig& c) -> auto& { return c.train.learning_rate; }, "Adam learning rate");
    train_flags.add("--beta1", [](RunConfig& c) -> auto& { return c.train.beta1; }, "Adam beta1");
    train_flags.add("--beta2", [](RunConfig& c) -> auto& { return c.train.beta2; }, "Adam beta2");
    train_flags.add("--epsilon", [](RunConfig& c) -> auto& { return c.train.epsilon; }, "Adam epsilon");
    train_flags.add("--hidden-dim", [](RunConfig& c) -> auto& { return c.model.hidden_dim; }, "Hidden width");
    train_flags.add("--leaky-slope", [](RunConfig& c) -> auto& { return c.model.leaky_slope; },
                    "LeakyReLU slope in attention");
    train_flags.add("--precision", [](RunConfig& c) -> auto& { return c.train.precision; }, "Training arithmetic")
        ->transform(CLI::CheckedTransformer(
                        std::map<std::string, Precision>{{"f32", Precision::Float32}, {"f64", Precision::Float64}})
                        .description(""))
        ->type_name("{f32,f64}")
        ->default_str("f64");
    add_train_flags(train_flags);
    add_common(train_flags, config_path, trn, "Output directory");

    auto* ev = app.add_subcommand("eval", "Score a checkpoint on one split");
    Flags eval_flags(ev, staging);
    eval_flags.add("--corpus", [](RunConfig& c) -> auto& { return c.corpus; }, "Corpus file");
    eval_flags.add("--graph", [](RunConfig& c) -> auto& { return c.graph; }, "Graph file");
    eval_flags.add("--checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }, "Checkpoint file");
    ev->add_option("--split", split_arg, "train, val or test");
    add_train_flags(eval_flags);
    add_common(eval_flags, config_path, ev, "Optional JSON metrics file");

    auto* exp = app.add_subcommand("explain", "Explain the prediction for one node");
    Flags explain_flags(exp, staging);
    explain_flags.add("--corpus", [](RunConfig& c) -> auto& { return c.corpus; }, "Corpus file");
    explain_flags.add("--graph", [](RunConfig& c) -> auto& { return c.graph; }, "Graph file");
    explain_flags.add("--checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }, "Checkpoint file");
    exp->add_option("--node", node_id, "Node id to explain")->required();
    exp->add_option("--format", format_name, "dot or json");
    explain_flags.add("--top-k", [](RunConfig& c) -> auto& { return c.explainer.top_k_edges; }, "Edges to keep");
    explain_flags.add("--epochs", [](RunConfig& c) -> auto& { return c.explainer.epochs; }, "Mask optimisation steps");
    explain_flags.add("--lr", [](RunConfig& c) -> auto& { return c.explainer.learning_rate; }, "Mask learning rate");
    explain_flags.add("--edge-size", [](RunConfig& c) -> auto& { return c.explainer.edge_size_coeff; },
                      "Edge mask size penalty");
    explain_flags.add("--edge-entropy", [](RunConfig& c) -> auto& { return c.explainer.edge_entropy_coeff; },
                      "Edge mask entropy penalty");
    explain_flags.add("--feature-size", [](RunConfig& c) -> auto& { return c.explainer.feature_size_coeff; },
                      "Feature mask size penalty");
    explain_flags.add("--feature-entropy", [](RunConfig& c) -> auto& { return c.explainer.feature_entropy_coeff; },
                      "Feature mask entropy penalty");
    add_common(explain_flags, config_path, exp, "Output file (default: standard output)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            cfg = load_run_config(config_path);
        }
        if (build->parsed()) {
            build_flags.apply(cfg);
            cmd_build_graph(cfg, out);
        } else if (trn->parsed()) {
            train_flags.apply(cfg);
            cmd_train(cfg, out);
        } else if (ev->parsed()) {
            eval_flags.apply(cfg);
            cmd_eval(cfg, split_arg, out);
        } else {
            explain_flags.apply(cfg);
            cmd_explain(cfg, node_id, format_name, out);
        }
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitOk;
}

} // namespace xghsi
