#include "xghsi/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "io_util.hpp"

namespace xghsi {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view split_name(Split split) {
    switch (split) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    case Split::Test:
        return "test";
    }
    return "train";
}

std::optional<Split> parse_split(std::string_view name) {
    if (name == "train") {
        return Split::Train;
    }
    if (name == "val") {
        return Split::Val;
    }
    if (name == "test") {
        return Split::Test;
    }
    return std::nullopt;
}

void EmbeddingCorpus::validate() const {
    if (nodes.empty()) {
        throw ValidationError("empty corpus");
    }
    if (feature_dim == 0) {
        throw ValidationError("feature_dim must be positive");
    }
    if (num_classes < 1) {
        throw ValidationError("num_classes must be positive");
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : nodes) {
        if (!seen.insert(n.id).second) {
            throw ValidationError("duplicate node id '" + n.id + "'");
        }
        if (n.embedding.size() != feature_dim) {
            throw ValidationError("record '" + n.id + "': embedding has " + std::to_string(n.embedding.size()) +
                                  " values, expected " + std::to_string(feature_dim));
        }
        if (n.label < 0 || n.label >= num_classes) {
            throw ValidationError("record '" + n.id + "': label " + std::to_string(n.label) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
        for (double x : n.embedding) {
            if (!std::isfinite(x)) {
                throw ValidationError("record '" + n.id + "': non-finite embedding value");
            }
        }
    }
}

std::unordered_map<std::string, std::size_t> EmbeddingCorpus::id_index() const {
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        index.emplace(nodes[i].id, i);
    }
    return index;
}

Tensor<double> EmbeddingCorpus::features() const {
    Tensor<double> x({nodes.size(), feature_dim});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        std::copy(nodes[i].embedding.begin(), nodes[i].embedding.end(),
                  x.data.begin() + static_cast<std::ptrdiff_t>(i * feature_dim));
    }
    return x;
}

std::vector<int> EmbeddingCorpus::labels() const {
    std::vector<int> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) {
        out.push_back(n.label);
    }
    return out;
}

std::vector<std::size_t> EmbeddingCorpus::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].split == split) {
            out.push_back(i);
        }
    }
    return out;
}

namespace {

NodeRecord parse_record(const json& j, std::size_t line_no) {
    const std::string where = "line " + std::to_string(line_no);
    if (!j.is_object()) {
        throw ValidationError(where + ": record is not a JSON object");
    }
    NodeRecord rec;
    if (!j.contains("id") || !j["id"].is_string()) {
        throw ValidationError(where + ": missing string field 'id'");
    }
    rec.id = j["id"].get<std::string>();
    const std::string who = "record '" + rec.id + "'";
    if (!j.contains("label") || !j["label"].is_number_integer()) {
        throw ValidationError(who + ": missing integer field 'label'");
    }
    rec.label = j["label"].get<int>();
    if (j.contains("split") && !j["split"].is_null()) {
        if (!j["split"].is_string()) {
            throw ValidationError(who + ": split must be a string or null");
        }
        const auto tag = j["split"].get<std::string>();
        rec.split = parse_split(tag);
        if (!rec.split) {
            throw ValidationError(who + ": unknown split tag '" + tag + "'");
        }
    }
    if (!j.contains("embedding") || !j["embedding"].is_array()) {
        throw ValidationError(who + ": missing array field 'embedding'");
    }
    for (const auto& v : j["embedding"]) {
        if (!v.is_number()) {
            throw ValidationError(who + ": embedding entries must be numbers");
        }
        rec.embedding.push_back(v.get<double>());
    }
    if (j.contains("text") && !j["text"].is_null()) {
        if (!j["text"].is_string()) {
            throw ValidationError(who + ": text must be a string");
        }
        rec.text = j["text"].get<std::string>();
    }
    return rec;
}

} // namespace

EmbeddingCorpus read_corpus(std::istream& in) {
    EmbeddingCorpus corpus;
    bool have_header = false;
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
            throw ValidationError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        if (!have_header) {
            if (!j.is_object() || !j.contains("feature_dim") || !j.contains("num_classes") ||
                !j["feature_dim"].is_number_integer() || !j["num_classes"].is_number_integer()) {
                throw ValidationError("header line must be {\"feature_dim\": F, \"num_classes\": K}");
            }
            const auto f = j["feature_dim"].get<long long>();
            const auto k = j["num_classes"].get<long long>();
            if (f < 1 || k < 1) {
                throw ValidationError("header: feature_dim and num_classes must be positive");
            }
            corpus.feature_dim = static_cast<std::size_t>(f);
            corpus.num_classes = static_cast<int>(k);
            have_header = true;
            continue;
        }
        corpus.nodes.push_back(parse_record(j, line_no));
    }
    corpus.validate();
    return corpus;
}

EmbeddingCorpus load_corpus(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return read_corpus(in);
}

void write_corpus(std::ostream& out, const EmbeddingCorpus& corpus) {
    ordered_json header;
    header["feature_dim"] = corpus.feature_dim;
    header["num_classes"] = corpus.num_classes;
    out << header.dump() << '\n';
    for (const auto& n : corpus.nodes) {
        ordered_json rec;
        rec["id"] = n.id;
        rec["label"] = n.label;
        rec["split"] = n.split ? ordered_json(std::string(split_name(*n.split))) : ordered_json(nullptr);
        rec["embedding"] = n.embedding;
        if (n.text) {
            rec["text"] = *n.text;
        }
        out << rec.dump() << '\n';
    }
}

void save_corpus(const std::filesystem::path& path, const EmbeddingCorpus& corpus) {
    auto out = detail::open_output(path);
    write_corpus(out, corpus);
    detail::finish_output(out, path);
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) {
            throw ConfigError("split ratios must all be positive");
        }
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(total));
    }
    std::array<std::size_t, 3> sizes{};
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        // small slack so that e.g. 0.6 * 10 does not floor to 5
        sizes[s] = static_cast<std::size_t>(std::floor(ratios[s] * static_cast<double>(n) + 1e-9));
        used += sizes[s];
    }
    std::size_t remainder = n - used;
    for (std::size_t s = 0; remainder > 0; s = (s + 1) % 2) {
        ++sizes[s];
        --remainder;
    }
    return sizes;
}

EmbeddingCorpus assign_splits(EmbeddingCorpus corpus, const SplitSpec& spec) {
    const auto sizes = split_sizes(corpus.size(), spec.ratios);
    const auto tagged = std::count_if(corpus.nodes.begin(), corpus.nodes.end(),
                                      [](const NodeRecord& n) { return n.split.has_value(); });
    if (tagged == static_cast<std::ptrdiff_t>(corpus.size())) {
        return corpus;
    }
    if (tagged != 0) {
        throw ValidationError("corpus mixes tagged and untagged records (" + std::to_string(tagged) + " of " +
                              std::to_string(corpus.size()) + " tagged)");
    }
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = 0;
    const std::array<Split, 3> kinds{Split::Train, Split::Val, Split::Test};
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < sizes[s]; ++k) {
            corpus.nodes[order[pos++]].split = kinds[s];
        }
    }
    return corpus;
}

} // namespace xghsi
