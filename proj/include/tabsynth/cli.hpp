#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tabsynth/error.hpp"
#include "tabsynth/generator.hpp"
#include "tabsynth/metrics.hpp"
#include "tabsynth/predictor.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Flat key-value files

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

/// "key = value" per line; blank lines and lines starting with '#' are skipped.
/// Duplicate keys are an error.
inline std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& origin) {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++line_no;
        const auto line = trim(text.substr(start, end - start));
        start = end + 1;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InputError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw InputError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
            throw InputError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Schema overrides file: "target = <column>", "task = classification|regression",
/// and "kind.<column> = categorical|continuous".
inline SchemaHint load_schema_hint(const fs::path& path) {
    SchemaHint hint;
    for (const auto& [key, value] : parse_key_values(read_file(path), path.string())) {
        if (key == "target") {
            hint.target = value;
        } else if (key == "task") {
            hint.task = parse_task(value);
        } else if (key.starts_with("kind.") && key.size() > 5) {
            hint.kinds[key.substr(5)] = parse_column_kind(value);
        } else {
            throw InputError(path.string() + ": unknown schema key '" + key + "'");
        }
    }
    return hint;
}

// ---------------------------------------------------------------------------
// Run configuration

struct KeySpec {
    std::string key;
    std::string help;
    bool is_flag = false;
};

inline const std::vector<KeySpec>& known_keys() {
    static const std::vector<KeySpec> keys = {
        {"data", "real (training) dataset CSV"},
        {"schema", "schema overrides file"},
        {"out", "output directory"},
        {"model", "checkpoint path (default <out>/model.ckpt)"},
        {"fake", "synthetic dataset CSV for evaluate (default <out>/fake.csv)"},
        {"test", "held-out real dataset CSV for evaluate"},
        {"seed", "random seed"},
        {"seeds", "comma-separated seeds for evaluate/ablate"},
        {"epochs", "training epochs"},
        {"batch_size", "training batch size"},
        {"learning_rate", "Adam learning rate"},
        {"layers", "transformer layers"},
        {"heads", "attention heads"},
        {"embed_dim", "embedding width"},
        {"temperature", "sampling temperature"},
        {"strategy", "permute_x | permute_xy"},
        {"sampling", "each_feature | target_variable"},
        {"labeling", "llm | classifier | none"},
        {"retry_cap", "resampling attempts for malformed generations"},
        {"gen_fraction", "generated rows as a fraction of the real rows (ablate: comma list)"},
        {"n_fake", "number of generated rows"},
        {"train_fraction", "fraction of training rows kept before fitting (ablate: comma list)"},
        {"test_fraction", "held-out fraction for fit/ablate splits"},
        {"predictor", "decision_tree | bagged_trees"},
        {"max_depth", "predictor tree depth"},
        {"n_trees", "trees in the bagged predictor"},
        {"greedy_labels", "argmax label querying", true},
        {"full_grid", "ablate over the full strategy cross product", true},
        {"normalized_discriminator", "also report max(0, 2*acc-1)", true},
    };
    return keys;
}

inline std::string flag_name(const std::string& key) {
    std::string f = "--" + key;
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
}

/// Merged key-value settings: file values first, command-line flags on top.
class Settings {
public:
    Settings() = default;
    explicit Settings(std::map<std::string, std::string> values) : values_(std::move(values)) {
        for (const auto& [key, _] : values_) {
            const auto& keys = known_keys();
            if (std::none_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.key == key; })) {
                throw InputError("unknown configuration key '" + key + "'");
            }
        }
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::optional<std::string> text(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::string required(const std::string& key) const {
        if (auto v = text(key)) {
            return *v;
        }
        throw InputError("missing required option " + flag_name(key));
    }

    std::optional<double> real(const std::string& key) const {
        auto v = text(key);
        if (!v) {
            return std::nullopt;
        }
        auto x = parse_number(*v);
        if (!x) {
            throw InputError("invalid number for " + key + ": '" + *v + "'");
        }
        return x;
    }

    std::optional<std::int64_t> integer(const std::string& key) const {
        auto v = text(key);
        if (!v) {
            return std::nullopt;
        }
        std::int64_t x = 0;
        const auto* end = v->data() + v->size();
        auto [ptr, ec] = std::from_chars(v->data(), end, x);
        if (ec != std::errc() || ptr != end) {
            throw InputError("invalid integer for " + key + ": '" + *v + "'");
        }
        return x;
    }

    std::optional<std::uint64_t> unsigned_integer(const std::string& key) const {
        auto x = integer(key);
        if (x && *x < 0) {
            throw InputError(key + " must be non-negative");
        }
        return x ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(*x)) : std::nullopt;
    }

    bool boolean(const std::string& key) const {
        auto v = text(key);
        if (!v || *v == "true" || *v == "1" || v->empty()) {
            return v.has_value();
        }
        if (*v == "false" || *v == "0") {
            return false;
        }
        throw InputError("invalid boolean for " + key + ": '" + *v + "'");
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        if (auto v = text(key)) {
            for (auto part : split_on(*v, ",")) {
                auto x = parse_number(trim(part));
                if (!x) {
                    throw InputError("invalid number list for " + key + ": '" + *v + "'");
                }
                out.push_back(*x);
            }
        }
        return out;
    }

    std::vector<std::uint64_t> seeds() const {
        std::vector<std::uint64_t> out;
        if (auto v = text("seeds")) {
            for (auto part : split_on(*v, ",")) {
                const auto t = trim(part);
                std::uint64_t x = 0;
                auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
                if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
                    throw InputError("invalid seed list: '" + *v + "'");
                }
                out.push_back(x);
            }
        }
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

inline Settings load_settings(const fs::path& path) {
    return Settings(parse_key_values(read_file(path), path.string()));
}

inline LMConfig lm_config(const Settings& s) {
    LMConfig c;
    if (auto v = s.integer("layers")) c.layers = static_cast<int>(*v);
    if (auto v = s.integer("heads")) c.heads = static_cast<int>(*v);
    if (auto v = s.integer("embed_dim")) c.embed_dim = static_cast<int>(*v);
    if (auto v = s.real("learning_rate")) c.learning_rate = *v;
    if (auto v = s.integer("batch_size")) c.batch_size = static_cast<int>(*v);
    if (auto v = s.integer("epochs")) c.epochs = static_cast<int>(*v);
    if (auto v = s.real("temperature")) c.temperature = *v;
    if (auto v = s.unsigned_integer("seed")) c.seed = *v;
    c.validate();
    return c;
}

inline PredictorSpec predictor_spec(const Settings& s) {
    PredictorSpec p;
    if (auto v = s.text("predictor")) p.kind = parse_predictor_kind(*v);
    if (auto v = s.integer("max_depth")) p.max_depth = static_cast<int>(*v);
    if (auto v = s.integer("n_trees")) p.n_trees = static_cast<int>(*v);
    if (auto v = s.unsigned_integer("seed")) p.seed = *v;
    p.validate();
    return p;
}

inline GenConfig gen_config(const Settings& s) {
    GenConfig g;
    if (auto v = s.text("strategy")) g.permutation = parse_permutation(*v);
    if (auto v = s.text("sampling")) g.sampling = parse_sampling(*v);
    if (auto v = s.text("labeling")) g.labeling = parse_labeling(*v);
    if (auto v = s.real("temperature")) g.temperature = *v;
    if (auto v = s.integer("retry_cap")) g.retry_cap = static_cast<int>(*v);
    if (auto v = s.unsigned_integer("seed")) g.seed = *v;
    g.greedy_labels = s.boolean("greedy_labels");
    g.predictor = predictor_spec(s);
    return g;
}

inline double single_fraction(const Settings& s, const std::string& key, double fallback, bool allow_one) {
    const auto values = s.reals(key);
    if (values.size() > 1) {
        throw InputError(key + " takes a single value for this command");
    }
    const double f = values.empty() ? fallback : values[0];
    if (!(f > 0.0 && (allow_one ? f <= 1.0 : f < 1.0))) {
        throw InputError(key + " must lie in (0, 1" + (allow_one ? "]" : ")"));
    }
    return f;
}

inline std::size_t fraction_count(double fraction, std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

inline Dataset load_data(const Settings& s, const std::string& key = "data") {
    SchemaHint hint;
    if (auto schema = s.text("schema")) {
        hint = load_schema_hint(*schema);
    }
    const fs::path path = s.required(key);
    if (!fs::exists(path)) {
        throw InputError("data file '" + path.string() + "' does not exist");
    }
    return load_csv(path, hint);
}

inline fs::path output_dir(const Settings& s) {
    fs::path out = s.required("out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw InputError("cannot create output directory '" + out.string() + "': " + ec.message());
    }
    return out;
}

inline void write_json(const fs::path& path, const Json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const GenerationReport& r, const GenConfig& g) {
    Json j;
    j["permutation"] = std::string(to_string(g.permutation));
    j["sampling"] = std::string(to_string(g.sampling));
    j["labeling"] = std::string(to_string(g.labeling));
    j["temperature"] = g.temperature;
    j["retry_cap"] = g.retry_cap;
    j["seed"] = g.seed;
    j["n_requested"] = r.n_requested;
    j["n_valid"] = r.n_valid;
    j["n_retried"] = r.n_retried;
    j["n_imputed"] = r.n_imputed;
    j["n_label_fallback"] = r.n_label_fallback;
    j["allocations"] = r.allocations;
    return j;
}

inline std::string loss_csv(const std::vector<double>& losses) {
    std::string out = "epoch,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
        out += std::to_string(i + 1) + "," + format_number(losses[i]) + "\n";
    }
    return out;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Mean and population standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    if (xs.empty()) {
        return r;
    }
    for (double x : xs) {
        r.mean += x;
    }
    r.mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - r.mean) * (x - r.mean);
    }
    r.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return r;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_fit(const Settings& s, std::ostream& log) {
    auto data = load_data(s);
    const auto out = output_dir(s);
    const auto lm = lm_config(s);
    const auto gen = gen_config(s);
    if (auto tf = s.real("test_fraction")) {
        const auto parts = split(data, *tf, lm.seed);
        write_csv(parts.train, out / "train.csv");
        write_csv(parts.test, out / "test.csv");
        data = parts.train;
    }
    if (s.has("train_fraction")) {
        data = subsample(data, single_fraction(s, "train_fraction", 1.0, true), derive_seed(lm.seed, 0x7F, 0));
    }
    log << "fit: " << data.size() << " rows, " << data.schema().num_features() << " features, "
        << to_string(gen.permutation) << ", " << lm.epochs << " epochs\n";
    const auto model = fine_tune(data, gen, lm);
    save_checkpoint(model, out / "model.ckpt");
    write_text_file(out / "loss.csv", loss_csv(model.epoch_losses));
    return 0;
}

inline int cmd_generate(const Settings& s, std::ostream& log) {
    const auto out = output_dir(s);
    const fs::path ckpt = s.text("model").value_or((out / "model.ckpt").string());
    if (!fs::exists(ckpt)) {
        throw InputError("checkpoint '" + ckpt.string() + "' does not exist");
    }
    const auto model = load_checkpoint(ckpt);
    const fs::path data_path = s.required("data");
    if (!fs::exists(data_path)) {
        throw InputError("data file '" + data_path.string() + "' does not exist");
    }
    const auto real = load_csv(data_path, SchemaHint::from(model.schema));
    auto gen = gen_config(s);
    if (!s.has("strategy")) {
        gen.permutation = model.permutation;
    }
    if (auto n = s.integer("n_fake")) {
        if (*n < 1) {
            throw InputError("n_fake must be at least 1");
        }
        gen.n_fake = static_cast<std::size_t>(*n);
    } else if (s.has("gen_fraction")) {
        gen.n_fake = fraction_count(single_fraction(s, "gen_fraction", 1.0, false), real.size());
    }
    const auto result = generate_with(model, real, gen);
    write_csv(result.fake, out / "fake.csv");
    write_json(out / "report.json", to_json(result.report, gen));
    log << "generate: " << result.fake.size() << " rows (" << result.report.n_retried << " retries, "
        << result.report.n_imputed << " imputed, " << result.report.n_label_fallback << " label fallbacks)\n";
    return 0;
}

inline int cmd_evaluate(const Settings& s, std::ostream& log) {
    const auto out = output_dir(s);
    const auto real = load_data(s);
    const auto hint = SchemaHint::from(real.schema());
    const fs::path fake_path = s.text("fake").value_or((out / "fake.csv").string());
    const fs::path test_path = s.required("test");
    for (const auto& p : {fake_path, test_path}) {
        if (!fs::exists(p)) {
            throw InputError("data file '" + p.string() + "' does not exist");
        }
    }
    const auto fake = load_csv(fake_path, hint);
    const auto test = load_csv(test_path, hint);
    auto seeds = s.seeds();
    if (seeds.empty()) {
        seeds.push_back(s.unsigned_integer("seed").value_or(0));
    }
    auto spec = predictor_spec(s);
    const bool normalized = s.boolean("normalized_discriminator");

    Json per_seed = Json::array();
    std::vector<double> tstrs, discs;
    std::optional<MetricsReport> first;
    for (auto seed : seeds) {
        spec.seed = seed;
        EvalOptions opt;
        opt.seed = seed;
        opt.normalized_discriminator = normalized;
        auto r = evaluate_all(real, fake, test, spec, opt);
        Json j;
        j["seed"] = seed;
        j["tstr_score"] = r.tstr_score;
        j["discriminator_accuracy"] = r.discriminator_accuracy;
        if (r.discriminator_normalized) {
            j["discriminator_normalized"] = *r.discriminator_normalized;
        }
        per_seed.push_back(j);
        tstrs.push_back(r.tstr_score);
        discs.push_back(r.discriminator_accuracy);
        if (!first) {
            first = std::move(r);
        }
    }
    const auto t = mean_std(tstrs);
    const auto d = mean_std(discs);
    Json doc;
    doc["task"] = std::string(to_string(real.schema().task));
    doc["tstr_metric"] = real.schema().task == Task::classification ? "accuracy" : "mse";
    doc["n_real"] = real.size();
    doc["n_fake"] = fake.size();
    doc["n_test"] = test.size();
    doc["seeds"] = seeds;
    doc["tstr_score"] = t.mean;
    doc["tstr_score_std"] = t.std;
    doc["discriminator_accuracy"] = d.mean;
    doc["discriminator_accuracy_std"] = d.std;
    if (normalized) {
        doc["discriminator_normalized"] = normalized_discriminator(d.mean);
    }
    doc["inverse_kl"] = first->inverse_kl;
    doc["density"] = first->density;
    doc["coverage"] = first->coverage;
    doc["dcr_min"] = first->dcr.min;
    doc["dcr_mean"] = first->dcr.mean;
    doc["dcr_median"] = first->dcr.median;
    doc["dcr_max"] = first->dcr.max;
    doc["per_seed"] = per_seed;
    write_json(out / "metrics.json", doc);
    write_text_file(out / "dcr_hist.csv", dcr_histogram_csv(first->dcr));
    log << "evaluate: tstr " << format_number(t.mean) << ", discriminator " << format_number(d.mean) << ", inverse_kl "
        << format_number(first->inverse_kl) << "\n";
    return 0;
}

struct GridRow {
    std::string method;
    PermutationStrategy permutation;
    SamplingMode sampling;
    LabelingMode labeling;
};

/// The eight named configurations, or every combination when `full` is set.
inline std::vector<GridRow> ablation_grid(bool full) {
    using P = PermutationStrategy;
    using S = SamplingMode;
    using L = LabelingMode;
    if (full) {
        std::vector<GridRow> rows;
        for (auto p : {P::permute_xy, P::permute_x}) {
            for (auto sm : {S::target_variable, S::each_feature}) {
                for (auto l : {L::none, L::classifier, L::llm}) {
                    rows.push_back({"variant", p, sm, l});
                }
            }
        }
        for (auto& r : rows) {
            if (r.permutation == P::permute_xy && r.sampling == S::target_variable) {
                if (r.labeling == L::none) r.method = "joint_baseline";
                if (r.labeling == L::classifier) r.method = "classifier_baseline";
            }
            if (r.permutation == P::permute_x && r.sampling == S::each_feature && r.labeling == L::llm) {
                r.method = "feature_conditional";
            }
        }
        return rows;
    }
    return {
        {"joint_baseline", P::permute_xy, S::target_variable, L::none},
        {"classifier_baseline", P::permute_xy, S::target_variable, L::classifier},
        {"variant", P::permute_x, S::target_variable, L::none},
        {"variant", P::permute_xy, S::each_feature, L::none},
        {"variant", P::permute_xy, S::target_variable, L::llm},
        {"variant", P::permute_xy, S::each_feature, L::llm},
        {"variant", P::permute_x, S::target_variable, L::llm},
        {"feature_conditional", P::permute_x, S::each_feature, L::llm},
    };
}

inline int cmd_ablate(const Settings& s, std::ostream& log) {
    const auto data = load_data(s);
    const auto out = output_dir(s);
    auto seeds = s.seeds();
    if (seeds.empty()) {
        if (auto seed = s.unsigned_integer("seed")) {
            seeds.push_back(*seed);
        } else {
            seeds = {0, 1, 2};
        }
    }
    auto train_fractions = s.reals("train_fraction");
    auto gen_fractions = s.reals("gen_fraction");
    if (train_fractions.empty()) train_fractions = {1.0};
    if (gen_fractions.empty()) gen_fractions = {1.0};
    for (double f : train_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw InputError("train_fraction values must lie in (0, 1]");
    }
    for (double f : gen_fractions) {
        if (!(f > 0.0)) throw InputError("gen_fraction values must be positive");
    }
    const double test_fraction = s.real("test_fraction").value_or(0.2);
    const auto grid = ablation_grid(s.boolean("full_grid"));
    const auto base_lm = lm_config(s);
    const auto base_gen = gen_config(s);

    std::string csv =
        "method,permutation,sampling,labeling,train_fraction,gen_fraction,n_train,n_fake,tstr_mean,tstr_std,n_seeds\n";
    for (double tf : train_fractions) {
        std::vector<std::vector<std::vector<double>>> scores(
            gen_fractions.size(), std::vector<std::vector<double>>(grid.size()));
        std::vector<std::size_t> n_train(seeds.size());
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            const auto seed = seeds[si];
            const auto parts = split(data, test_fraction, seed);
            const auto train = tf < 1.0 ? subsample(parts.train, tf, derive_seed(seed, 0x7F, 0)) : parts.train;
            n_train[si] = train.size();
            std::map<PermutationStrategy, TabularModel> models;
            for (std::size_t c = 0; c < grid.size(); ++c) {
                GenConfig g = base_gen;
                g.permutation = grid[c].permutation;
                g.sampling = grid[c].sampling;
                g.labeling = grid[c].labeling;
                g.seed = seed;
                g.predictor.seed = seed;
                auto it = models.find(g.permutation);
                if (it == models.end()) {
                    LMConfig lm = base_lm;
                    lm.seed = seed;
                    it = models.emplace(g.permutation, fine_tune(train, g, lm)).first;
                }
                for (std::size_t gi = 0; gi < gen_fractions.size(); ++gi) {
                    g.n_fake = fraction_count(gen_fractions[gi], train.size());
                    const auto result = generate_with(it->second, train, g);
                    const double score = tstr(result.fake, parts.test, g.predictor);
                    scores[gi][c].push_back(score);
                    log << "ablate: seed " << seed << " " << to_string(g.permutation) << "/" << to_string(g.sampling)
                        << "/" << to_string(g.labeling) << " train " << format_number(tf) << " gen "
                        << format_number(gen_fractions[gi]) << " tstr " << format_number(score) << "\n";
                }
            }
        }
        std::vector<double> n_train_real(n_train.begin(), n_train.end());
        const auto mean_train = static_cast<std::size_t>(std::llround(mean_std(n_train_real).mean));
        for (std::size_t gi = 0; gi < gen_fractions.size(); ++gi) {
            for (std::size_t c = 0; c < grid.size(); ++c) {
                const auto ms = mean_std(scores[gi][c]);
                csv += grid[c].method + "," + std::string(to_string(grid[c].permutation)) + "," +
                       std::string(to_string(grid[c].sampling)) + "," + std::string(to_string(grid[c].labeling)) + "," +
                       format_number(tf) + "," + format_number(gen_fractions[gi]) + "," + std::to_string(mean_train) +
                       "," + std::to_string(fraction_count(gen_fractions[gi], mean_train)) + "," +
                       format_number(ms.mean) + "," + format_number(ms.std) + "," + std::to_string(seeds.size()) + "\n";
            }
        }
    }
    write_text_file(out / "ablation.csv", csv);
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point

/// Runs one command line. Returns the process exit code: 0 success, 2 usage or
/// input error, 3 runtime failure.
inline int run(const std::vector<std::string>& args, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Synthesize labeled tabular data with a small autoregressive model", "tabsynth"};
    app.require_subcommand(1);
    struct Verb {
        const char* name;
        const char* help;
        int (*fn)(const Settings&, std::ostream&);
    };
    const Verb verbs[] = {
        {"fit", "fine-tune a model on a dataset", cmd_fit},
        {"generate", "sample a synthetic dataset from a checkpoint", cmd_generate},
        {"evaluate", "score a synthetic dataset against real data", cmd_evaluate},
        {"ablate", "run the strategy grid and report TSTR per configuration", cmd_ablate},
    };
    std::vector<std::pair<CLI::App*, std::vector<std::pair<std::string, CLI::Option*>>>> subs;
    std::vector<std::string> config_paths(std::size(verbs));
    for (std::size_t v = 0; v < std::size(verbs); ++v) {
        auto* sub = app.add_subcommand(verbs[v].name, verbs[v].help);
        sub->add_option("--config", config_paths[v], "flat key = value configuration file");
        std::vector<std::pair<std::string, CLI::Option*>> opts;
        for (const auto& k : known_keys()) {
            opts.emplace_back(k.key, k.is_flag ? sub->add_flag(flag_name(k.key), k.help)
                                               : sub->add_option(flag_name(k.key), k.help)->type_size(1));
        }
        subs.emplace_back(sub, std::move(opts));
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        log << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        log << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        for (std::size_t v = 0; v < subs.size(); ++v) {
            auto& [sub, opts] = subs[v];
            if (!sub->parsed()) {
                continue;
            }
            Settings settings = config_paths[v].empty() ? Settings{} : load_settings(config_paths[v]);
            for (std::size_t k = 0; k < opts.size(); ++k) {
                const auto& [key, opt] = opts[k];
                if (opt->count() > 0) {
                    settings.set(key, known_keys()[k].is_flag ? "true" : opt->as<std::string>());
                }
            }
            return verbs[v].fn(settings, log);
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const RuntimeFailure& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}

}  // namespace tabsynth::cli
