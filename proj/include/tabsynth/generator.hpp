#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tabsynth/binary_io.hpp"
#include "tabsynth/codec.hpp"
#include "tabsynth/error.hpp"
#include "tabsynth/lm.hpp"
#include "tabsynth/predictor.hpp"
#include "tabsynth/random.hpp"
#include "tabsynth/table.hpp"
#include "tabsynth/vocab.hpp"

namespace tabsynth {

enum class SamplingMode { each_feature, target_variable };
enum class LabelingMode { llm, classifier, none };

inline std::string_view to_string(SamplingMode m) {
    return m == SamplingMode::each_feature ? "each_feature" : "target_variable";
}

inline std::string_view to_string(LabelingMode m) {
    switch (m) {
        case LabelingMode::llm:
            return "llm";
        case LabelingMode::classifier:
            return "classifier";
        case LabelingMode::none:
            return "none";
    }
    return "none";
}

inline SamplingMode parse_sampling(std::string_view text) {
    if (text == "each_feature") {
        return SamplingMode::each_feature;
    }
    if (text == "target_variable") {
        return SamplingMode::target_variable;
    }
    throw InputError("unknown sampling mode '" + std::string(text) + "'");
}

inline LabelingMode parse_labeling(std::string_view text) {
    if (text == "llm" || text == "LLM") {
        return LabelingMode::llm;
    }
    if (text == "classifier") {
        return LabelingMode::classifier;
    }
    if (text == "none") {
        return LabelingMode::none;
    }
    throw InputError("unknown labeling mode '" + std::string(text) + "'");
}

/// Strategy triple plus sampling knobs.
struct GenConfig {
    PermutationStrategy permutation = PermutationStrategy::permute_x;
    SamplingMode sampling = SamplingMode::each_feature;
    LabelingMode labeling = LabelingMode::llm;
    std::optional<std::size_t> n_fake;  // default: size of the real dataset
    double temperature = 0.7;
    int retry_cap = 5;
    std::uint64_t seed = 0;
    bool greedy_labels = false;
    PredictorSpec predictor;  // used when labeling == classifier

    /// permute_x / each_feature / llm
    static GenConfig feature_conditional() { return {}; }

    /// permute_xy / target_variable / none: features and label generated jointly.
    static GenConfig joint_baseline() {
        GenConfig c;
        c.permutation = PermutationStrategy::permute_xy;
        c.sampling = SamplingMode::target_variable;
        c.labeling = LabelingMode::none;
        return c;
    }

    /// permute_xy / target_variable / classifier: labels from an external predictor.
    static GenConfig classifier_baseline() {
        GenConfig c = joint_baseline();
        c.labeling = LabelingMode::classifier;
        return c;
    }

    void validate() const {
        if (permutation == PermutationStrategy::identity) {
            throw InputError("generation needs permute_x or permute_xy");
        }
        if (!(temperature > 0.0)) {
            throw InputError("temperature must be positive");
        }
        if (retry_cap < 0) {
            throw InputError("retry_cap must be non-negative");
        }
        if (n_fake && *n_fake == 0) {
            throw InputError("n_fake must be at least 1");
        }
    }
};

struct GenerationReport {
    std::size_t n_requested = 0;
    std::size_t n_valid = 0;
    std::size_t n_retried = 0;         // extra sampling attempts over all rows
    std::size_t n_imputed = 0;         // rows completed from empirical marginals
    std::size_t n_label_fallback = 0;  // labels assigned by fallback after retries
    SamplingMode sampling = SamplingMode::each_feature;
    std::vector<std::size_t> allocations;  // per feature (each_feature) or a single total
};

/// Fine-tuned language model together with the table layout it was trained on.
struct TabularModel {
    Schema schema;
    PermutationStrategy permutation = PermutationStrategy::permute_x;
    LanguageModel lm;
    std::vector<double> epoch_losses;
};

// ---------------------------------------------------------------------------
// Fine-tuning

/// Per row: the permuted sentence followed by the original-order sentence.
inline std::vector<Sentence> build_corpus(const Dataset& real, PermutationStrategy permutation, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x44, 0));
    std::vector<Sentence> corpus;
    corpus.reserve(2 * real.size());
    for (const auto& row : real.rows()) {
        auto sentence = encode_row(row, real.schema());
        corpus.push_back(permute(sentence, permutation, rng));
        corpus.push_back(std::move(sentence));
    }
    return corpus;
}

inline TabularModel fine_tune(const Dataset& real, const GenConfig& config, const LMConfig& lm_config) {
    config.validate();
    const auto corpus = build_corpus(real, config.permutation, config.seed);
    const auto vocab = Vocab::build(corpus, real.schema());
    std::vector<TokenSeq> sequences;
    sequences.reserve(corpus.size());
    for (const auto& s : corpus) {
        sequences.push_back(tokenize(s, vocab));
    }
    auto trained = train(sequences, vocab, lm_config);
    return TabularModel{real.schema(), config.permutation, std::move(trained.model), std::move(trained.epoch_losses)};
}

// ---------------------------------------------------------------------------
// Sampling

/// Equal split of n_total over M features; the remainder goes one each to the
/// lowest feature indices.
inline std::vector<std::size_t> allocate_per_feature(std::size_t n_total, std::size_t m) {
    if (m == 0) {
        throw InputError("allocation needs at least one feature");
    }
    std::vector<std::size_t> counts(m, n_total / m);
    for (std::size_t i = 0; i < n_total % m; ++i) {
        ++counts[i];
    }
    return counts;
}

struct SampledFeatures {
    std::vector<FeatureRow> rows;
    std::vector<std::optional<Value>> emitted_targets;  // target cell seen during sampling, if any
    GenerationReport report;
};

namespace detail {

inline constexpr std::uint64_t kSampleStream = 0x55;
inline constexpr std::uint64_t kLabelStream = 0x66;

inline void check_model_matches(const TabularModel& model, const Dataset& real) {
    if (!(model.schema == real.schema())) {
        throw InputError("model was trained on a different schema than the supplied dataset");
    }
    if (model.lm.vocab().num_columns() != real.schema().num_features() + 1) {
        throw InputError("model vocabulary does not match the dataset schema");
    }
}

/// Renders the complete cells of a token parse as "A is a, B is b".
inline std::string cells_text(const TokenParse& parse, const Vocab& vocab) {
    std::string text;
    for (std::size_t i = 0; i < parse.cells.size(); ++i) {
        if (i > 0) {
            text += kCellSeparator;
        }
        text += vocab.token(vocab.name_id(parse.cells[i].column)).text;
        text += kIsDelimiter;
        text += vocab.token(parse.cells[i].value).text;
    }
    return text;
}

inline std::size_t recovered(const DecodedRow& row) {
    return static_cast<std::size_t>(std::count_if(row.features.begin(), row.features.end(),
                                                  [](const auto& v) { return v.has_value(); })) +
           (row.target ? 1 : 0);
}

}  // namespace detail

/// Generates n_fake feature rows. Each row is seeded by a condition ("X_i is v"
/// with v drawn from the empirical marginal of X_i, or "Y is y" in
/// target_variable mode) and completed by the model. Malformed or incomplete
/// generations are redrawn up to retry_cap times; remaining gaps are then
/// filled from the empirical marginals.
inline SampledFeatures sample_features(const TabularModel& model, const Dataset& real, const GenConfig& config) {
    config.validate();
    detail::check_model_matches(model, real);
    const auto& schema = real.schema();
    const auto& vocab = model.lm.vocab();
    const std::size_t m = schema.num_features();
    const std::size_t n_total = config.n_fake.value_or(real.size());
    const bool need_target = config.labeling == LabelingMode::none;

    std::vector<Marginal> marginals;
    marginals.reserve(m);
    for (const auto& name : schema.feature_names) {
        marginals.push_back(empirical_marginal(real, name));
    }
    const Marginal target_marginal = empirical_marginal(real, schema.target_name);

    SampledFeatures out;
    out.report.n_requested = n_total;
    out.report.sampling = config.sampling;
    std::vector<std::optional<std::size_t>> condition_feature;  // per output row; nullopt = target
    if (config.sampling == SamplingMode::each_feature) {
        out.report.allocations = allocate_per_feature(n_total, m);
        for (std::size_t f = 0; f < m; ++f) {
            condition_feature.insert(condition_feature.end(), out.report.allocations[f], f);
        }
    } else {
        out.report.allocations = {n_total};
        condition_feature.assign(n_total, std::nullopt);
    }

    const auto max_len = static_cast<std::size_t>(model.lm.config().max_len);
    for (std::size_t g = 0; g < n_total; ++g) {
        Rng rng(derive_seed(config.seed, detail::kSampleStream, g));
        std::optional<DecodedRow> best;
        bool done = false;
        for (int attempt = 0; attempt <= config.retry_cap && !done; ++attempt) {
            if (attempt > 0) {
                ++out.report.n_retried;
            }
            std::vector<std::pair<std::string, Value>> condition;
            if (const auto f = condition_feature[g]) {
                condition.emplace_back(schema.feature_names[*f], sample_marginal(marginals[*f], rng));
            } else {
                condition.emplace_back(schema.target_name, sample_marginal(target_marginal, rng));
            }
            const auto prompt = make_condition(condition, schema);
            const auto prefix = tokenize_condition(prompt, vocab);
            const auto cont = sample_continuation(model.lm, prefix, config.temperature, rng, max_len - prefix.size());
            const auto parse = parse_tokens(cont.sequence, vocab);
            if (!parse.well_formed) {
                // keep at least the condition itself
                if (!best) {
                    best = decode_text(prompt, schema);
                }
                continue;
            }
            DecodedRow decoded;
            try {
                decoded = decode_text(detail::cells_text(parse, vocab), schema);
            } catch (const DecodeError&) {
                continue;
            }
            if (!best || detail::recovered(decoded) > detail::recovered(*best)) {
                best = decoded;
            }
            done = decoded.has_all_features() && (!need_target || decoded.target.has_value());
        }
        DecodedRow row = std::move(*best);
        if (!done) {
            for (std::size_t f = 0; f < m; ++f) {
                if (!row.features[f]) {
                    row.features[f] = sample_marginal(marginals[f], rng);
                }
            }
            if (need_target && !row.target) {
                row.target = sample_marginal(target_marginal, rng);
            }
            ++out.report.n_imputed;
        }
        FeatureRow features;
        features.reserve(m);
        for (auto& v : row.features) {
            features.push_back(std::move(*v));
        }
        out.rows.push_back(std::move(features));
        out.emitted_targets.push_back(row.target);
    }
    out.report.n_valid = out.rows.size();
    return out;
}

// ---------------------------------------------------------------------------
// Labeling

struct LabelResult {
    std::vector<Value> labels;
    std::size_t n_fallback = 0;
};

/// Prompts the model with every feature of a row in schema order and samples
/// the target cell. Rows whose answer is not a well-formed target cell are
/// re-queried up to retry_cap times, then receive `fallback`.
inline LabelResult query_labels(const TabularModel& model, const std::vector<FeatureRow>& rows,
                                const GenConfig& config, const Value& fallback) {
    const auto& schema = model.schema;
    const auto& vocab = model.lm.vocab();
    const std::size_t m = schema.num_features();
    const auto target_name_id = vocab.name_id(m);
    LabelResult out;
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != m) {
            throw InputError("label query needs complete feature rows");
        }
        std::vector<std::pair<std::string, Value>> pairs;
        pairs.reserve(m);
        for (std::size_t f = 0; f < m; ++f) {
            pairs.emplace_back(schema.feature_names[f], row[f]);
        }
        const auto prefix = tokenize_condition(make_condition(pairs, schema), vocab);
        Rng rng(derive_seed(config.seed, detail::kLabelStream, i));
        std::optional<Value> label;
        for (int attempt = 0; attempt <= config.retry_cap && !label; ++attempt) {
            const auto cont = sample_continuation(model.lm, prefix, config.temperature, rng, 3, config.greedy_labels);
            const auto& seq = cont.sequence;
            if (seq.size() != prefix.size() + 3 || seq[prefix.size()] != target_name_id ||
                seq[prefix.size() + 1] != vocab.is()) {
                continue;
            }
            const auto& value = vocab.token(seq[prefix.size() + 2]);
            if (value.kind != TokenKind::value || value.column != static_cast<std::int32_t>(m)) {
                continue;
            }
            if (schema.task == Task::classification) {
                label = value.text;
            } else if (auto x = parse_number(value.text)) {
                label = *x;
            }
        }
        if (!label) {
            label = fallback;
            ++out.n_fallback;
        }
        out.labels.push_back(std::move(*label));
    }
    return out;
}

/// Labels from an external predictor fitted on real data.
inline std::vector<Value> label_external(const PredictiveModel& predictor, const std::vector<FeatureRow>& rows) {
    return predictor.predict(rows);
}

/// Majority class (classification) or mean target (regression) of `real`.
inline Value fallback_label(const Dataset& real) {
    const auto marginal = empirical_marginal(real, real.schema().target_name);
    if (marginal.kind == ColumnKind::categorical) {
        return marginal.mode();
    }
    double sum = 0.0;
    for (double v : marginal.values) {
        sum += v;
    }
    return sum / static_cast<double>(marginal.values.size());
}

struct GenerationResult {
    Dataset fake;
    GenerationReport report;
};

/// Sampling and labeling with an already fine-tuned model.
inline GenerationResult generate_with(const TabularModel& model, const Dataset& real, const GenConfig& config) {
    config.validate();
    if (model.permutation != config.permutation) {
        throw InputError("model was fine-tuned with " + std::string(to_string(model.permutation)) +
                         " but the configuration asks for " + std::string(to_string(config.permutation)));
    }
    auto sampled = sample_features(model, real, config);
    std::vector<Value> labels;
    switch (config.labeling) {
        case LabelingMode::llm: {
            auto result = query_labels(model, sampled.rows, config, fallback_label(real));
            labels = std::move(result.labels);
            sampled.report.n_label_fallback = result.n_fallback;
            break;
        }
        case LabelingMode::classifier: {
            const auto predictor = fit(config.predictor, real);
            labels = label_external(predictor, sampled.rows);
            break;
        }
        case LabelingMode::none:
            for (auto& t : sampled.emitted_targets) {
                labels.push_back(std::move(*t));
            }
            break;
    }
    std::vector<Row> rows;
    rows.reserve(sampled.rows.size());
    for (std::size_t i = 0; i < sampled.rows.size(); ++i) {
        rows.push_back(Row{std::move(sampled.rows[i]), std::move(labels[i])});
    }
    return GenerationResult{Dataset(real.schema(), std::move(rows)), std::move(sampled.report)};
}

/// Full pipeline: fine-tune on `real`, sample features, assign labels.
inline GenerationResult generate(const Dataset& real, const GenConfig& config, const LMConfig& lm_config) {
    const auto model = fine_tune(real, config, lm_config);
    return generate_with(model, real, config);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointMagic = "TABSYNTH-CKPT";
inline constexpr std::uint64_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const TabularModel& model) {
    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    binary::write_u64(out, kCheckpointVersion);
    const auto& s = model.schema;
    binary::write_u64(out, s.num_features());
    for (std::size_t i = 0; i < s.num_features(); ++i) {
        binary::write_string(out, s.feature_names[i]);
        binary::write_u64(out, static_cast<std::uint64_t>(s.feature_kinds[i]));
    }
    binary::write_string(out, s.target_name);
    binary::write_u64(out, static_cast<std::uint64_t>(s.task));
    binary::write_u64(out, static_cast<std::uint64_t>(model.permutation));
    binary::write_f64s(out, model.epoch_losses);
    model.lm.write(out);
}

inline TabularModel read_checkpoint(std::istream& in) {
    std::string magic(kCheckpointMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || magic != kCheckpointMagic) {
        throw InputError("not a tabsynth checkpoint");
    }
    if (binary::read_u64(in) != kCheckpointVersion) {
        throw InputError("unsupported checkpoint version");
    }
    Schema s;
    const auto m = binary::read_u64(in);
    if (m == 0 || m > 100000) {
        throw InputError("corrupt checkpoint schema");
    }
    for (std::uint64_t i = 0; i < m; ++i) {
        s.feature_names.push_back(binary::read_string(in));
        const auto kind = binary::read_u64(in);
        if (kind > 1) {
            throw InputError("corrupt checkpoint column kind");
        }
        s.feature_kinds.push_back(static_cast<ColumnKind>(kind));
    }
    s.target_name = binary::read_string(in);
    const auto task = binary::read_u64(in);
    const auto perm = binary::read_u64(in);
    if (task > 1 || perm > 2) {
        throw InputError("corrupt checkpoint header");
    }
    s.task = static_cast<Task>(task);
    s.validate();
    auto losses = binary::read_f64s(in);
    auto lm = LanguageModel::read(in);
    return TabularModel{std::move(s), static_cast<PermutationStrategy>(perm), std::move(lm), std::move(losses)};
}

inline void save_checkpoint(const TabularModel& model, const std::filesystem::path& path) {
    std::ostringstream buf(std::ios::binary);
    write_checkpoint(buf, model);
    write_text_file(path, buf.str());
}

inline TabularModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint '" + path.string() + "'");
    }
    return read_checkpoint(in);
}

}  // namespace tabsynth
