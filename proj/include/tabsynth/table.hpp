#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include "tabsynth/error.hpp"
#include "tabsynth/random.hpp"

namespace tabsynth {

enum class ColumnKind { categorical, continuous };
enum class Task { classification, regression };

inline constexpr std::string_view kCellSeparator = ", ";
inline constexpr std::string_view kIsDelimiter = " is ";

inline std::string_view to_string(ColumnKind kind) {
    return kind == ColumnKind::categorical ? "categorical" : "continuous";
}

inline std::string_view to_string(Task task) {
    return task == Task::classification ? "classification" : "regression";
}

inline ColumnKind parse_column_kind(std::string_view text) {
    if (text == "categorical") {
        return ColumnKind::categorical;
    }
    if (text == "continuous") {
        return ColumnKind::continuous;
    }
    throw InputError("unknown column kind '" + std::string(text) + "'");
}

inline Task parse_task(std::string_view text) {
    if (text == "classification") {
        return Task::classification;
    }
    if (text == "regression") {
        return Task::regression;
    }
    throw InputError("unknown task '" + std::string(text) + "'");
}

/// A cell value: categorical cells hold text, continuous cells hold a finite double.
using Value = std::variant<std::string, double>;
using FeatureRow = std::vector<Value>;

inline bool contains_reserved_delimiter(std::string_view text) {
    return text.find(kCellSeparator) != std::string_view::npos ||
           text.find(kIsDelimiter) != std::string_view::npos;
}

/// Shortest decimal text that parses back to exactly `x`.
inline std::string format_number(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

/// Parses the whole of `text` as a finite decimal; nullopt otherwise.
inline std::optional<double> parse_number(std::string_view text) {
    if (text.empty()) {
        return std::nullopt;
    }
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (*first == '+') {
        ++first;
    }
    double x = 0.0;
    const auto res = std::from_chars(first, last, x);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(x)) {
        return std::nullopt;
    }
    return x;
}

inline std::string format_value(const Value& v) {
    if (const auto* s = std::get_if<std::string>(&v)) {
        return *s;
    }
    return format_number(std::get<double>(v));
}

inline bool value_matches_kind(const Value& v, ColumnKind kind) {
    return kind == ColumnKind::categorical ? std::holds_alternative<std::string>(v)
                                           : std::holds_alternative<double>(v);
}

/// Column layout of a dataset: M named features plus one target.
struct Schema {
    std::vector<std::string> feature_names;
    std::vector<ColumnKind> feature_kinds;
    std::string target_name;
    Task task = Task::classification;

    std::size_t num_features() const { return feature_names.size(); }

    ColumnKind target_kind() const {
        return task == Task::classification ? ColumnKind::categorical : ColumnKind::continuous;
    }

    std::optional<std::size_t> feature_index(std::string_view name) const {
        for (std::size_t i = 0; i < feature_names.size(); ++i) {
            if (feature_names[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    }

    bool is_target(std::string_view name) const { return name == target_name; }

    /// Throws InputError on empty, duplicate, or delimiter-bearing names.
    void validate() const {
        if (feature_names.empty()) {
            throw InputError("schema needs at least one feature column");
        }
        if (feature_names.size() != feature_kinds.size()) {
            throw InputError("schema has mismatched feature name/kind counts");
        }
        std::vector<std::string> all = feature_names;
        all.push_back(target_name);
        for (const auto& name : all) {
            if (name.empty()) {
                throw InputError("schema contains an empty column name");
            }
            // "<name> is " must split back at the first delimiter.
            if (contains_reserved_delimiter(name) || name.ends_with(" is") || name.ends_with(',')) {
                throw InputError("column name '" + name + "' contains a reserved delimiter");
            }
        }
        std::sort(all.begin(), all.end());
        if (auto dup = std::adjacent_find(all.begin(), all.end()); dup != all.end()) {
            throw InputError("duplicate column name '" + *dup + "'");
        }
    }

    friend bool operator==(const Schema&, const Schema&) = default;
};

struct Row {
    FeatureRow features;
    Value target;

    friend bool operator==(const Row&, const Row&) = default;
};

/// Immutable, validated table: every row conforms to the schema and N >= 1.
class Dataset {
public:
    Dataset(Schema schema, std::vector<Row> rows) : schema_(std::move(schema)), rows_(std::move(rows)) {
        schema_.validate();
        if (rows_.empty()) {
            throw InputError("dataset has no rows");
        }
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            check_row(rows_[r], r);
        }
    }

    const Schema& schema() const { return schema_; }
    const std::vector<Row>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    const Row& operator[](std::size_t i) const { return rows_[i]; }

    std::vector<FeatureRow> feature_rows() const {
        std::vector<FeatureRow> out;
        out.reserve(rows_.size());
        for (const auto& row : rows_) {
            out.push_back(row.features);
        }
        return out;
    }

    std::vector<Value> targets() const {
        std::vector<Value> out;
        out.reserve(rows_.size());
        for (const auto& row : rows_) {
            out.push_back(row.target);
        }
        return out;
    }

    /// Sorted distinct class labels (classification only).
    std::vector<std::string> classes() const {
        std::vector<std::string> out;
        for (const auto& row : rows_) {
            if (const auto* s = std::get_if<std::string>(&row.target)) {
                out.push_back(*s);
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    Dataset subset(const std::vector<std::size_t>& indices) const {
        std::vector<Row> rows;
        rows.reserve(indices.size());
        for (auto i : indices) {
            rows.push_back(rows_.at(i));
        }
        return Dataset(schema_, std::move(rows));
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    void check_value(const Value& v, ColumnKind kind, const std::string& column, std::size_t row) const {
        if (!value_matches_kind(v, kind)) {
            throw InputError("row " + std::to_string(row) + ": value of column '" + column +
                             "' does not match its kind");
        }
        if (const auto* s = std::get_if<std::string>(&v)) {
            if (s->empty()) {
                throw InputError("row " + std::to_string(row) + ": empty value in column '" + column + "'");
            }
            if (contains_reserved_delimiter(*s)) {
                throw InputError("row " + std::to_string(row) + ": value '" + *s + "' of column '" + column +
                                 "' contains a reserved delimiter");
            }
        } else if (!std::isfinite(std::get<double>(v))) {
            throw InputError("row " + std::to_string(row) + ": non-finite value in column '" + column + "'");
        }
    }

    void check_row(const Row& row, std::size_t r) const {
        if (row.features.size() != schema_.num_features()) {
            throw InputError("row " + std::to_string(r) + " has " + std::to_string(row.features.size()) +
                             " features, schema expects " + std::to_string(schema_.num_features()));
        }
        for (std::size_t j = 0; j < row.features.size(); ++j) {
            check_value(row.features[j], schema_.feature_kinds[j], schema_.feature_names[j], r);
        }
        check_value(row.target, schema_.target_kind(), schema_.target_name, r);
    }

    Schema schema_;
    std::vector<Row> rows_;
};

// ---------------------------------------------------------------------------
// CSV

namespace csv {

/// RFC-4180 record parser. Returns rows of raw fields.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_record = [&] {
        record.push_back(std::move(field));
        field.clear();
        records.push_back(std::move(record));
        record.clear();
        field_started = false;
    };
    while (i < text.size()) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                    continue;
                }
                in_quotes = false;
            } else {
                field.push_back(c);
            }
            ++i;
            continue;
        }
        if (c == '"' && field.empty()) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            field_started = true;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
            end_record();
        } else {
            field.push_back(c);
            field_started = true;
        }
        ++i;
    }
    if (in_quotes) {
        throw InputError("unterminated quoted field in CSV");
    }
    if (field_started || !record.empty()) {
        end_record();
    }
    return records;
}

inline std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace csv

/// Optional overrides applied when loading a CSV.
struct SchemaHint {
    std::optional<std::string> target;               // default: last column
    std::optional<Task> task;                        // default: classification
    std::map<std::string, ColumnKind> kinds;         // per-feature kind overrides
    std::optional<Schema> schema;                    // full schema; columns matched by name

    static SchemaHint from(Schema s) {
        SchemaHint hint;
        hint.schema = std::move(s);
        return hint;
    }
};

inline Dataset parse_csv(std::string_view text, const SchemaHint& hint = {}) {
    auto records = csv::parse(text);
    // Drop trailing blank lines.
    while (!records.empty() && records.back().size() == 1 && records.back()[0].empty()) {
        records.pop_back();
    }
    if (records.empty()) {
        throw InputError("CSV is empty");
    }
    const auto header = records.front();
    const std::size_t ncols = header.size();
    if (ncols < 2) {
        throw InputError("CSV needs at least one feature column and one target column");
    }
    {
        auto sorted = header;
        std::sort(sorted.begin(), sorted.end());
        if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
            throw InputError("duplicate column name '" + *dup + "' in CSV header");
        }
    }
    if (records.size() < 2) {
        throw InputError("CSV has a header but no data rows");
    }
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != ncols) {
            throw InputError("row " + std::to_string(r - 1) + ": expected " + std::to_string(ncols) +
                             " cells, found " + std::to_string(records[r].size()));
        }
        for (std::size_t c = 0; c < ncols; ++c) {
            if (records[r][c].empty()) {
                throw InputError("row " + std::to_string(r - 1) + ": missing value in column '" + header[c] + "'");
            }
        }
    }

    Schema schema;
    std::vector<std::size_t> feature_cols;
    std::size_t target_col = ncols - 1;
    auto column_of = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw InputError("column '" + name + "' not found in CSV header");
        }
        return static_cast<std::size_t>(it - header.begin());
    };

    if (hint.schema) {
        schema = *hint.schema;
        if (schema.num_features() + 1 != ncols) {
            throw InputError("CSV column count does not match the supplied schema");
        }
        for (const auto& name : schema.feature_names) {
            feature_cols.push_back(column_of(name));
        }
        target_col = column_of(schema.target_name);
    } else {
        if (hint.target) {
            target_col = column_of(*hint.target);
        }
        schema.target_name = header[target_col];
        schema.task = hint.task.value_or(Task::classification);
        for (std::size_t c = 0; c < ncols; ++c) {
            if (c == target_col) {
                continue;
            }
            feature_cols.push_back(c);
            schema.feature_names.push_back(header[c]);
            ColumnKind kind = ColumnKind::continuous;
            if (auto it = hint.kinds.find(header[c]); it != hint.kinds.end()) {
                kind = it->second;
            } else {
                for (std::size_t r = 1; r < records.size(); ++r) {
                    if (!parse_number(records[r][c])) {
                        kind = ColumnKind::categorical;
                        break;
                    }
                }
            }
            schema.feature_kinds.push_back(kind);
        }
        for (const auto& [name, kind] : hint.kinds) {
            if (!schema.feature_index(name)) {
                throw InputError("schema hint names unknown feature '" + name + "'");
            }
        }
    }
    schema.validate();

    auto convert = [&](const std::string& cell, ColumnKind kind, std::size_t row, const std::string& column) -> Value {
        if (kind == ColumnKind::categorical) {
            return cell;
        }
        auto x = parse_number(cell);
        if (!x) {
            throw InputError("row " + std::to_string(row) + ": column '" + column + "' value '" + cell +
                             "' is not a finite number");
        }
        return *x;
    };

    std::vector<Row> rows;
    rows.reserve(records.size() - 1);
    for (std::size_t r = 1; r < records.size(); ++r) {
        Row row;
        row.features.reserve(feature_cols.size());
        for (std::size_t j = 0; j < feature_cols.size(); ++j) {
            row.features.push_back(
                convert(records[r][feature_cols[j]], schema.feature_kinds[j], r - 1, schema.feature_names[j]));
        }
        row.target = convert(records[r][target_col], schema.target_kind(), r - 1, schema.target_name);
        rows.push_back(std::move(row));
    }
    return Dataset(std::move(schema), std::move(rows));
}

inline Dataset load_csv(const std::filesystem::path& path, const SchemaHint& hint = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), hint);
}

/// Features in schema order, target last; continuous values in shortest round-trip form.
inline std::string to_csv(const Dataset& data) {
    std::string out;
    const auto& schema = data.schema();
    for (const auto& name : schema.feature_names) {
        out += csv::quote(name);
        out += ',';
    }
    out += csv::quote(schema.target_name);
    out += '\n';
    for (const auto& row : data.rows()) {
        for (const auto& v : row.features) {
            out += csv::quote(format_value(v));
            out += ',';
        }
        out += csv::quote(format_value(row.target));
        out += '\n';
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    // Write to a sibling temp file and rename so readers never see partial output.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write '" + path.string() + "'");
        }
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) {
            throw RuntimeFailure("failed writing '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void write_csv(const Dataset& data, const std::filesystem::path& path) {
    write_text_file(path, to_csv(data));
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitResult {
    Dataset train;
    Dataset test;
};

/// Indices of the test part. Stratified by `strata` when every stratum has at
/// least two members; each stratum contributes round(fraction * size) rows.
inline std::vector<std::size_t> choose_test_indices(const std::vector<std::string>& strata, double test_fraction,
                                                    Rng& rng, bool stratify) {
    const std::size_t n = strata.size();
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
        groups[strata[i]].push_back(i);
    }
    bool can_stratify = stratify;
    for (const auto& [_, members] : groups) {
        if (members.size() < 2) {
            can_stratify = false;
        }
    }
    if (!can_stratify) {
        groups.clear();
        auto& all = groups[""];
        for (std::size_t i = 0; i < n; ++i) {
            all.push_back(i);
        }
    }
    std::vector<std::size_t> test;
    for (auto& [_, members] : groups) {
        rng.shuffle(std::span<std::size_t>(members));
        const auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
        test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(std::min(take, members.size())));
    }
    std::sort(test.begin(), test.end());
    return test;
}

/// Deterministic train/test partition. Row order is preserved within each part.
inline SplitResult split(const Dataset& data, double test_fraction, std::uint64_t seed, bool stratified = true) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw InputError("test fraction must lie in (0, 1)");
    }
    std::vector<std::string> strata(data.size());
    const bool classification = data.schema().task == Task::classification;
    if (classification) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            strata[i] = std::get<std::string>(data[i].target);
        }
    }
    Rng rng(seed);
    const auto test_idx = choose_test_indices(strata, test_fraction, rng, stratified && classification);
    if (test_idx.empty() || test_idx.size() == data.size()) {
        throw InputError("test fraction " + format_number(test_fraction) + " leaves an empty part for " +
                         std::to_string(data.size()) + " rows");
    }
    std::vector<std::size_t> train_idx;
    std::size_t t = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (t < test_idx.size() && test_idx[t] == i) {
            ++t;
        } else {
            train_idx.push_back(i);
        }
    }
    return SplitResult{data.subset(train_idx), data.subset(test_idx)};
}

/// Seeded random subset of round(fraction * N) rows (at least one), order preserved.
inline Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw InputError("fraction must lie in (0, 1]");
    }
    auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
    keep = std::clamp<std::size_t>(keep, 1, data.size());
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return data.subset(idx);
}

// ---------------------------------------------------------------------------
// Marginals

/// Empirical distribution of one column. Categorical: relative frequencies in
/// sorted value order. Continuous: the observed multiset, in row order.
struct Marginal {
    ColumnKind kind = ColumnKind::categorical;
    std::vector<std::pair<std::string, double>> frequencies;
    std::vector<double> values;

    bool valid() const {
        if (kind == ColumnKind::continuous) {
            return !values.empty();
        }
        if (frequencies.empty()) {
            return false;
        }
        double total = 0.0;
        for (const auto& [_, p] : frequencies) {
            if (p < 0.0) {
                return false;
            }
            total += p;
        }
        return std::abs(total - 1.0) <= 1e-9;
    }

    /// Category with the highest frequency (ties: first in sort order).
    std::string mode() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < frequencies.size(); ++i) {
            if (frequencies[i].second > frequencies[best].second) {
                best = i;
            }
        }
        return frequencies.at(best).first;
    }
};

inline Marginal empirical_marginal(const Dataset& data, std::string_view column) {
    const auto& schema = data.schema();
    std::optional<std::size_t> feature = schema.feature_index(column);
    if (!feature && !schema.is_target(column)) {
        throw InputError("unknown column '" + std::string(column) + "'");
    }
    auto cell = [&](const Row& row) -> const Value& { return feature ? row.features[*feature] : row.target; };
    Marginal m;
    m.kind = feature ? schema.feature_kinds[*feature] : schema.target_kind();
    if (m.kind == ColumnKind::continuous) {
        m.values.reserve(data.size());
        for (const auto& row : data.rows()) {
            m.values.push_back(std::get<double>(cell(row)));
        }
        return m;
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& row : data.rows()) {
        ++counts[std::get<std::string>(cell(row))];
    }
    const double n = static_cast<double>(data.size());
    for (const auto& [value, count] : counts) {
        m.frequencies.emplace_back(value, static_cast<double>(count) / n);
    }
    return m;
}

inline Value sample_marginal(const Marginal& m, Rng& rng) {
    if (!m.valid()) {
        throw InputError("invalid marginal");
    }
    if (m.kind == ColumnKind::continuous) {
        return m.values[rng.uniform_index(m.values.size())];
    }
    std::vector<double> weights;
    weights.reserve(m.frequencies.size());
    for (const auto& [_, p] : m.frequencies) {
        weights.push_back(p);
    }
    return m.frequencies[rng.categorical(weights)].first;
}

}  // namespace tabsynth
