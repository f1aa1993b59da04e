#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tabsynth/error.hpp"
#include "tabsynth/random.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth {

/// One "<name> is <value>" clause of a serialized row.
struct Cell {
    std::string name;
    std::string value_text;
    bool is_target = false;

    std::string render() const {
        std::string out = name;
        out += kIsDelimiter;
        out += value_text;
        return out;
    }

    friend bool operator==(const Cell&, const Cell&) = default;
};

struct Sentence {
    std::vector<Cell> cells;

    std::string render() const {
        std::string out;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i > 0) {
                out += kCellSeparator;
            }
            out += cells[i].render();
        }
        return out;
    }

    std::size_t target_position() const {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (cells[i].is_target) {
                return i;
            }
        }
        return cells.size();
    }

    friend bool operator==(const Sentence&, const Sentence&) = default;
};

enum class PermutationStrategy { permute_x, permute_xy, identity };

inline std::string_view to_string(PermutationStrategy s) {
    switch (s) {
        case PermutationStrategy::permute_x:
            return "permute_x";
        case PermutationStrategy::permute_xy:
            return "permute_xy";
        case PermutationStrategy::identity:
            return "identity";
    }
    return "identity";
}

inline PermutationStrategy parse_permutation(std::string_view text) {
    if (text == "permute_x") {
        return PermutationStrategy::permute_x;
    }
    if (text == "permute_xy") {
        return PermutationStrategy::permute_xy;
    }
    if (text == "identity") {
        return PermutationStrategy::identity;
    }
    throw InputError("unknown permutation strategy '" + std::string(text) + "'");
}

class EncodeError : public InputError {
public:
    using InputError::InputError;
};

inline Cell make_cell(const std::string& name, const Value& value, bool is_target) {
    Cell cell{name, format_value(value), is_target};
    if (cell.value_text.empty() || contains_reserved_delimiter(cell.value_text)) {
        throw EncodeError("value '" + cell.value_text + "' of column '" + name +
                          "' cannot be encoded: empty or contains a reserved delimiter");
    }
    return cell;
}

/// Cells in schema order with the target cell last.
inline Sentence encode_row(const Row& row, const Schema& schema) {
    if (row.features.size() != schema.num_features()) {
        throw EncodeError("row does not match schema width");
    }
    Sentence s;
    s.cells.reserve(schema.num_features() + 1);
    for (std::size_t j = 0; j < schema.num_features(); ++j) {
        if (!value_matches_kind(row.features[j], schema.feature_kinds[j])) {
            throw EncodeError("value of column '" + schema.feature_names[j] + "' does not match its kind");
        }
        s.cells.push_back(make_cell(schema.feature_names[j], row.features[j], false));
    }
    if (!value_matches_kind(row.target, schema.target_kind())) {
        throw EncodeError("target value does not match the task");
    }
    s.cells.push_back(make_cell(schema.target_name, row.target, true));
    return s;
}

/// Reorders the cells of a full sentence (exactly one target cell).
/// permute_x keeps the target last; permute_xy shuffles all cells.
inline Sentence permute(const Sentence& s, PermutationStrategy strategy, Rng& rng) {
    const auto target_count = std::count_if(s.cells.begin(), s.cells.end(), [](const Cell& c) { return c.is_target; });
    if (target_count != 1 || s.cells.size() < 2) {
        throw InputError("permute needs a full sentence with exactly one target cell");
    }
    Sentence out = s;
    switch (strategy) {
        case PermutationStrategy::identity:
            break;
        case PermutationStrategy::permute_x: {
            std::vector<Cell> features;
            std::optional<Cell> target;
            for (const auto& c : s.cells) {
                if (c.is_target) {
                    target = c;
                } else {
                    features.push_back(c);
                }
            }
            rng.shuffle(std::span<Cell>(features));
            features.push_back(*target);
            out.cells = std::move(features);
            break;
        }
        case PermutationStrategy::permute_xy:
            rng.shuffle(std::span<Cell>(out.cells));
            break;
    }
    return out;
}

/// Structured failure of decode_text; `fragment` is the offending piece of text.
class DecodeError : public InputError {
public:
    enum class Kind { missing_is, unknown_column, duplicate_column, bad_number, empty_value };

    DecodeError(Kind kind, std::string fragment)
        : InputError(describe(kind) + ": '" + fragment + "'"), kind_(kind), fragment_(std::move(fragment)) {}

    Kind kind() const { return kind_; }
    const std::string& fragment() const { return fragment_; }

private:
    static std::string describe(Kind kind) {
        switch (kind) {
            case Kind::missing_is:
                return "fragment without ' is '";
            case Kind::unknown_column:
                return "unknown column";
            case Kind::duplicate_column:
                return "duplicate column";
            case Kind::bad_number:
                return "unparsable continuous value";
            case Kind::empty_value:
                return "empty value";
        }
        return "decode error";
    }

    Kind kind_;
    std::string fragment_;
};

/// Possibly partial row recovered from text.
struct DecodedRow {
    std::vector<std::optional<Value>> features;
    std::optional<Value> target;
    std::vector<std::string> missing;  // feature names (and target) not present, schema order

    bool has_all_features() const {
        return std::all_of(features.begin(), features.end(), [](const auto& v) { return v.has_value(); });
    }

    bool complete() const { return has_all_features() && target.has_value(); }

    Row to_row() const {
        if (!complete()) {
            throw InputError("decoded row is incomplete");
        }
        Row row;
        for (const auto& v : features) {
            row.features.push_back(*v);
        }
        row.target = *target;
        return row;
    }
};

inline std::vector<std::string_view> split_on(std::string_view text, std::string_view delim) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(delim, start);
        if (pos == std::string_view::npos) {
            parts.push_back(text.substr(start));
            break;
        }
        parts.push_back(text.substr(start, pos - start));
        start = pos + delim.size();
    }
    return parts;
}

/// Parses "A is a, B is b, ..." into a (possibly partial) row. A trailing ", "
/// (as produced by make_condition) is accepted.
inline DecodedRow decode_text(std::string_view text, const Schema& schema) {
    DecodedRow out;
    out.features.resize(schema.num_features());
    if (text.ends_with(kCellSeparator)) {
        text.remove_suffix(kCellSeparator.size());
    }
    if (!text.empty()) {
        for (auto fragment : split_on(text, kCellSeparator)) {
            const auto pos = fragment.find(kIsDelimiter);
            if (pos == std::string_view::npos) {
                throw DecodeError(DecodeError::Kind::missing_is, std::string(fragment));
            }
            const std::string name(fragment.substr(0, pos));
            const std::string value_text(fragment.substr(pos + kIsDelimiter.size()));
            if (value_text.empty()) {
                throw DecodeError(DecodeError::Kind::empty_value, std::string(fragment));
            }
            const auto feature = schema.feature_index(name);
            const bool is_target = !feature && schema.is_target(name);
            if (!feature && !is_target) {
                throw DecodeError(DecodeError::Kind::unknown_column, name);
            }
            auto& slot = feature ? out.features[*feature] : out.target;
            if (slot) {
                throw DecodeError(DecodeError::Kind::duplicate_column, name);
            }
            const ColumnKind kind = feature ? schema.feature_kinds[*feature] : schema.target_kind();
            if (kind == ColumnKind::continuous) {
                auto x = parse_number(value_text);
                if (!x) {
                    throw DecodeError(DecodeError::Kind::bad_number, std::string(fragment));
                }
                slot = *x;
            } else {
                slot = value_text;
            }
        }
    }
    for (std::size_t j = 0; j < schema.num_features(); ++j) {
        if (!out.features[j]) {
            out.missing.push_back(schema.feature_names[j]);
        }
    }
    if (!out.target) {
        out.missing.push_back(schema.target_name);
    }
    return out;
}

/// Prompt text "A is a, B is b, " for the given (name, value) pairs, in order.
inline std::string make_condition(const std::vector<std::pair<std::string, Value>>& pairs, const Schema& schema) {
    std::set<std::string> seen;
    std::string out;
    for (const auto& [name, value] : pairs) {
        const bool known = schema.feature_index(name).has_value() || schema.is_target(name);
        if (!known) {
            throw InputError("unknown column '" + name + "' in condition");
        }
        if (!seen.insert(name).second) {
            throw InputError("duplicate column '" + name + "' in condition");
        }
        out += make_cell(name, value, schema.is_target(name)).render();
        out += kCellSeparator;
    }
    return out;
}

}  // namespace tabsynth
