#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tabsynth/codec.hpp"
#include "tabsynth/error.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class TokenKind : std::uint8_t { name, is, separator, value, bos, eos, pad };

struct Token {
    TokenKind kind = TokenKind::pad;
    std::int32_t column = -1;  // features 0..M-1, target M; -1 for structural tokens
    std::string text;

    friend bool operator==(const Token&, const Token&) = default;
};

/// Closed cell-level vocabulary: one token per column name, the literals
/// "is" and ",", one token per (column, observed value string), and
/// BOS / EOS / PAD. Value tokens are column-specific.
class Vocab {
public:
    Vocab() = default;

    explicit Vocab(std::vector<Token> tokens) : tokens_(std::move(tokens)) { index(); }

    /// Deterministic layout: names in schema order (features, then target),
    /// "is", ",", values sorted per column, then BOS, EOS, PAD.
    static Vocab build(const std::vector<Sentence>& corpus, const Schema& schema) {
        if (corpus.empty()) {
            throw InputError("cannot build a vocabulary from an empty corpus");
        }
        const std::size_t m = schema.num_features();
        std::vector<std::set<std::string>> values(m + 1);
        for (const auto& sentence : corpus) {
            for (const auto& cell : sentence.cells) {
                values.at(column_index(schema, cell.name)).insert(cell.value_text);
            }
        }
        std::vector<Token> tokens;
        for (std::size_t c = 0; c <= m; ++c) {
            tokens.push_back({TokenKind::name, static_cast<std::int32_t>(c),
                              c < m ? schema.feature_names[c] : schema.target_name});
        }
        tokens.push_back({TokenKind::is, -1, "is"});
        tokens.push_back({TokenKind::separator, -1, ","});
        for (std::size_t c = 0; c <= m; ++c) {
            for (const auto& v : values[c]) {
                tokens.push_back({TokenKind::value, static_cast<std::int32_t>(c), v});
            }
        }
        tokens.push_back({TokenKind::bos, -1, "<bos>"});
        tokens.push_back({TokenKind::eos, -1, "<eos>"});
        tokens.push_back({TokenKind::pad, -1, "<pad>"});
        return Vocab(std::move(tokens));
    }

    std::size_t size() const { return tokens_.size(); }
    const Token& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<Token>& tokens() const { return tokens_; }

    TokenId bos() const { return bos_; }
    TokenId eos() const { return eos_; }
    TokenId pad() const { return pad_; }
    TokenId is() const { return is_; }
    TokenId separator() const { return sep_; }

    /// Number of columns (M features + target) the vocabulary was built for.
    std::size_t num_columns() const { return name_ids_.size(); }

    std::optional<TokenId> name_id(std::string_view name) const {
        for (std::size_t c = 0; c < name_ids_.size(); ++c) {
            if (tokens_[static_cast<std::size_t>(name_ids_[c])].text == name) {
                return name_ids_[c];
            }
        }
        return std::nullopt;
    }

    TokenId name_id(std::size_t column) const { return name_ids_.at(column); }

    std::optional<TokenId> value_id(std::size_t column, const std::string& text) const {
        auto it = value_ids_.find({static_cast<std::int32_t>(column), text});
        if (it == value_ids_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    /// Value tokens of one column, in vocabulary order.
    std::vector<TokenId> value_ids(std::size_t column) const {
        std::vector<TokenId> out;
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].kind == TokenKind::value && tokens_[i].column == static_cast<std::int32_t>(column)) {
                out.push_back(static_cast<TokenId>(i));
            }
        }
        return out;
    }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    static std::size_t column_index(const Schema& schema, const std::string& name) {
        if (auto f = schema.feature_index(name)) {
            return *f;
        }
        if (schema.is_target(name)) {
            return schema.num_features();
        }
        throw InputError("corpus cell names unknown column '" + name + "'");
    }

    void index() {
        bos_ = eos_ = pad_ = is_ = sep_ = -1;
        name_ids_.clear();
        value_ids_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            const auto id = static_cast<TokenId>(i);
            const auto& t = tokens_[i];
            switch (t.kind) {
                case TokenKind::name:
                    if (t.column != static_cast<std::int32_t>(name_ids_.size())) {
                        throw InputError("vocabulary name tokens out of column order");
                    }
                    name_ids_.push_back(id);
                    break;
                case TokenKind::is:
                    is_ = id;
                    break;
                case TokenKind::separator:
                    sep_ = id;
                    break;
                case TokenKind::value:
                    value_ids_[{t.column, t.text}] = id;
                    break;
                case TokenKind::bos:
                    bos_ = id;
                    break;
                case TokenKind::eos:
                    eos_ = id;
                    break;
                case TokenKind::pad:
                    pad_ = id;
                    break;
            }
        }
        if (bos_ < 0 || eos_ < 0 || pad_ < 0 || is_ < 0 || sep_ < 0 || name_ids_.empty()) {
            throw InputError("vocabulary is missing structural tokens");
        }
    }

    std::vector<Token> tokens_;
    std::vector<TokenId> name_ids_;
    std::map<std::pair<std::int32_t, std::string>, TokenId> value_ids_;
    TokenId bos_ = -1, eos_ = -1, pad_ = -1, is_ = -1, sep_ = -1;
};

namespace detail {

inline void append_cell_tokens(TokenSeq& out, const Vocab& vocab, std::string_view name, const std::string& value) {
    const auto name_id = vocab.name_id(name);
    if (!name_id) {
        throw InputError("out-of-vocabulary token '" + std::string(name) + "'");
    }
    const auto column = static_cast<std::size_t>(vocab.token(*name_id).column);
    const auto value_id = vocab.value_id(column, value);
    if (!value_id) {
        throw InputError("out-of-vocabulary token '" + value + "' for column '" + std::string(name) + "'");
    }
    out.push_back(*name_id);
    out.push_back(vocab.is());
    out.push_back(*value_id);
    out.push_back(vocab.separator());
}

}  // namespace detail

/// BOS, then [name, is, value, ","] per cell, with the final "," replaced by EOS.
inline TokenSeq tokenize(const Sentence& s, const Vocab& vocab) {
    TokenSeq out{vocab.bos()};
    for (const auto& cell : s.cells) {
        detail::append_cell_tokens(out, vocab, cell.name, cell.value_text);
    }
    if (!s.cells.empty()) {
        out.back() = vocab.eos();
    }
    return out;
}

/// Tokenizes a condition prompt "A is a, B is b, " into BOS + cells, each
/// followed by "," so the model continues with a fresh cell.
inline TokenSeq tokenize_condition(std::string_view text, const Vocab& vocab) {
    TokenSeq out{vocab.bos()};
    if (text.ends_with(kCellSeparator)) {
        text.remove_suffix(kCellSeparator.size());
    }
    if (text.empty()) {
        return out;
    }
    for (auto fragment : split_on(text, kCellSeparator)) {
        const auto pos = fragment.find(kIsDelimiter);
        if (pos == std::string_view::npos) {
            throw DecodeError(DecodeError::Kind::missing_is, std::string(fragment));
        }
        detail::append_cell_tokens(out, vocab, fragment.substr(0, pos),
                                   std::string(fragment.substr(pos + kIsDelimiter.size())));
    }
    return out;
}

/// Text rendering of a token sequence. BOS/PAD are dropped and EOS ends the text.
inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
    std::string out;
    for (auto id : seq) {
        const auto& t = vocab.token(id);
        switch (t.kind) {
            case TokenKind::name:
            case TokenKind::value:
                out += t.text;
                break;
            case TokenKind::is:
                out += kIsDelimiter;
                break;
            case TokenKind::separator:
                out += kCellSeparator;
                break;
            case TokenKind::eos:
                return out;
            case TokenKind::bos:
            case TokenKind::pad:
                break;
        }
    }
    return out;
}

/// A cell recovered from tokens: column index plus value token.
struct TokenCell {
    std::size_t column;
    TokenId value;
};

struct TokenParse {
    bool well_formed = false;  // strict [name, is, value-of-that-column, sep|EOS]* grammar
    bool terminated = false;   // ended with EOS
    std::vector<TokenCell> cells;
};

/// Grammar check over a generated sequence (leading BOS optional). Cells after
/// the last complete one are ignored when the sequence was truncated.
inline TokenParse parse_tokens(const TokenSeq& seq, const Vocab& vocab) {
    TokenParse out;
    std::size_t i = 0;
    if (!seq.empty() && seq[0] == vocab.bos()) {
        i = 1;
    }
    std::vector<bool> seen(vocab.num_columns(), false);
    while (i < seq.size()) {
        const auto remaining = seq.size() - i;
        const auto& name = vocab.token(seq[i]);
        if (name.kind == TokenKind::eos && !out.cells.empty()) {
            out.terminated = true;
            out.well_formed = i + 1 == seq.size();
            return out;
        }
        if (name.kind != TokenKind::name) {
            return out;
        }
        if (remaining >= 2 && seq[i + 1] != vocab.is()) {
            return out;
        }
        if (remaining >= 3) {
            const auto& value = vocab.token(seq[i + 2]);
            if (value.kind != TokenKind::value || value.column != name.column) {
                return out;
            }
        }
        if (remaining < 4) {
            // truncated mid-cell; the prefix so far is grammatical
            out.well_formed = true;
            return out;
        }
        const auto column = static_cast<std::size_t>(name.column);
        if (seen[column]) {
            return out;
        }
        seen[column] = true;
        out.cells.push_back({column, seq[i + 2]});
        const auto end = seq[i + 3];
        if (end == vocab.eos()) {
            out.terminated = true;
            out.well_formed = i + 4 == seq.size();
            return out;
        }
        if (end != vocab.separator()) {
            return out;
        }
        i += 4;
    }
    out.well_formed = true;
    return out;
}

}  // namespace tabsynth
