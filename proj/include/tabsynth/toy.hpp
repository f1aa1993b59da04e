#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabsynth/random.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth::toy {

/// Levels of the four categorical features of the rule dataset.
inline const std::vector<std::size_t> kRuleLevels = {3, 4, 5, 3};

/// Class of the rule dataset: a deterministic function of the first two features.
inline std::string rule_label(std::size_t a, std::size_t b) { return "c" + std::to_string((a + b) % 3); }

/// N rows of four uniform categorical features ("f1".."f4", values like "f2_3")
/// labeled by rule_label over f1 and f2. f3 and f4 are noise.
inline Dataset rule_dataset(std::size_t n = 600, std::uint64_t seed = 7) {
    Schema schema;
    for (std::size_t f = 0; f < kRuleLevels.size(); ++f) {
        schema.feature_names.push_back("f" + std::to_string(f + 1));
        schema.feature_kinds.push_back(ColumnKind::categorical);
    }
    schema.target_name = "label";
    schema.task = Task::classification;
    Rng rng(seed);
    std::vector<Row> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Row row;
        std::vector<std::size_t> level(kRuleLevels.size());
        for (std::size_t f = 0; f < kRuleLevels.size(); ++f) {
            level[f] = rng.uniform_index(kRuleLevels[f]);
            row.features.emplace_back(schema.feature_names[f] + "_" + std::to_string(level[f]));
        }
        row.target = rule_label(level[0], level[1]);
        rows.push_back(std::move(row));
    }
    return Dataset(std::move(schema), std::move(rows));
}

}  // namespace tabsynth::toy
