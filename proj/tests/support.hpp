#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tabsynth/random.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth::testing {

inline Schema make_schema(std::vector<std::string> names, std::vector<ColumnKind> kinds, std::string target,
                          Task task = Task::classification) {
    Schema s;
    s.feature_names = std::move(names);
    s.feature_kinds = std::move(kinds);
    s.target_name = std::move(target);
    s.task = task;
    return s;
}

/// Schema of M categorical features "c0".."c{M-1}" and a categorical target "y".
inline Schema categorical_schema(std::size_t m) {
    Schema s;
    for (std::size_t i = 0; i < m; ++i) {
        s.feature_names.push_back("c" + std::to_string(i));
        s.feature_kinds.push_back(ColumnKind::categorical);
    }
    s.target_name = "y";
    return s;
}

/// Random mixed schema: 1..max_m features, each categorical or continuous,
/// classification or regression target.
inline Schema random_schema(Rng& rng, std::size_t max_m = 5) {
    Schema s;
    const auto m = 1 + rng.uniform_index(max_m);
    for (std::size_t i = 0; i < m; ++i) {
        s.feature_names.push_back("col " + std::to_string(i));
        s.feature_kinds.push_back(rng.uniform01() < 0.5 ? ColumnKind::categorical : ColumnKind::continuous);
    }
    s.target_name = "target";
    s.task = rng.uniform01() < 0.7 ? Task::classification : Task::regression;
    return s;
}

inline Value random_value(Rng& rng, ColumnKind kind, std::size_t levels = 4) {
    if (kind == ColumnKind::continuous) {
        switch (rng.uniform_index(3)) {
            case 0:
                return static_cast<double>(rng.uniform_index(10));
            case 1:
                return std::round(rng.normal() * 100.0) / 10.0;
            default:
                return rng.normal() * 1e3;
        }
    }
    static const char* words[] = {"red", "green", "x,y", "quote\"d", "blue sky", "a1", "b-2", "Z"};
    return std::string(words[rng.uniform_index(std::min<std::size_t>(levels, 8))]);
}

inline Dataset random_dataset(Rng& rng, const Schema& schema, std::size_t n) {
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
        Row r;
        for (auto kind : schema.feature_kinds) {
            r.features.push_back(random_value(rng, kind));
        }
        r.target = random_value(rng, schema.target_kind(), 3);
        rows.push_back(std::move(r));
    }
    return Dataset(schema, std::move(rows));
}

}  // namespace tabsynth::testing
