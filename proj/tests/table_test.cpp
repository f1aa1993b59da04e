#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "support.hpp"
#include "tabsynth/table.hpp"

using namespace tabsynth;
using tabsynth::testing::categorical_schema;
using tabsynth::testing::make_schema;

namespace {

std::string data_dir() { return std::string(TABSYNTH_SOURCE_DIR) + "/data"; }

Dataset column_dataset(std::vector<std::string> values) {
    std::vector<Row> rows;
    for (auto& v : values) {
        rows.push_back(Row{{v}, std::string("k")});
    }
    return Dataset(categorical_schema(1), std::move(rows));
}

std::multiset<std::string> row_multiset(const Dataset& d) {
    std::multiset<std::string> out;
    for (const auto& r : d.rows()) {
        std::string key;
        for (const auto& v : r.features) {
            key += format_value(v) + "|";
        }
        out.insert(key + format_value(r.target));
    }
    return out;
}

}  // namespace

TEST(Number, ShortestRoundTrip) {
    EXPECT_EQ(format_number(2.50), "2.5");
    EXPECT_EQ(format_number(3.0), "3");
    const double x = 0.1 + 0.2;
    EXPECT_EQ(parse_number(format_number(x)).value(), x);
    EXPECT_FALSE(parse_number("1.5x"));
    EXPECT_FALSE(parse_number("inf"));
    EXPECT_FALSE(parse_number(""));
    EXPECT_EQ(parse_number("+4").value(), 4.0);
}

TEST(SchemaValidation, RejectsReservedDelimitersAndDuplicates) {
    EXPECT_THROW(make_schema({"a, b"}, {ColumnKind::categorical}, "y").validate(), InputError);
    EXPECT_THROW(make_schema({"a is b"}, {ColumnKind::categorical}, "y").validate(), InputError);
    EXPECT_THROW(make_schema({"a", "a"}, {ColumnKind::categorical, ColumnKind::categorical}, "y").validate(),
                 InputError);
    EXPECT_THROW(make_schema({"a"}, {ColumnKind::categorical}, "a").validate(), InputError);
    EXPECT_THROW(make_schema({}, {}, "y").validate(), InputError);
    EXPECT_NO_THROW(make_schema({"a"}, {ColumnKind::continuous}, "y").validate());
}

TEST(Dataset, RejectsBadRows) {
    const auto schema = make_schema({"x"}, {ColumnKind::continuous}, "y");
    EXPECT_THROW(Dataset(schema, {}), InputError);
    EXPECT_THROW(Dataset(schema, {Row{{std::string("a")}, std::string("k")}}), InputError);
    EXPECT_THROW(Dataset(schema, {Row{{1.0}, std::string("")}}), InputError);
    EXPECT_THROW(Dataset(schema, {Row{{1.0}, std::string("p, q")}}), InputError);
    EXPECT_THROW(Dataset(schema, {Row{{std::nan("")}, std::string("k")}}), InputError);
}

TEST(LoadCsv, Iris) {
    const auto d = load_csv(data_dir() + "/iris.csv");
    EXPECT_EQ(d.schema().num_features(), 4u);
    EXPECT_EQ(d.size(), 150u);
    EXPECT_EQ(d.classes().size(), 3u);
    EXPECT_EQ(d.schema().target_name, "species");
    for (auto k : d.schema().feature_kinds) {
        EXPECT_EQ(k, ColumnKind::continuous);
    }
}

TEST(LoadCsv, OneRow) {
    const auto d = parse_csv("a,b,y\n1,2,0\n");
    EXPECT_EQ(d.schema().num_features(), 2u);
    EXPECT_EQ(d.size(), 1u);
    EXPECT_EQ(std::get<std::string>(d[0].target), "0");
    EXPECT_EQ(std::get<double>(d[0].features[1]), 2.0);
}

TEST(LoadCsv, BlankCellNamesRow) {
    try {
        parse_csv("a,b,y\n1,2,0\n3,,1\n");
        FAIL() << "expected an error";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
}

TEST(LoadCsv, Rejections) {
    EXPECT_THROW(parse_csv(""), InputError);
    EXPECT_THROW(parse_csv("a,b,y\n"), InputError);
    EXPECT_THROW(parse_csv("a,a,y\n1,2,3\n"), InputError);
    EXPECT_THROW(parse_csv("a,b,y\n1,2\n"), InputError);
    EXPECT_THROW(load_csv("/nonexistent/file.csv"), InputError);
}

TEST(LoadCsv, HintsOverrideInference) {
    SchemaHint hint;
    hint.target = "a";
    hint.task = Task::regression;
    hint.kinds["b"] = ColumnKind::categorical;
    const auto d = parse_csv("a,b,y\n1,2,p\n3,4,q\n", hint);
    EXPECT_EQ(d.schema().target_name, "a");
    EXPECT_EQ(d.schema().task, Task::regression);
    EXPECT_EQ(d.schema().feature_names, (std::vector<std::string>{"b", "y"}));
    EXPECT_EQ(d.schema().feature_kinds[0], ColumnKind::categorical);
    EXPECT_EQ(std::get<double>(d[1].target), 3.0);
}

TEST(LoadCsv, QuotedFields) {
    const auto d = parse_csv("name,y\n\"x,y\",\"say \"\"hi\"\"\"\n");
    EXPECT_EQ(std::get<std::string>(d[0].features[0]), "x,y");
    EXPECT_EQ(std::get<std::string>(d[0].target), "say \"hi\"");
}

TEST(LoadCsv, WriteRoundTripProperty) {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto schema = tabsynth::testing::random_schema(rng);
        const auto d = tabsynth::testing::random_dataset(rng, schema, 1 + rng.uniform_index(30));
        EXPECT_EQ(parse_csv(to_csv(d), SchemaHint::from(schema)), d);
    }
}

TEST(LoadCsv, FileRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "tabsynth_table_test";
    std::filesystem::create_directories(dir);
    const auto d = parse_csv("a,b,y\n1.5,u,p\n-2,v,q\n");
    write_csv(d, dir / "d.csv");
    EXPECT_EQ(load_csv(dir / "d.csv"), d);
    std::filesystem::remove_all(dir);
}

TEST(Split, IrisEightyTwenty) {
    const auto d = load_csv(data_dir() + "/iris.csv");
    const auto parts = split(d, 0.2, 1);
    EXPECT_EQ(parts.train.size(), 120u);
    EXPECT_EQ(parts.test.size(), 30u);
    std::map<std::string, int> per_class;
    for (const auto& r : parts.test.rows()) {
        ++per_class[std::get<std::string>(r.target)];
    }
    for (const auto& [_, n] : per_class) {
        EXPECT_EQ(n, 10);
    }
}

TEST(Split, Deterministic) {
    const auto d = load_csv(data_dir() + "/iris.csv");
    const auto a = split(d, 0.2, 9);
    const auto b = split(d, 0.2, 9);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    EXPECT_NE(split(d, 0.2, 10).test, a.test);
}

TEST(Split, StratifiedOnePerClass) {
    std::vector<Row> rows;
    for (int i = 0; i < 10; ++i) {
        rows.push_back(Row{{static_cast<double>(i)}, std::string(i < 5 ? "a" : "b")});
    }
    const Dataset d(make_schema({"x"}, {ColumnKind::continuous}, "y"), rows);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto parts = split(d, 0.2, seed);
        ASSERT_EQ(parts.test.size(), 2u);
        EXPECT_NE(parts.test[0].target, parts.test[1].target);
    }
}

TEST(Split, PartitionProperty) {
    Rng rng(5);
    for (int t = 0; t < 40; ++t) {
        const auto schema = tabsynth::testing::random_schema(rng);
        const auto d = tabsynth::testing::random_dataset(rng, schema, 5 + rng.uniform_index(60));
        const auto parts = split(d, 0.25, rng.next_u64());
        auto joined = row_multiset(parts.train);
        const auto test = row_multiset(parts.test);
        joined.insert(test.begin(), test.end());
        EXPECT_EQ(joined, row_multiset(d));
    }
}

TEST(Split, EmptyPartIsAnError) {
    const auto d = parse_csv("a,y\n1,p\n2,q\n");
    EXPECT_THROW(split(d, 0.1, 0), InputError);
    EXPECT_THROW(split(d, 0.0, 0), InputError);
    EXPECT_THROW(split(d, 1.0, 0), InputError);
}

TEST(Subsample, KeepsRoundedFraction) {
    const auto d = load_csv(data_dir() + "/iris.csv");
    EXPECT_EQ(subsample(d, 0.5, 0).size(), 75u);
    EXPECT_EQ(subsample(d, 1.0, 0), d);
    EXPECT_EQ(subsample(d, 0.5, 3), subsample(d, 0.5, 3));
}

TEST(Marginal, CategoricalFrequencies) {
    auto m = empirical_marginal(column_dataset({"a", "a", "b", "b"}), "c0");
    ASSERT_EQ(m.frequencies.size(), 2u);
    EXPECT_DOUBLE_EQ(m.frequencies[0].second, 0.5);
    EXPECT_DOUBLE_EQ(m.frequencies[1].second, 0.5);

    m = empirical_marginal(column_dataset({"a", "a", "a", "b"}), "c0");
    EXPECT_EQ(m.frequencies[0].first, "a");
    EXPECT_DOUBLE_EQ(m.frequencies[0].second, 0.75);
    EXPECT_DOUBLE_EQ(m.frequencies[1].second, 0.25);
    EXPECT_TRUE(m.valid());
    EXPECT_EQ(m.mode(), "a");
}

TEST(Marginal, ContinuousMultiset) {
    const Dataset d(make_schema({"w"}, {ColumnKind::continuous}, "y"),
                    {Row{{1.0}, std::string("k")}, Row{{2.5}, std::string("k")}, Row{{2.5}, std::string("k")}});
    const auto m = empirical_marginal(d, "w");
    EXPECT_EQ(m.kind, ColumnKind::continuous);
    EXPECT_EQ(m.values, (std::vector<double>{1.0, 2.5, 2.5}));

    Rng rng(1);
    int hits = 0;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
        hits += std::get<double>(sample_marginal(m, rng)) == 2.5;
    }
    EXPECT_NEAR(hits / static_cast<double>(n), 2.0 / 3.0, 0.01);
}

TEST(Marginal, TargetAndUnknownColumn) {
    const auto d = column_dataset({"a", "b"});
    EXPECT_EQ(empirical_marginal(d, "y").frequencies.size(), 1u);
    EXPECT_THROW(empirical_marginal(d, "nope"), InputError);
}

TEST(Marginal, SamplingFollowsFrequencies) {
    Rng rng(2);
    const auto point = empirical_marginal(column_dataset({"a", "a"}), "c0");
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(std::get<std::string>(sample_marginal(point, rng)), "a");
    }
    const auto half = empirical_marginal(column_dataset({"a", "b"}), "c0");
    int a = 0;
    for (int i = 0; i < 10000; ++i) {
        a += std::get<std::string>(sample_marginal(half, rng)) == "a";
    }
    EXPECT_NEAR(a, 5000, 300);
}

TEST(Marginal, FrequenciesSumToOneProperty) {
    Rng rng(8);
    for (int t = 0; t < 30; ++t) {
        const auto schema = tabsynth::testing::random_schema(rng);
        const auto d = tabsynth::testing::random_dataset(rng, schema, 1 + rng.uniform_index(40));
        for (std::size_t f = 0; f < schema.num_features(); ++f) {
            EXPECT_TRUE(empirical_marginal(d, schema.feature_names[f]).valid());
        }
    }
}
