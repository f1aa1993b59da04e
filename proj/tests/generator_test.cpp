#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "support.hpp"
#include "tabsynth/generator.hpp"
#include "tabsynth/toy.hpp"

using namespace tabsynth;
using tabsynth::testing::make_schema;

namespace {

LMConfig small_lm(int epochs, std::uint64_t seed = 0) {
    LMConfig c;
    c.embed_dim = 16;
    c.epochs = epochs;
    c.learning_rate = 1e-2;
    c.seed = seed;
    return c;
}

const Dataset& toy_data() {
    static const Dataset d = toy::rule_dataset(60, 2);
    return d;
}

const TabularModel& toy_model() {
    static const TabularModel m = fine_tune(toy_data(), GenConfig{}, small_lm(8));
    return m;
}

Dataset single_row() {
    return Dataset(make_schema({"Age", "Edu", "Job"},
                               {ColumnKind::continuous, ColumnKind::categorical, ColumnKind::categorical}, "Income"),
                   {Row{{40.0, std::string("PhD"), std::string("Admin")}, std::string("High")}});
}

// twelve copies so the permuted corpus opens with every feature
const TabularModel& memorized_model() {
    const auto one = single_row();
    static const TabularModel m =
        fine_tune(Dataset(one.schema(), std::vector<Row>(12, one[0])), GenConfig{}, small_lm(200));
    return m;
}

std::string checkpoint_bytes(const TabularModel& m) {
    std::ostringstream out(std::ios::binary);
    write_checkpoint(out, m);
    return out.str();
}

}  // namespace

TEST(Corpus, SizesAndTargetPlacement) {
    const auto one = single_row();
    const auto corpus = build_corpus(one, PermutationStrategy::permute_x, 0);
    ASSERT_EQ(corpus.size(), 2u);
    for (const auto& s : corpus) {
        EXPECT_EQ(s.target_position(), s.cells.size() - 1);
    }
    const auto d = toy::rule_dataset(100, 1);
    EXPECT_EQ(build_corpus(d, PermutationStrategy::permute_x, 0).size(), 200u);
    const auto xy = build_corpus(d, PermutationStrategy::permute_xy, 0);
    bool some_target_moved = false;
    for (std::size_t i = 0; i < xy.size(); ++i) {
        if (i % 2 == 1) {
            EXPECT_EQ(xy[i], encode_row(d[i / 2], d.schema()));
        } else if (xy[i].target_position() != 4) {
            some_target_moved = true;
        }
    }
    EXPECT_TRUE(some_target_moved);
}

TEST(Allocation, Examples) {
    EXPECT_EQ(allocate_per_feature(100, 4), (std::vector<std::size_t>{25, 25, 25, 25}));
    EXPECT_EQ(allocate_per_feature(10, 4), (std::vector<std::size_t>{3, 3, 2, 2}));
    EXPECT_EQ(allocate_per_feature(7, 1), (std::vector<std::size_t>{7}));
    EXPECT_EQ(allocate_per_feature(2, 4), (std::vector<std::size_t>{1, 1, 0, 0}));
    EXPECT_THROW(allocate_per_feature(5, 0), InputError);
}

TEST(Allocation, SumAndSpreadProperty) {
    Rng rng(6);
    for (int t = 0; t < 500; ++t) {
        const auto n = rng.uniform_index(1000);
        const auto m = 1 + rng.uniform_index(30);
        const auto a = allocate_per_feature(n, m);
        std::size_t sum = 0;
        for (auto x : a) {
            sum += x;
        }
        EXPECT_EQ(sum, n);
        EXPECT_LE(*std::max_element(a.begin(), a.end()) - *std::min_element(a.begin(), a.end()), 1u);
    }
}

TEST(FineTune, DeterministicCheckpoints) {
    const auto again = fine_tune(toy_data(), GenConfig{}, small_lm(8));
    EXPECT_EQ(checkpoint_bytes(again), checkpoint_bytes(toy_model()));
}

TEST(FineTune, VocabularyCoversSchema) {
    const auto& vocab = toy_model().lm.vocab();
    for (const auto& name : toy_data().schema().feature_names) {
        EXPECT_TRUE(vocab.name_id(name).has_value());
    }
    for (const auto& cls : toy_data().classes()) {
        EXPECT_TRUE(vocab.value_id(4, cls).has_value());
    }
}

TEST(FineTune, LossDecreases) {
    const auto& losses = toy_model().epoch_losses;
    ASSERT_EQ(losses.size(), 8u);
    EXPECT_LT(losses.back(), losses.front());
}

TEST(Sampling, MemorizedRowIsReproduced) {
    GenConfig g;
    g.temperature = 0.01;
    g.n_fake = 9;
    const auto out = sample_features(memorized_model(), single_row(), g);
    ASSERT_EQ(out.rows.size(), 9u);
    for (const auto& r : out.rows) {
        EXPECT_EQ(r, single_row()[0].features);
    }
    EXPECT_EQ(out.report.allocations, (std::vector<std::size_t>{3, 3, 3}));
    EXPECT_EQ(out.report.n_imputed, 0u);
}

TEST(Sampling, AllocationReport) {
    GenConfig g;
    g.n_fake = 10;
    const auto out = sample_features(toy_model(), toy_data(), g);
    EXPECT_EQ(out.report.allocations, (std::vector<std::size_t>{3, 3, 2, 2}));
    EXPECT_EQ(out.rows.size(), 10u);
    g.sampling = SamplingMode::target_variable;
    EXPECT_EQ(sample_features(toy_model(), toy_data(), g).report.allocations, (std::vector<std::size_t>{10}));
}

TEST(Sampling, SchemaMismatch) {
    EXPECT_THROW(sample_features(toy_model(), single_row(), GenConfig{}), InputError);
}

TEST(Labels, MemorizedLabel) {
    GenConfig g;
    g.temperature = 0.01;
    const auto out = query_labels(memorized_model(), {single_row()[0].features}, g, std::string("Low"));
    ASSERT_EQ(out.labels.size(), 1u);
    EXPECT_EQ(std::get<std::string>(out.labels[0]), "High");
    EXPECT_EQ(out.n_fallback, 0u);
}

TEST(Labels, AlwaysInClassSet) {
    const auto rows = toy_data().feature_rows();
    const auto out = query_labels(toy_model(), rows, GenConfig{}, fallback_label(toy_data()));
    const auto classes = toy_data().classes();
    for (const auto& l : out.labels) {
        EXPECT_TRUE(std::binary_search(classes.begin(), classes.end(), std::get<std::string>(l)));
    }
    EXPECT_THROW(query_labels(toy_model(), {FeatureRow{std::string("f1_0")}}, GenConfig{}, std::string("c0")),
                 InputError);
}

TEST(Labels, External) {
    struct Majority : PredictiveModel {
        std::vector<Value> predict(std::span<const FeatureRow> rows) const override {
            return std::vector<Value>(rows.size(), std::string("c1"));
        }
    };
    const auto rows = toy_data().feature_rows();
    for (const auto& l : label_external(Majority{}, rows)) {
        EXPECT_EQ(std::get<std::string>(l), "c1");
    }
    const auto tree = fit(PredictorSpec{}, toy_data());
    EXPECT_EQ(label_external(tree, rows), toy_data().targets());
}

TEST(Labels, FallbackLabel) {
    EXPECT_EQ(std::get<std::string>(fallback_label(single_row())), "High");
    const Dataset reg(make_schema({"x"}, {ColumnKind::continuous}, "y", Task::regression),
                      {Row{{1.0}, 2.0}, Row{{2.0}, 4.0}});
    EXPECT_DOUBLE_EQ(std::get<double>(fallback_label(reg)), 3.0);
}

TEST(Generate, SizeClosureAndDeterminism) {
    const auto& real = toy_data();
    std::set<std::string> support;
    for (const auto& r : real.rows()) {
        for (const auto& v : r.features) {
            support.insert(std::get<std::string>(v));
        }
    }
    const auto a = generate_with(toy_model(), real, GenConfig{});
    EXPECT_EQ(a.fake.size(), real.size());
    EXPECT_EQ(a.fake.schema(), real.schema());
    EXPECT_EQ(a.report.n_valid, real.size());
    for (const auto& r : a.fake.rows()) {
        for (const auto& v : r.features) {
            EXPECT_TRUE(support.contains(std::get<std::string>(v)));
        }
    }
    EXPECT_EQ(generate_with(toy_model(), real, GenConfig{}).fake, a.fake);

    GenConfig g;
    g.n_fake = 17;
    g.seed = 3;
    EXPECT_EQ(generate_with(toy_model(), real, g).fake.size(), 17u);
}

TEST(Generate, BaselineConfigs) {
    const auto& real = toy_data();
    const auto joint = fine_tune(real, GenConfig::joint_baseline(), small_lm(3));
    EXPECT_EQ(joint.permutation, PermutationStrategy::permute_xy);
    for (auto g : {GenConfig::joint_baseline(), GenConfig::classifier_baseline()}) {
        g.n_fake = 12;
        const auto out = generate_with(joint, real, g);
        EXPECT_EQ(out.fake.size(), 12u);
        EXPECT_EQ(out.report.allocations, (std::vector<std::size_t>{12}));
    }
    EXPECT_THROW(generate_with(joint, real, GenConfig{}), InputError);  // permute_x requested
}

TEST(Generate, ConfigValidation) {
    GenConfig g;
    g.temperature = 0.0;
    EXPECT_THROW(g.validate(), InputError);
    g = GenConfig{};
    g.n_fake = 0;
    EXPECT_THROW(g.validate(), InputError);
    g = GenConfig{};
    g.permutation = PermutationStrategy::identity;
    EXPECT_THROW(g.validate(), InputError);
    EXPECT_EQ(parse_sampling("each_feature"), SamplingMode::each_feature);
    EXPECT_EQ(parse_labeling("LLM"), LabelingMode::llm);
    EXPECT_THROW(parse_labeling("oracle"), InputError);
}

TEST(Checkpoint, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "tabsynth_generator_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(toy_model(), dir / "model.ckpt");
    const auto back = load_checkpoint(dir / "model.ckpt");
    EXPECT_EQ(back.schema, toy_model().schema);
    EXPECT_EQ(back.permutation, toy_model().permutation);
    EXPECT_EQ(back.epoch_losses, toy_model().epoch_losses);
    EXPECT_EQ(back.lm, toy_model().lm);
    EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(toy_model()));

    write_text_file(dir / "bad.ckpt", "not a checkpoint");
    EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), InputError);
    const auto bytes = checkpoint_bytes(toy_model());
    write_text_file(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), InputError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), InputError);
    std::filesystem::remove_all(dir);
}
