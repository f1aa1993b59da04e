#include <gtest/gtest.h>

#include "support.hpp"
#include "tabsynth/predictor.hpp"
#include "tabsynth/toy.hpp"

using namespace tabsynth;
using tabsynth::testing::make_schema;

namespace {

Dataset separable() {
    // class determined by x > 2 and color; needs two splits
    std::vector<Row> rows;
    const char* colors[] = {"red", "blue"};
    for (int i = 0; i < 6; ++i) {
        for (int c = 0; c < 2; ++c) {
            const bool pos = i > 2 && c == 0;
            rows.push_back(Row{{static_cast<double>(i), std::string(colors[c])}, std::string(pos ? "yes" : "no")});
        }
    }
    return Dataset(make_schema({"x", "color"}, {ColumnKind::continuous, ColumnKind::categorical}, "label"), rows);
}

double train_accuracy(const PredictorSpec& spec, const Dataset& d) {
    const auto model = fit(spec, d);
    const auto x = d.feature_rows();
    return accuracy(model.predict(x), d.targets());
}

}  // namespace

TEST(Tree, SeparableDataAtDepthTwo) {
    PredictorSpec spec;
    spec.max_depth = 2;
    EXPECT_DOUBLE_EQ(train_accuracy(spec, separable()), 1.0);
    spec.max_depth = 1;
    EXPECT_LT(train_accuracy(spec, separable()), 1.0);
}

TEST(Tree, ConstantLabels) {
    std::vector<Row> rows;
    for (int i = 0; i < 5; ++i) {
        rows.push_back(Row{{static_cast<double>(i)}, std::string("only")});
    }
    const Dataset d(make_schema({"x"}, {ColumnKind::continuous}, "y"), rows);
    const auto model = fit(PredictorSpec{}, d);
    EXPECT_EQ(model.trees()[0].nodes.size(), 1u);
    const std::vector<FeatureRow> probe{{-100.0}, {3.5}, {1e9}};
    for (const auto& v : model.predict(probe)) {
        EXPECT_EQ(std::get<std::string>(v), "only");
    }
}

TEST(Tree, ThresholdAtMidpoint) {
    const Dataset d(make_schema({"x"}, {ColumnKind::continuous}, "y"),
                    {Row{{1.0}, std::string("a")}, Row{{2.0}, std::string("a")}, Row{{4.0}, std::string("b")}});
    const auto model = fit(PredictorSpec{}, d);
    EXPECT_DOUBLE_EQ(model.trees()[0].nodes[0].threshold, 3.0);
}

TEST(Tree, TiesGoToLowestFeature) {
    // both features separate the classes perfectly; feature 0 must win
    const Dataset d(make_schema({"p", "q"}, {ColumnKind::categorical, ColumnKind::categorical}, "y"),
                    {Row{{std::string("u"), std::string("s")}, std::string("a")},
                     Row{{std::string("v"), std::string("t")}, std::string("b")}});
    const auto model = fit(PredictorSpec{}, d);
    EXPECT_EQ(model.trees()[0].nodes[0].feature, 0);
    EXPECT_EQ(model.trees()[0].nodes[0].category, "u");
}

TEST(Tree, UnseenCategoryGoesToMajorityBranch) {
    const Dataset d(make_schema({"c"}, {ColumnKind::categorical}, "y"),
                    {Row{{std::string("a")}, std::string("yes")}, Row{{std::string("b")}, std::string("no")},
                     Row{{std::string("b")}, std::string("no")}});
    const auto model = fit(PredictorSpec{}, d);
    const std::vector<FeatureRow> probe{{std::string("zzz")}};
    EXPECT_EQ(std::get<std::string>(model.predict(probe)[0]), "no");
}

TEST(Tree, DepthBoundsLeafCount) {
    const auto d = toy::rule_dataset(300, 1);
    for (int depth = 1; depth <= 6; ++depth) {
        PredictorSpec spec;
        spec.max_depth = depth;
        const auto model = fit(spec, d);
        EXPECT_LE(model.trees()[0].depth(), depth);
        EXPECT_LE(model.trees()[0].leaf_count(), std::size_t{1} << depth);
    }
}

TEST(Tree, Regression) {
    std::vector<Row> rows;
    for (int i = 0; i < 20; ++i) {
        rows.push_back(Row{{static_cast<double>(i)}, i < 10 ? 1.0 : 5.0});
    }
    const Dataset d(make_schema({"x"}, {ColumnKind::continuous}, "y", Task::regression), rows);
    const auto model = fit(PredictorSpec{}, d);
    const auto x = d.feature_rows();
    const auto pred = model.predict(x);
    EXPECT_DOUBLE_EQ(mean_squared_error(pred, d.targets()), 0.0);
    EXPECT_TRUE(std::holds_alternative<double>(pred[0]));
}

TEST(Tree, OverfitMemorizesToyRule) {
    const auto d = toy::rule_dataset(200, 3);
    EXPECT_DOUBLE_EQ(train_accuracy(PredictorSpec{}, d), 1.0);
}

TEST(Bagging, DeterministicAndNearTreeAccuracy) {
    const auto d = toy::rule_dataset(300, 4);
    PredictorSpec bag;
    bag.kind = PredictorKind::bagged_trees;
    bag.seed = 9;
    const auto a = fit(bag, d);
    const auto b = fit(bag, d);
    const auto x = d.feature_rows();
    EXPECT_EQ(a.predict(x), b.predict(x));
    EXPECT_GE(train_accuracy(bag, d), train_accuracy(PredictorSpec{}, d) - 0.05);
}

TEST(Bagging, IdenticalTreesVoteLikeOneTree) {
    // with n = 1 every bootstrap sample is the same row set
    const Dataset d(make_schema({"x"}, {ColumnKind::continuous}, "y"), {Row{{1.0}, std::string("a")}});
    PredictorSpec bag;
    bag.kind = PredictorKind::bagged_trees;
    const auto model = fit(bag, d);
    EXPECT_EQ(model.trees().size(), 20u);
    const std::vector<FeatureRow> probe{{0.0}, {7.0}};
    EXPECT_EQ(model.predict(probe), fit(PredictorSpec{}, d).predict(probe));
}

TEST(Predictor, RejectsMismatchedRows) {
    const auto model = fit(PredictorSpec{}, separable());
    const std::vector<FeatureRow> narrow{{1.0}};
    EXPECT_THROW(model.predict(narrow), InputError);
    const std::vector<FeatureRow> wrong_kind{{std::string("a"), std::string("red")}};
    EXPECT_THROW(model.predict(wrong_kind), InputError);
    PredictorSpec bad;
    bad.max_depth = 0;
    EXPECT_THROW(fit(bad, separable()), InputError);
}

TEST(Predictor, LearnerContract) {
    const auto d = separable();
    const auto learner = make_learner(PredictorSpec{});
    const auto x = d.feature_rows();
    const auto y = d.targets();
    const auto model = learner(TrainingSet{x, y, d.schema().feature_kinds, Task::classification});
    EXPECT_EQ(model->predict(x), fit(PredictorSpec{}, d).predict(x));
    EXPECT_EQ(parse_predictor_kind("bagged_trees"), PredictorKind::bagged_trees);
    EXPECT_THROW(parse_predictor_kind("xgboost"), InputError);
}
