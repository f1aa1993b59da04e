#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tabsynth/error.hpp"
#include "tabsynth/random.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth {

enum class PredictorKind { decision_tree, bagged_trees };

inline std::string_view to_string(PredictorKind k) {
    return k == PredictorKind::decision_tree ? "decision_tree" : "bagged_trees";
}

inline PredictorKind parse_predictor_kind(std::string_view text) {
    if (text == "decision_tree" || text == "tree") {
        return PredictorKind::decision_tree;
    }
    if (text == "bagged_trees" || text == "bagging") {
        return PredictorKind::bagged_trees;
    }
    throw InputError("unknown predictor '" + std::string(text) + "'");
}

struct PredictorSpec {
    PredictorKind kind = PredictorKind::decision_tree;
    int max_depth = 6;
    int n_trees = 20;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_depth < 1) {
            throw InputError("max_depth must be at least 1");
        }
        if (kind == PredictorKind::bagged_trees && n_trees < 1) {
            throw InputError("n_trees must be at least 1");
        }
    }
};

/// Training data for a predictor: feature rows, their kinds, and targets.
struct TrainingSet {
    std::span<const FeatureRow> features;
    std::span<const Value> targets;
    std::span<const ColumnKind> kinds;
    Task task = Task::classification;
};

/// Anything that maps feature rows to labels (class text or real value).
class PredictiveModel {
public:
    virtual ~PredictiveModel() = default;
    virtual std::vector<Value> predict(std::span<const FeatureRow> rows) const = 0;
};

/// Factory for predictive models; lets evaluation use an external learner.
using Learner = std::function<std::unique_ptr<PredictiveModel>(const TrainingSet&)>;

namespace detail {

struct TreeNode {
    // split: left when (continuous) x <= threshold, (categorical) x == category
    int feature = -1;
    double threshold = 0.0;
    std::string category;
    int left = -1;
    int right = -1;
    bool unseen_goes_left = false;
    // leaf payload
    std::size_t class_index = 0;
    double mean = 0.0;

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;
    std::vector<std::set<std::string>> known_categories;  // per feature, categories seen while fitting

    const TreeNode& leaf_for(const FeatureRow& row, std::span<const ColumnKind> kinds) const {
        const TreeNode* node = &nodes[0];
        while (!node->is_leaf()) {
            const auto f = static_cast<std::size_t>(node->feature);
            bool go_left = false;
            if (kinds[f] == ColumnKind::continuous) {
                go_left = std::get<double>(row[f]) <= node->threshold;
            } else {
                const auto& v = std::get<std::string>(row[f]);
                if (!known_categories[f].contains(v)) {
                    go_left = node->unseen_goes_left;
                } else {
                    go_left = v == node->category;
                }
            }
            node = &nodes[static_cast<std::size_t>(go_left ? node->left : node->right)];
        }
        return *node;
    }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
    }

    int depth() const { return depth_from(0); }

private:
    int depth_from(int i) const {
        const auto& n = nodes[static_cast<std::size_t>(i)];
        return n.is_leaf() ? 0 : 1 + std::max(depth_from(n.left), depth_from(n.right));
    }
};

/// CART induction. Classification minimizes Gini impurity, regression the
/// sum of squared errors. A split is taken only when it strictly improves the
/// best candidate so far, so ties resolve to the lowest feature index and
/// then the lowest threshold or category.
class TreeBuilder {
public:
    TreeBuilder(std::span<const FeatureRow> x, std::span<const ColumnKind> kinds, Task task,
                std::span<const std::size_t> class_of, std::span<const double> y_real, std::size_t num_classes,
                int max_depth)
        : x_(x), kinds_(kinds), task_(task), class_of_(class_of), y_(y_real), k_(num_classes), max_depth_(max_depth) {}

    Tree build(std::vector<std::size_t> sample) {
        tree_ = Tree{};
        tree_.known_categories.resize(kinds_.size());
        for (auto i : sample) {
            for (std::size_t f = 0; f < kinds_.size(); ++f) {
                if (kinds_[f] == ColumnKind::categorical) {
                    tree_.known_categories[f].insert(std::get<std::string>(x_[i][f]));
                }
            }
        }
        grow(std::move(sample), 0);
        return std::move(tree_);
    }

private:
    struct Candidate {
        double gain = 0.0;
        int feature = -1;
        double threshold = 0.0;
        std::string category;
    };

    static constexpr double kMinGain = 1e-12;

    double impurity_sum(std::span<const std::size_t> idx) const {
        // Returns n * impurity so that child terms add up without re-weighting.
        if (idx.empty()) {
            return 0.0;
        }
        const double n = static_cast<double>(idx.size());
        if (task_ == Task::classification) {
            std::vector<double> counts(k_, 0.0);
            for (auto i : idx) {
                counts[class_of_[i]] += 1.0;
            }
            double sq = 0.0;
            for (double c : counts) {
                sq += c * c;
            }
            return n - sq / n;
        }
        double sum = 0.0, sum2 = 0.0;
        for (auto i : idx) {
            sum += y_[i];
            sum2 += y_[i] * y_[i];
        }
        return std::max(0.0, sum2 - sum * sum / n);
    }

    int make_leaf(std::span<const std::size_t> idx) {
        TreeNode leaf;
        if (task_ == Task::classification) {
            std::vector<std::size_t> counts(k_, 0);
            for (auto i : idx) {
                ++counts[class_of_[i]];
            }
            leaf.class_index = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        } else {
            double sum = 0.0;
            for (auto i : idx) {
                sum += y_[i];
            }
            leaf.mean = sum / static_cast<double>(idx.size());
        }
        tree_.nodes.push_back(std::move(leaf));
        return static_cast<int>(tree_.nodes.size() - 1);
    }

    // Incremental n * impurity for a growing left side with running statistics.
    struct Running {
        std::vector<double> counts;
        double n = 0.0, sum = 0.0, sum2 = 0.0, sq = 0.0;
    };

    void add(Running& r, std::size_t i) const {
        r.n += 1.0;
        if (task_ == Task::classification) {
            auto& c = r.counts[class_of_[i]];
            r.sq += 2.0 * c + 1.0;
            c += 1.0;
        } else {
            r.sum += y_[i];
            r.sum2 += y_[i] * y_[i];
        }
    }

    double running_impurity(const Running& r) const {
        if (r.n == 0.0) {
            return 0.0;
        }
        if (task_ == Task::classification) {
            return r.n - r.sq / r.n;
        }
        return std::max(0.0, r.sum2 - r.sum * r.sum / r.n);
    }

    Running totals(std::span<const std::size_t> idx) const {
        Running r;
        r.counts.assign(k_, 0.0);
        for (auto i : idx) {
            add(r, i);
        }
        return r;
    }

    Running minus(const Running& total, const Running& left) const {
        Running r;
        r.n = total.n - left.n;
        if (task_ == Task::classification) {
            r.counts.resize(k_);
            for (std::size_t c = 0; c < k_; ++c) {
                r.counts[c] = total.counts[c] - left.counts[c];
                r.sq += r.counts[c] * r.counts[c];
            }
        } else {
            r.sum = total.sum - left.sum;
            r.sum2 = total.sum2 - left.sum2;
        }
        return r;
    }

    Candidate best_split(std::span<const std::size_t> idx) const {
        Candidate best;
        const Running total = totals(idx);
        const double parent = running_impurity(total);
        for (std::size_t f = 0; f < kinds_.size(); ++f) {
            if (kinds_[f] == ColumnKind::continuous) {
                std::vector<std::size_t> order(idx.begin(), idx.end());
                std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
                    return std::get<double>(x_[a][f]) < std::get<double>(x_[b][f]);
                });
                Running left;
                left.counts.assign(k_, 0.0);
                for (std::size_t p = 0; p + 1 < order.size(); ++p) {
                    add(left, order[p]);
                    const double here = std::get<double>(x_[order[p]][f]);
                    const double next = std::get<double>(x_[order[p + 1]][f]);
                    if (!(here < next)) {
                        continue;
                    }
                    const double gain = parent - running_impurity(left) - running_impurity(minus(total, left));
                    if (gain > best.gain + kMinGain) {
                        best = Candidate{gain, static_cast<int>(f), here + (next - here) / 2.0, {}};
                    }
                }
            } else {
                std::map<std::string, Running> by_category;
                for (auto i : idx) {
                    auto [it, inserted] = by_category.try_emplace(std::get<std::string>(x_[i][f]));
                    if (inserted) {
                        it->second.counts.assign(k_, 0.0);
                    }
                    add(it->second, i);
                }
                if (by_category.size() < 2) {
                    continue;
                }
                for (const auto& [category, left] : by_category) {
                    const double gain = parent - running_impurity(left) - running_impurity(minus(total, left));
                    if (gain > best.gain + kMinGain) {
                        best = Candidate{gain, static_cast<int>(f), 0.0, category};
                    }
                }
            }
        }
        return best;
    }

    int grow(std::vector<std::size_t> idx, int depth) {
        if (depth >= max_depth_ || idx.size() < 2 || impurity_sum(idx) <= kMinGain) {
            return make_leaf(idx);
        }
        const Candidate split = best_split(idx);
        if (split.feature < 0) {
            return make_leaf(idx);
        }
        const auto f = static_cast<std::size_t>(split.feature);
        std::vector<std::size_t> left, right;
        for (auto i : idx) {
            const bool go_left = kinds_[f] == ColumnKind::continuous ? std::get<double>(x_[i][f]) <= split.threshold
                                                                     : std::get<std::string>(x_[i][f]) == split.category;
            (go_left ? left : right).push_back(i);
        }
        TreeNode node;
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.category = split.category;
        node.unseen_goes_left = left.size() > right.size();
        tree_.nodes.push_back(node);
        const auto at = tree_.nodes.size() - 1;
        const int l = grow(std::move(left), depth + 1);
        const int r = grow(std::move(right), depth + 1);
        tree_.nodes[at].left = l;
        tree_.nodes[at].right = r;
        return static_cast<int>(at);
    }

    std::span<const FeatureRow> x_;
    std::span<const ColumnKind> kinds_;
    Task task_;
    std::span<const std::size_t> class_of_;
    std::span<const double> y_;
    std::size_t k_;
    int max_depth_;
    Tree tree_;
};

}  // namespace detail

/// Fitted CART tree or bagged ensemble. Classification predicts the majority
/// leaf class (ensemble: majority vote, ties to the lowest class in sort
/// order); regression predicts the leaf mean (ensemble: mean of trees).
class FittedPredictor : public PredictiveModel {
public:
    FittedPredictor(Task task, std::vector<ColumnKind> kinds, std::vector<std::string> classes,
                    std::vector<detail::Tree> trees)
        : task_(task), kinds_(std::move(kinds)), classes_(std::move(classes)), trees_(std::move(trees)) {}

    std::vector<Value> predict(std::span<const FeatureRow> rows) const override {
        std::vector<Value> out;
        out.reserve(rows.size());
        for (const auto& row : rows) {
            if (row.size() != kinds_.size()) {
                throw InputError("feature row width does not match the fitted predictor");
            }
            for (std::size_t f = 0; f < kinds_.size(); ++f) {
                if (!value_matches_kind(row[f], kinds_[f])) {
                    throw InputError("feature row does not match the fitted predictor's column kinds");
                }
            }
            out.push_back(predict_one(row));
        }
        return out;
    }

    Task task() const { return task_; }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<detail::Tree>& trees() const { return trees_; }

private:
    Value predict_one(const FeatureRow& row) const {
        if (task_ == Task::classification) {
            std::vector<std::size_t> votes(classes_.size(), 0);
            for (const auto& t : trees_) {
                ++votes[t.leaf_for(row, kinds_).class_index];
            }
            const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
            return classes_[static_cast<std::size_t>(best)];
        }
        double sum = 0.0;
        for (const auto& t : trees_) {
            sum += t.leaf_for(row, kinds_).mean;
        }
        return sum / static_cast<double>(trees_.size());
    }

    Task task_;
    std::vector<ColumnKind> kinds_;
    std::vector<std::string> classes_;
    std::vector<detail::Tree> trees_;
};

inline FittedPredictor fit(const PredictorSpec& spec, const TrainingSet& data) {
    spec.validate();
    const std::size_t n = data.features.size();
    if (n == 0 || n != data.targets.size()) {
        throw InputError("predictor needs a non-empty training set with one target per row");
    }
    for (const auto& row : data.features) {
        if (row.size() != data.kinds.size()) {
            throw InputError("feature row width does not match the column kinds");
        }
        for (std::size_t f = 0; f < row.size(); ++f) {
            if (!value_matches_kind(row[f], data.kinds[f])) {
                throw InputError("feature value does not match its column kind");
            }
        }
    }
    std::vector<std::string> classes;
    std::vector<std::size_t> class_of(n, 0);
    std::vector<double> y_real(n, 0.0);
    if (data.task == Task::classification) {
        for (const auto& t : data.targets) {
            if (!std::holds_alternative<std::string>(t)) {
                throw InputError("classification targets must be categorical");
            }
            classes.push_back(std::get<std::string>(t));
        }
        std::sort(classes.begin(), classes.end());
        classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
        for (std::size_t i = 0; i < n; ++i) {
            const auto& label = std::get<std::string>(data.targets[i]);
            class_of[i] = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::holds_alternative<double>(data.targets[i])) {
                throw InputError("regression targets must be numeric");
            }
            y_real[i] = std::get<double>(data.targets[i]);
        }
    }

    detail::TreeBuilder builder(data.features, data.kinds, data.task, class_of, y_real, classes.size(), spec.max_depth);
    std::vector<detail::Tree> trees;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (spec.kind == PredictorKind::decision_tree) {
        trees.push_back(builder.build(all));
    } else {
        for (int t = 0; t < spec.n_trees; ++t) {
            Rng rng(derive_seed(spec.seed, 0x33, static_cast<std::uint64_t>(t)));
            std::vector<std::size_t> sample(n);
            for (auto& s : sample) {
                s = rng.uniform_index(n);
            }
            std::sort(sample.begin(), sample.end());
            trees.push_back(builder.build(std::move(sample)));
        }
    }
    return FittedPredictor(data.task, std::vector<ColumnKind>(data.kinds.begin(), data.kinds.end()), std::move(classes),
                           std::move(trees));
}

inline FittedPredictor fit(const PredictorSpec& spec, const Dataset& data) {
    const auto x = data.feature_rows();
    const auto y = data.targets();
    return fit(spec, TrainingSet{x, y, data.schema().feature_kinds, data.schema().task});
}

inline Learner make_learner(const PredictorSpec& spec) {
    return [spec](const TrainingSet& data) -> std::unique_ptr<PredictiveModel> {
        return std::make_unique<FittedPredictor>(fit(spec, data));
    };
}

/// Fraction of equal labels (classification) as used by TSTR.
inline double accuracy(std::span<const Value> predicted, std::span<const Value> truth) {
    if (predicted.size() != truth.size() || truth.empty()) {
        throw InputError("accuracy needs equally sized, non-empty label vectors");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hits += predicted[i] == truth[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

inline double mean_squared_error(std::span<const Value> predicted, std::span<const Value> truth) {
    if (predicted.size() != truth.size() || truth.empty()) {
        throw InputError("MSE needs equally sized, non-empty label vectors");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = std::get<double>(predicted[i]) - std::get<double>(truth[i]);
        total += e * e;
    }
    return total / static_cast<double>(truth.size());
}

}  // namespace tabsynth
