#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tabsynth/error.hpp"
#include "tabsynth/predictor.hpp"
#include "tabsynth/random.hpp"
#include "tabsynth/table.hpp"

namespace tabsynth {

using Point = std::vector<double>;
using Points = std::vector<Point>;

/// Shared distance space for density, coverage and DCR. Statistics come from
/// the real data: continuous features are z-scored (constant ones dropped),
/// categorical features are one-hot over the real categories (unseen values
/// map to an all-zero block). The target is not embedded.
class Embedding {
public:
    static Embedding fit(const Dataset& real) {
        Embedding e;
        e.schema_ = real.schema();
        const auto m = e.schema_.num_features();
        e.columns_.resize(m);
        const auto n = static_cast<double>(real.size());
        for (std::size_t f = 0; f < m; ++f) {
            auto& col = e.columns_[f];
            col.kind = e.schema_.feature_kinds[f];
            if (col.kind == ColumnKind::continuous) {
                double sum = 0.0;
                for (const auto& row : real.rows()) {
                    sum += std::get<double>(row.features[f]);
                }
                col.mean = sum / n;
                double ss = 0.0;
                for (const auto& row : real.rows()) {
                    const double d = std::get<double>(row.features[f]) - col.mean;
                    ss += d * d;
                }
                col.stddev = std::sqrt(ss / n);
                col.width = col.stddev > 0.0 ? 1 : 0;
            } else {
                std::set<std::string> cats;
                for (const auto& row : real.rows()) {
                    cats.insert(std::get<std::string>(row.features[f]));
                }
                col.categories.assign(cats.begin(), cats.end());
                col.width = col.categories.size();
            }
            e.dimension_ += col.width;
        }
        return e;
    }

    std::size_t dimension() const { return dimension_; }

    Point embed(const FeatureRow& row) const {
        if (row.size() != columns_.size()) {
            throw InputError("row width does not match the embedding");
        }
        Point p;
        p.reserve(dimension_);
        for (std::size_t f = 0; f < columns_.size(); ++f) {
            const auto& col = columns_[f];
            if (col.width == 0) {
                continue;
            }
            if (col.kind == ColumnKind::continuous) {
                p.push_back((std::get<double>(row[f]) - col.mean) / col.stddev);
            } else {
                const auto& v = std::get<std::string>(row[f]);
                const auto it = std::lower_bound(col.categories.begin(), col.categories.end(), v);
                for (auto c = col.categories.begin(); c != col.categories.end(); ++c) {
                    p.push_back(c == it && *it == v ? 1.0 : 0.0);
                }
            }
        }
        return p;
    }

    Points embed(const Dataset& data) const {
        if (!(data.schema() == schema_)) {
            throw InputError("dataset schema does not match the embedding");
        }
        Points out;
        out.reserve(data.size());
        for (const auto& row : data.rows()) {
            out.push_back(embed(row.features));
        }
        return out;
    }

private:
    struct Column {
        ColumnKind kind = ColumnKind::categorical;
        double mean = 0.0;
        double stddev = 0.0;
        std::vector<std::string> categories;
        std::size_t width = 0;
    };

    Schema schema_;
    std::vector<Column> columns_;
    std::size_t dimension_ = 0;
};

inline double euclidean(const Point& a, const Point& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

namespace detail {

inline void require_same_schema(const Dataset& a, const Dataset& b) {
    if (!(a.schema() == b.schema())) {
        throw InputError("datasets have different schemas");
    }
}

inline TrainingSet training_set(const std::vector<FeatureRow>& x, const std::vector<Value>& y,
                                const std::vector<ColumnKind>& kinds, Task task) {
    return TrainingSet{x, y, kinds, task};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Utility

/// Fit on `fake`, score on `test`: accuracy for classification, MSE for
/// regression. A classification fake with fewer than two classes scores 0.
inline double tstr(const Dataset& fake, const Dataset& test, const Learner& learner) {
    detail::require_same_schema(fake, test);
    const auto& schema = fake.schema();
    if (schema.task == Task::classification && fake.classes().size() < 2) {
        return 0.0;
    }
    const auto x = fake.feature_rows();
    const auto y = fake.targets();
    const auto model = learner(detail::training_set(x, y, schema.feature_kinds, schema.task));
    const auto predicted = model->predict(test.feature_rows());
    const auto truth = test.targets();
    return schema.task == Task::classification ? accuracy(predicted, truth) : mean_squared_error(predicted, truth);
}

inline double tstr(const Dataset& fake, const Dataset& test, const PredictorSpec& spec) {
    return tstr(fake, test, make_learner(spec));
}

// ---------------------------------------------------------------------------
// Discriminator

/// Held-out accuracy of a classifier separating real (label "0") from fake
/// (label "1") rows, target included as an input column. The larger side is
/// down-sampled to the smaller one. The same 20% of positions is held out on
/// both sides, so a real row and its copy never straddle the split.
inline double discriminator_accuracy(const Dataset& real, const Dataset& fake, const Learner& learner,
                                     std::uint64_t seed) {
    detail::require_same_schema(real, fake);
    const auto& schema = real.schema();
    Rng rng(derive_seed(seed, 0xD1, 0));
    const std::size_t n = std::min(real.size(), fake.size());
    auto take = [&](const Dataset& d) {
        std::vector<std::size_t> idx(d.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        if (d.size() > n) {
            rng.shuffle(std::span<std::size_t>(idx));
            idx.resize(n);
            std::sort(idx.begin(), idx.end());
        }
        return idx;
    };
    const auto real_idx = take(real);
    const auto fake_idx = take(fake);

    std::vector<ColumnKind> kinds = schema.feature_kinds;
    kinds.push_back(schema.target_kind());
    const auto held = choose_test_indices(std::vector<std::string>(n), 0.2, rng, false);
    if (held.empty() || held.size() == n) {
        throw InputError("too few rows for a discriminator split");
    }
    std::vector<FeatureRow> x_train, x_test;
    std::vector<Value> y_train, y_test;
    auto append = [&](const Dataset& d, const std::vector<std::size_t>& idx, const std::string& label) {
        std::size_t t = 0;
        for (std::size_t pos = 0; pos < idx.size(); ++pos) {
            auto row = d[idx[pos]].features;
            row.push_back(d[idx[pos]].target);
            const bool test = t < held.size() && held[t] == pos;
            t += test;
            (test ? x_test : x_train).push_back(std::move(row));
            (test ? y_test : y_train).emplace_back(label);
        }
    };
    append(real, real_idx, "0");
    append(fake, fake_idx, "1");
    const auto model = learner(detail::training_set(x_train, y_train, kinds, Task::classification));
    return accuracy(model->predict(x_test), y_test);
}

inline double discriminator_accuracy(const Dataset& real, const Dataset& fake, const PredictorSpec& spec,
                                     std::uint64_t seed) {
    return discriminator_accuracy(real, fake, make_learner(spec), seed);
}

/// 0 at chance, 1 when perfectly separable.
inline double normalized_discriminator(double acc) { return std::max(0.0, 2.0 * acc - 1.0); }

// ---------------------------------------------------------------------------
// Marginal fidelity

/// KL(p || q) in nats between Laplace-smoothed count vectors.
inline double smoothed_kl(const std::vector<double>& p_counts, const std::vector<double>& q_counts, double alpha) {
    double p_total = 0.0, q_total = 0.0;
    for (std::size_t i = 0; i < p_counts.size(); ++i) {
        p_total += p_counts[i] + alpha;
        q_total += q_counts[i] + alpha;
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p_counts.size(); ++i) {
        const double p = (p_counts[i] + alpha) / p_total;
        const double q = (q_counts[i] + alpha) / q_total;
        if (p > 0.0) {
            kl += p * std::log(p / q);
        }
    }
    return kl;
}

/// Mean over features of 1 / (1 + KL(real || fake)) on per-feature histograms.
inline double inverse_kl(const Dataset& real, const Dataset& fake, std::size_t bins = 20, double alpha = 1.0) {
    detail::require_same_schema(real, fake);
    if (bins == 0) {
        throw InputError("inverse_kl needs at least one bin");
    }
    const auto& schema = real.schema();
    const auto m = schema.num_features();
    double total = 0.0;
    for (std::size_t f = 0; f < m; ++f) {
        std::vector<double> p, q;
        if (schema.feature_kinds[f] == ColumnKind::categorical) {
            std::map<std::string, std::pair<double, double>> counts;
            for (const auto& row : real.rows()) {
                counts[std::get<std::string>(row.features[f])].first += 1.0;
            }
            for (const auto& row : fake.rows()) {
                counts[std::get<std::string>(row.features[f])].second += 1.0;
            }
            for (const auto& [_, c] : counts) {
                p.push_back(c.first);
                q.push_back(c.second);
            }
        } else {
            double lo = std::get<double>(real[0].features[f]);
            double hi = lo;
            for (const auto& row : real.rows()) {
                lo = std::min(lo, std::get<double>(row.features[f]));
                hi = std::max(hi, std::get<double>(row.features[f]));
            }
            auto bin_of = [&](double x) -> std::size_t {
                if (!(hi > lo)) {
                    return 0;
                }
                x = std::clamp(x, lo, hi);
                const auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
                return std::min(b, bins - 1);
            };
            p.assign(bins, 0.0);
            q.assign(bins, 0.0);
            for (const auto& row : real.rows()) {
                p[bin_of(std::get<double>(row.features[f]))] += 1.0;
            }
            for (const auto& row : fake.rows()) {
                q[bin_of(std::get<double>(row.features[f]))] += 1.0;
            }
        }
        total += 1.0 / (1.0 + smoothed_kl(p, q, alpha));
    }
    return total / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Nearest-neighbour metrics

/// Distance from each point to its k-th nearest other point.
inline std::vector<double> knn_radius(const Points& points, std::size_t k = 2) {
    if (k == 0 || points.size() < k + 1) {
        throw InputError("knn_radius needs at least k+1 points");
    }
    std::vector<double> radii(points.size());
    std::vector<double> d;
    for (std::size_t i = 0; i < points.size(); ++i) {
        d.clear();
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (j != i) {
                d.push_back(euclidean(points[i], points[j]));
            }
        }
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
        radii[i] = d[k - 1];
    }
    return radii;
}

/// Fake points inside closed real k-NN balls, counted with multiplicity and
/// divided by k * |real|.
inline double density(const Points& real, const Points& fake, std::size_t k = 2) {
    const auto radii = knn_radius(real, k);
    std::size_t count = 0;
    for (const auto& f : fake) {
        for (std::size_t i = 0; i < real.size(); ++i) {
            if (euclidean(f, real[i]) <= radii[i]) {
                ++count;
            }
        }
    }
    return static_cast<double>(count) / (static_cast<double>(k) * static_cast<double>(real.size()));
}

/// Fraction of real points whose closed k-NN ball holds at least one fake point.
inline double coverage(const Points& real, const Points& fake, std::size_t k = 2) {
    const auto radii = knn_radius(real, k);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < real.size(); ++i) {
        for (const auto& f : fake) {
            if (euclidean(f, real[i]) <= radii[i]) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(real.size());
}

/// Per real point, the distance to the closest fake point.
inline std::vector<double> dcr(const Points& real, const Points& fake) {
    if (fake.empty()) {
        throw InputError("dcr needs at least one fake point");
    }
    std::vector<double> out;
    out.reserve(real.size());
    for (const auto& r : real) {
        double best = euclidean(r, fake[0]);
        for (std::size_t j = 1; j < fake.size(); ++j) {
            best = std::min(best, euclidean(r, fake[j]));
        }
        out.push_back(best);
    }
    return out;
}

struct DcrSummary {
    double min = 0.0;
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
    std::vector<double> bin_left;
    std::vector<std::size_t> counts;
};

/// Order statistics plus a fixed-width histogram over [0, max].
inline DcrSummary summarize_dcr(std::vector<double> values, std::size_t bins = 20) {
    if (values.empty() || bins == 0) {
        throw InputError("dcr summary needs values and at least one bin");
    }
    std::sort(values.begin(), values.end());
    DcrSummary s;
    const auto n = values.size();
    s.min = values.front();
    s.max = values.back();
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    s.mean = sum / static_cast<double>(n);
    s.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    const double width = s.max / static_cast<double>(bins);
    s.counts.assign(bins, 0);
    for (std::size_t b = 0; b < bins; ++b) {
        s.bin_left.push_back(width * static_cast<double>(b));
    }
    for (double v : values) {
        const auto b = width > 0.0 ? static_cast<std::size_t>(v / width) : 0;
        ++s.counts[std::min(b, bins - 1)];
    }
    return s;
}

inline std::string dcr_histogram_csv(const DcrSummary& s) {
    std::string out = "bin_left,count\n";
    for (std::size_t b = 0; b < s.counts.size(); ++b) {
        out += format_number(s.bin_left[b]) + "," + std::to_string(s.counts[b]) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregate

struct EvalOptions {
    std::size_t k = 2;
    std::size_t kl_bins = 20;
    std::uint64_t seed = 0;
    bool normalized_discriminator = false;
};

struct MetricsReport {
    Task task = Task::classification;
    double tstr_score = 0.0;
    double discriminator_accuracy = 0.0;
    std::optional<double> discriminator_normalized;
    double inverse_kl = 0.0;
    double density = 0.0;
    double coverage = 0.0;
    DcrSummary dcr;
    std::vector<double> dcr_values;
};

inline MetricsReport evaluate_all(const Dataset& real, const Dataset& fake, const Dataset& test, const Learner& learner,
                                  const EvalOptions& options = {}) {
    detail::require_same_schema(real, fake);
    detail::require_same_schema(real, test);
    MetricsReport r;
    r.task = real.schema().task;
    r.tstr_score = tstr(fake, test, learner);
    r.discriminator_accuracy = discriminator_accuracy(real, fake, learner, options.seed);
    if (options.normalized_discriminator) {
        r.discriminator_normalized = normalized_discriminator(r.discriminator_accuracy);
    }
    r.inverse_kl = inverse_kl(real, fake, options.kl_bins);
    const auto embedding = Embedding::fit(real);
    const auto real_pts = embedding.embed(real);
    const auto fake_pts = embedding.embed(fake);
    r.density = density(real_pts, fake_pts, options.k);
    r.coverage = coverage(real_pts, fake_pts, options.k);
    r.dcr_values = dcr(real_pts, fake_pts);
    r.dcr = summarize_dcr(r.dcr_values);
    return r;
}

inline MetricsReport evaluate_all(const Dataset& real, const Dataset& fake, const Dataset& test,
                                  const PredictorSpec& spec, const EvalOptions& options = {}) {
    return evaluate_all(real, fake, test, make_learner(spec), options);
}

}  // namespace tabsynth
