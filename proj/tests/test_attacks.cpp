#include "fedpoison/attacks.hpp"
#include "fedpoison/errors.hpp"

#include <doctest.h>

#include "helpers.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using namespace fedpoison;
using namespace fedpoison::testing;

namespace {

long rows_with_differing_labels(const Dataset& a, const Dataset& b) {
    long count = 0;
    for (std::size_t i = 0; i < a.y.size(); ++i) {
        count += a.y[i] != b.y[i] ? 1 : 0;
    }
    return count;
}

/// Straight-line re-derivation of the feature-poisoning recipe, kept
/// independent of the implementation under test.
Dataset fp_oracle(const Dataset& shard, Index f, double percent, std::uint64_t seed,
                  bool step3) {
    const Index n = shard.rows();
    double lo = shard.X(0, f), hi = shard.X(0, f);
    for (Index i = 1; i < n; ++i) {
        lo = std::min(lo, shard.X(i, f));
        hi = std::max(hi, shard.X(i, f));
    }
    double sum0 = 0, sum1 = 0;
    long n0 = 0, n1 = 0;
    std::set<double> pool;
    for (Index i = 0; i < n; ++i) {
        if (shard.y[static_cast<std::size_t>(i)] == 0) {
            sum0 += shard.X(i, f);
            ++n0;
            pool.insert(shard.X(i, f));
        } else {
            sum1 += shard.X(i, f);
            ++n1;
        }
    }
    const double navg0 = (sum0 / static_cast<double>(n0) - lo) / (hi - lo);
    const double navg1 = (sum1 / static_cast<double>(n1) - lo) / (hi - lo);
    std::vector<double> unique;
    for (double v : pool) {
        unique.push_back((v - lo) / (hi - lo));
    }

    Dataset out = shard;
    if (step3) {
        for (Index i = 0; i < n; ++i) {
            out.X(i, f) = out.y[static_cast<std::size_t>(i)] == 0 ? navg0 : navg1;
        }
    }
    const auto budget =
        static_cast<Index>(std::floor(static_cast<double>(n) * percent / 100.0));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, unique.size() - 1);
    for (Index i = 0; i < budget; ++i) {
        std::size_t choice = pick(rng);
        if (out.y[static_cast<std::size_t>(i)] == 1) {
            out.X(i, f) = unique[choice];
        }
    }
    return out;
}

Dataset fp_fixture() {
    // Mixed-label shard with duplicate label-0 values in the target column.
    return make_dataset(
        {
            {0.0, 0.9}, {6.0, 0.1}, {1.0, 0.5}, {5.0, 0.3},
            {1.0, 0.2}, {4.0, 0.8}, {2.0, 0.6}, {6.0, 0.4},
        },
        {0, 1, 0, 1, 0, 1, 0, 1});
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("num_poison is floor(n * percent / 100)") {
    CHECK(num_poison(1000, 25) == 250);
    CHECK(num_poison(200, 10) == 20);
    CHECK(num_poison(7, 50) == 3);
    CHECK(num_poison(1, 99) == 0);
    CHECK(num_poison(50, 0) == 0);
    CHECK(num_poison(50, 100) == 50);

    // Exhaustively against exact integer arithmetic.
    for (Index n = 0; n <= 300; ++n) {
        for (int percent = 0; percent <= 100; ++percent) {
            CHECK(num_poison(n, percent) == (n * percent) / 100);
        }
    }

    CHECK_THROWS_AS(num_poison(10, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(num_poison(10, 100.5), std::invalid_argument);
}

TEST_CASE("flip_labels flips exactly the budgeted number of labels") {
    Dataset shard = easy_blobs(200, 3, 1);
    auto [flipped, report] = flip_labels(shard, 10.0, 7);

    CHECK(rows_with_differing_labels(shard, flipped) == 20);
    CHECK(report.num_values == 20);
    CHECK(report.num_actually_modified == 20);
    CHECK(report.requested_percent == 10.0);
    CHECK(flipped.X == shard.X);  // features untouched

    SUBCASE("deterministic per seed, varying across seeds") {
        auto [again, r2] = flip_labels(shard, 10.0, 7);
        CHECK(again.y == flipped.y);
        auto [other, r3] = flip_labels(shard, 10.0, 8);
        CHECK(other.y != flipped.y);
        CHECK(r3.num_values == 20);  // budget never depends on the seed
    }
    SUBCASE("edge percentages") {
        auto [none, r0] = flip_labels(shard, 0.0, 7);
        CHECK(none.y == shard.y);
        CHECK(r0.num_values == 0);
        auto [all, r100] = flip_labels(shard, 100.0, 7);
        CHECK(rows_with_differing_labels(shard, all) == 200);
    }
}

TEST_CASE("flip_labels samples uniformly without replacement") {
    Dataset shard = easy_blobs(10, 2, 3);
    std::set<std::size_t> hit;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto [flipped, report] = flip_labels(shard, 10.0, seed);
        for (std::size_t i = 0; i < shard.y.size(); ++i) {
            if (flipped.y[i] != shard.y[i]) {
                hit.insert(i);
            }
        }
    }
    CHECK(hit.size() == 10);  // every row is reachable
}

TEST_CASE("compute_fp_stats matches hand-computed values") {
    Dataset shard = make_dataset({{0.0}, {6.0}, {1.0}, {5.0}}, {0, 1, 0, 1});
    FpStats stats = compute_fp_stats(shard, 0);

    CHECK(stats.min_value == 0.0);
    CHECK(stats.max_value == 6.0);
    CHECK(stats.average_zero == 0.5);
    CHECK(stats.average_one == 5.5);
    CHECK(stats.normalized_avg_zero == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
    CHECK(stats.normalized_avg_one == doctest::Approx(11.0 / 12.0).epsilon(1e-15));
    REQUIRE(stats.unique_values.size() == 2);
    CHECK(stats.unique_values[0] == 0.0);
    CHECK(stats.unique_values[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("compute_fp_stats de-duplicates the label-0 pool and keeps it sorted") {
    Dataset shard = make_dataset({{4.0}, {2.0}, {2.0}, {8.0}}, {0, 0, 0, 1});
    FpStats stats = compute_fp_stats(shard, 0);
    REQUIRE(stats.unique_values.size() == 2);
    CHECK(stats.unique_values[0] == 0.0);            // value 2 normalized
    CHECK(stats.unique_values[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(std::is_sorted(stats.unique_values.begin(), stats.unique_values.end()));
}

TEST_CASE("compute_fp_stats rejects bad inputs") {
    Dataset constant = make_dataset({{3.0}, {3.0}}, {0, 1});
    CHECK_THROWS_AS(compute_fp_stats(constant, 0), DegenerateColumnError);

    Dataset single = make_dataset({{1.0}, {2.0}}, {0, 0});
    CHECK_THROWS_AS(compute_fp_stats(single, 0), std::invalid_argument);

    Dataset fine = make_dataset({{1.0}, {2.0}}, {0, 1});
    CHECK_THROWS_AS(compute_fp_stats(fine, 3), std::invalid_argument);
}

TEST_CASE("fp_poison reproduces the straight-line recipe bit for bit") {
    Dataset shard = fp_fixture();
    for (double percent : {0.0, 25.0, 50.0, 100.0}) {
        for (bool step3 : {true, false}) {
            AttackSpec spec;
            spec.kind = AttackKind::kFeaturePoison;
            spec.percent = percent;
            spec.feature_index = 0;
            spec.fp_apply_step3 = step3;
            spec.seed = 77;

            FpPoisonResult result = fp_poison(shard, spec);
            Dataset expected = fp_oracle(shard, 0, percent, 77, step3);
            CHECK(result.shard.X == expected.X);
            CHECK(result.shard.y == shard.y);  // labels never change
        }
    }
}

TEST_CASE("fp_poison reports the budget and the rows actually overwritten") {
    Dataset shard = fp_fixture();
    AttackSpec spec;
    spec.kind = AttackKind::kFeaturePoison;
    spec.percent = 50.0;
    spec.feature_index = 0;
    spec.seed = 5;

    FpPoisonResult result = fp_poison(shard, spec);
    CHECK(result.report.num_values == 4);  // floor(8 * 50 / 100)
    // Rows 0..3 hold labels 0,1,0,1 -> two label-1 rows get overwritten.
    CHECK(result.report.num_actually_modified == 2);

    spec.seed = 6;
    FpPoisonResult other = fp_poison(shard, spec);
    CHECK(other.report.num_values == result.report.num_values);
    CHECK(other.report.num_actually_modified == result.report.num_actually_modified);
}

TEST_CASE("fp_poison touches only the target column") {
    Dataset shard = fp_fixture();
    AttackSpec spec;
    spec.kind = AttackKind::kFeaturePoison;
    spec.percent = 100.0;
    spec.feature_index = 0;
    spec.seed = 9;

    FpPoisonResult result = fp_poison(shard, spec);
    CHECK(result.shard.X.col(1) == shard.X.col(1));

    SUBCASE("with step 3 the column image is class means plus pool values") {
        spec.percent = 0.0;
        FpPoisonResult clean = fp_poison(shard, spec);
        for (Index i = 0; i < clean.shard.rows(); ++i) {
            double expected = clean.shard.y[static_cast<std::size_t>(i)] == 0
                                  ? clean.stats.normalized_avg_zero
                                  : clean.stats.normalized_avg_one;
            CHECK(clean.shard.X(i, 0) == expected);
        }
    }
    SUBCASE("with step 3 off and percent 0 nothing changes") {
        spec.percent = 0.0;
        spec.fp_apply_step3 = false;
        FpPoisonResult untouched = fp_poison(shard, spec);
        CHECK(untouched.shard.X == shard.X);
        CHECK(untouched.report.num_actually_modified == 0);
    }
}

TEST_CASE("fp_poison needs a resolved feature index") {
    AttackSpec spec;
    spec.kind = AttackKind::kFeaturePoison;
    spec.percent = 10.0;
    CHECK_THROWS_AS(fp_poison(fp_fixture(), spec), std::invalid_argument);
}

TEST_CASE("lf_asr_testset complements every label") {
    Dataset test = easy_blobs(40, 2, 11);
    Dataset flipped = lf_asr_testset(test);
    CHECK(rows_with_differing_labels(test, flipped) == 40);
    CHECK(flipped.X == test.X);

    Dataset back = lf_asr_testset(flipped);
    CHECK(back.y == test.y);
}

TEST_CASE("fp_asr_testset plants the opposite class's normalized mean") {
    Dataset shard = fp_fixture();
    FpStats stats = compute_fp_stats(shard, 0);
    Dataset test = make_dataset({{0.3, 0.1}, {0.7, 0.2}}, {0, 1});

    Dataset transformed = fp_asr_testset(test, 0, stats);
    CHECK(transformed.X(0, 0) == stats.normalized_avg_one);   // label 0 row
    CHECK(transformed.X(1, 0) == stats.normalized_avg_zero);  // label 1 row
    CHECK(transformed.X.col(1) == test.X.col(1));
    CHECK(transformed.y == test.y);
}

TEST_CASE("accuracy plus label-flip ASR is exactly one") {
    Dataset ds = easy_blobs(300, 3, 20);
    Bau1Params p = init_params(3, 21);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 64;
    cfg.learning_rate = 4e-3;
    cfg.seed = 22;
    p = train_local(p, ds, cfg).params;

    double accuracy = evaluate(p, ds);
    double asr_value = asr(p, lf_asr_testset(ds));
    CHECK(accuracy + asr_value == doctest::Approx(1.0).epsilon(1e-12));

    auto n = static_cast<double>(ds.rows());
    CHECK(std::llround(accuracy * n) + std::llround(asr_value * n) == ds.rows());
}

}  // TEST_SUITE
