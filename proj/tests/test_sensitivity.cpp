#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bconv/rng.hpp"
#include "bconv/sensitivity.hpp"
#include "support/oracles.hpp"

using namespace bconv;

namespace {

SensitivityRecord rec(int ordinal, double acc, double drop, double time_s, std::int64_t params) {
    SensitivityRecord r;
    r.layer_ordinal = ordinal;
    r.final_accuracy = acc;
    r.acc_drop = drop;
    r.train_time = time_s;
    r.model_size = params;
    return r;
}

std::vector<SensitivityRecord> random_records(Rng& rng, int layer_count,
                                              const SensitivityRecord& baseline) {
    std::vector<SensitivityRecord> records;
    for (int l = 1; l <= layer_count; ++l) {
        const double drop = rng.uniform() * 0.2 - 0.02;
        records.push_back(rec(l, baseline.final_accuracy - drop, drop,
                              baseline.train_time * (0.8 + 0.4 * rng.uniform()),
                              baseline.model_size - static_cast<std::int64_t>(rng.bounded(500))));
    }
    return records;
}

}  // namespace

TEST_CASE("combine matches the worked averaging examples") {
    const SensitivityRecord baseline = rec(0, 0.9, 0.0, 100.0, 10000);
    std::vector<SensitivityRecord> records = {
        rec(1, 0.85, 0.05, 98.0, 9000),
        rec(2, 0.89, 0.01, 101.0, 9100),
        rec(3, 0.88, 0.02, 97.0, 9200),
        rec(4, 0.90, 0.00, 99.0, 9300),
    };
    CombinationEstimate est = combine(records, baseline, subset_to_mask({1, 3}));
    CHECK(est.est_drop == doctest::Approx(0.0175).epsilon(1e-15));
    CHECK(est.est_time == doctest::Approx(98.75).epsilon(1e-15));

    CombinationEstimate empty = combine(records, baseline, 0);
    CHECK(empty.est_drop == 0.0);
    CHECK(empty.est_time == doctest::Approx(100.0));
    CHECK(empty.est_size == doctest::Approx(10000.0));

    // Missing record slots are an input error.
    std::vector<SensitivityRecord> gappy = {records[0], records[2], records[3]};
    CHECK_THROWS_AS(combine(gappy, baseline, 0), ConfigError);
}

TEST_CASE("combine is linear in the drop metric and averages the full set") {
    Rng rng(3);
    const SensitivityRecord baseline = rec(0, 0.92, 0.0, 120.0, 20000);
    std::vector<SensitivityRecord> records = random_records(rng, 12, baseline);

    for (int trial = 0; trial < 50; ++trial) {
        const std::uint64_t s1 = rng.bounded(1ull << 12);
        const std::uint64_t s2 = rng.bounded(1ull << 12);
        const double lhs = combine(records, baseline, s1).est_drop +
                           combine(records, baseline, s2).est_drop -
                           combine(records, baseline, s1 & s2).est_drop;
        const double rhs = combine(records, baseline, s1 | s2).est_drop;
        CHECK(std::abs(lhs - rhs) <= 1e-12);
    }

    double mean_drop = 0.0, mean_time = 0.0, mean_size = 0.0;
    for (const auto& r : records) {
        mean_drop += r.acc_drop;
        mean_time += r.train_time;
        mean_size += static_cast<double>(r.model_size);
    }
    CombinationEstimate full = combine(records, baseline, (1ull << 12) - 1);
    CHECK(full.est_drop == doctest::Approx(mean_drop / 12).epsilon(1e-12));
    CHECK(full.est_time == doctest::Approx(mean_time / 12).epsilon(1e-12));
    CHECK(full.est_size == doctest::Approx(mean_size / 12).epsilon(1e-12));
}

TEST_CASE("enumeration: counts, hand case, independent generator, sampling") {
    Rng rng(5);
    const SensitivityRecord baseline = rec(0, 0.9, 0.0, 50.0, 5000);

    {
        std::vector<SensitivityRecord> records = random_records(rng, 3, baseline);
        auto all = enumerate_combinations(records, baseline, LimitPolicy{});
        REQUIRE(all.size() == 8);
        for (std::uint64_t m = 0; m < 8; ++m) {
            CHECK(all[m].subset == m);
            CHECK(all[m].est_drop == doctest::Approx(combine(records, baseline, m).est_drop));
        }
    }

    {
        std::vector<SensitivityRecord> records = random_records(rng, 10, baseline);
        auto all = enumerate_combinations(records, baseline, LimitPolicy{});
        REQUIRE(all.size() == 1024);
        std::vector<std::uint64_t> expected;
        testsupport::subsets_recursive(10, 1, 0, expected);
        std::sort(expected.begin(), expected.end());
        for (std::size_t i = 0; i < expected.size(); ++i) CHECK(all[i].subset == expected[i]);
    }

    {
        std::vector<SensitivityRecord> records = random_records(rng, 20, baseline);
        auto all = enumerate_combinations(records, baseline, LimitPolicy{});
        CHECK(all.size() == 1048576);
    }

    {
        std::vector<SensitivityRecord> records = random_records(rng, 30, baseline);
        LimitPolicy policy;
        CHECK_THROWS_AS(enumerate_combinations(records, baseline, policy), ConfigError);
        policy.sample_count = 256;
        policy.seed = 77;
        auto a = enumerate_combinations(records, baseline, policy);
        auto b = enumerate_combinations(records, baseline, policy);
        REQUIRE(a.size() == 256);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].subset == b[i].subset);
        // Distinctness.
        for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i].subset != a[i - 1].subset);
    }
}

TEST_CASE("pareto selection: singleton, dominance brute force, empty warning") {
    std::vector<CombinationEstimate> one(1);
    one[0].subset = 1;
    one[0].est_time = 40.0;
    one[0].est_drop = 0.1;
    ParetoSelection single = pareto_select(one, 50.0, 4);
    REQUIRE(single.selected.size() == 1);
    CHECK(single.selected[0].subset == 1);

    ParetoSelection none = pareto_select(one, 30.0, 4);
    CHECK(none.none_below_baseline);
    CHECK(none.selected.empty());

    // No selected point may be dominated by any input point below baseline.
    Rng rng(9);
    std::vector<CombinationEstimate> cloud(1000);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cloud[i].subset = i;
        cloud[i].est_time = 50.0 + 100.0 * rng.uniform();
        cloud[i].est_drop = rng.uniform() * 0.3 - 0.05;
        cloud[i].est_size = 1000.0 + rng.uniform();
    }
    const double baseline_time = 120.0;
    ParetoSelection sel = pareto_select(cloud, baseline_time, 6);
    REQUIRE(!sel.selected.empty());
    for (const auto& picked : sel.selected) {
        CHECK(picked.est_time < baseline_time);
        for (const auto& other : cloud) {
            if (!(other.est_time < baseline_time)) continue;
            const bool dominates = other.est_time <= picked.est_time &&
                                   other.est_drop < picked.est_drop;
            CHECK(!dominates);
        }
    }
}

TEST_CASE("pareto selection is invariant under affine time rescaling") {
    Rng rng(13);
    std::vector<CombinationEstimate> cloud(400);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cloud[i].subset = i;
        cloud[i].est_time = 1.0 + rng.uniform();
        cloud[i].est_drop = rng.uniform();
    }
    const double baseline_time = 1.8;
    ParetoSelection base = pareto_select(cloud, baseline_time, 5);

    for (double a : {0.5, 2.0, 8.0}) {
        for (double b : {0.0, 100.0}) {
            std::vector<CombinationEstimate> scaled = cloud;
            for (auto& e : scaled) e.est_time = a * e.est_time + b;
            ParetoSelection res = pareto_select(scaled, a * baseline_time + b, 5);
            REQUIRE(res.selected.size() == base.selected.size());
            for (std::size_t i = 0; i < res.selected.size(); ++i) {
                CHECK(res.selected[i].subset == base.selected[i].subset);
            }
        }
    }
}

TEST_CASE("layer groups are the pinned constants") {
    CHECK(light_group() == std::set<int>{1, 2, 3, 4, 5});
    CHECK(heavy_group() == std::set<int>{16, 17, 18, 19, 20});
    std::set<int> inter;
    for (int o : light_group()) {
        if (heavy_group().count(o)) inter.insert(o);
    }
    CHECK(inter.empty());
}

TEST_CASE("profiling CSV round-trips through parse") {
    const SensitivityRecord baseline = rec(0, 0.91, 0.0, 75.5, 4321);
    std::vector<SensitivityRecord> records = {rec(1, 0.85, 0.06, 70.25, 4000),
                                              rec(2, 0.92, -0.01, 74.0, 4100)};
    records[1].diverged = false;
    const std::string csv = records_csv(records, baseline);

    std::vector<SensitivityRecord> parsed;
    SensitivityRecord parsed_baseline;
    parse_records_csv(csv, parsed, parsed_baseline);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed_baseline.final_accuracy == baseline.final_accuracy);
    CHECK(parsed[0].acc_drop == records[0].acc_drop);
    CHECK(parsed[1].train_time == records[1].train_time);
    CHECK(parsed[1].model_size == records[1].model_size);

    CHECK_THROWS_AS(
        [] {
            std::vector<SensitivityRecord> out;
            SensitivityRecord b;
            parse_records_csv("ordinal,acc\n", out, b);
        }(),
        ConfigError);
}

TEST_CASE("subset mask helpers") {
    CHECK(subset_to_mask({4, 15}) == ((1ull << 3) | (1ull << 14)));
    CHECK(mask_to_subset(subset_to_mask({4, 15})) == std::set<int>{4, 15});
    CHECK(subset_to_string(subset_to_mask({12, 15, 20})) == "{12,15,20}");
}
