#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bconv/errors.hpp"

namespace bconv {

// Outcome of one profiling run (basis convolutions in a single layer, or the
// baseline when layer_ordinal is 0). acc_drop is baseline minus this run and
// may be negative. A diverged run is kept with drop 1.0 and flagged.
struct SensitivityRecord {
    int layer_ordinal = 0;  // 1-indexed; 0 marks the baseline record
    double final_accuracy = 0.0;
    double acc_drop = 0.0;
    double train_time = 0.0;  // seconds
    std::int64_t model_size = 0;  // trainable parameter count
    bool diverged = false;
};

// Per-layer-average estimate for a subset of decomposed layers: each metric
// averages the one-layer record for selected layers and the baseline record
// for the rest (the baseline's drop being 0).
struct CombinationEstimate {
    std::uint64_t subset = 0;  // bit (ordinal-1) set when the layer is selected
    double est_drop = 0.0;
    double est_time = 0.0;
    double est_size = 0.0;
};

// records must hold ordinals 1..L in order; missing or misnumbered records
// are an input error.
CombinationEstimate combine(const std::vector<SensitivityRecord>& records,
                            const SensitivityRecord& baseline, std::uint64_t subset);

struct LimitPolicy {
    int max_exhaustive_layers = 24;
    std::int64_t sample_count = 0;  // used when L exceeds the exhaustive limit
    std::uint64_t seed = 0;
};

// All 2^L subsets when L fits the exhaustive limit, otherwise sample_count
// distinct seeded subsets. Output order: ascending bitmask (exhaustive) or
// ascending after deduplication (sampled).
std::vector<CombinationEstimate> enumerate_combinations(
    const std::vector<SensitivityRecord>& records, const SensitivityRecord& baseline,
    const LimitPolicy& policy);

struct ParetoSelection {
    std::vector<CombinationEstimate> selected;
    bool none_below_baseline = false;  // warning: no point beat the baseline time
};

// Selection rule behind the highlighted combinations: restrict to
// est_time < baseline_time, cut the time axis into n_buckets equal-width
// buckets, keep each nonempty bucket's minimum-drop point (ties: smaller
// time, then smaller cardinality, then smaller bitmask), then drop selected
// points dominated by another selected point.
ParetoSelection pareto_select(const std::vector<CombinationEstimate>& estimates,
                              double baseline_time, int n_buckets);

std::set<int> light_group();  // first five conv layers
std::set<int> heavy_group();  // last five conv layers

// ---- CSV ---------------------------------------------------------------------

// Records: "ordinal,acc,drop,time_s,params,diverged" with the baseline at
// ordinal 0. Estimates: "bitmask,acc,drop,time_s,params".
std::string records_csv(const std::vector<SensitivityRecord>& records,
                        const SensitivityRecord& baseline);
void parse_records_csv(const std::string& text, std::vector<SensitivityRecord>& records,
                       SensitivityRecord& baseline);
std::string estimates_csv(const std::vector<CombinationEstimate>& estimates,
                          double baseline_accuracy);
std::vector<CombinationEstimate> parse_estimates_csv(const std::string& text);

std::uint64_t subset_to_mask(const std::set<int>& ordinals);
std::set<int> mask_to_subset(std::uint64_t mask);
std::string subset_to_string(std::uint64_t mask);  // "{4,15}"

}  // namespace bconv
