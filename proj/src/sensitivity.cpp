#include "bconv/sensitivity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "bconv/rng.hpp"

namespace bconv {

namespace {

void check_records(const std::vector<SensitivityRecord>& records) {
    if (records.empty()) throw ConfigError("no sensitivity records supplied");
    if (records.size() > 63) throw ConfigError("layer count exceeds bitmask capacity (63)");
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].layer_ordinal != static_cast<int>(i) + 1) {
            throw ConfigError("sensitivity records must cover ordinals 1..L in order; slot " +
                              std::to_string(i + 1) + " holds ordinal " +
                              std::to_string(records[i].layer_ordinal));
        }
    }
}

}  // namespace

CombinationEstimate combine(const std::vector<SensitivityRecord>& records,
                            const SensitivityRecord& baseline, std::uint64_t subset) {
    check_records(records);
    const std::size_t layer_count = records.size();
    if (layer_count < 64 && (subset >> layer_count) != 0) {
        throw ConfigError("subset mask references a layer beyond ordinal " +
                          std::to_string(layer_count));
    }
    CombinationEstimate est;
    est.subset = subset;
    double drop = 0.0, time = 0.0, size = 0.0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        const bool selected = (subset >> l) & 1;
        const SensitivityRecord& rec = selected ? records[l] : baseline;
        drop += selected ? rec.acc_drop : 0.0;  // the baseline's drop is zero
        time += rec.train_time;
        size += static_cast<double>(rec.model_size);
    }
    const double inv = 1.0 / static_cast<double>(layer_count);
    est.est_drop = drop * inv;
    est.est_time = time * inv;
    est.est_size = size * inv;
    return est;
}

std::vector<CombinationEstimate> enumerate_combinations(
    const std::vector<SensitivityRecord>& records, const SensitivityRecord& baseline,
    const LimitPolicy& policy) {
    check_records(records);
    const int layer_count = static_cast<int>(records.size());
    std::vector<CombinationEstimate> out;
    if (layer_count <= policy.max_exhaustive_layers) {
        const std::uint64_t total = 1ull << layer_count;
        out.reserve(total);
        for (std::uint64_t mask = 0; mask < total; ++mask) {
            out.push_back(combine(records, baseline, mask));
        }
        return out;
    }
    if (policy.sample_count <= 0) {
        throw ConfigError("more than " + std::to_string(policy.max_exhaustive_layers) +
                          " layers requires a sampling count");
    }
    Rng rng(policy.seed);
    std::unordered_set<std::uint64_t> seen;
    const std::uint64_t space = layer_count >= 64 ? ~0ull : (1ull << layer_count);
    while (seen.size() < static_cast<std::size_t>(policy.sample_count)) {
        seen.insert(rng.bounded(space));
    }
    std::vector<std::uint64_t> masks(seen.begin(), seen.end());
    std::sort(masks.begin(), masks.end());
    out.reserve(masks.size());
    for (std::uint64_t mask : masks) out.push_back(combine(records, baseline, mask));
    return out;
}

namespace {

// Bucket-argmin ordering: minimum drop first, ties to the faster, smaller,
// lexicographically lower subset.
bool better_in_bucket(const CombinationEstimate& a, const CombinationEstimate& b) {
    if (a.est_drop != b.est_drop) return a.est_drop < b.est_drop;
    if (a.est_time != b.est_time) return a.est_time < b.est_time;
    const int ca = std::popcount(a.subset), cb = std::popcount(b.subset);
    if (ca != cb) return ca < cb;
    return a.subset < b.subset;
}

bool dominates(const CombinationEstimate& a, const CombinationEstimate& b) {
    return a.est_time <= b.est_time && a.est_drop <= b.est_drop &&
           (a.est_time < b.est_time || a.est_drop < b.est_drop);
}

}  // namespace

ParetoSelection pareto_select(const std::vector<CombinationEstimate>& estimates,
                              double baseline_time, int n_buckets) {
    if (estimates.empty()) throw ConfigError("pareto_select needs at least one estimate");
    if (n_buckets < 1) throw ConfigError("bucket count must be positive");

    ParetoSelection sel;
    double min_time = baseline_time;
    bool any = false;
    for (const auto& e : estimates) {
        if (e.est_time < baseline_time) {
            any = true;
            min_time = std::min(min_time, e.est_time);
        }
    }
    if (!any) {
        sel.none_below_baseline = true;
        return sel;
    }

    const double width = (baseline_time - min_time) / static_cast<double>(n_buckets);
    std::vector<CombinationEstimate> best(static_cast<std::size_t>(n_buckets));
    std::vector<bool> filled(static_cast<std::size_t>(n_buckets), false);
    for (const auto& e : estimates) {
        if (!(e.est_time < baseline_time)) continue;
        int idx = width > 0.0 ? static_cast<int>((e.est_time - min_time) / width) : 0;
        idx = std::clamp(idx, 0, n_buckets - 1);
        if (!filled[idx] || better_in_bucket(e, best[idx])) {
            best[idx] = e;
            filled[idx] = true;
        }
    }

    std::vector<CombinationEstimate> picked;
    for (int i = 0; i < n_buckets; ++i) {
        if (filled[i]) picked.push_back(best[i]);
    }
    // Drop bucket winners that another winner dominates.
    for (std::size_t i = 0; i < picked.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < picked.size(); ++j) {
            if (i != j && dominates(picked[j], picked[i])) {
                dominated = true;
                break;
            }
        }
        if (!dominated) sel.selected.push_back(picked[i]);
    }
    return sel;
}

std::set<int> light_group() { return {1, 2, 3, 4, 5}; }
std::set<int> heavy_group() { return {16, 17, 18, 19, 20}; }

// ---- CSV ---------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string records_csv(const std::vector<SensitivityRecord>& records,
                        const SensitivityRecord& baseline) {
    std::ostringstream os;
    os << "ordinal,acc,drop,time_s,params,diverged\n";
    auto row = [&](const SensitivityRecord& r) {
        os << r.layer_ordinal << ',' << fmt(r.final_accuracy) << ',' << fmt(r.acc_drop) << ','
           << fmt(r.train_time) << ',' << r.model_size << ',' << (r.diverged ? 1 : 0) << '\n';
    };
    row(baseline);
    for (const auto& r : records) row(r);
    return os.str();
}

void parse_records_csv(const std::string& text, std::vector<SensitivityRecord>& records,
                       SensitivityRecord& baseline) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty profiling CSV");
    records.clear();
    bool saw_baseline = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        SensitivityRecord r;
        char comma;
        int diverged = 0;
        if (!(ls >> r.layer_ordinal >> comma >> r.final_accuracy >> comma >> r.acc_drop >>
              comma >> r.train_time >> comma >> r.model_size >> comma >> diverged)) {
            throw ConfigError("malformed profiling CSV line: " + line);
        }
        r.diverged = diverged != 0;
        if (r.layer_ordinal == 0) {
            baseline = r;
            saw_baseline = true;
        } else {
            records.push_back(r);
        }
    }
    if (!saw_baseline) throw ConfigError("profiling CSV lacks the baseline row (ordinal 0)");
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.layer_ordinal < b.layer_ordinal; });
    check_records(records);
}

std::string estimates_csv(const std::vector<CombinationEstimate>& estimates,
                          double baseline_accuracy) {
    std::ostringstream os;
    os << "bitmask,acc,drop,time_s,params\n";
    for (const auto& e : estimates) {
        os << e.subset << ',' << fmt(baseline_accuracy - e.est_drop) << ',' << fmt(e.est_drop)
           << ',' << fmt(e.est_time) << ',' << fmt(e.est_size) << '\n';
    }
    return os.str();
}

std::vector<CombinationEstimate> parse_estimates_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty estimates CSV");
    std::vector<CombinationEstimate> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        CombinationEstimate e;
        char comma;
        double acc;
        if (!(ls >> e.subset >> comma >> acc >> comma >> e.est_drop >> comma >> e.est_time >>
              comma >> e.est_size)) {
            throw ConfigError("malformed estimates CSV line: " + line);
        }
        out.push_back(e);
    }
    if (out.empty()) throw ConfigError("estimates CSV holds no rows");
    return out;
}

std::uint64_t subset_to_mask(const std::set<int>& ordinals) {
    std::uint64_t mask = 0;
    for (int o : ordinals) {
        if (o < 1 || o > 63) throw ConfigError("layer ordinal out of range: " + std::to_string(o));
        mask |= 1ull << (o - 1);
    }
    return mask;
}

std::set<int> mask_to_subset(std::uint64_t mask) {
    std::set<int> out;
    for (int o = 1; o <= 63; ++o) {
        if ((mask >> (o - 1)) & 1) out.insert(o);
    }
    return out;
}

std::string subset_to_string(std::uint64_t mask) {
    std::string s = "{";
    bool first = true;
    for (int o : mask_to_subset(mask)) {
        if (!first) s += ",";
        s += std::to_string(o);
        first = false;
    }
    return s + "}";
}

}  // namespace bconv
