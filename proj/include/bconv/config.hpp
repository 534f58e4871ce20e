#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bconv/data.hpp"
#include "bconv/pipeline.hpp"

namespace bconv {

// Flat sectioned key=value text ("[train]\nepochs = 20"). '#' and ';' start
// comments. Keys outside the schema are errors, so typos fail fast.
struct ConfigFile {
    std::map<std::string, std::string> values;  // "section.key" -> raw value

    static ConfigFile parse(const std::string& text);
    static ConfigFile load(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

// Everything a CLI run needs, resolved and validated.
struct RunConfig {
    // [run]
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds;  // optional list for multi-seed jobs
    std::string out_dir = "out";
    int jobs = 1;
    bool overwrite = false;
    TimerKind timer = TimerKind::Modeled;

    ModelSpec model;  // [model]

    // [data]
    std::string data_source = "synthetic";  // or "cifar10"
    std::string data_dir;
    int n_per_class = 50;
    int max_per_class = 0;
    AugmentConfig augment;

    TrainConfig train;  // [train]

    // [basis]
    BasisMode basis_mode = BasisMode::RestrictedCompose;
    double r_or_alpha = 0.5;
    double beta = 0.25;
    std::set<int> basis_layers;

    double skip = 0.0;  // [skip]

    // [sanity]
    ExtractionKind extraction = ExtractionKind::SVD;
    std::vector<double> r_fractions = {0.25, 0.5, 0.75, 1.0};
    double resume_fraction = 0.7;

    // [search]
    int n_buckets = 4;
    std::int64_t sample_count = 0;
};

RunConfig parse_run_config(const ConfigFile& file);

// Canonical rendering of the resolved configuration; parsing it back yields
// an identical RunConfig, which is what makes runs reproducible from their
// own output directory.
std::string echo_config(const RunConfig& cfg);

// "1,2,5" | "light" | "heavy" | "all" (all = 1..20) -> ordinals.
std::set<int> parse_layer_set(const std::string& text);
std::string layer_set_to_string(const std::set<int>& layers);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace bconv
