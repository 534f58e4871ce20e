#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bconv/data.hpp"
#include "bconv/model.hpp"
#include "bconv/sensitivity.hpp"

namespace bconv {

// Which architecture a runner builds.
struct ModelSpec {
    std::string arch = "micro_resnet18";  // or "tiny_cnn"
    std::int64_t width_divisor = 8;
    int num_classes = 10;
    std::int64_t image_size = 32;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed, const BasisApplication* basis);

// Initial training segment performed with basis convolutions before the
// architecture is restored. skip below 1 is a fraction of the epoch budget;
// 1 and above is an absolute epoch count.
struct SkipConfig {
    double skip = 0.0;
    std::set<int> basis_layers;
    BasisMode mode = BasisMode::RestrictedCompose;
    double r_or_alpha = 0.5;
    double beta = 0.25;

    std::int64_t skip_epochs(std::int64_t total_epochs) const;
};

// The epoch clock. Modeled time charges the closed-form per-image operation
// counts of every conv layer at a nominal 1e9 ops/s, which makes logs
// byte-reproducible; wall time measures the real clock.
enum class TimerKind { Modeled, Wall };
TimerKind timer_kind_from_string(const std::string& name);

struct MetricsRow {
    std::int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // nan on the initial validation row
    double valid_acc = 0.0;
    double epoch_seconds = 0.0;
    std::int64_t trainable_params = 0;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
    std::string to_csv() const;
    double final_valid_acc() const { return rows.empty() ? 0.0 : rows.back().valid_acc; }
    double total_seconds() const;
};

struct RunResult {
    Model model;
    MetricsLog log;
    bool diverged = false;
    std::int64_t transition_epoch = -1;  // -1 when no transition happened
    double transition_pre_acc = -1.0;    // validation just before composing
    double transition_post_acc = -1.0;   // and just after (same weights)
};

// One knob block for every runner below.
struct TrainOptions {
    ModelSpec model_spec;
    TrainConfig train;
    TimerKind timer = TimerKind::Modeled;
    AugmentConfig augment;

    const BasisApplication* basis = nullptr;  // basis layers from epoch 0
    std::int64_t transition_epoch = -1;       // compose after this many epochs; -1 = never
    std::int64_t start_epoch = 0;             // resume point (cosine schedule stays global)
    Model* initial_model = nullptr;           // resume from this model instead of building
};

RunResult run_training(const TrainOptions& options, const Dataset& train_data,
                       const Dataset& valid_data);

// Standard full run.
RunResult train_baseline(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                         const Dataset& valid_data, TimerKind timer = TimerKind::Modeled,
                         const AugmentConfig& augment = {});

// Basis phase, composition, full-width continuation; one continuous log whose
// learning-rate column follows the global cosine schedule throughout.
// skip = 0 degenerates to train_baseline exactly.
RunResult skip_train(const ModelSpec& spec, const TrainConfig& cfg, const SkipConfig& skip,
                     const Dataset& train_data, const Dataset& valid_data,
                     TimerKind timer = TimerKind::Modeled, const AugmentConfig& augment = {});

// One-layer-only profiling run: the basis mode is active in a single layer
// for the whole run. Divergence is recorded as drop 1.0 and flagged.
SensitivityRecord profile_layer(const ModelSpec& spec, int layer_ordinal, const TrainConfig& cfg,
                                const BasisApplication& basis_template,
                                const SensitivityRecord& baseline, const Dataset& train_data,
                                const Dataset& valid_data, TimerKind timer = TimerKind::Modeled,
                                const AugmentConfig& augment = {});

// Baseline profiling record (ordinal 0).
SensitivityRecord profile_baseline(const ModelSpec& spec, const TrainConfig& cfg,
                                   const Dataset& train_data, const Dataset& valid_data,
                                   TimerKind timer = TimerKind::Modeled,
                                   const AugmentConfig& augment = {});

enum class ExtractionKind { SVD, QR };
ExtractionKind extraction_from_string(const std::string& name);

struct SanityOutcome {
    double r_fraction = 1.0;  // of each layer's C_out
    std::int64_t extracted_params = 0;
    double pre_resume_acc = 0.0;
    double final_acc = 0.0;
    MetricsLog log;
};

struct SanityReport {
    double baseline_final_acc = 0.0;
    std::vector<SanityOutcome> outcomes;
    double random_final_acc = 0.0;      // fresh random init resumed at the skip point
    double copy_paste_final_acc = 0.0;  // unmodified checkpoint resumed at the skip point
};

// Train to completion, extract a rank-r basis per layer (SVD or QR), rebuild
// a full-width model from the composed weights, and resume from
// floor(resume_fraction * epochs) with the schedule at that epoch. The random
// and copy-paste controls resume from the same point.
SanityReport sanity_check(const ModelSpec& spec, const TrainConfig& cfg, ExtractionKind kind,
                          const std::vector<double>& r_fractions, const Dataset& train_data,
                          const Dataset& valid_data, double resume_fraction = 0.7,
                          TimerKind timer = TimerKind::Modeled, const AugmentConfig& augment = {},
                          const Model* pretrained = nullptr);

struct LightHeavyResult {
    RunResult light;
    RunResult heavy;
};
LightHeavyResult run_light_heavy(const ModelSpec& spec, const TrainConfig& cfg,
                                 const SkipConfig& skip_template, const Dataset& train_data,
                                 const Dataset& valid_data, TimerKind timer = TimerKind::Modeled,
                                 const AugmentConfig& augment = {});

// One skip_train per combination; the summary compares each run to baseline.
std::vector<RunResult> run_selected_combinations(const ModelSpec& spec, const TrainConfig& cfg,
                                                 const std::vector<std::set<int>>& combos,
                                                 const SkipConfig& skip_template,
                                                 const Dataset& train_data,
                                                 const Dataset& valid_data,
                                                 TimerKind timer = TimerKind::Modeled,
                                                 const AugmentConfig& augment = {});
std::string combinations_summary_csv(const std::vector<std::set<int>>& combos,
                                     const std::vector<RunResult>& runs,
                                     const RunResult& baseline);

// Versioned binary container: magic, version, model description, layer
// manifest (name, kind, mode, shapes), then raw little-endian 64-bit
// parameter data per layer. Round-trips bit-exactly.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Modeled per-epoch cost of the current model configuration (see TimerKind).
std::int64_t model_epoch_ops(const Model& model, std::int64_t n_train, std::int64_t n_valid);

}  // namespace bconv
