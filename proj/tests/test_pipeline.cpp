#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bconv/config.hpp"
#include "bconv/costmodel.hpp"
#include "bconv/pipeline.hpp"
#include "support/oracles.hpp"

using namespace bconv;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    ModelSpec spec;
    TrainConfig cfg;
    Dataset train;
    Dataset valid;

    Fixture() {
        spec.arch = "tiny_cnn";
        spec.num_classes = 4;
        spec.image_size = 16;
        cfg.epochs = 3;
        cfg.t_max = 3;
        cfg.batch_size = 16;
        cfg.seed = 11;
        auto [tr, va] = synth_dataset(20, 4, 16, 123);
        train = std::move(tr);
        valid = std::move(va);
    }
};

}  // namespace

TEST_CASE("baseline training is deterministic and logs the schedule") {
    Fixture f;
    RunResult a = train_baseline(f.spec, f.cfg, f.train, f.valid);
    RunResult b = train_baseline(f.spec, f.cfg, f.train, f.valid);
    CHECK(a.log.to_csv() == b.log.to_csv());

    REQUIRE(a.log.rows.size() == static_cast<std::size_t>(f.cfg.epochs) + 1);
    for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
        CHECK(a.log.rows[i].epoch == static_cast<std::int64_t>(i));
        CHECK(a.log.rows[i].lr == cosine_lr(a.log.rows[i].epoch, f.cfg));
    }
    CHECK(std::isnan(a.log.rows[0].train_loss));
    CHECK(a.log.rows[0].epoch_seconds == 0.0);

    // Modeled epoch seconds follow the per-epoch operation count.
    const double expected_seconds =
        static_cast<double>(model_epoch_ops(a.model, static_cast<std::int64_t>(f.train.size()),
                                            static_cast<std::int64_t>(f.valid.size()))) /
        1e9;
    CHECK(a.log.rows[1].epoch_seconds == doctest::Approx(expected_seconds).epsilon(1e-12));
}

TEST_CASE("zero training epochs leaves only the initial validation row") {
    Fixture f;
    f.cfg.epochs = 0;
    f.cfg.t_max = 1;
    RunResult run = train_baseline(f.spec, f.cfg, f.train, f.valid);
    REQUIRE(run.log.rows.size() == 1);
    CHECK(run.log.rows[0].epoch == 0);
}

TEST_CASE("skip = 0 reproduces the baseline log bit for bit") {
    Fixture f;
    SkipConfig skip;
    skip.skip = 0.0;
    skip.basis_layers = {1, 2};
    RunResult base = train_baseline(f.spec, f.cfg, f.train, f.valid);
    RunResult skipped = skip_train(f.spec, f.cfg, skip, f.train, f.valid);
    CHECK(base.log.to_csv() == skipped.log.to_csv());
    CHECK(skipped.transition_epoch == -1);
}

TEST_CASE("skip training: transition preserves accuracy, schedule, and params") {
    Fixture f;
    f.cfg.epochs = 4;
    f.cfg.t_max = 4;
    SkipConfig skip;
    skip.skip = 2;  // absolute epoch count
    skip.basis_layers = {1, 2, 3, 4};
    skip.mode = BasisMode::OutputCompose;
    skip.r_or_alpha = 0.5;

    RunResult run = skip_train(f.spec, f.cfg, skip, f.train, f.valid);
    CHECK(run.transition_epoch == 2);
    CHECK(run.transition_pre_acc == doctest::Approx(run.transition_post_acc).epsilon(1e-10));

    // The learning-rate column follows the global cosine schedule throughout.
    for (const MetricsRow& row : run.log.rows) {
        CHECK(row.lr == cosine_lr(row.epoch, f.cfg));
    }

    // During the skip phase the trainable-parameter column equals the layer
    // formula sums; afterwards it equals the plain model's count.
    Model plain = build_model(f.spec, f.cfg.seed, nullptr);
    BasisApplication app;
    app.ordinals = skip.basis_layers;
    app.mode = skip.mode;
    app.r_or_alpha = skip.r_or_alpha;
    app.beta = skip.beta;
    Model decomposed = build_model(f.spec, f.cfg.seed, &app);
    for (const MetricsRow& row : run.log.rows) {
        if (row.epoch < run.transition_epoch) {
            CHECK(row.trainable_params == decomposed.trainable_param_count());
        } else {
            CHECK(row.trainable_params == plain.trainable_param_count());
        }
    }

    // Cross-check the decomposed count against the closed-form parameter
    // formula (plus bias) per conv layer.
    std::int64_t expected = 0;
    for (int idx : decomposed.conv_nodes) {
        const BasisConvLayer& conv = decomposed.nodes[idx].conv;
        expected += params_decomposed(conv.spec, conv.r) + conv.spec.c_out;
    }
    for (const Node& n : decomposed.nodes) {
        if (n.kind == OpKind::BatchNorm) {
            expected += static_cast<std::int64_t>(n.bn.gamma.size() + n.bn.beta.size());
        }
        if (n.kind == OpKind::Dense) {
            expected += static_cast<std::int64_t>(n.dense_w.size() + n.dense_b.size());
        }
    }
    CHECK(decomposed.trainable_param_count() == expected);

    // Fractional skip resolves against the epoch budget.
    SkipConfig frac = skip;
    frac.skip = 0.5;
    CHECK(frac.skip_epochs(f.cfg.epochs) == 2);
    SkipConfig bad = skip;
    bad.skip = 4;
    CHECK_THROWS_AS(bad.skip_epochs(4), ConfigError);
}

TEST_CASE("restricted-mode transition is exact under the sparse embedding") {
    Fixture f;
    f.cfg.epochs = 2;
    f.cfg.t_max = 2;
    SkipConfig skip;
    skip.skip = 1;
    skip.basis_layers = {2, 3};
    skip.mode = BasisMode::RestrictedCompose;
    skip.r_or_alpha = 0.5;
    skip.beta = 0.25;
    RunResult run = skip_train(f.spec, f.cfg, skip, f.train, f.valid);
    CHECK(run.transition_epoch == 1);
    CHECK(run.transition_pre_acc == run.transition_post_acc);
}

TEST_CASE("profiling: baseline equivalence in full mode and determinism") {
    Fixture f;
    const SensitivityRecord baseline = profile_baseline(f.spec, f.cfg, f.train, f.valid);
    CHECK(baseline.layer_ordinal == 0);
    CHECK(baseline.acc_drop == 0.0);
    CHECK(baseline.train_time > 0.0);

    BasisApplication tmpl;
    tmpl.mode = BasisMode::Full;  // degenerate: the profiled model is the baseline
    SensitivityRecord full_probe =
        profile_layer(f.spec, 2, f.cfg, tmpl, baseline, f.train, f.valid);
    CHECK(full_probe.final_accuracy == baseline.final_accuracy);
    CHECK(full_probe.acc_drop == 0.0);
    CHECK(full_probe.model_size == baseline.model_size);

    tmpl.mode = BasisMode::RestrictedCompose;
    tmpl.r_or_alpha = 0.5;
    tmpl.beta = 0.25;
    SensitivityRecord once = profile_layer(f.spec, 3, f.cfg, tmpl, baseline, f.train, f.valid);
    SensitivityRecord twice = profile_layer(f.spec, 3, f.cfg, tmpl, baseline, f.train, f.valid);
    CHECK(once.final_accuracy == twice.final_accuracy);
    CHECK(once.train_time == twice.train_time);
    CHECK(once.model_size < baseline.model_size);
    CHECK(once.acc_drop == doctest::Approx(baseline.final_accuracy - once.final_accuracy));
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
    Fixture f;
    fs::create_directories(BCONV_TEST_TMP);
    const std::string path = std::string(BCONV_TEST_TMP) + "/roundtrip.ckpt";

    BasisApplication app;
    app.ordinals = {2};
    app.mode = BasisMode::RestrictedCompose;
    app.r_or_alpha = 0.5;
    app.beta = 0.25;
    Model model = build_model(f.spec, 42, &app);
    // Touch the running statistics so they are non-trivial.
    model_forward(model, f.train.images.reshaped(f.train.images.shape()), true, nullptr);

    save_checkpoint(model, path);
    Model loaded = load_checkpoint(path);

    CHECK(loaded.arch == model.arch);
    CHECK(loaded.build_seed == model.build_seed);
    const Node& orig = model.nodes[model.conv_nodes[1]];
    const Node& back = loaded.nodes[loaded.conv_nodes[1]];
    CHECK(back.conv.mode == BasisMode::RestrictedCompose);
    REQUIRE(back.conv.coeffs.entries.size() == orig.conv.coeffs.entries.size());
    for (std::size_t i = 0; i < orig.conv.coeffs.entries.size(); ++i) {
        CHECK(back.conv.coeffs.entries[i].i1 == orig.conv.coeffs.entries[i].i1);
        CHECK(back.conv.coeffs.entries[i].is_pair == orig.conv.coeffs.entries[i].is_pair);
    }
    CHECK(testsupport::max_abs_diff(back.conv.basis_weight, orig.conv.basis_weight) == 0.0);
    CHECK(testsupport::max_abs_diff(back.conv.coeffs.pair_weights,
                                    orig.conv.coeffs.pair_weights) == 0.0);

    // Saving the loaded model yields identical bytes.
    const std::string path2 = std::string(BCONV_TEST_TMP) + "/roundtrip2.ckpt";
    save_checkpoint(loaded, path2);
    CHECK(read_text_file(path) == read_text_file(path2));

    // The loaded model computes the same function.
    Tensor probe = Tensor::randn({2, 3, 16, 16}, 77);
    CHECK(testsupport::max_abs_diff(model_forward(model, probe, false, nullptr),
                                    model_forward(loaded, probe, false, nullptr)) == 0.0);

    // Truncation is detected, with no partial model escaping.
    const std::string bytes = read_text_file(path);
    write_text_file(path2, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path2), FormatError);
    write_text_file(path2, "XXXXXXXXYYYY");
    CHECK_THROWS_AS(load_checkpoint(path2), FormatError);
}

TEST_CASE("sanity protocol: exact reconstruction at full rank, control ordering") {
    Fixture f;
    f.cfg.epochs = 6;
    f.cfg.t_max = 6;
    SanityReport rep = sanity_check(f.spec, f.cfg, ExtractionKind::SVD, {0.5, 1.0}, f.train,
                                    f.valid, 0.5);
    REQUIRE(rep.outcomes.size() == 2);
    // Full-rank extraction resumes from exactly the trained function.
    CHECK(rep.outcomes[1].pre_resume_acc == doctest::Approx(rep.baseline_final_acc).epsilon(1e-10));
    // Fewer basis filters never enlarge the extracted parameter count.
    CHECK(rep.outcomes[0].extracted_params < rep.outcomes[1].extracted_params);
    // The paper's qualitative control ordering at desk scale.
    CHECK(rep.copy_paste_final_acc >= rep.random_final_acc);

    SanityReport qr = sanity_check(f.spec, f.cfg, ExtractionKind::QR, {1.0}, f.train, f.valid,
                                   0.5);
    CHECK(qr.outcomes[0].pre_resume_acc == doctest::Approx(qr.baseline_final_acc).epsilon(1e-10));
}

TEST_CASE("selected-combination runs degenerate to baseline on the empty set") {
    Fixture f;
    SkipConfig tmpl;
    tmpl.skip = 1;
    tmpl.mode = BasisMode::OutputCompose;
    tmpl.r_or_alpha = 0.5;
    RunResult baseline = train_baseline(f.spec, f.cfg, f.train, f.valid);
    std::vector<std::set<int>> combos = {{}, {1, 2}};
    std::vector<RunResult> runs =
        run_selected_combinations(f.spec, f.cfg, combos, tmpl, f.train, f.valid);
    REQUIRE(runs.size() == 2);
    CHECK(runs[0].log.to_csv() == baseline.log.to_csv());
    CHECK(runs[1].transition_epoch == 1);

    const std::string summary = combinations_summary_csv(combos, runs, baseline);
    CHECK(summary.find("\"{1,2}\"") != std::string::npos);
}

TEST_CASE("light and heavy runs differ only in the selected layers") {
    Fixture f;
    f.spec.arch = "micro_resnet18";
    f.spec.width_divisor = 32;
    f.spec.image_size = 32;
    auto [tr, va] = synth_dataset(8, 4, 32, 5);
    f.cfg.epochs = 1;
    f.cfg.t_max = 1;
    SkipConfig tmpl;
    tmpl.skip = 0.5;
    tmpl.mode = BasisMode::RestrictedCompose;
    tmpl.r_or_alpha = 0.5;
    tmpl.beta = 0.25;
    LightHeavyResult lh = run_light_heavy(f.spec, f.cfg, tmpl, tr, va);
    REQUIRE(lh.light.log.rows.size() == lh.heavy.log.rows.size());
    for (std::size_t i = 0; i < lh.light.log.rows.size(); ++i) {
        CHECK(lh.light.log.rows[i].lr == lh.heavy.log.rows[i].lr);
    }
}

TEST_CASE("tiny cnn reaches the pinned accuracy on the separable dataset") {
    ModelSpec spec;
    spec.arch = "tiny_cnn";
    spec.num_classes = 4;
    spec.image_size = 16;
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.t_max = 15;
    cfg.batch_size = 16;
    cfg.seed = 3;
    auto [train, valid] = synth_dataset(30, 4, 16, 21);
    RunResult run = train_baseline(spec, cfg, train, valid);
    CHECK(!run.diverged);
    CHECK(run.log.final_valid_acc() >= 0.95);
}
