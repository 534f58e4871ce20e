#include <doctest.h>

#include <string>
#include <vector>

#include "bconv/model.hpp"
#include "bconv/rng.hpp"
#include "support/oracles.hpp"

using namespace bconv;

namespace {

const std::vector<std::string> kResnetConvNames = {
    "conv1",
    "layer1.0.conv1",
    "layer1.0.conv2",
    "layer1.1.conv1",
    "layer1.1.conv2",
    "layer2.0.conv1",
    "layer2.0.conv2",
    "layer2.0.downsample.0",
    "layer2.1.conv1",
    "layer2.1.conv2",
    "layer3.0.conv1",
    "layer3.0.conv2",
    "layer3.0.downsample.0",
    "layer3.1.conv1",
    "layer3.1.conv2",
    "layer4.0.conv1",
    "layer4.0.conv2",
    "layer4.0.downsample.0",
    "layer4.1.conv1",
    "layer4.1.conv2",
};

}  // namespace

TEST_CASE("micro resnet18 exposes the 20 standard conv layers in order") {
    Model m = build_micro_resnet18(8, 10, 32, 1);
    const std::vector<std::string> names = m.conv_layer_names();
    REQUIRE(names.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK(names[i] == kResnetConvNames[i]);
    // 1-indexed ordinal 16 is the first conv of the fourth stage.
    CHECK(names[15] == "layer4.0.conv1");

    CHECK_THROWS_AS(build_micro_resnet18(7, 10, 32, 1), ConfigError);
    CHECK_THROWS_AS(build_micro_resnet18(0, 10, 32, 1), ConfigError);

    // Width scaling: divisor 8 turns 64/128/256/512 into 8/16/32/64.
    CHECK(m.nodes[m.conv_nodes[0]].conv.spec.c_out == 8);
    CHECK(m.nodes[m.conv_nodes[19]].conv.spec.c_out == 64);
}

TEST_CASE("tiny cnn has 4 conv layers and deterministic init") {
    Model a = build_tiny_cnn(10, 32, 5);
    CHECK(a.conv_nodes.size() == 4);
    Model b = build_tiny_cnn(10, 32, 5);
    for (int idx : a.conv_nodes) {
        CHECK(testsupport::max_abs_diff(a.nodes[idx].conv.basis_weight,
                                        b.nodes[idx].conv.basis_weight) == 0.0);
    }
    Model c = build_tiny_cnn(10, 32, 6);
    CHECK(testsupport::max_abs_diff(a.nodes[a.conv_nodes[0]].conv.basis_weight,
                                    c.nodes[c.conv_nodes[0]].conv.basis_weight) > 0.0);
}

TEST_CASE("forward shapes and deterministic outputs") {
    Model m = build_micro_resnet18(16, 10, 32, 2);
    Tensor x = Tensor::randn({2, 3, 32, 32}, 3);
    Tensor logits = model_forward(m, x, false, nullptr);
    CHECK(logits.extent(0) == 2);
    CHECK(logits.extent(1) == 10);

    Model m2 = build_micro_resnet18(16, 10, 32, 2);
    Tensor logits2 = model_forward(m2, x, false, nullptr);
    CHECK(testsupport::max_abs_diff(logits, logits2) == 0.0);
}

TEST_CASE("graph backward matches finite differences through residual blocks") {
    // Narrowest possible residual net keeps the finite-difference sweep cheap
    // while still covering conv, batchnorm, pooling, adds and the dense head.
    Model m = build_micro_resnet18(64, 3, 16, 7);
    Tensor x = Tensor::randn({2, 3, 16, 16}, 8);
    std::vector<int> labels = {0, 2};

    ForwardTrace trace;
    Tensor logits = model_forward(m, x, true, &trace);
    CrossEntropyResult ce = cross_entropy(logits, labels);
    std::vector<Tensor> grads = model_backward(m, x, trace, ce.grad_logits);

    auto slots = param_slots(m);
    REQUIRE(slots.size() == grads.size());

    auto loss = [&]() {
        Model probe = m;  // fresh copy so batchnorm running stats stay put
        return cross_entropy(model_forward(probe, x, true, nullptr), labels).loss;
    };
    // The loss is O(1), so central differences carry ~1e-11 subtraction
    // noise; the raised floor keeps near-zero gradients out of the verdict
    // while any wiring mistake still trips the check.
    double worst = 0.0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        worst = std::max(worst, testsupport::fd_max_rel_error(*slots[s].value, loss, grads[s],
                                                              1e-5, 1e-4));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("basis application replaces exactly the selected ordinals") {
    BasisApplication app;
    app.ordinals = {1, 16};
    app.mode = BasisMode::RestrictedCompose;
    app.r_or_alpha = 0.5;
    app.beta = 0.25;
    Model m = build_micro_resnet18(8, 10, 32, 4, &app);
    for (std::size_t i = 0; i < m.conv_nodes.size(); ++i) {
        const BasisConvLayer& conv = m.nodes[m.conv_nodes[i]].conv;
        if (i == 0 || i == 15) {
            CHECK(conv.mode == BasisMode::RestrictedCompose);
        } else {
            CHECK(conv.mode == BasisMode::Full);
        }
    }

    // Non-selected layers start from the same weights as the plain build.
    Model plain = build_micro_resnet18(8, 10, 32, 4);
    for (std::size_t i = 1; i < 15; ++i) {
        CHECK(testsupport::max_abs_diff(m.nodes[m.conv_nodes[i]].conv.basis_weight,
                                        plain.nodes[plain.conv_nodes[i]].conv.basis_weight) ==
              0.0);
    }
}

TEST_CASE("composing basis layers preserves the computed function") {
    BasisApplication app;
    app.ordinals = {2, 3};
    app.mode = BasisMode::OutputCompose;
    app.r_or_alpha = 0.5;
    Model m = build_micro_resnet18(16, 10, 32, 9, &app);
    Tensor x = Tensor::randn({2, 3, 32, 32}, 10);
    Tensor before = model_forward(m, x, false, nullptr);

    const std::vector<std::string> rebuilt = compose_basis_layers_in_place(m);
    CHECK(rebuilt == std::vector<std::string>{"layer1.0.conv1", "layer1.0.conv2"});
    Tensor after = model_forward(m, x, false, nullptr);
    CHECK(testsupport::max_abs_diff(before, after) <= 1e-10);
    CHECK(m.nodes[m.conv_nodes[1]].conv.mode == BasisMode::Full);
}

TEST_CASE("resolve_basis_count handles fractions and absolute counts") {
    const ConvSpec s = make_conv_spec(8, 16, 3, 1, 1, 8, 8);
    CHECK(resolve_basis_count(s, 0.5) == 8);
    CHECK(resolve_basis_count(s, 0.01) == 1);
    CHECK(resolve_basis_count(s, 4.0) == 4);
    CHECK_THROWS_AS(resolve_basis_count(s, 17.0), ConfigError);
}
