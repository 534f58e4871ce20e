#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bconv/basisconv.hpp"
#include "bconv/layers.hpp"
#include "bconv/tensor.hpp"

namespace bconv {

enum class OpKind { Input, Conv, BatchNorm, ReLU, MaxPool2, GlobalAvgPool, Dense, Add };

// One vertex of the layer graph. Inputs refer to earlier nodes, so the node
// list is always in topological order.
struct Node {
    std::string name;
    OpKind kind = OpKind::Input;
    std::vector<int> inputs;

    BasisConvLayer conv;  // Conv
    BatchNorm2d bn;       // BatchNorm
    Tensor dense_w;       // Dense
    Tensor dense_b;
};

// Which convolution layers (1-indexed ordinals) get a basis mode, and with
// what parameters. r_or_alpha below 1 is a fraction of the layer's C_out;
// 1 and above is an absolute basis count (fractions are how a single setting
// spans layers of different widths).
struct BasisApplication {
    std::set<int> ordinals;
    BasisMode mode = BasisMode::RestrictedCompose;
    double r_or_alpha = 0.5;
    double beta = 0.25;
};

struct Model {
    std::vector<Node> nodes;
    std::vector<int> conv_nodes;  // node index per conv ordinal - 1
    int output_node = -1;
    std::string arch;
    std::int64_t width_divisor = 1;
    int num_classes = 10;
    std::int64_t image_size = 32;
    std::uint64_t build_seed = 0;

    std::vector<std::string> conv_layer_names() const;
    std::int64_t trainable_param_count() const;
};

// Named reference to one trainable tensor; keys are "<node>/<slot>".
struct ParamSlot {
    std::string key;
    Tensor* value = nullptr;
};
std::vector<ParamSlot> param_slots(Model& model);

struct ForwardTrace {
    std::vector<Tensor> acts;
    std::vector<BasisForward> conv_fwd;
    std::vector<BnCache> bn_caches;
    std::vector<MaxPoolResult> pool_caches;
};

// Runs the graph; training mode drives batchnorm statistics. The trace is
// required for a subsequent backward pass and may be null for inference.
Tensor model_forward(Model& model, const Tensor& input, bool training, ForwardTrace* trace);

// Gradients aligned with param_slots(model) order.
std::vector<Tensor> model_backward(Model& model, const Tensor& input, const ForwardTrace& trace,
                                   const Tensor& grad_logits);

// Resolve a dense-mode basis count for one layer (fraction or absolute).
std::int64_t resolve_basis_count(const ConvSpec& spec, double r_or_alpha);

// 4-conv test network: conv/bn/relu/pool stacks plus a dense head.
Model build_tiny_cnn(int num_classes, std::int64_t image_size, std::uint64_t seed,
                     const BasisApplication* basis = nullptr);

// Reduced-width 18-layer residual network. Exposes exactly 20 conv layers
// named conv1, layer1.0.conv1, ..., layer4.1.conv2 in the standard order;
// channel widths are 64/128/256/512 divided by width_divisor.
Model build_micro_resnet18(std::int64_t width_divisor, int num_classes, std::int64_t image_size,
                           std::uint64_t seed, const BasisApplication* basis = nullptr);

// Swap every basis-mode conv for a plain conv carrying the composed full
// weight; returns the node names of the rebuilt layers.
std::vector<std::string> compose_basis_layers_in_place(Model& model);

double evaluate_accuracy(Model& model, const Tensor& images, const std::vector<int>& labels,
                         std::int64_t batch_size);

}  // namespace bconv
