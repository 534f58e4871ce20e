#include "bconv/model.hpp"

#include <algorithm>
#include <cmath>

#include "bconv/rng.hpp"

namespace bconv {

std::vector<std::string> Model::conv_layer_names() const {
    std::vector<std::string> names;
    names.reserve(conv_nodes.size());
    for (int idx : conv_nodes) names.push_back(nodes[idx].name);
    return names;
}

std::int64_t Model::trainable_param_count() const {
    std::int64_t total = 0;
    for (const Node& n : nodes) {
        switch (n.kind) {
            case OpKind::Conv: total += n.conv.trainable_param_count(); break;
            case OpKind::BatchNorm:
                total += static_cast<std::int64_t>(n.bn.gamma.size() + n.bn.beta.size());
                break;
            case OpKind::Dense:
                total += static_cast<std::int64_t>(n.dense_w.size() + n.dense_b.size());
                break;
            default: break;
        }
    }
    return total;
}

std::vector<ParamSlot> param_slots(Model& model) {
    std::vector<ParamSlot> slots;
    for (Node& n : model.nodes) {
        switch (n.kind) {
            case OpKind::Conv:
                slots.push_back({n.name + "/basis_weight", &n.conv.basis_weight});
                if (n.conv.coeffs.dense.size()) {
                    slots.push_back({n.name + "/coeffs", &n.conv.coeffs.dense});
                }
                if (n.conv.coeffs.pair_weights.size()) {
                    slots.push_back({n.name + "/pair_weights", &n.conv.coeffs.pair_weights});
                }
                slots.push_back({n.name + "/bias", &n.conv.bias});
                break;
            case OpKind::BatchNorm:
                slots.push_back({n.name + "/gamma", &n.bn.gamma});
                slots.push_back({n.name + "/beta", &n.bn.beta});
                break;
            case OpKind::Dense:
                slots.push_back({n.name + "/weight", &n.dense_w});
                slots.push_back({n.name + "/bias", &n.dense_b});
                break;
            default: break;
        }
    }
    return slots;
}

Tensor model_forward(Model& model, const Tensor& input, bool training, ForwardTrace* trace) {
    const std::size_t n = model.nodes.size();
    ForwardTrace local;
    ForwardTrace& tr = trace ? *trace : local;
    tr.acts.assign(n, Tensor());
    tr.conv_fwd.assign(n, BasisForward());
    tr.bn_caches.assign(n, BnCache());
    tr.pool_caches.assign(n, MaxPoolResult());

    for (std::size_t i = 0; i < n; ++i) {
        Node& node = model.nodes[i];
        switch (node.kind) {
            case OpKind::Input:
                tr.acts[i] = input;
                break;
            case OpKind::Conv: {
                BasisForward fwd = basis_forward(node.conv, tr.acts[node.inputs[0]]);
                tr.acts[i] = fwd.output;
                if (trace) tr.conv_fwd[i] = std::move(fwd);
                break;
            }
            case OpKind::BatchNorm:
                tr.acts[i] = batchnorm2d_forward(node.bn, tr.acts[node.inputs[0]], training,
                                                 trace ? &tr.bn_caches[i] : nullptr);
                break;
            case OpKind::ReLU:
                tr.acts[i] = relu_forward(tr.acts[node.inputs[0]]);
                break;
            case OpKind::MaxPool2: {
                MaxPoolResult res = maxpool2_forward(tr.acts[node.inputs[0]]);
                tr.acts[i] = res.output;
                if (trace) tr.pool_caches[i] = std::move(res);
                break;
            }
            case OpKind::GlobalAvgPool:
                tr.acts[i] = avgpool_global_forward(tr.acts[node.inputs[0]]);
                break;
            case OpKind::Dense:
                tr.acts[i] = dense_forward(tr.acts[node.inputs[0]], node.dense_w, node.dense_b);
                break;
            case OpKind::Add: {
                tr.acts[i] = tr.acts[node.inputs[0]];
                axpy(1.0, tr.acts[node.inputs[1]], tr.acts[i]);
                break;
            }
        }
    }
    return tr.acts[model.output_node];
}

std::vector<Tensor> model_backward(Model& model, const Tensor& /*input*/,
                                   const ForwardTrace& trace, const Tensor& grad_logits) {
    const std::size_t n = model.nodes.size();
    std::vector<Tensor> act_grads(n);
    act_grads[model.output_node] = grad_logits;

    auto add_grad = [&](int idx, Tensor&& g) {
        if (act_grads[idx].size() == 0) {
            act_grads[idx] = std::move(g);
        } else {
            axpy(1.0, g, act_grads[idx]);
        }
    };

    // Gradients are collected per node, then flattened in param_slots order.
    std::vector<BasisGrads> conv_grads(n);
    std::vector<BnGrads> bn_grads(n);
    std::vector<DenseGrads> dense_grads(n);

    for (std::size_t ri = n; ri-- > 0;) {
        Node& node = model.nodes[ri];
        if (node.kind == OpKind::Input) continue;
        if (act_grads[ri].size() == 0) continue;  // no gradient flows here
        const Tensor& gout = act_grads[ri];
        switch (node.kind) {
            case OpKind::Conv: {
                const int src = node.inputs[0];
                const bool need_input = model.nodes[src].kind != OpKind::Input;
                conv_grads[ri] = basis_backward(node.conv, trace.acts[src], trace.conv_fwd[ri],
                                                gout, need_input);
                if (need_input) add_grad(src, std::move(conv_grads[ri].grad_input));
                break;
            }
            case OpKind::BatchNorm: {
                bn_grads[ri] = batchnorm2d_backward(node.bn, trace.bn_caches[ri], gout);
                add_grad(node.inputs[0], std::move(bn_grads[ri].grad_input));
                break;
            }
            case OpKind::ReLU:
                add_grad(node.inputs[0], relu_backward(gout, trace.acts[node.inputs[0]]));
                break;
            case OpKind::MaxPool2:
                add_grad(node.inputs[0],
                         maxpool2_backward(gout, trace.pool_caches[ri],
                                           trace.acts[node.inputs[0]].shape()));
                break;
            case OpKind::GlobalAvgPool:
                add_grad(node.inputs[0],
                         avgpool_global_backward(gout, trace.acts[node.inputs[0]].shape()));
                break;
            case OpKind::Dense: {
                dense_grads[ri] = dense_backward(gout, trace.acts[node.inputs[0]], node.dense_w);
                add_grad(node.inputs[0], std::move(dense_grads[ri].grad_input));
                break;
            }
            case OpKind::Add: {
                Tensor g2 = gout;
                add_grad(node.inputs[0], Tensor(gout));
                add_grad(node.inputs[1], std::move(g2));
                break;
            }
            case OpKind::Input:
                break;
        }
    }

    std::vector<Tensor> flat;
    for (std::size_t i = 0; i < n; ++i) {
        Node& node = model.nodes[i];
        switch (node.kind) {
            case OpKind::Conv: {
                BasisGrads& g = conv_grads[i];
                auto ensure = [&](Tensor& t, const Tensor& like) {
                    if (t.size() == 0) t = Tensor::zeros(like.shape());
                };
                ensure(g.grad_basis_weight, node.conv.basis_weight);
                flat.push_back(std::move(g.grad_basis_weight));
                if (node.conv.coeffs.dense.size()) {
                    ensure(g.grad_dense, node.conv.coeffs.dense);
                    flat.push_back(std::move(g.grad_dense));
                }
                if (node.conv.coeffs.pair_weights.size()) {
                    ensure(g.grad_pair_weights, node.conv.coeffs.pair_weights);
                    flat.push_back(std::move(g.grad_pair_weights));
                }
                ensure(g.grad_bias, node.conv.bias);
                flat.push_back(std::move(g.grad_bias));
                break;
            }
            case OpKind::BatchNorm: {
                BnGrads& g = bn_grads[i];
                if (g.grad_gamma.size() == 0) g.grad_gamma = Tensor::zeros(node.bn.gamma.shape());
                if (g.grad_beta.size() == 0) g.grad_beta = Tensor::zeros(node.bn.beta.shape());
                flat.push_back(std::move(g.grad_gamma));
                flat.push_back(std::move(g.grad_beta));
                break;
            }
            case OpKind::Dense: {
                DenseGrads& g = dense_grads[i];
                if (g.grad_weight.size() == 0) g.grad_weight = Tensor::zeros(node.dense_w.shape());
                if (g.grad_bias.size() == 0) g.grad_bias = Tensor::zeros(node.dense_b.shape());
                flat.push_back(std::move(g.grad_weight));
                flat.push_back(std::move(g.grad_bias));
                break;
            }
            default: break;
        }
    }
    return flat;
}

std::int64_t resolve_basis_count(const ConvSpec& spec, double r_or_alpha) {
    if (r_or_alpha < 1.0) {
        std::int64_t r = round_half_up(r_or_alpha * static_cast<double>(spec.c_out));
        return r < 1 ? 1 : r;
    }
    const std::int64_t r = round_half_up(r_or_alpha);
    if (r > spec.c_out) {
        throw ConfigError("basis count " + std::to_string(r) + " exceeds c_out " +
                          std::to_string(spec.c_out));
    }
    return r;
}

// ---- builders ---------------------------------------------------------------

namespace {

struct GraphBuilder {
    Model model;
    std::uint64_t seed;
    const BasisApplication* basis;
    std::int64_t h = 0, w = 0;  // current spatial extents

    int add(Node node) {
        model.nodes.push_back(std::move(node));
        return static_cast<int>(model.nodes.size() - 1);
    }

    int input(std::int64_t image_size) {
        h = w = image_size;
        Node n;
        n.name = "input";
        n.kind = OpKind::Input;
        return add(std::move(n));
    }

    // Registers the conv under the next ordinal and applies the configured
    // basis mode when the ordinal is selected.
    int conv(const std::string& name, int src, std::int64_t c_in, std::int64_t c_out,
             std::int64_t k, std::int64_t stride, std::int64_t padding) {
        const ConvSpec spec = make_conv_spec(c_in, c_out, k, stride, padding, h, w);
        const int ordinal = static_cast<int>(model.conv_nodes.size()) + 1;
        const std::uint64_t layer_seed = derive_seed(seed, "init/" + name);
        Node n;
        n.name = name;
        n.kind = OpKind::Conv;
        n.inputs = {src};
        if (basis && basis->ordinals.count(ordinal)) {
            double arg = basis->r_or_alpha;
            if (basis->mode == BasisMode::WeightCompose || basis->mode == BasisMode::OutputCompose) {
                arg = static_cast<double>(resolve_basis_count(spec, arg));
            } else if (basis->mode == BasisMode::RestrictedCompose && arg >= 1.0) {
                arg = std::min(1.0, arg / static_cast<double>(c_out));
            }
            n.conv = make_basis_layer(spec, basis->mode, arg, basis->beta, layer_seed);
        } else {
            n.conv = make_basis_layer(spec, BasisMode::Full, 0.0, 0.0, layer_seed);
        }
        h = spec.h_out;
        w = spec.w_out;
        const int idx = add(std::move(n));
        model.conv_nodes.push_back(idx);
        return idx;
    }

    int batchnorm(const std::string& name, int src, std::int64_t channels) {
        Node n;
        n.name = name;
        n.kind = OpKind::BatchNorm;
        n.inputs = {src};
        n.bn = BatchNorm2d::create(static_cast<std::size_t>(channels));
        return add(std::move(n));
    }

    int relu(const std::string& name, int src) {
        Node n;
        n.name = name;
        n.kind = OpKind::ReLU;
        n.inputs = {src};
        return add(std::move(n));
    }

    int maxpool(const std::string& name, int src) {
        Node n;
        n.name = name;
        n.kind = OpKind::MaxPool2;
        n.inputs = {src};
        h /= 2;
        w /= 2;
        return add(std::move(n));
    }

    int gap(const std::string& name, int src) {
        Node n;
        n.name = name;
        n.kind = OpKind::GlobalAvgPool;
        n.inputs = {src};
        return add(std::move(n));
    }

    int dense(const std::string& name, int src, std::int64_t in_f, std::int64_t out_f) {
        Node n;
        n.name = name;
        n.kind = OpKind::Dense;
        n.inputs = {src};
        Rng rng(derive_seed(seed, "init/" + name));
        n.dense_w = Tensor({static_cast<std::size_t>(out_f), static_cast<std::size_t>(in_f)});
        const double std = std::sqrt(2.0 / static_cast<double>(in_f));
        for (std::size_t i = 0; i < n.dense_w.size(); ++i) n.dense_w[i] = rng.normal() * std;
        n.dense_b = Tensor::zeros({static_cast<std::size_t>(out_f)});
        return add(std::move(n));
    }

    int add_node(const std::string& name, int a, int b) {
        Node n;
        n.name = name;
        n.kind = OpKind::Add;
        n.inputs = {a, b};
        return add(std::move(n));
    }
};

}  // namespace

Model build_tiny_cnn(int num_classes, std::int64_t image_size, std::uint64_t seed,
                     const BasisApplication* basis) {
    GraphBuilder g;
    g.seed = seed;
    g.basis = basis;
    g.model.arch = "tiny_cnn";
    g.model.num_classes = num_classes;
    g.model.image_size = image_size;
    g.model.build_seed = seed;

    int x = g.input(image_size);
    x = g.conv("conv1", x, 3, 8, 3, 1, 1);
    x = g.batchnorm("bn1", x, 8);
    x = g.relu("relu1", x);
    x = g.maxpool("pool1", x);
    x = g.conv("conv2", x, 8, 16, 3, 1, 1);
    x = g.batchnorm("bn2", x, 16);
    x = g.relu("relu2", x);
    x = g.maxpool("pool2", x);
    x = g.conv("conv3", x, 16, 16, 3, 1, 1);
    x = g.batchnorm("bn3", x, 16);
    x = g.relu("relu3", x);
    x = g.maxpool("pool3", x);
    x = g.conv("conv4", x, 16, 32, 3, 1, 1);
    x = g.batchnorm("bn4", x, 32);
    x = g.relu("relu4", x);
    x = g.gap("gap", x);
    x = g.dense("fc", x, 32, num_classes);
    g.model.output_node = x;
    return g.model;
}

Model build_micro_resnet18(std::int64_t width_divisor, int num_classes, std::int64_t image_size,
                           std::uint64_t seed, const BasisApplication* basis) {
    if (width_divisor < 1 || 64 % width_divisor != 0) {
        throw ConfigError("width_divisor must divide 64, got " + std::to_string(width_divisor));
    }
    const std::int64_t w1 = 64 / width_divisor;
    const std::int64_t w2 = 128 / width_divisor;
    const std::int64_t w3 = 256 / width_divisor;
    const std::int64_t w4 = 512 / width_divisor;

    GraphBuilder g;
    g.seed = seed;
    g.basis = basis;
    g.model.arch = "micro_resnet18";
    g.model.width_divisor = width_divisor;
    g.model.num_classes = num_classes;
    g.model.image_size = image_size;
    g.model.build_seed = seed;

    int x = g.input(image_size);
    x = g.conv("conv1", x, 3, w1, 7, 2, 3);
    x = g.batchnorm("bn1", x, w1);
    x = g.relu("relu1", x);
    x = g.maxpool("maxpool", x);

    auto basic_block = [&](const std::string& prefix, int src, std::int64_t c_in,
                           std::int64_t c_out, std::int64_t stride) {
        int y = g.conv(prefix + ".conv1", src, c_in, c_out, 3, stride, 1);
        y = g.batchnorm(prefix + ".bn1", y, c_out);
        y = g.relu(prefix + ".relu1", y);
        y = g.conv(prefix + ".conv2", y, c_out, c_out, 3, 1, 1);
        y = g.batchnorm(prefix + ".bn2", y, c_out);
        int skip = src;
        if (stride != 1 || c_in != c_out) {
            // The 1x1 projection sees the block input, so rewind the spatial
            // tracker before adding it.
            g.h *= stride;
            g.w *= stride;
            skip = g.conv(prefix + ".downsample.0", src, c_in, c_out, 1, stride, 0);
            skip = g.batchnorm(prefix + ".downsample.1", skip, c_out);
        }
        int sum = g.add_node(prefix + ".add", y, skip);
        return g.relu(prefix + ".relu2", sum);
    };

    x = basic_block("layer1.0", x, w1, w1, 1);
    x = basic_block("layer1.1", x, w1, w1, 1);
    x = basic_block("layer2.0", x, w1, w2, 2);
    x = basic_block("layer2.1", x, w2, w2, 1);
    x = basic_block("layer3.0", x, w2, w3, 2);
    x = basic_block("layer3.1", x, w3, w3, 1);
    x = basic_block("layer4.0", x, w3, w4, 2);
    x = basic_block("layer4.1", x, w4, w4, 1);

    x = g.gap("gap", x);
    x = g.dense("fc", x, w4, num_classes);
    g.model.output_node = x;
    return g.model;
}

std::vector<std::string> compose_basis_layers_in_place(Model& model) {
    std::vector<std::string> rebuilt;
    for (int idx : model.conv_nodes) {
        Node& node = model.nodes[idx];
        if (node.conv.mode == BasisMode::Full) continue;
        BasisConvLayer full;
        full.spec = node.conv.spec;
        full.mode = BasisMode::Full;
        full.basis_weight = compose_full_weight(node.conv);
        full.bias = node.conv.bias;
        full.r = node.conv.spec.c_out;
        full.alpha = 1.0;
        full.beta = 0.0;
        node.conv = std::move(full);
        rebuilt.push_back(node.name);
    }
    return rebuilt;
}

double evaluate_accuracy(Model& model, const Tensor& images, const std::vector<int>& labels,
                         std::int64_t batch_size) {
    const std::size_t n = images.extent(0);
    const std::size_t c = images.extent(1), hh = images.extent(2), ww = images.extent(3);
    const std::size_t chw = c * hh * ww;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch_size), n - start);
        Tensor batch({count, c, hh, ww});
        std::copy(images.data() + start * chw, images.data() + (start + count) * chw,
                  batch.data());
        Tensor logits = model_forward(model, batch, false, nullptr);
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = logits.data() + i * model.num_classes;
            int best = 0;
            for (int j = 1; j < model.num_classes; ++j) {
                if (row[j] > row[best]) best = j;
            }
            if (best == labels[start + i]) ++correct;
        }
    }
    return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace bconv
