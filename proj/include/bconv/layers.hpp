#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "bconv/conv_spec.hpp"
#include "bconv/tensor.hpp"

namespace bconv {

struct TrainConfig {
    std::int64_t epochs = 20;
    double lr0 = 0.1;
    std::int64_t t_max = 20;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::int64_t batch_size = 64;
    std::uint64_t seed = 1;
};

// lr0 * (1 + cos(pi * min(epoch, t_max) / t_max)) / 2, stepped per epoch.
double cosine_lr(std::int64_t epoch, const TrainConfig& cfg);

// v <- momentum*v + (g + weight_decay*p);  p <- p - lr*v
// Classical coupled form: the decay term is added to the gradient before the
// momentum update, not applied to the parameter directly.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              double momentum, double weight_decay);

// ---- convolution ----------------------------------------------------------

// Cross-correlation with zero padding (no kernel flip). The weight may carry
// fewer filters than spec.c_out; geometry comes from the spec. Empty bias
// skips the bias add.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      const ConvSpec& spec);

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight,
                          const ConvSpec& spec, bool need_grad_input = true);

// ---- pointwise and pooling -------------------------------------------------

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& saved_input);

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
struct MaxPoolResult {
    Tensor output;
    std::vector<std::uint32_t> argmax;  // flat input index per output element
};
MaxPoolResult maxpool2_forward(const Tensor& input);
Tensor maxpool2_backward(const Tensor& grad_out, const MaxPoolResult& saved,
                         const std::vector<std::size_t>& input_shape);

// B x C x H x W -> B x C mean over the spatial plane.
Tensor avgpool_global_forward(const Tensor& input);
Tensor avgpool_global_backward(const Tensor& grad_out, const std::vector<std::size_t>& input_shape);

// ---- dense -----------------------------------------------------------------

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
struct DenseGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};
DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight);

// ---- batch normalization ---------------------------------------------------

struct BatchNorm2d {
    Tensor gamma;         // affine scale, init 1
    Tensor beta;          // affine shift, init 0
    Tensor running_mean;  // tracked for evaluation
    Tensor running_var;
    double eps = 1e-5;
    double momentum = 0.1;  // running = (1-m)*running + m*batch

    static BatchNorm2d create(std::size_t channels);
};

struct BnCache {
    Tensor xhat;
    std::vector<double> inv_std;  // per channel
};

// Training mode normalizes with batch statistics (biased variance) and
// updates the running estimates; eval mode uses the running estimates.
Tensor batchnorm2d_forward(BatchNorm2d& bn, const Tensor& input, bool training, BnCache* cache);

struct BnGrads {
    Tensor grad_input;
    Tensor grad_gamma;
    Tensor grad_beta;
};
BnGrads batchnorm2d_backward(const BatchNorm2d& bn, const BnCache& cache, const Tensor& grad_out);

// ---- loss ------------------------------------------------------------------

struct CrossEntropyResult {
    double loss = 0.0;
    Tensor grad_logits;  // gradient of the mean loss
};
CrossEntropyResult cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace bconv
