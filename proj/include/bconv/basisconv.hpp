#pragma once

#include <cstdint>
#include <vector>

#include "bconv/basis_mode.hpp"
#include "bconv/conv_spec.hpp"
#include "bconv/layers.hpp"
#include "bconv/tensor.hpp"

namespace bconv {

// One output channel of a restricted-compose layer: either a verbatim copy of
// a basis output or a weighted sum of two of them. Indices are frozen at
// construction; only pair weights train.
struct CoeffEntry {
    bool is_pair = false;
    std::int32_t i1 = 0;  // basis index (copy source, or first pair member)
    std::int32_t i2 = 0;  // second pair member (pairs only)
    std::int32_t pair_slot = -1;  // row into pair_weights (pairs only)
};

struct CoeffStructure {
    Tensor dense;                    // C_out x r for the dense modes, else empty
    std::vector<CoeffEntry> entries; // length C_out for RestrictedCompose, else empty
    Tensor pair_weights;             // n_pairs x 2, trainable
};

// Convolution layer whose C_out filters (or outputs) are derived from r basis
// filters according to `mode`. Bias is always full length C_out and applied
// after composition, which keeps all modes exactly interchangeable.
struct BasisConvLayer {
    ConvSpec spec;
    BasisMode mode = BasisMode::Full;
    Tensor basis_weight;  // r x C_in x K x K (r == C_out for Full)
    CoeffStructure coeffs;
    Tensor bias;          // C_out

    std::int64_t r = 0;   // basis filter count
    double alpha = 1.0;
    double beta = 0.0;

    std::int64_t copy_count() const;
    std::int64_t pair_count() const;
    // Number of trainable scalars (basis weight + coefficients + bias).
    std::int64_t trainable_param_count() const;
};

// Seeded construction. For the dense modes r_or_alpha is the integer basis
// count r; for RestrictedCompose it is the fraction alpha. Outputs beyond the
// first r copy basis channels round-robin; pair members are drawn without
// replacement per output and frozen.
BasisConvLayer make_basis_layer(const ConvSpec& spec, BasisMode mode, double r_or_alpha,
                                double beta, std::uint64_t seed);

struct BasisForward {
    Tensor output;
    Tensor basis_out;        // basis-filter conv output (output-composing modes)
    Tensor composed_weight;  // full-size weight (WeightCompose only)
};

BasisForward forward_weight_compose(const BasisConvLayer& layer, const Tensor& input);
BasisForward forward_output_compose(const BasisConvLayer& layer, const Tensor& input);
BasisForward forward_restricted(const BasisConvLayer& layer, const Tensor& input);
// Dispatch on layer.mode (Full runs the plain convolution).
BasisForward basis_forward(const BasisConvLayer& layer, const Tensor& input);

struct BasisGrads {
    Tensor grad_input;
    Tensor grad_basis_weight;
    Tensor grad_dense;         // dense modes
    Tensor grad_pair_weights;  // RestrictedCompose
    Tensor grad_bias;
};

BasisGrads basis_backward(const BasisConvLayer& layer, const Tensor& input,
                          const BasisForward& fwd, const Tensor& grad_out,
                          bool need_grad_input = true);

// W[j] = sum_i C[j,i] * B[i] (dense); copy -> B[i1]; pair -> w1*B[i1] + w2*B[i2].
Tensor compose_full_weight(const BasisConvLayer& layer);

// Truncated-SVD basis extraction from a trained full-size weight: reshape to
// C_out x (C_in*K*K), keep the top r singular triplets; basis rows carry
// sigma * V^T and the coefficients are U_r, so C*B is the best rank-r
// reconstruction in Frobenius norm.
struct ExtractResult {
    Tensor basis_weight;        // r x C_in x K x K
    Tensor coeffs;              // C_out x r
    std::vector<std::int64_t> selected;  // QR only: source filter indices
    double residual = 0.0;      // Frobenius norm of M - C*B
};
ExtractResult extract_basis_svd(const Tensor& full_weight, std::int64_t r);

// Column-pivoted QR variant: the basis rows are verbatim copies of r selected
// original filters; coefficients solve min ||M - C*B||_F by least squares.
// Rank deficiency below r is tolerated; the residual field reports the gap.
ExtractResult extract_basis_qr(const Tensor& full_weight, std::int64_t r);

}  // namespace bconv
