#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bconv/basis_mode.hpp"
#include "bconv/conv_spec.hpp"

namespace bconv {

// Closed-form operation and parameter counts for one layer configuration.
//
// Two distinct counting models are used, mirroring how the forward and
// backward costs are derived, and they are never mixed:
//   * forward counts are multiply-accumulate operations,
//   * backward counts are dependency edges (input scalar, output scalar)
//     walked through the computation structure.
//
// Count fields:
//   n0_f / n0_b  - plain convolution forward MACs / backward dependencies
//   na_f         - weight-compose forward (compose W = C*B, then convolve)
//   nb_f / nb_b  - output-compose forward / backward (dense C applied to the
//                  basis outputs)
//   nc_f / nc_b  - restricted compose (copies plus two-term sums)
struct CostReport {
    ConvSpec spec;
    BasisMode mode = BasisMode::Full;
    std::int64_t r = 0;       // basis filter count used for the decomposed fields
    double alpha = 1.0;
    double beta = 0.0;

    std::int64_t params_full = 0;
    std::int64_t params_decomposed = 0;

    std::int64_t n0_f = 0;
    std::int64_t na_f = 0;
    std::int64_t nb_f = 0;
    std::int64_t nc_f = 0;
    std::int64_t n0_b = 0;
    std::int64_t nb_b = 0;
    std::int64_t nc_b = 0;

    std::int64_t delta_b = 0;  // (nb_f + nb_b) - (n0_f + n0_b)
    std::int64_t delta_c = 0;  // (nc_f + nc_b) - (n0_f + n0_b)

    double param_threshold = 0.0;
    double forward_threshold = 0.0;
    double total_threshold_b = 0.0;

    bool param_reduced = false;
    bool forward_accelerated = false;
    bool total_accelerated_b = false;
    bool mode_c_accelerated = false;
    bool mode_c_simplified = false;
};

// Verdict of the restricted-compose acceleration condition: the exact
// inequality and its alpha+beta<1 simplification.
struct ModeCCondition {
    double exact_lhs = 0.0;
    double exact_rhs = 0.0;
    bool accelerated = false;
    bool simplified = false;
};

std::int64_t params_full(const ConvSpec& spec);
std::int64_t params_decomposed(const ConvSpec& spec, std::int64_t r);

// Largest (fractional) basis count below which the decomposition carries
// fewer parameters than the plain layer: C_out * [1 - 1/(C_in/C_out*K^2 + 1)].
double param_reduction_threshold(const ConvSpec& spec);
bool param_reduced(const ConvSpec& spec, std::int64_t r);

// Forward MAC count for the given mode. r is the basis filter count for the
// dense modes; alpha/beta drive RestrictedCompose (rounded once, see
// basis_mode.hpp). Unused arguments are ignored.
std::int64_t count_forward(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                           double alpha, double beta);

// Backward dependency count for the given mode. WeightCompose convolves with
// a composed full-size weight, so its dependency structure is the baseline's.
std::int64_t count_backward(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                            double alpha, double beta);

// Basis count below which the output-compose forward pass beats the plain
// one: C_out * (1 + C_out/(C_in*K^2))^-1.
double forward_accel_threshold(const ConvSpec& spec);

// Basis count below which output composition accelerates forward+backward
// combined: 2 * (1 + 1/C_out + 1/(K^2*C_in))^-1, the exact form behind the
// "at most two basis convolutions" rule of thumb.
double total_accel_threshold_b(const ConvSpec& spec);
std::int64_t delta_b(const ConvSpec& spec, std::int64_t r);
std::int64_t delta_c(const ConvSpec& spec, double alpha, double beta);

// Exact restricted-compose condition beta*(1 + 1/(K^2*C_in)) + alpha <
// 1 - 1/(K^2*C_in), plus the simplified alpha + beta < 1 verdict.
ModeCCondition mode_c_condition(const ConvSpec& spec, double alpha, double beta);

CostReport report(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                  double alpha, double beta);

// Flat CSV serialization of CostReport (one row per report).
std::string cost_csv_header();
std::string cost_csv_row(const std::string& layer_name, const CostReport& rep);

}  // namespace bconv
