#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace bconv {

// How a convolution layer derives its C_out filters (or outputs) from a
// smaller set of basis filters.
//
//   Full             - ordinary convolution, no decomposition.
//   WeightCompose    - compose the full weight W = C*B, then convolve.
//   OutputCompose    - convolve with the basis filters, then mix the output
//                      channels with the dense coefficient matrix C.
//   RestrictedCompose- output composition where most channels are copies of
//                      basis outputs and the rest are two-term weighted sums.
enum class BasisMode { Full, WeightCompose, OutputCompose, RestrictedCompose };

const char* to_string(BasisMode mode);
BasisMode basis_mode_from_string(const std::string& name);

inline std::int64_t round_half_up(double x) {
    return static_cast<std::int64_t>(std::floor(x + 0.5));
}

// Channel-count rounding, applied once here and fed identically to the layer
// constructor and the cost formulas so the model and the layer always agree.
inline std::int64_t basis_count_from_alpha(double alpha, std::int64_t c_out) {
    std::int64_t r = round_half_up(alpha * static_cast<double>(c_out));
    return r < 1 ? 1 : r;
}

inline std::int64_t pair_count_from_beta(double beta, std::int64_t c_out) {
    return round_half_up(beta * static_cast<double>(c_out));
}

inline std::int64_t copy_count_from_beta(double beta, std::int64_t c_out) {
    return c_out - pair_count_from_beta(beta, c_out);
}

}  // namespace bconv
