#pragma once

#include <cstdint>

#include "bconv/basis_mode.hpp"
#include "bconv/conv_spec.hpp"

namespace bconv {

// Independent validators for the closed-form counts in costmodel.hpp. Both
// walk the computation structure with literal nested loops and count one unit
// per innermost step; neither evaluates any closed-form expression.
//
// The channel structure is passed as already-rounded integers (basis filter
// count, copy outputs, pair outputs) so a caller can feed the exact structure
// of a constructed layer.

// Multiply-accumulate count of one forward pass, per image.
std::int64_t mac_count_forward(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                               std::int64_t copies, std::int64_t pairs);

// Dependency-edge count between input scalars and output scalars, walked
// through any intermediate basis outputs (paths, counted with multiplicity).
std::int64_t dependency_count_backward(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                                       std::int64_t copies, std::int64_t pairs);

// Convenience overloads that derive the rounded channel structure from the
// same helpers the layer constructor uses.
std::int64_t mac_count_forward(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                               double alpha, double beta);
std::int64_t dependency_count_backward(const ConvSpec& spec, BasisMode mode, std::int64_t r,
                                       double alpha, double beta);

}  // namespace bconv
