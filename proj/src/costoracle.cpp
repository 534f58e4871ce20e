#include "bconv/costoracle.hpp"

namespace bconv {

namespace {

// MACs of a direct convolution producing `filters` output channels. The naive
// implementation iterates every kernel position over the zero-padded input,
// so padded positions are counted like real ones.
std::int64_t conv_macs(const ConvSpec& s, std::int64_t filters) {
    std::int64_t count = 0;
    for (std::int64_t f = 0; f < filters; ++f) {
        for (std::int64_t y = 0; y < s.h_out; ++y) {
            for (std::int64_t x = 0; x < s.w_out; ++x) {
                for (std::int64_t c = 0; c < s.c_in; ++c) {
                    for (std::int64_t ky = 0; ky < s.k; ++ky) {
                        for (std::int64_t kx = 0; kx < s.k; ++kx) {
                            ++count;
                        }
                    }
                }
            }
        }
    }
    return count;
}

// Dependency edges from one conv-output scalar down to the input plane.
std::int64_t receptive_field_edges(const ConvSpec& s) {
    std::int64_t count = 0;
    for (std::int64_t c = 0; c < s.c_in; ++c) {
        for (std::int64_t ky = 0; ky < s.k; ++ky) {
            for (std::int64_t kx = 0; kx < s.k; ++kx) {
                ++count;
            }
        }
    }
    return count;
}

}  // namespace

std::int64_t mac_count_forward(const ConvSpec& s, BasisMode mode, std::int64_t r,
                               std::int64_t copies, std::int64_t pairs) {
    std::int64_t count = 0;
    switch (mode) {
        case BasisMode::Full:
            count += conv_macs(s, s.c_out);
            break;
        case BasisMode::WeightCompose:
            // Stage 1: restore each full filter as a combination of r basis
            // filters; one MAC per coefficient per weight element.
            for (std::int64_t j = 0; j < s.c_out; ++j) {
                for (std::int64_t i = 0; i < r; ++i) {
                    for (std::int64_t c = 0; c < s.c_in; ++c) {
                        for (std::int64_t ky = 0; ky < s.k; ++ky) {
                            for (std::int64_t kx = 0; kx < s.k; ++kx) {
                                ++count;
                            }
                        }
                    }
                }
            }
            // Stage 2: the ordinary full-size convolution.
            count += conv_macs(s, s.c_out);
            break;
        case BasisMode::OutputCompose:
            count += conv_macs(s, r);
            // Channel mix: every output channel accumulates all r basis
            // outputs at each location.
            for (std::int64_t j = 0; j < s.c_out; ++j) {
                for (std::int64_t i = 0; i < r; ++i) {
                    for (std::int64_t y = 0; y < s.h_out; ++y) {
                        for (std::int64_t x = 0; x < s.w_out; ++x) {
                            ++count;
                        }
                    }
                }
            }
            break;
        case BasisMode::RestrictedCompose:
            count += conv_macs(s, r);
            // Copies move one value per location; pairs blend two.
            for (std::int64_t j = 0; j < copies; ++j) {
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        ++count;
                    }
                }
            }
            for (std::int64_t j = 0; j < pairs; ++j) {
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        count += 2;
                    }
                }
            }
            break;
    }
    return count;
}

std::int64_t dependency_count_backward(const ConvSpec& s, BasisMode mode, std::int64_t r,
                                       std::int64_t copies, std::int64_t pairs) {
    std::int64_t count = 0;
    switch (mode) {
        case BasisMode::Full:
        case BasisMode::WeightCompose:
            // One composed (or plain) filter per output channel; each output
            // scalar reaches one receptive field of input scalars.
            for (std::int64_t j = 0; j < s.c_out; ++j) {
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        count += receptive_field_edges(s);
                    }
                }
            }
            break;
        case BasisMode::OutputCompose:
            // Each output scalar is a mix of r basis scalars, each of which
            // reaches its own receptive field (paths counted separately).
            for (std::int64_t j = 0; j < s.c_out; ++j) {
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        for (std::int64_t i = 0; i < r; ++i) {
                            count += receptive_field_edges(s);
                        }
                    }
                }
            }
            break;
        case BasisMode::RestrictedCompose:
            for (std::int64_t j = 0; j < copies; ++j) {
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        count += receptive_field_edges(s);  // one source channel
                    }
                }
            }
            for (std::int64_t j = 0; j < pairs; ++j) {
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        count += 2 * receptive_field_edges(s);  // two source channels
                    }
                }
            }
            break;
    }
    return count;
}

std::int64_t mac_count_forward(const ConvSpec& s, BasisMode mode, std::int64_t r,
                               double alpha, double beta) {
    std::int64_t rb = r;
    std::int64_t pairs = 0;
    if (mode == BasisMode::RestrictedCompose) {
        rb = basis_count_from_alpha(alpha, s.c_out);
        pairs = pair_count_from_beta(beta, s.c_out);
    }
    return mac_count_forward(s, mode, rb, s.c_out - pairs, pairs);
}

std::int64_t dependency_count_backward(const ConvSpec& s, BasisMode mode, std::int64_t r,
                                       double alpha, double beta) {
    std::int64_t rb = r;
    std::int64_t pairs = 0;
    if (mode == BasisMode::RestrictedCompose) {
        rb = basis_count_from_alpha(alpha, s.c_out);
        pairs = pair_count_from_beta(beta, s.c_out);
    }
    return dependency_count_backward(s, mode, rb, s.c_out - pairs, pairs);
}

}  // namespace bconv
