#include "bconv/costmodel.hpp"

#include <sstream>

namespace bconv {

const char* to_string(BasisMode mode) {
    switch (mode) {
        case BasisMode::Full: return "full";
        case BasisMode::WeightCompose: return "weight_compose";
        case BasisMode::OutputCompose: return "output_compose";
        case BasisMode::RestrictedCompose: return "restricted_compose";
    }
    return "?";
}

BasisMode basis_mode_from_string(const std::string& name) {
    if (name == "full") return BasisMode::Full;
    if (name == "weight_compose" || name == "weight") return BasisMode::WeightCompose;
    if (name == "output_compose" || name == "output") return BasisMode::OutputCompose;
    if (name == "restricted_compose" || name == "restricted") return BasisMode::RestrictedCompose;
    throw ConfigError("unknown basis mode: " + name);
}

std::int64_t params_full(const ConvSpec& s) {
    return s.c_out * s.c_in * s.k * s.k;
}

std::int64_t params_decomposed(const ConvSpec& s, std::int64_t r) {
    return r * s.c_in * s.k * s.k + r * s.c_out;
}

double param_reduction_threshold(const ConvSpec& s) {
    const double ratio = static_cast<double>(s.c_in) / static_cast<double>(s.c_out) *
                         static_cast<double>(s.k * s.k);
    return static_cast<double>(s.c_out) * (1.0 - 1.0 / (ratio + 1.0));
}

bool param_reduced(const ConvSpec& s, std::int64_t r) {
    return params_decomposed(s, r) < params_full(s);
}

namespace {

void check_r(const ConvSpec& s, std::int64_t r) {
    if (r < 1 || r > s.c_out) {
        throw ConfigError("basis count r must satisfy 1 <= r <= c_out, got " +
                          std::to_string(r) + " with c_out " + std::to_string(s.c_out));
    }
}

}  // namespace

std::int64_t count_forward(const ConvSpec& s, BasisMode mode, std::int64_t r,
                           double alpha, double beta) {
    const std::int64_t plane = s.h_out * s.w_out;
    const std::int64_t patch = s.k * s.k * s.c_in;  // MACs per output scalar of a conv
    switch (mode) {
        case BasisMode::Full:
            return patch * plane * s.c_out;
        case BasisMode::WeightCompose:
            check_r(s, r);
            // Restore W = C*B, then run the full-size convolution.
            return s.c_out * r * s.c_in * s.k * s.k + patch * plane * s.c_out;
        case BasisMode::OutputCompose:
            check_r(s, r);
            // Convolve with r basis filters, then mix channels with C.
            return patch * plane * r + s.c_out * r * plane;
        case BasisMode::RestrictedCompose: {
            const std::int64_t rb = basis_count_from_alpha(alpha, s.c_out);
            const std::int64_t pairs = pair_count_from_beta(beta, s.c_out);
            const std::int64_t copies = s.c_out - pairs;
            return patch * plane * rb + copies * 1 * plane + pairs * 2 * plane;
        }
    }
    return 0;
}

std::int64_t count_backward(const ConvSpec& s, BasisMode mode, std::int64_t r,
                            double /*alpha*/, double beta) {
    const std::int64_t plane = s.h_out * s.w_out;
    const std::int64_t patch = s.k * s.k * s.c_in;  // input scalars feeding one conv output
    switch (mode) {
        case BasisMode::Full:
            return plane * s.c_out * patch;
        case BasisMode::WeightCompose:
            check_r(s, r);
            return plane * s.c_out * patch;
        case BasisMode::OutputCompose:
            check_r(s, r);
            // Every output scalar depends on all r basis outputs at its
            // location, each with a full receptive field.
            return plane * s.c_out * r * patch;
        case BasisMode::RestrictedCompose: {
            const std::int64_t pairs = pair_count_from_beta(beta, s.c_out);
            const std::int64_t copies = s.c_out - pairs;
            return plane * copies * 1 * patch + plane * pairs * 2 * patch;
        }
    }
    return 0;
}

double forward_accel_threshold(const ConvSpec& s) {
    const double cin_k2 = static_cast<double>(s.c_in * s.k * s.k);
    return static_cast<double>(s.c_out) / (1.0 + static_cast<double>(s.c_out) / cin_k2);
}

double total_accel_threshold_b(const ConvSpec& s) {
    const double cin_k2 = static_cast<double>(s.c_in * s.k * s.k);
    return 2.0 / (1.0 + 1.0 / static_cast<double>(s.c_out) + 1.0 / cin_k2);
}

std::int64_t delta_b(const ConvSpec& s, std::int64_t r) {
    const std::int64_t base = count_forward(s, BasisMode::Full, 0, 0, 0) +
                              count_backward(s, BasisMode::Full, 0, 0, 0);
    return count_forward(s, BasisMode::OutputCompose, r, 0, 0) +
           count_backward(s, BasisMode::OutputCompose, r, 0, 0) - base;
}

std::int64_t delta_c(const ConvSpec& s, double alpha, double beta) {
    const std::int64_t base = count_forward(s, BasisMode::Full, 0, 0, 0) +
                              count_backward(s, BasisMode::Full, 0, 0, 0);
    return count_forward(s, BasisMode::RestrictedCompose, 0, alpha, beta) +
           count_backward(s, BasisMode::RestrictedCompose, 0, alpha, beta) - base;
}

ModeCCondition mode_c_condition(const ConvSpec& s, double alpha, double beta) {
    if (!(alpha > 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
        throw ConfigError("mode C condition needs 0 < alpha <= 1 and 0 <= beta <= 1");
    }
    const double inv = 1.0 / static_cast<double>(s.k * s.k * s.c_in);
    ModeCCondition cond;
    cond.exact_lhs = beta * (1.0 + inv) + alpha;
    cond.exact_rhs = 1.0 - inv;
    cond.accelerated = cond.exact_lhs < cond.exact_rhs;
    cond.simplified = alpha + beta < 1.0;
    return cond;
}

CostReport report(const ConvSpec& s, BasisMode mode, std::int64_t r,
                  double alpha, double beta) {
    CostReport rep;
    rep.spec = s;
    rep.mode = mode;

    rep.n0_f = count_forward(s, BasisMode::Full, 0, 0, 0);
    rep.n0_b = count_backward(s, BasisMode::Full, 0, 0, 0);
    rep.params_full = params_full(s);
    rep.param_threshold = param_reduction_threshold(s);
    rep.forward_threshold = forward_accel_threshold(s);
    rep.total_threshold_b = total_accel_threshold_b(s);

    if (mode == BasisMode::Full) {
        // Degenerate configuration: everything equals the baseline.
        rep.r = s.c_out;
        rep.alpha = 1.0;
        rep.beta = 0.0;
        rep.params_decomposed = rep.params_full;
        rep.na_f = rep.nb_f = rep.nc_f = rep.n0_f;
        rep.nb_b = rep.nc_b = rep.n0_b;
        rep.delta_b = rep.delta_c = 0;
        rep.param_reduced = false;
        rep.forward_accelerated = false;
        rep.total_accelerated_b = false;
        rep.mode_c_accelerated = false;
        rep.mode_c_simplified = false;
        return rep;
    }

    if (mode == BasisMode::RestrictedCompose) {
        rep.r = basis_count_from_alpha(alpha, s.c_out);
        rep.alpha = alpha;
        rep.beta = beta;
    } else {
        check_r(s, r);
        rep.r = r;
        rep.alpha = static_cast<double>(r) / static_cast<double>(s.c_out);
        rep.beta = beta;
    }

    rep.params_decomposed = params_decomposed(s, rep.r);
    rep.na_f = count_forward(s, BasisMode::WeightCompose, rep.r, 0, 0);
    rep.nb_f = count_forward(s, BasisMode::OutputCompose, rep.r, 0, 0);
    rep.nb_b = count_backward(s, BasisMode::OutputCompose, rep.r, 0, 0);
    rep.nc_f = count_forward(s, BasisMode::RestrictedCompose, 0, rep.alpha, rep.beta);
    rep.nc_b = count_backward(s, BasisMode::RestrictedCompose, 0, rep.alpha, rep.beta);
    rep.delta_b = (rep.nb_f + rep.nb_b) - (rep.n0_f + rep.n0_b);
    rep.delta_c = (rep.nc_f + rep.nc_b) - (rep.n0_f + rep.n0_b);

    rep.param_reduced = rep.params_decomposed < rep.params_full;
    rep.forward_accelerated = rep.nb_f < rep.n0_f;
    rep.total_accelerated_b = rep.delta_b < 0;
    const ModeCCondition cond = mode_c_condition(s, rep.alpha, rep.beta);
    rep.mode_c_accelerated = cond.accelerated;
    rep.mode_c_simplified = cond.simplified;
    return rep;
}

std::string cost_csv_header() {
    return "layer,mode,c_in,c_out,k,stride,padding,h_out,w_out,r,alpha,beta,"
           "params_full,params_decomposed,n0_f,na_f,nb_f,nc_f,n0_b,nb_b,nc_b,"
           "delta_b,delta_c,param_threshold,forward_threshold,total_threshold_b,"
           "param_reduced,forward_accelerated,total_accelerated_b,mode_c_accelerated,"
           "mode_c_simplified";
}

std::string cost_csv_row(const std::string& layer_name, const CostReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << layer_name << ',' << to_string(r.mode) << ',' << r.spec.c_in << ',' << r.spec.c_out
       << ',' << r.spec.k << ',' << r.spec.stride << ',' << r.spec.padding << ','
       << r.spec.h_out << ',' << r.spec.w_out << ',' << r.r << ',' << r.alpha << ',' << r.beta
       << ',' << r.params_full << ',' << r.params_decomposed << ',' << r.n0_f << ',' << r.na_f
       << ',' << r.nb_f << ',' << r.nc_f << ',' << r.n0_b << ',' << r.nb_b << ',' << r.nc_b
       << ',' << r.delta_b << ',' << r.delta_c << ',' << r.param_threshold << ','
       << r.forward_threshold << ',' << r.total_threshold_b << ',' << (r.param_reduced ? 1 : 0)
       << ',' << (r.forward_accelerated ? 1 : 0) << ',' << (r.total_accelerated_b ? 1 : 0)
       << ',' << (r.mode_c_accelerated ? 1 : 0) << ',' << (r.mode_c_simplified ? 1 : 0);
    return os.str();
}

}  // namespace bconv
