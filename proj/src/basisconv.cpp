#include "bconv/basisconv.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "bconv/rng.hpp"

namespace bconv {

std::int64_t BasisConvLayer::copy_count() const {
    if (mode != BasisMode::RestrictedCompose) return 0;
    std::int64_t n = 0;
    for (const auto& e : coeffs.entries) n += e.is_pair ? 0 : 1;
    return n;
}

std::int64_t BasisConvLayer::pair_count() const {
    if (mode != BasisMode::RestrictedCompose) return 0;
    std::int64_t n = 0;
    for (const auto& e : coeffs.entries) n += e.is_pair ? 1 : 0;
    return n;
}

std::int64_t BasisConvLayer::trainable_param_count() const {
    return static_cast<std::int64_t>(basis_weight.size() + coeffs.dense.size() +
                                     coeffs.pair_weights.size() + bias.size());
}

BasisConvLayer make_basis_layer(const ConvSpec& spec, BasisMode mode, double r_or_alpha,
                                double beta, std::uint64_t seed) {
    BasisConvLayer layer;
    layer.spec = spec;
    layer.mode = mode;
    layer.bias = Tensor::zeros({static_cast<std::size_t>(spec.c_out)});

    Rng rng(seed);
    const double he_std = std::sqrt(2.0 / static_cast<double>(spec.c_in * spec.k * spec.k));
    auto init_basis = [&](std::int64_t r) {
        layer.basis_weight = Tensor({static_cast<std::size_t>(r),
                                     static_cast<std::size_t>(spec.c_in),
                                     static_cast<std::size_t>(spec.k),
                                     static_cast<std::size_t>(spec.k)});
        for (std::size_t i = 0; i < layer.basis_weight.size(); ++i) {
            layer.basis_weight[i] = rng.normal() * he_std;
        }
    };

    switch (mode) {
        case BasisMode::Full:
            layer.r = spec.c_out;
            layer.alpha = 1.0;
            layer.beta = 0.0;
            init_basis(spec.c_out);
            break;

        case BasisMode::WeightCompose:
        case BasisMode::OutputCompose: {
            const std::int64_t r = static_cast<std::int64_t>(r_or_alpha);
            if (r < 1 || r > spec.c_out) {
                throw ConfigError("basis count r out of range [1, c_out]: " + std::to_string(r));
            }
            layer.r = r;
            layer.alpha = static_cast<double>(r) / static_cast<double>(spec.c_out);
            layer.beta = 0.0;
            init_basis(r);
            // Coefficient variance 1/r keeps the mixed outputs at the scale of
            // the basis outputs.
            const double coeff_std = 1.0 / std::sqrt(static_cast<double>(r));
            layer.coeffs.dense = Tensor({static_cast<std::size_t>(spec.c_out),
                                         static_cast<std::size_t>(r)});
            for (std::size_t i = 0; i < layer.coeffs.dense.size(); ++i) {
                layer.coeffs.dense[i] = rng.normal() * coeff_std;
            }
            break;
        }

        case BasisMode::RestrictedCompose: {
            const double alpha = r_or_alpha;
            if (!(alpha > 0.0 && alpha <= 1.0)) {
                throw ConfigError("alpha must lie in (0, 1]");
            }
            if (!(beta >= 0.0 && beta <= 1.0)) {
                throw ConfigError("beta must lie in [0, 1]");
            }
            if (alpha * static_cast<double>(spec.c_out) < 1.0) {
                throw ConfigError("alpha * c_out < 1 leaves no basis filter");
            }
            const std::int64_t r = basis_count_from_alpha(alpha, spec.c_out);
            const std::int64_t pairs = pair_count_from_beta(beta, spec.c_out);
            const std::int64_t copies = spec.c_out - pairs;
            if (beta > 0.0 && r < 2) {
                throw ConfigError("pair outputs need at least 2 basis filters");
            }
            if (copies < r) {
                throw ConfigError("alpha and beta leave fewer copy outputs than basis filters: "
                                  "need round(beta*c_out) + r <= c_out");
            }
            layer.r = r;
            layer.alpha = alpha;
            layer.beta = beta;
            init_basis(r);

            layer.coeffs.entries.resize(static_cast<std::size_t>(spec.c_out));
            // First r outputs pass the basis outputs through unchanged; the
            // remaining copies round-robin over the basis indices.
            for (std::int64_t j = 0; j < r; ++j) {
                layer.coeffs.entries[j] = {false, static_cast<std::int32_t>(j), 0, -1};
            }
            for (std::int64_t j = r; j < copies; ++j) {
                layer.coeffs.entries[j] = {false, static_cast<std::int32_t>((j - r) % r), 0, -1};
            }
            layer.coeffs.pair_weights = Tensor({static_cast<std::size_t>(pairs), 2});
            const double pair_std = 1.0 / std::sqrt(2.0);
            for (std::int64_t p = 0; p < pairs; ++p) {
                const std::int64_t j = copies + p;
                const std::int32_t a = static_cast<std::int32_t>(rng.bounded(r));
                std::int32_t b = static_cast<std::int32_t>(rng.bounded(r - 1));
                if (b >= a) ++b;  // without replacement
                layer.coeffs.entries[j] = {true, a, b, static_cast<std::int32_t>(p)};
                layer.coeffs.pair_weights.at2(p, 0) = rng.normal() * pair_std;
                layer.coeffs.pair_weights.at2(p, 1) = rng.normal() * pair_std;
            }
            break;
        }
    }
    return layer;
}

namespace {

void require_mode(const BasisConvLayer& layer, BasisMode mode, const char* fn) {
    if (layer.mode != mode) {
        throw ConfigError(std::string(fn) + " called on a layer in mode " +
                          to_string(layer.mode));
    }
}

// out[b,j,:,:] += c * basis_out[b,i,:,:]
void accumulate_channel(Tensor& out, const Tensor& basis_out, std::size_t b, std::size_t j,
                        std::size_t i, double c) {
    const std::size_t plane = out.extent(2) * out.extent(3);
    double* dst = out.data() + (b * out.extent(1) + j) * plane;
    const double* src = basis_out.data() + (b * basis_out.extent(1) + i) * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] += c * src[p];
}

Tensor empty_bias() { return Tensor(); }

}  // namespace

BasisForward forward_weight_compose(const BasisConvLayer& layer, const Tensor& input) {
    require_mode(layer, BasisMode::WeightCompose, "forward_weight_compose");
    BasisForward fwd;
    fwd.composed_weight = compose_full_weight(layer);
    fwd.output = conv2d_forward(input, fwd.composed_weight, layer.bias, layer.spec);
    return fwd;
}

BasisForward forward_output_compose(const BasisConvLayer& layer, const Tensor& input) {
    require_mode(layer, BasisMode::OutputCompose, "forward_output_compose");
    BasisForward fwd;
    fwd.basis_out = conv2d_forward(input, layer.basis_weight, empty_bias(), layer.spec);
    const std::size_t batch = input.extent(0);
    const std::size_t c_out = static_cast<std::size_t>(layer.spec.c_out);
    const std::size_t r = static_cast<std::size_t>(layer.r);
    fwd.output = Tensor::zeros({batch, c_out, static_cast<std::size_t>(layer.spec.h_out),
                                static_cast<std::size_t>(layer.spec.w_out)});
    const std::size_t plane = fwd.output.extent(2) * fwd.output.extent(3);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < c_out; ++j) {
            for (std::size_t i = 0; i < r; ++i) {
                const double c = layer.coeffs.dense.at2(j, i);
                accumulate_channel(fwd.output, fwd.basis_out, b, j, i, c);
            }
            double* dst = fwd.output.data() + (b * c_out + j) * plane;
            const double bias = layer.bias[j];
            for (std::size_t p = 0; p < plane; ++p) dst[p] += bias;
        }
    }
    return fwd;
}

BasisForward forward_restricted(const BasisConvLayer& layer, const Tensor& input) {
    require_mode(layer, BasisMode::RestrictedCompose, "forward_restricted");
    BasisForward fwd;
    fwd.basis_out = conv2d_forward(input, layer.basis_weight, empty_bias(), layer.spec);
    const std::size_t batch = input.extent(0);
    const std::size_t c_out = static_cast<std::size_t>(layer.spec.c_out);
    fwd.output = Tensor::zeros({batch, c_out, static_cast<std::size_t>(layer.spec.h_out),
                                static_cast<std::size_t>(layer.spec.w_out)});
    const std::size_t plane = fwd.output.extent(2) * fwd.output.extent(3);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < c_out; ++j) {
            const CoeffEntry& e = layer.coeffs.entries[j];
            if (e.is_pair) {
                accumulate_channel(fwd.output, fwd.basis_out, b, j, e.i1,
                                   layer.coeffs.pair_weights.at2(e.pair_slot, 0));
                accumulate_channel(fwd.output, fwd.basis_out, b, j, e.i2,
                                   layer.coeffs.pair_weights.at2(e.pair_slot, 1));
            } else {
                accumulate_channel(fwd.output, fwd.basis_out, b, j, e.i1, 1.0);
            }
            double* dst = fwd.output.data() + (b * c_out + j) * plane;
            const double bias = layer.bias[j];
            for (std::size_t p = 0; p < plane; ++p) dst[p] += bias;
        }
    }
    return fwd;
}

BasisForward basis_forward(const BasisConvLayer& layer, const Tensor& input) {
    switch (layer.mode) {
        case BasisMode::Full: {
            BasisForward fwd;
            fwd.output = conv2d_forward(input, layer.basis_weight, layer.bias, layer.spec);
            return fwd;
        }
        case BasisMode::WeightCompose: return forward_weight_compose(layer, input);
        case BasisMode::OutputCompose: return forward_output_compose(layer, input);
        case BasisMode::RestrictedCompose: return forward_restricted(layer, input);
    }
    throw ConfigError("unreachable basis mode");
}

BasisGrads basis_backward(const BasisConvLayer& layer, const Tensor& input,
                          const BasisForward& fwd, const Tensor& grad_out,
                          bool need_grad_input) {
    BasisGrads grads;
    const std::size_t batch = input.extent(0);
    const std::size_t c_out = static_cast<std::size_t>(layer.spec.c_out);
    const std::size_t r = static_cast<std::size_t>(layer.r);
    const std::size_t plane = static_cast<std::size_t>(layer.spec.h_out * layer.spec.w_out);

    switch (layer.mode) {
        case BasisMode::Full: {
            ConvGrads cg = conv2d_backward(grad_out, input, layer.basis_weight, layer.spec,
                                           need_grad_input);
            grads.grad_input = std::move(cg.grad_input);
            grads.grad_basis_weight = std::move(cg.grad_weight);
            grads.grad_bias = std::move(cg.grad_bias);
            return grads;
        }

        case BasisMode::WeightCompose: {
            ConvGrads cg = conv2d_backward(grad_out, input, fwd.composed_weight, layer.spec,
                                           need_grad_input);
            grads.grad_input = std::move(cg.grad_input);
            grads.grad_bias = std::move(cg.grad_bias);
            const std::size_t patch =
                static_cast<std::size_t>(layer.spec.c_in * layer.spec.k * layer.spec.k);
            // grad_B = C^T * grad_W ; grad_C = grad_W * B^T
            const Tensor gw = cg.grad_weight.reshaped({c_out, patch});
            const Tensor bmat = layer.basis_weight.reshaped({r, patch});
            Tensor ct({r, c_out});
            for (std::size_t j = 0; j < c_out; ++j) {
                for (std::size_t i = 0; i < r; ++i) ct.at2(i, j) = layer.coeffs.dense.at2(j, i);
            }
            grads.grad_basis_weight = matmul(ct, gw).reshaped(layer.basis_weight.shape());
            Tensor bt({patch, r});
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t p = 0; p < patch; ++p) bt.at2(p, i) = bmat.at2(i, p);
            }
            grads.grad_dense = matmul(gw, bt);
            return grads;
        }

        case BasisMode::OutputCompose: {
            grads.grad_bias = Tensor::zeros({c_out});
            grads.grad_dense = Tensor::zeros({c_out, r});
            Tensor grad_basis_out = Tensor::zeros(fwd.basis_out.shape());
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < c_out; ++j) {
                    const double* g = grad_out.data() + (b * c_out + j) * plane;
                    double bacc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) bacc += g[p];
                    grads.grad_bias[j] += bacc;
                    for (std::size_t i = 0; i < r; ++i) {
                        const double* y = fwd.basis_out.data() + (b * r + i) * plane;
                        double cacc = 0.0;
                        for (std::size_t p = 0; p < plane; ++p) cacc += g[p] * y[p];
                        grads.grad_dense.at2(j, i) += cacc;
                        accumulate_channel(grad_basis_out, grad_out, b, i, j,
                                           layer.coeffs.dense.at2(j, i));
                    }
                }
            }
            ConvGrads cg = conv2d_backward(grad_basis_out, input, layer.basis_weight, layer.spec,
                                           need_grad_input);
            grads.grad_input = std::move(cg.grad_input);
            grads.grad_basis_weight = std::move(cg.grad_weight);
            return grads;
        }

        case BasisMode::RestrictedCompose: {
            grads.grad_bias = Tensor::zeros({c_out});
            grads.grad_pair_weights = Tensor::zeros(layer.coeffs.pair_weights.shape());
            Tensor grad_basis_out = Tensor::zeros(fwd.basis_out.shape());
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < c_out; ++j) {
                    const CoeffEntry& e = layer.coeffs.entries[j];
                    const double* g = grad_out.data() + (b * c_out + j) * plane;
                    double bacc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) bacc += g[p];
                    grads.grad_bias[j] += bacc;
                    if (e.is_pair) {
                        const double w1 = layer.coeffs.pair_weights.at2(e.pair_slot, 0);
                        const double w2 = layer.coeffs.pair_weights.at2(e.pair_slot, 1);
                        accumulate_channel(grad_basis_out, grad_out, b, e.i1, j, w1);
                        accumulate_channel(grad_basis_out, grad_out, b, e.i2, j, w2);
                        const double* y1 = fwd.basis_out.data() + (b * r + e.i1) * plane;
                        const double* y2 = fwd.basis_out.data() + (b * r + e.i2) * plane;
                        double acc1 = 0.0, acc2 = 0.0;
                        for (std::size_t p = 0; p < plane; ++p) {
                            acc1 += g[p] * y1[p];
                            acc2 += g[p] * y2[p];
                        }
                        grads.grad_pair_weights.at2(e.pair_slot, 0) += acc1;
                        grads.grad_pair_weights.at2(e.pair_slot, 1) += acc2;
                    } else {
                        accumulate_channel(grad_basis_out, grad_out, b, e.i1, j, 1.0);
                    }
                }
            }
            ConvGrads cg = conv2d_backward(grad_basis_out, input, layer.basis_weight, layer.spec,
                                           need_grad_input);
            grads.grad_input = std::move(cg.grad_input);
            grads.grad_basis_weight = std::move(cg.grad_weight);
            return grads;
        }
    }
    throw ConfigError("unreachable basis mode");
}

Tensor compose_full_weight(const BasisConvLayer& layer) {
    const std::size_t c_out = static_cast<std::size_t>(layer.spec.c_out);
    const std::size_t patch =
        static_cast<std::size_t>(layer.spec.c_in * layer.spec.k * layer.spec.k);
    const std::vector<std::size_t> full_shape = {c_out, static_cast<std::size_t>(layer.spec.c_in),
                                                 static_cast<std::size_t>(layer.spec.k),
                                                 static_cast<std::size_t>(layer.spec.k)};
    switch (layer.mode) {
        case BasisMode::Full:
            return layer.basis_weight;
        case BasisMode::WeightCompose:
        case BasisMode::OutputCompose: {
            const Tensor bmat = layer.basis_weight.reshaped(
                {static_cast<std::size_t>(layer.r), patch});
            return matmul(layer.coeffs.dense, bmat).reshaped(full_shape);
        }
        case BasisMode::RestrictedCompose: {
            Tensor full = Tensor::zeros(full_shape);
            const double* b = layer.basis_weight.data();
            for (std::size_t j = 0; j < c_out; ++j) {
                const CoeffEntry& e = layer.coeffs.entries[j];
                double* dst = full.data() + j * patch;
                if (e.is_pair) {
                    const double w1 = layer.coeffs.pair_weights.at2(e.pair_slot, 0);
                    const double w2 = layer.coeffs.pair_weights.at2(e.pair_slot, 1);
                    const double* b1 = b + static_cast<std::size_t>(e.i1) * patch;
                    const double* b2 = b + static_cast<std::size_t>(e.i2) * patch;
                    for (std::size_t p = 0; p < patch; ++p) dst[p] = w1 * b1[p] + w2 * b2[p];
                } else {
                    const double* src = b + static_cast<std::size_t>(e.i1) * patch;
                    for (std::size_t p = 0; p < patch; ++p) dst[p] = src[p];
                }
            }
            return full;
        }
    }
    throw ConfigError("unreachable basis mode");
}

// ---- extraction -------------------------------------------------------------

namespace {

void check_extract_args(const Tensor& full_weight, std::int64_t r) {
    if (full_weight.rank() != 4) {
        throw DimensionError("extraction expects a C_out x C_in x K x K weight");
    }
    if (r < 1 || r > static_cast<std::int64_t>(full_weight.extent(0))) {
        throw ConfigError("extraction rank out of range [1, c_out]: " + std::to_string(r));
    }
}

}  // namespace

ExtractResult extract_basis_svd(const Tensor& full_weight, std::int64_t r) {
    check_extract_args(full_weight, r);
    const std::size_t c_out = full_weight.extent(0);
    const std::size_t patch = full_weight.size() / c_out;

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        full_weight.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(patch));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);

    const Eigen::Index rr = static_cast<Eigen::Index>(r);
    Eigen::MatrixXd basis = svd.singularValues().head(rr).asDiagonal() *
                            svd.matrixV().leftCols(rr).transpose();  // r x patch
    Eigen::MatrixXd coeffs = svd.matrixU().leftCols(rr);              // c_out x r

    ExtractResult res;
    res.basis_weight = Tensor({static_cast<std::size_t>(r), full_weight.extent(1),
                               full_weight.extent(2), full_weight.extent(3)});
    for (Eigen::Index i = 0; i < rr; ++i) {
        for (std::size_t p = 0; p < patch; ++p) {
            res.basis_weight[static_cast<std::size_t>(i) * patch + p] =
                basis(i, static_cast<Eigen::Index>(p));
        }
    }
    res.coeffs = Tensor({c_out, static_cast<std::size_t>(r)});
    for (std::size_t j = 0; j < c_out; ++j) {
        for (Eigen::Index i = 0; i < rr; ++i) {
            res.coeffs.at2(j, static_cast<std::size_t>(i)) = coeffs(static_cast<Eigen::Index>(j), i);
        }
    }
    res.residual = (m - coeffs * basis).norm();
    return res;
}

ExtractResult extract_basis_qr(const Tensor& full_weight, std::int64_t r) {
    check_extract_args(full_weight, r);
    const std::size_t c_out = full_weight.extent(0);
    const std::size_t patch = full_weight.size() / c_out;

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        full_weight.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(patch));

    // Column-pivoted QR of M^T ranks the rows of M by how much new direction
    // each contributes; the first r pivots are the selected filters.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m.transpose());
    const auto& perm = qr.colsPermutation().indices();

    ExtractResult res;
    res.selected.reserve(static_cast<std::size_t>(r));
    for (std::int64_t i = 0; i < r; ++i) {
        res.selected.push_back(static_cast<std::int64_t>(perm(static_cast<Eigen::Index>(i))));
    }

    // Basis rows are verbatim copies of the selected filters.
    res.basis_weight = Tensor({static_cast<std::size_t>(r), full_weight.extent(1),
                               full_weight.extent(2), full_weight.extent(3)});
    for (std::int64_t i = 0; i < r; ++i) {
        const double* src = full_weight.data() + static_cast<std::size_t>(res.selected[i]) * patch;
        double* dst = res.basis_weight.data() + static_cast<std::size_t>(i) * patch;
        std::copy(src, src + patch, dst);
    }

    // Least squares for C: minimize ||M - C*B||_F row by row, i.e. solve
    // B^T x = M_row for each row. ColPivHouseholderQR tolerates rank
    // deficiency (it returns a minimizer, not an error).
    Eigen::MatrixXd bt(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(r));
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::size_t p = 0; p < patch; ++p) {
            bt(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) =
                res.basis_weight[static_cast<std::size_t>(i) * patch + p];
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> solver(bt);
    Eigen::MatrixXd coeffs = solver.solve(m.transpose()).transpose();  // c_out x r

    res.coeffs = Tensor({c_out, static_cast<std::size_t>(r)});
    for (std::size_t j = 0; j < c_out; ++j) {
        for (std::int64_t i = 0; i < r; ++i) {
            res.coeffs.at2(j, static_cast<std::size_t>(i)) =
                coeffs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        }
    }
    Eigen::MatrixXd bmat = bt.transpose();
    res.residual = (m - coeffs * bmat).norm();
    return res;
}

}  // namespace bconv
