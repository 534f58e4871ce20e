#include "bconv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bconv {

double cosine_lr(std::int64_t epoch, const TrainConfig& cfg) {
    const double t = static_cast<double>(std::min(epoch, cfg.t_max));
    const double pi = 3.14159265358979323846;
    return cfg.lr0 * (1.0 + std::cos(pi * t / static_cast<double>(cfg.t_max))) / 2.0;
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              double momentum, double weight_decay) {
    if (param.size() != grad.size() || param.size() != velocity.size()) {
        throw DimensionError("sgd_step tensor sizes differ");
    }
    double* p = param.data();
    const double* g = grad.data();
    double* v = velocity.data();
    for (std::size_t i = 0; i < param.size(); ++i) {
        v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
        p[i] -= lr * v[i];
    }
}

// ---- convolution via im2col -------------------------------------------------

namespace {

void check_conv_args(const Tensor& input, const Tensor& weight, const ConvSpec& s) {
    if (input.rank() != 4) throw DimensionError("conv input must be B x C x H x W");
    if (weight.rank() != 4) throw DimensionError("conv weight must be F x C x K x K");
    if (static_cast<std::int64_t>(input.extent(1)) != s.c_in) {
        throw DimensionError("conv input channels do not match spec");
    }
    if (static_cast<std::int64_t>(weight.extent(1)) != s.c_in ||
        static_cast<std::int64_t>(weight.extent(2)) != s.k ||
        static_cast<std::int64_t>(weight.extent(3)) != s.k) {
        throw DimensionError("conv weight shape does not match spec");
    }
    const std::int64_t h_in = static_cast<std::int64_t>(input.extent(2));
    const std::int64_t w_in = static_cast<std::int64_t>(input.extent(3));
    if (conv_out_extent(h_in, s.k, s.stride, s.padding) != s.h_out ||
        conv_out_extent(w_in, s.k, s.stride, s.padding) != s.w_out) {
        throw DimensionError("conv input extents inconsistent with spec output extents");
    }
}

// Gathers the receptive fields of one image into (C*K*K) x (OH*OW).
void im2col(const double* img, std::int64_t c_in, std::int64_t h, std::int64_t w,
            const ConvSpec& s, double* cols) {
    const std::int64_t plane = s.h_out * s.w_out;
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < c_in; ++c) {
        const double* chan = img + c * h * w;
        for (std::int64_t ky = 0; ky < s.k; ++ky) {
            for (std::int64_t kx = 0; kx < s.k; ++kx, ++row) {
                double* out = cols + row * plane;
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    const std::int64_t iy = y * s.stride - s.padding + ky;
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        const std::int64_t ix = x * s.stride - s.padding + kx;
                        const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
                        out[y * s.w_out + x] = inside ? chan[iy * w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatters (C*K*K) x (OH*OW) columns back onto one image, accumulating.
void col2im(const double* cols, std::int64_t c_in, std::int64_t h, std::int64_t w,
            const ConvSpec& s, double* img) {
    const std::int64_t plane = s.h_out * s.w_out;
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < c_in; ++c) {
        double* chan = img + c * h * w;
        for (std::int64_t ky = 0; ky < s.k; ++ky) {
            for (std::int64_t kx = 0; kx < s.k; ++kx, ++row) {
                const double* in = cols + row * plane;
                for (std::int64_t y = 0; y < s.h_out; ++y) {
                    const std::int64_t iy = y * s.stride - s.padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t x = 0; x < s.w_out; ++x) {
                        const std::int64_t ix = x * s.stride - s.padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        chan[iy * w + ix] += in[y * s.w_out + x];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      const ConvSpec& spec) {
    check_conv_args(input, weight, spec);
    const std::size_t batch = input.extent(0);
    const std::size_t filters = weight.extent(0);
    if (bias.size() != 0 && bias.size() != filters) {
        throw DimensionError("conv bias length does not match filter count");
    }
    const std::int64_t h = static_cast<std::int64_t>(input.extent(2));
    const std::int64_t w = static_cast<std::int64_t>(input.extent(3));
    const std::size_t plane = static_cast<std::size_t>(spec.h_out * spec.w_out);
    const std::size_t patch = static_cast<std::size_t>(spec.c_in * spec.k * spec.k);

    Tensor out({batch, filters, static_cast<std::size_t>(spec.h_out),
                static_cast<std::size_t>(spec.w_out)});
    Tensor cols({patch, plane});
    const Tensor wmat = weight.reshaped({filters, patch});
    for (std::size_t b = 0; b < batch; ++b) {
        im2col(input.data() + b * spec.c_in * h * w, spec.c_in, h, w, spec, cols.data());
        Tensor res = matmul(wmat, cols);  // filters x plane
        double* dst = out.data() + b * filters * plane;
        const double* src = res.data();
        if (bias.size() == 0) {
            std::copy(src, src + filters * plane, dst);
        } else {
            for (std::size_t f = 0; f < filters; ++f) {
                const double bf = bias[f];
                for (std::size_t i = 0; i < plane; ++i) dst[f * plane + i] = src[f * plane + i] + bf;
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight,
                          const ConvSpec& spec, bool need_grad_input) {
    check_conv_args(input, weight, spec);
    const std::size_t batch = input.extent(0);
    const std::size_t filters = weight.extent(0);
    const std::int64_t h = static_cast<std::int64_t>(input.extent(2));
    const std::int64_t w = static_cast<std::int64_t>(input.extent(3));
    const std::size_t plane = static_cast<std::size_t>(spec.h_out * spec.w_out);
    const std::size_t patch = static_cast<std::size_t>(spec.c_in * spec.k * spec.k);
    if (grad_out.rank() != 4 || grad_out.extent(0) != batch || grad_out.extent(1) != filters ||
        static_cast<std::int64_t>(grad_out.extent(2)) != spec.h_out ||
        static_cast<std::int64_t>(grad_out.extent(3)) != spec.w_out) {
        throw DimensionError("conv grad_out shape does not match forward output");
    }

    ConvGrads grads;
    grads.grad_weight = Tensor::zeros({filters, static_cast<std::size_t>(spec.c_in),
                                       static_cast<std::size_t>(spec.k),
                                       static_cast<std::size_t>(spec.k)});
    grads.grad_bias = Tensor::zeros({filters});
    if (need_grad_input) grads.grad_input = Tensor::zeros(input.shape());

    Tensor cols({patch, plane});
    Tensor gw_mat = grads.grad_weight.reshaped({filters, patch});
    const Tensor wmat = weight.reshaped({filters, patch});

    for (std::size_t b = 0; b < batch; ++b) {
        im2col(input.data() + b * spec.c_in * h * w, spec.c_in, h, w, spec, cols.data());
        // grad W += G * cols^T
        const double* g = grad_out.data() + b * filters * plane;
        double* gw = gw_mat.data();
        for (std::size_t f = 0; f < filters; ++f) {
            const double* grow = g + f * plane;
            for (std::size_t p = 0; p < patch; ++p) {
                const double* crow = cols.data() + p * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += grow[i] * crow[i];
                gw[f * patch + p] += acc;
            }
            double bacc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) bacc += grow[i];
            grads.grad_bias[f] += bacc;
        }
        if (need_grad_input) {
            // grad cols = W^T * G, scattered back with col2im.
            Tensor gcols({patch, plane});
            double* gc = gcols.data();
            for (std::size_t f = 0; f < filters; ++f) {
                const double* grow = g + f * plane;
                const double* wrow = wmat.data() + f * patch;
                for (std::size_t p = 0; p < patch; ++p) {
                    const double wfp = wrow[p];
                    if (wfp == 0.0) continue;
                    double* gcrow = gc + p * plane;
                    for (std::size_t i = 0; i < plane; ++i) gcrow[i] += wfp * grow[i];
                }
            }
            col2im(gcols.data(), spec.c_in, h, w, spec,
                   grads.grad_input.data() + b * spec.c_in * h * w);
        }
    }
    grads.grad_weight = gw_mat.reshaped({filters, static_cast<std::size_t>(spec.c_in),
                                         static_cast<std::size_t>(spec.k),
                                         static_cast<std::size_t>(spec.k)});
    return grads;
}

// ---- pointwise and pooling -------------------------------------------------

Tensor relu_forward(const Tensor& input) {
    Tensor out = input;
    double* p = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& saved_input) {
    if (grad_out.size() != saved_input.size()) throw DimensionError("relu grad size mismatch");
    Tensor out = grad_out;
    double* p = out.data();
    const double* x = saved_input.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (x[i] <= 0.0) p[i] = 0.0;
    }
    return out;
}

MaxPoolResult maxpool2_forward(const Tensor& input) {
    if (input.rank() != 4) throw DimensionError("maxpool input must be B x C x H x W");
    const std::size_t b = input.extent(0), c = input.extent(1);
    const std::size_t h = input.extent(2), w = input.extent(3);
    const std::size_t oh = h / 2, ow = w / 2;
    MaxPoolResult res;
    res.output = Tensor({b, c, oh, ow});
    res.argmax.resize(b * c * oh * ow);
    const double* in = input.data();
    double* out = res.output.data();
    std::size_t oidx = 0;
    for (std::size_t n = 0; n < b * c; ++n) {
        const double* chan = in + n * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x, ++oidx) {
                std::size_t best = (2 * y) * w + 2 * x;
                double bv = chan[best];
                const std::size_t cand[3] = {(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                                             (2 * y + 1) * w + 2 * x + 1};
                for (std::size_t k = 0; k < 3; ++k) {
                    if (chan[cand[k]] > bv) {
                        bv = chan[cand[k]];
                        best = cand[k];
                    }
                }
                out[oidx] = bv;
                res.argmax[oidx] = static_cast<std::uint32_t>(n * h * w + best);
            }
        }
    }
    return res;
}

Tensor maxpool2_backward(const Tensor& grad_out, const MaxPoolResult& saved,
                         const std::vector<std::size_t>& input_shape) {
    Tensor grad_in = Tensor::zeros(input_shape);
    const double* g = grad_out.data();
    double* gi = grad_in.data();
    for (std::size_t i = 0; i < saved.argmax.size(); ++i) gi[saved.argmax[i]] += g[i];
    return grad_in;
}

Tensor avgpool_global_forward(const Tensor& input) {
    if (input.rank() != 4) throw DimensionError("avgpool input must be B x C x H x W");
    const std::size_t b = input.extent(0), c = input.extent(1);
    const std::size_t plane = input.extent(2) * input.extent(3);
    Tensor out({b, c});
    const double* in = input.data();
    for (std::size_t n = 0; n < b * c; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[n * plane + i];
        out[n] = acc / static_cast<double>(plane);
    }
    return out;
}

Tensor avgpool_global_backward(const Tensor& grad_out, const std::vector<std::size_t>& input_shape) {
    Tensor grad_in(input_shape);
    const std::size_t plane = input_shape[2] * input_shape[3];
    const double inv = 1.0 / static_cast<double>(plane);
    double* gi = grad_in.data();
    const double* g = grad_out.data();
    for (std::size_t n = 0; n < grad_out.size(); ++n) {
        for (std::size_t i = 0; i < plane; ++i) gi[n * plane + i] = g[n] * inv;
    }
    return grad_in;
}

// ---- dense -----------------------------------------------------------------

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 2 || weight.rank() != 2) throw DimensionError("dense expects 2-D tensors");
    if (input.extent(1) != weight.extent(1)) throw DimensionError("dense feature size mismatch");
    const std::size_t b = input.extent(0), out_f = weight.extent(0), in_f = weight.extent(1);
    Tensor out({b, out_f});
    for (std::size_t n = 0; n < b; ++n) {
        const double* x = input.data() + n * in_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            const double* wrow = weight.data() + o * in_f;
            double acc = bias.size() ? bias[o] : 0.0;
            for (std::size_t i = 0; i < in_f; ++i) acc += wrow[i] * x[i];
            out.at2(n, o) = acc;
        }
    }
    return out;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight) {
    const std::size_t b = input.extent(0), out_f = weight.extent(0), in_f = weight.extent(1);
    DenseGrads g;
    g.grad_input = Tensor::zeros(input.shape());
    g.grad_weight = Tensor::zeros(weight.shape());
    g.grad_bias = Tensor::zeros({out_f});
    for (std::size_t n = 0; n < b; ++n) {
        const double* x = input.data() + n * in_f;
        const double* go = grad_out.data() + n * out_f;
        double* gi = g.grad_input.data() + n * in_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            const double v = go[o];
            g.grad_bias[o] += v;
            const double* wrow = weight.data() + o * in_f;
            double* gwrow = g.grad_weight.data() + o * in_f;
            for (std::size_t i = 0; i < in_f; ++i) {
                gwrow[i] += v * x[i];
                gi[i] += v * wrow[i];
            }
        }
    }
    return g;
}

// ---- batch normalization ---------------------------------------------------

BatchNorm2d BatchNorm2d::create(std::size_t channels) {
    BatchNorm2d bn;
    bn.gamma = Tensor({channels});
    bn.gamma.fill(1.0);
    bn.beta = Tensor::zeros({channels});
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor({channels});
    bn.running_var.fill(1.0);
    return bn;
}

Tensor batchnorm2d_forward(BatchNorm2d& bn, const Tensor& input, bool training, BnCache* cache) {
    if (input.rank() != 4) throw DimensionError("batchnorm input must be B x C x H x W");
    const std::size_t b = input.extent(0), c = input.extent(1);
    const std::size_t plane = input.extent(2) * input.extent(3);
    if (c != bn.gamma.size()) throw DimensionError("batchnorm channel count mismatch");
    const std::size_t n = b * plane;

    Tensor out(input.shape());
    if (cache) {
        cache->xhat = Tensor(input.shape());
        cache->inv_std.assign(c, 0.0);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean, var;
        if (training) {
            double acc = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                const double* p = input.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) acc += p[j];
            }
            mean = acc / static_cast<double>(n);
            double vacc = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                const double* p = input.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    const double d = p[j] - mean;
                    vacc += d * d;
                }
            }
            var = vacc / static_cast<double>(n);
            bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mean;
            bn.running_var[ch] = (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * var;
        } else {
            mean = bn.running_mean[ch];
            var = bn.running_var[ch];
        }
        const double istd = 1.0 / std::sqrt(var + bn.eps);
        if (cache) cache->inv_std[ch] = istd;
        const double g = bn.gamma[ch], bt = bn.beta[ch];
        for (std::size_t i = 0; i < b; ++i) {
            const double* p = input.data() + (i * c + ch) * plane;
            double* o = out.data() + (i * c + ch) * plane;
            double* xh = cache ? cache->xhat.data() + (i * c + ch) * plane : nullptr;
            for (std::size_t j = 0; j < plane; ++j) {
                const double v = (p[j] - mean) * istd;
                if (xh) xh[j] = v;
                o[j] = g * v + bt;
            }
        }
    }
    return out;
}

BnGrads batchnorm2d_backward(const BatchNorm2d& bn, const BnCache& cache, const Tensor& grad_out) {
    const std::size_t b = grad_out.extent(0), c = grad_out.extent(1);
    const std::size_t plane = grad_out.extent(2) * grad_out.extent(3);
    const double n = static_cast<double>(b * plane);

    BnGrads g;
    g.grad_input = Tensor(grad_out.shape());
    g.grad_gamma = Tensor::zeros({c});
    g.grad_beta = Tensor::zeros({c});

    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const double* go = grad_out.data() + (i * c + ch) * plane;
            const double* xh = cache.xhat.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum_g += go[j];
                sum_gx += go[j] * xh[j];
            }
        }
        g.grad_beta[ch] = sum_g;
        g.grad_gamma[ch] = sum_gx;
        const double gamma = bn.gamma[ch];
        const double istd = cache.inv_std[ch];
        for (std::size_t i = 0; i < b; ++i) {
            const double* go = grad_out.data() + (i * c + ch) * plane;
            const double* xh = cache.xhat.data() + (i * c + ch) * plane;
            double* gi = g.grad_input.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                gi[j] = gamma * istd / n * (n * go[j] - sum_g - xh[j] * sum_gx);
            }
        }
    }
    return g;
}

// ---- loss ------------------------------------------------------------------

CrossEntropyResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects B x num_classes logits");
    const std::size_t b = logits.extent(0), classes = logits.extent(1);
    if (labels.size() != b) throw DimensionError("label count does not match batch size");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ConfigError("label out of range: " + std::to_string(y));
        }
    }
    CrossEntropyResult res;
    res.grad_logits = Tensor(logits.shape());
    double total = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        const double* row = logits.data() + n * classes;
        double* grow = res.grad_logits.data() + n * classes;
        double mx = row[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
        const double logz = std::log(z) + mx;
        total += logz - row[static_cast<std::size_t>(labels[n])];
        for (std::size_t j = 0; j < classes; ++j) {
            const double p = std::exp(row[j] - logz);
            grow[j] = (p - (static_cast<std::size_t>(labels[n]) == j ? 1.0 : 0.0)) /
                      static_cast<double>(b);
        }
    }
    res.loss = total / static_cast<double>(b);
    return res;
}

}  // namespace bconv
