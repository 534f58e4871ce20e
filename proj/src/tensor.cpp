#include "bconv/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "bconv/errors.hpp"
#include "bconv/rng.hpp"

namespace bconv {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor Tensor::zeros(const std::vector<std::size_t>& shape) {
    return Tensor(shape);
}

Tensor Tensor::randn(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    Tensor t(shape);
    Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t.data_[i] = rng.normal();
    return t;
}

Tensor Tensor::from_vector(std::vector<double> values) {
    Tensor t;
    t.shape_ = {values.size()};
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::reshaped(const std::vector<std::size_t>& shape) const {
    if (shape_product(shape) != data_.size()) {
        throw DimensionError("reshape changes element count from " +
                             std::to_string(data_.size()) + " to " +
                             std::to_string(shape_product(shape)));
    }
    Tensor t;
    t.shape_ = shape;
    t.data_ = data_;
    return t;
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

double Tensor::sum() const {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul expects 2-D tensors");
    }
    const std::size_t m = a.extent(0), k = a.extent(1);
    const std::size_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw DimensionError("matmul inner extents differ: " + std::to_string(k) +
                             " vs " + std::to_string(k2));
    }
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    // i-k-j order keeps the inner loop contiguous in both b and c.
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
    if (x.size() != y.size()) throw DimensionError("axpy size mismatch");
    const double* px = x.data();
    double* py = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) py[i] += alpha * px[i];
}

}  // namespace bconv
