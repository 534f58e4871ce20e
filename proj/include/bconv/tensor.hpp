#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bconv {

// Dense n-dimensional array of doubles in row-major order.
//
// Tensors are plain values: copyable, no views, no broadcasting. Everything
// the engine trains or transports lives in one of these. 64-bit floats
// throughout; gradient checks rely on the precision.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);

    static Tensor zeros(const std::vector<std::size_t>& shape);
    // Standard-normal entries from the documented generator (see rng.hpp);
    // same (shape, seed) always yields identical bytes.
    static Tensor randn(const std::vector<std::size_t>& shape, std::uint64_t seed);
    static Tensor from_vector(std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t dim) const { return shape_[dim]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexed access for the common ranks. No bounds checks in release builds.
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    // Same data, new shape; the element count must not change.
    Tensor reshaped(const std::vector<std::size_t>& shape) const;

    void fill(double value);
    double sum() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// C = A * B for 2-D tensors, inner extents must match.
Tensor matmul(const Tensor& a, const Tensor& b);

// In-place axpy over whole tensors: y += alpha * x.
void axpy(double alpha, const Tensor& x, Tensor& y);

}  // namespace bconv
