// Dense real/complex tensors and the elementary neural operations built on them.
//
// Everything is row-major double precision. Operations are free functions that
// return new tensors; nothing aliases. Backward passes take the forward inputs
// (or a cache of forward intermediates) and the upstream gradient.

#pragma once

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fwnet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value outside an operation's domain (indivisible sizes, empty input, bad label).
class ArgumentError : public Error {
public:
    using Error::Error;
};

class ConfigError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

class IoError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Row-major multi-index access. The index count must equal rank().
    template <typename... Idx>
    T& at(Idx... idx) noexcept {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Idx>
    const T& at(Idx... idx) const noexcept {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    /// Copy with a new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                             shape_to_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    void fill(T value) {
        for (auto& v : data_) v = value;
    }

    bool operator==(const Tensor& other) const = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const noexcept {
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) off = off * shape_[axis++] + i;
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

using Complex = std::complex<double>;
using RealTensor = Tensor<double>;
using ComplexTensor = Tensor<Complex>;

/// Real [batch, height, width, channels] activation map.
using FeatureMap = RealTensor;

void require_shape(const RealTensor& t, const Shape& expected, const char* what);

// -- elementwise helpers ----------------------------------------------------

RealTensor add(const RealTensor& a, const RealTensor& b);
void add_inplace(RealTensor& a, const RealTensor& b);
RealTensor scale(const RealTensor& a, double s);
double max_abs_diff(const RealTensor& a, const RealTensor& b);
bool all_finite(const RealTensor& t);

// -- matrix products ---------------------------------------------------------

/// Matrix product over the last two axes. Leading axes must match exactly, or
/// either operand may be rank 2 and is then broadcast over the other's batch.
RealTensor matmul(const RealTensor& a, const RealTensor& b);

/// Transpose of the last two axes.
RealTensor transpose_last2(const RealTensor& a);

/// y = x·w + b over the last axis of x. w is [in, out]; bias may be empty.
RealTensor linear(const RealTensor& x, const RealTensor& w, const RealTensor& bias);

struct LinearGrads {
    RealTensor x;
    RealTensor w;
    RealTensor bias;  // empty when the forward had no bias
};

LinearGrads linear_backward(const RealTensor& x, const RealTensor& w, bool has_bias,
                            const RealTensor& grad_y);

/// Accumulating variant: grad_w / grad_bias are added to in place, the input
/// gradient is returned.
RealTensor linear_backward_accumulate(const RealTensor& x, const RealTensor& w,
                                      const RealTensor& grad_y, RealTensor& grad_w,
                                      RealTensor* grad_bias);

// -- normalisation and activations ------------------------------------------

RealTensor softmax_lastaxis(const RealTensor& x);

struct LayerNormCache {
    RealTensor normalized;  // pre-affine x̂
    std::vector<double> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Per-token normalisation over the last axis followed by a per-channel affine.
RealTensor layer_norm(const RealTensor& x, const RealTensor& gamma, const RealTensor& beta,
                      double eps = kLayerNormEps, LayerNormCache* cache = nullptr);

/// Returns grad_x; adds into grad_gamma / grad_beta.
RealTensor layer_norm_backward(const LayerNormCache& cache, const RealTensor& gamma,
                               const RealTensor& grad_y, RealTensor& grad_gamma,
                               RealTensor& grad_beta);

RealTensor gelu(const RealTensor& x);
RealTensor gelu_backward(const RealTensor& x, const RealTensor& grad_y);
RealTensor sigmoid(const RealTensor& x);
double sigmoid(double x);

/// [B,H,W,C] -> [B,C] spatial mean.
RealTensor global_avg_pool(const FeatureMap& x);
FeatureMap global_avg_pool_backward(const Shape& input_shape, const RealTensor& grad_y);

}  // namespace fwnet
