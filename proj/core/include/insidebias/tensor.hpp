#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "insidebias/errors.hpp"

namespace insidebias {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense N-dimensional float32 array, row-major, with an optional gradient
/// buffer of the same shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Element access by multi-index (bounds-checked).
    float& at(const std::vector<std::size_t>& idx);
    float at(const std::vector<std::size_t>& idx) const;


    bool has_grad() const { return !grad_.empty(); }
    std::vector<float>& grad();
    const std::vector<float>& grad() const;
    void alloc_grad();
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

    /// Reinterpret the same data under a new shape of equal element count.
    Tensor reshaped(Shape new_shape) const;

    /// Throws NumericError naming `context` if any value (or gradient) is
    /// NaN/Inf.
    void check_finite(std::string_view context) const;

    bool same_values(const Tensor& other) const;

private:
    std::size_t offset_of(const std::vector<std::size_t>& idx) const;

    Shape shape_;
    std::vector<float> data_;
    std::vector<float> grad_;
};

/// Convolution parameters for one layer: filters [m_out, m_in, kh, kw] plus
/// per-output-map bias, stride and zero padding.
struct ConvFilterBank {
    Tensor filters;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_maps() const { return filters.dim(0); }
    std::size_t in_maps() const { return filters.dim(1); }
    std::size_t kernel_h() const { return filters.dim(2); }
    std::size_t kernel_w() const { return filters.dim(3); }

    void validate() const;
};

/// Output spatial extent: floor((extent + 2*padding - kernel)/stride) + 1.
std::size_t conv_out_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                            std::size_t padding);

/// 2-D cross-correlation of a single image [m_in, h, w] against a filter
/// bank, summed over input maps with bias added: output [m_out, h', w'].
Tensor conv2d(const Tensor& input, const ConvFilterBank& bank);

enum class Activation { relu, softmax };

/// Element-wise ReLU, or softmax over the last axis.
Tensor apply_activation(const Tensor& x, Activation kind);

/// Row-wise softmax of a [n, classes] (or [classes]) logit tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace insidebias
