#include "insidebias/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace insidebias {

#ifdef __GLIBC__
namespace {
// Activation/gradient tensors run to tens of MB and are allocated every
// step. Left at its default 128 KB mmap threshold, glibc serves each one
// with a fresh mmap and returns it on free, so every step pays page-fault
// zeroing for the whole working set. Keeping large blocks on the heap lets
// the allocator recycle them.
const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
}();
}  // namespace
#endif

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

std::size_t Tensor::offset_of(const std::vector<std::size_t>& idx) const {
    if (idx.size() != shape_.size()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                         std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= shape_[i]) throw ShapeError("index out of range in dim " + std::to_string(i));
        off = off * shape_[i] + idx[i];
    }
    return off;
}

float& Tensor::at(const std::vector<std::size_t>& idx) { return data_[offset_of(idx)]; }

float Tensor::at(const std::vector<std::size_t>& idx) const {
    return data_[offset_of(idx)];
}

std::vector<float>& Tensor::grad() {
    if (grad_.empty()) throw Error("gradient buffer not allocated");
    return grad_;
}

const std::vector<float>& Tensor::grad() const {
    if (grad_.empty()) throw Error("gradient buffer not allocated");
    return grad_;
}

void Tensor::alloc_grad() {
    grad_.assign(data_.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (grad_.empty()) {
        alloc_grad();
    } else {
        std::fill(grad_.begin(), grad_.end(), 0.0f);
    }
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != data_.size()) {
        throw ShapeError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(new_shape) +
                         " changes element count");
    }
    return Tensor(std::move(new_shape), data_);
}

void Tensor::check_finite(std::string_view context) const {
    for (float v : data_) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value in " + std::string(context));
        }
    }
    for (float v : grad_) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite gradient in " + std::string(context));
        }
    }
}

bool Tensor::same_values(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

void ConvFilterBank::validate() const {
    if (filters.rank() != 4) {
        throw ShapeError("filter bank must be [m_out, m_in, kh, kw], got " + shape_to_string(filters.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != filters.dim(0)) {
        throw ShapeError("bias shape " + shape_to_string(bias.shape()) + " must be [" +
                         std::to_string(filters.dim(0)) + "]");
    }
    if (stride == 0) throw ShapeError("stride must be positive");
    if (kernel_h() < 1 || kernel_w() < 1) throw ShapeError("kernel extents must be >= 1");
}

std::size_t conv_out_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
    const std::size_t padded = extent + 2 * padding;
    if (padded < kernel) {
        throw ShapeError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                         std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvFilterBank& bank) {
    bank.validate();
    if (input.rank() != 3) {
        throw ShapeError("conv2d input must be [m_in, h, w], got " + shape_to_string(input.shape()));
    }
    if (input.dim(0) != bank.in_maps()) {
        throw ShapeError("conv2d input has " + std::to_string(input.dim(0)) + " maps, bank expects " +
                         std::to_string(bank.in_maps()));
    }
    input.check_finite("conv2d input");
    bank.filters.check_finite("conv2d filters");
    bank.bias.check_finite("conv2d bias");

    const std::size_t m_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t m_out = bank.out_maps(), kh = bank.kernel_h(), kw = bank.kernel_w();
    const std::size_t oh = conv_out_extent(h, kh, bank.stride, bank.padding);
    const std::size_t ow = conv_out_extent(w, kw, bank.stride, bank.padding);

    Tensor out({m_out, oh, ow});
    const float* in = input.data();
    const float* flt = bank.filters.data();
    float* dst = out.data();
    const long pad = static_cast<long>(bank.padding);

    for (std::size_t i = 0; i < m_out; ++i) {
        const float b = bank.bias[i];
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = b;
                const long y0 = static_cast<long>(oy * bank.stride) - pad;
                const long x0 = static_cast<long>(ox * bank.stride) - pad;
                for (std::size_t j = 0; j < m_in; ++j) {
                    const float* f = flt + ((i * m_in + j) * kh) * kw;
                    const float* im = in + j * h * w;
                    for (std::size_t fy = 0; fy < kh; ++fy) {
                        const long y = y0 + static_cast<long>(fy);
                        if (y < 0 || y >= static_cast<long>(h)) continue;
                        for (std::size_t fx = 0; fx < kw; ++fx) {
                            const long x = x0 + static_cast<long>(fx);
                            if (x < 0 || x >= static_cast<long>(w)) continue;
                            acc += static_cast<double>(f[fy * kw + fx]) * im[y * static_cast<long>(w) + x];
                        }
                    }
                }
                dst[(i * oh + oy) * ow + ox] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Tensor apply_activation(const Tensor& x, Activation kind) {
    x.check_finite("activation input");
    if (kind == Activation::relu) {
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
        return out;
    }
    return softmax_rows(x);
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 1 && logits.rank() != 2) {
        throw ShapeError("softmax expects a vector or [n, classes] matrix, got " +
                         shape_to_string(logits.shape()));
    }
    logits.check_finite("softmax input");
    const std::size_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
    const std::size_t cols = logits.rank() == 2 ? logits.dim(1) : logits.dim(0);

    Tensor out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* in = logits.data() + r * cols;
        float* dst = out.data() + r * cols;
        float mx = in[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double e = std::exp(static_cast<double>(in[c] - mx));
            dst[c] = static_cast<float>(e);
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (std::size_t c = 0; c < cols; ++c) dst[c] *= inv;
    }
    return out;
}

}  // namespace insidebias
