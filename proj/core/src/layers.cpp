#include "insidebias/layers.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

#include "insidebias/errors.hpp"

namespace insidebias {

namespace {

struct ConvGeom {
    std::size_t n, m_in, h, w, oh, ow, k;
};

ConvGeom conv_geom(const Shape& in_shape, const Tensor& weight, std::size_t stride,
                   std::size_t padding, const std::string& layer) {
    if (in_shape.size() != 4) {
        throw ShapeError(layer + ": expected [N, C, H, W] input, got " + shape_to_string(in_shape));
    }
    if (in_shape[1] != weight.dim(1)) {
        throw ShapeError(layer + ": input has " + std::to_string(in_shape[1]) +
                         " maps, layer expects " + std::to_string(weight.dim(1)));
    }
    ConvGeom g;
    g.n = in_shape[0];
    g.m_in = in_shape[1];
    g.h = in_shape[2];
    g.w = in_shape[3];
    g.oh = conv_out_extent(g.h, weight.dim(2), stride, padding);
    g.ow = conv_out_extent(g.w, weight.dim(3), stride, padding);
    g.k = weight.dim(1) * weight.dim(2) * weight.dim(3);
    return g;
}

// Row-major patch matrix: k rows of n*oh*ow values (row stride = n*oh*ow);
// column c holds the receptive field of output pixel c, row order matching
// the flattened [m_in, kh, kw] weight layout. Row-major keeps the inner
// loop writing consecutive addresses, which dominates im2col cost.
void im2col(const float* in, const ConvGeom& g, std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t padding, float* col) {
    const std::size_t spatial = g.oh * g.ow;
    const std::size_t total = g.n * spatial;
    const long pad = static_cast<long>(padding);
    for (std::size_t img = 0; img < g.n; ++img) {
        const float* src = in + img * g.m_in * g.h * g.w;
        float* col_img = col + img * spatial;
        for (std::size_t j = 0; j < g.m_in; ++j) {
            const float* plane = src + j * g.h * g.w;
            for (std::size_t fy = 0; fy < kh; ++fy) {
                for (std::size_t fx = 0; fx < kw; ++fx) {
                    const std::size_t row = (j * kh + fy) * kw + fx;
                    float* dst = col_img + row * total;
                    for (std::size_t oy = 0; oy < g.oh; ++oy) {
                        const long y = static_cast<long>(oy * stride + fy) - pad;
                        const bool y_ok = y >= 0 && y < static_cast<long>(g.h);
                        for (std::size_t ox = 0; ox < g.ow; ++ox) {
                            const long x = static_cast<long>(ox * stride + fx) - pad;
                            const float v = (y_ok && x >= 0 && x < static_cast<long>(g.w))
                                                ? plane[y * static_cast<long>(g.w) + x]
                                                : 0.0f;
                            dst[oy * g.ow + ox] = v;
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add the patch-gradient matrix back onto the input gradient.
void col2im_add(const float* col, const ConvGeom& g, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t padding, float* din) {
    const std::size_t spatial = g.oh * g.ow;
    const std::size_t total = g.n * spatial;
    const long pad = static_cast<long>(padding);
    for (std::size_t img = 0; img < g.n; ++img) {
        float* dst_img = din + img * g.m_in * g.h * g.w;
        const float* col_img = col + img * spatial;
        for (std::size_t j = 0; j < g.m_in; ++j) {
            float* plane = dst_img + j * g.h * g.w;
            for (std::size_t fy = 0; fy < kh; ++fy) {
                for (std::size_t fx = 0; fx < kw; ++fx) {
                    const std::size_t row = (j * kh + fy) * kw + fx;
                    const float* src = col_img + row * total;
                    for (std::size_t oy = 0; oy < g.oh; ++oy) {
                        const long y = static_cast<long>(oy * stride + fy) - pad;
                        if (y < 0 || y >= static_cast<long>(g.h)) continue;
                        for (std::size_t ox = 0; ox < g.ow; ++ox) {
                            const long x = static_cast<long>(ox * stride + fx) - pad;
                            if (x < 0 || x >= static_cast<long>(g.w)) continue;
                            plane[y * static_cast<long>(g.w) + x] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

// out[n][c][s] <- tmp[c * total + n * spatial + s]
void channel_major_to_nchw(const float* tmp, std::size_t n, std::size_t channels,
                           std::size_t spatial, float* out) {
    const std::size_t total = n * spatial;
    for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::memcpy(out + (img * channels + c) * spatial, tmp + c * total + img * spatial,
                        spatial * sizeof(float));
        }
    }
}

void nchw_to_channel_major(const float* in, std::size_t n, std::size_t channels,
                           std::size_t spatial, float* tmp) {
    const std::size_t total = n * spatial;
    for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::memcpy(tmp + c * total + img * spatial, in + (img * channels + c) * spatial,
                        spatial * sizeof(float));
        }
    }
}

}  // namespace

namespace detail {

Tensor conv_forward_batched(const Tensor& x, const Tensor& weight, const Tensor& bias,
                            std::size_t stride, std::size_t padding,
                            std::vector<float>& col_scratch, std::vector<float>& tmp_scratch) {
    const ConvGeom g = conv_geom(x.shape(), weight, stride, padding, "conv");
    const std::size_t m_out = weight.dim(0);
    const std::size_t kh = weight.dim(2), kw = weight.dim(3);
    const std::size_t spatial = g.oh * g.ow;
    const std::size_t total = g.n * spatial;

    col_scratch.resize(g.k * total);
    im2col(x.data(), g, kh, kw, stride, padding, col_scratch.data());

    // tmp (m_out x total, row-major) = W (m_out x k) * col (k x total).
    tmp_scratch.resize(total * m_out);
    std::vector<float>& tmp = tmp_scratch;
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m_out),
                static_cast<int>(total), static_cast<int>(g.k), 1.0f, weight.data(),
                static_cast<int>(g.k), col_scratch.data(), static_cast<int>(total), 0.0f,
                tmp.data(), static_cast<int>(total));
    for (std::size_t c = 0; c < m_out; ++c) {
        const float b = bias[c];
        float* p = tmp.data() + c * total;
        for (std::size_t i = 0; i < total; ++i) p[i] += b;
    }

    Tensor out({g.n, m_out, g.oh, g.ow});
    channel_major_to_nchw(tmp.data(), g.n, m_out, spatial, out.data());
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv2dLayer

Conv2dLayer::Conv2dLayer(std::string name, std::size_t m_in, std::size_t m_out, std::size_t kernel,
                         std::size_t stride, std::size_t padding)
    : Layer(std::move(name)),
      m_in_(m_in),
      m_out_(m_out),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_(name_ + ".weight", Tensor({m_out, m_in, kernel, kernel})),
      bias_(name_ + ".bias", Tensor({m_out})) {}

void Conv2dLayer::init_he_uniform(Rng& rng) {
    const std::size_t fan_in = m_in_ * kernel_ * kernel_;
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (auto& v : weight_.value.values()) v = uniform_in(rng, -limit, limit);
    std::fill(bias_.value.values().begin(), bias_.value.values().end(), 0.0f);
}

Tensor Conv2dLayer::forward(const Tensor& x, const ForwardMode& /*mode*/) {
    const ConvGeom g = conv_geom(x.shape(), weight_.value, stride_, padding_, name_);
    (void)g;
    cached_input_ = x;  // shape + values kept for the backward pass
    return detail::conv_forward_batched(x, weight_.value, bias_.value, stride_, padding_, col_,
                                        tmp_);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out) {
    if (cached_input_.empty()) throw Error(name_ + ": backward before forward");
    const ConvGeom g = conv_geom(cached_input_.shape(), weight_.value, stride_, padding_, name_);
    const std::size_t spatial = g.oh * g.ow;
    const std::size_t total = g.n * spatial;
    const std::size_t kh = weight_.value.dim(2), kw = weight_.value.dim(3);

    // col_ still holds the forward patches for this batch.
    if (col_.size() != g.k * total) {
        col_.resize(g.k * total);
        im2col(cached_input_.data(), g, kh, kw, stride_, padding_, col_.data());
    }

    gcm_.resize(total * m_out_);
    std::vector<float>& g_cm = gcm_;
    nchw_to_channel_major(grad_out.data(), g.n, m_out_, spatial, g_cm.data());

    // dW (m_out x k) += g (m_out x total) * col^T (total x k)
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m_out_),
                static_cast<int>(g.k), static_cast<int>(total), 1.0f, g_cm.data(),
                static_cast<int>(total), col_.data(), static_cast<int>(total), 1.0f,
                weight_.grad.data(), static_cast<int>(g.k));

    for (std::size_t c = 0; c < m_out_; ++c) {
        double acc = 0.0;
        const float* p = g_cm.data() + c * total;
        for (std::size_t i = 0; i < total; ++i) acc += p[i];
        bias_.grad[c] += static_cast<float>(acc);
    }

    // dcol (k x total) = W^T (k x m_out) * g (m_out x total)
    dcol_.resize(g.k * total);
    std::vector<float>& dcol = dcol_;
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(g.k),
                static_cast<int>(total), static_cast<int>(m_out_), 1.0f, weight_.value.data(),
                static_cast<int>(g.k), g_cm.data(), static_cast<int>(total), 0.0f, dcol.data(),
                static_cast<int>(total));

    Tensor dx(cached_input_.shape());
    col2im_add(dcol.data(), g, kh, kw, stride_, padding_, dx.data());
    return dx;
}

void Conv2dLayer::collect_params(std::vector<Param*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

void Conv2dLayer::clear_cache() {
    cached_input_ = Tensor();
    for (auto* b : {&col_, &tmp_, &gcm_, &dcol_}) {
        b->clear();
        b->shrink_to_fit();
    }
}

// ---------------------------------------------------------------------------
// ReluLayer

ReluLayer::ReluLayer(std::string name, ProbeKind probe, std::string probe_name)
    : Layer(std::move(name)), probe_(probe), probe_name_(probe_name.empty() ? name_ : std::move(probe_name)) {}

Tensor ReluLayer::forward(const Tensor& x, const ForwardMode& mode) {
    Tensor out(x.shape());
    const float* in = x.data();
    float* dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = in[i] > 0.0f ? in[i] : 0.0f;
    cached_output_ = out;
    captured_ = mode.capture && probe_ != ProbeKind::none;
    return out;
}

Tensor ReluLayer::backward(const Tensor& grad_out) {
    if (cached_output_.empty()) throw Error(name_ + ": backward before forward");
    Tensor dx(grad_out.shape());
    const float* g = grad_out.data();
    const float* y = cached_output_.data();
    float* dst = dx.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dst[i] = y[i] > 0.0f ? g[i] : 0.0f;
    return dx;
}

void ReluLayer::probe_points(std::vector<std::pair<std::string, ProbeKind>>& out) const {
    if (probe_ != ProbeKind::none) out.emplace_back(probe_name_, probe_);
}

void ReluLayer::collect_trace(std::vector<TraceEntry>& out) {
    if (captured_) out.push_back({probe_name_, probe_, cached_output_});
}

void ReluLayer::clear_cache() {
    cached_output_ = Tensor();
    captured_ = false;
}

// ---------------------------------------------------------------------------
// MaxPool2Layer

Tensor MaxPool2Layer::forward(const Tensor& x, const ForwardMode& /*mode*/) {
    if (x.rank() != 4) throw ShapeError(name_ + ": expected [N, C, H, W], got " + shape_to_string(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < 2 || w < 2) throw ShapeError(name_ + ": spatial extent below 2x2");
    const std::size_t oh = h / 2, ow = w / 2;
    in_shape_ = x.shape();
    Tensor out({n, c, oh, ow});
    argmax_.resize(out.size());
    const float* in = x.data();
    float* dst = out.data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const float* src = in + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t base = (2 * oy) * w + 2 * ox;
                std::size_t best = base;
                float bv = src[base];
                const std::size_t cands[3] = {base + 1, base + w, base + w + 1};
                for (std::size_t cand : cands) {
                    const float v = src[cand];
                    if (v > bv) {
                        bv = v;
                        best = cand;
                    }
                }
                const std::size_t o = (plane * oh + oy) * ow + ox;
                dst[o] = bv;
                argmax_[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return out;
}

Tensor MaxPool2Layer::backward(const Tensor& grad_out) {
    if (in_shape_.empty()) throw Error(name_ + ": backward before forward");
    const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor dx(in_shape_);
    const float* g = grad_out.data();
    float* dst = dx.data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        float* dplane = dst + plane * h * w;
        const std::size_t off = plane * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) {
            dplane[argmax_[off + i]] += g[off + i];
        }
    }
    return dx;
}

void MaxPool2Layer::clear_cache() {
    in_shape_.clear();
    argmax_.clear();
    argmax_.shrink_to_fit();
}

// ---------------------------------------------------------------------------
// FlattenLayer

Tensor FlattenLayer::forward(const Tensor& x, const ForwardMode& /*mode*/) {
    if (x.rank() < 2) throw ShapeError(name_ + ": expected batched input");
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor FlattenLayer::backward(const Tensor& grad_out) {
    if (in_shape_.empty()) throw Error(name_ + ": backward before forward");
    return grad_out.reshaped(in_shape_);
}

// ---------------------------------------------------------------------------
// DenseLayer

DenseLayer::DenseLayer(std::string name, std::size_t in_features, std::size_t out_features)
    : Layer(std::move(name)),
      in_(in_features),
      out_(out_features),
      weight_(name_ + ".weight", Tensor({out_features, in_features})),
      bias_(name_ + ".bias", Tensor({out_features})) {}

void DenseLayer::init_he_uniform(Rng& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(in_));
    for (auto& v : weight_.value.values()) v = uniform_in(rng, -limit, limit);
    std::fill(bias_.value.values().begin(), bias_.value.values().end(), 0.0f);
}

Tensor DenseLayer::forward(const Tensor& x, const ForwardMode& /*mode*/) {
    if (x.rank() != 2 || x.dim(1) != in_) {
        throw ShapeError(name_ + ": expected [N, " + std::to_string(in_) + "], got " +
                         shape_to_string(x.shape()));
    }
    cached_input_ = x;
    const std::size_t n = x.dim(0);
    Tensor out({n, out_});
    // Y^T (out x N) = W (out x in) * X^T (in x N); buffers are row-major so
    // they read as the transposed column-major operands used here.
    cblas_sgemm(CblasColMajor, CblasTrans, CblasNoTrans, static_cast<int>(out_),
                static_cast<int>(n), static_cast<int>(in_), 1.0f, weight_.value.data(),
                static_cast<int>(in_), x.data(), static_cast<int>(in_), 0.0f, out.data(),
                static_cast<int>(out_));
    float* dst = out.data();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < out_; ++c) dst[r * out_ + c] += bias_.value[c];
    }
    return out;
}

Tensor DenseLayer::backward(const Tensor& grad_out) {
    if (cached_input_.empty()) throw Error(name_ + ": backward before forward");
    const std::size_t n = grad_out.dim(0);

    // dW^T (in x out) += X^T (in x N) * G (N x out)
    cblas_sgemm(CblasColMajor, CblasNoTrans, CblasTrans, static_cast<int>(in_),
                static_cast<int>(out_), static_cast<int>(n), 1.0f, cached_input_.data(),
                static_cast<int>(in_), grad_out.data(), static_cast<int>(out_), 1.0f,
                weight_.grad.data(), static_cast<int>(in_));
    for (std::size_t c = 0; c < out_; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += grad_out[r * out_ + c];
        bias_.grad[c] += static_cast<float>(acc);
    }

    // dX^T (in x N) = W^T (in x out) * G^T (out x N)
    Tensor dx({n, in_});
    cblas_sgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(in_),
                static_cast<int>(n), static_cast<int>(out_), 1.0f, weight_.value.data(),
                static_cast<int>(in_), grad_out.data(), static_cast<int>(out_), 0.0f, dx.data(),
                static_cast<int>(in_));
    return dx;
}

void DenseLayer::collect_params(std::vector<Param*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

void DenseLayer::clear_cache() {
    cached_input_ = Tensor();
}

// ---------------------------------------------------------------------------
// DropoutLayer

DropoutLayer::DropoutLayer(std::string name, float rate, Rng* rng)
    : Layer(std::move(name)), rate_(rate), rng_(rng) {
    if (rate_ < 0.0f || rate_ >= 1.0f) throw ConfigError(name_ + ": dropout rate must be in [0, 1)");
}

Tensor DropoutLayer::forward(const Tensor& x, const ForwardMode& mode) {
    active_ = mode.training && rate_ > 0.0f;
    if (!active_) return x;
    const float scale = 1.0f / (1.0f - rate_);
    mask_.resize(x.size());
    Tensor out(x.shape());
    float* dst = out.data();
    const float* in = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool keep = uniform_unit(*rng_) >= rate_;
        mask_[i] = keep ? 1 : 0;
        dst[i] = keep ? in[i] * scale : 0.0f;
    }
    return out;
}

Tensor DropoutLayer::backward(const Tensor& grad_out) {
    if (!active_) return grad_out;
    const float scale = 1.0f / (1.0f - rate_);
    Tensor dx(grad_out.shape());
    const float* g = grad_out.data();
    float* dst = dx.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dst[i] = mask_[i] ? g[i] * scale : 0.0f;
    return dx;
}

void DropoutLayer::clear_cache() {
    mask_.clear();
    mask_.shrink_to_fit();
}

// ---------------------------------------------------------------------------
// ResidualBlockLayer

ResidualBlockLayer::ResidualBlockLayer(std::string name, std::size_t m_in, std::size_t m_out)
    : Layer(std::move(name)),
      conv1_(name_ + ".conv1", m_in, m_out, 3, /*stride=*/2, /*padding=*/1),
      relu1_(name_ + ".conv1:relu", ProbeKind::conv, name_ + ".conv1"),
      conv2_(name_ + ".conv2", m_out, m_out, 3, /*stride=*/1, /*padding=*/1),
      shortcut_(name_ + ".shortcut", m_in, m_out, 1, /*stride=*/2, /*padding=*/0) {}

void ResidualBlockLayer::init_he_uniform(Rng& rng) {
    conv1_.init_he_uniform(rng);
    conv2_.init_he_uniform(rng);
    shortcut_.init_he_uniform(rng);
}

Tensor ResidualBlockLayer::forward(const Tensor& x, const ForwardMode& mode) {
    Tensor main = conv2_.forward(relu1_.forward(conv1_.forward(x, mode), mode), mode);
    if (shortcut_enabled_) {
        const Tensor sc = shortcut_.forward(x, mode);
        if (sc.shape() != main.shape()) {
            throw ShapeError(name_ + ": shortcut shape " + shape_to_string(sc.shape()) +
                             " vs main path " + shape_to_string(main.shape()));
        }
        for (std::size_t i = 0; i < main.size(); ++i) main[i] += sc[i];
    }
    Tensor out(main.shape());
    for (std::size_t i = 0; i < main.size(); ++i) out[i] = main[i] > 0.0f ? main[i] : 0.0f;
    cached_merge_out_ = out;
    captured_ = mode.capture;
    return out;
}

Tensor ResidualBlockLayer::backward(const Tensor& grad_out) {
    if (cached_merge_out_.empty()) throw Error(name_ + ": backward before forward");
    Tensor gmerge(grad_out.shape());
    for (std::size_t i = 0; i < gmerge.size(); ++i) {
        gmerge[i] = cached_merge_out_[i] > 0.0f ? grad_out[i] : 0.0f;
    }
    Tensor dx = conv1_.backward(relu1_.backward(conv2_.backward(gmerge)));
    if (shortcut_enabled_) {
        const Tensor dsc = shortcut_.backward(gmerge);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsc[i];
    }
    return dx;
}

void ResidualBlockLayer::collect_params(std::vector<Param*>& out) {
    conv1_.collect_params(out);
    conv2_.collect_params(out);
    shortcut_.collect_params(out);
}

void ResidualBlockLayer::probe_points(std::vector<std::pair<std::string, ProbeKind>>& out) const {
    relu1_.probe_points(out);
    out.emplace_back(name_ + ".out", ProbeKind::conv);
}

void ResidualBlockLayer::collect_trace(std::vector<TraceEntry>& out) {
    relu1_.collect_trace(out);
    if (captured_) out.push_back({name_ + ".out", ProbeKind::conv, cached_merge_out_});
}

void ResidualBlockLayer::clear_cache() {
    conv1_.clear_cache();
    relu1_.clear_cache();
    conv2_.clear_cache();
    shortcut_.clear_cache();
    cached_merge_out_ = Tensor();
    captured_ = false;
}

// ---- double-precision eval forwards (gradient checker support) ----
//
// These mirror the float32 eval-mode forwards exactly, with every product and
// sum carried in double. The conv path uses plain nested loops: the checker
// only pushes a handful of samples through, so clarity wins over GEMM here.

void Conv2dLayer::forward_f64(std::vector<double>& x, Shape& shape) const {
    const ConvGeom g = conv_geom(shape, weight_.value, stride_, padding_, name_);
    const std::size_t kh = weight_.value.dim(2), kw = weight_.value.dim(3);
    std::vector<double> out(g.n * m_out_ * g.oh * g.ow);
    const long pad = static_cast<long>(padding_);
    for (std::size_t img = 0; img < g.n; ++img) {
        const double* src = x.data() + img * g.m_in * g.h * g.w;
        double* dst = out.data() + img * m_out_ * g.oh * g.ow;
        for (std::size_t m = 0; m < m_out_; ++m) {
            const float* wm = weight_.value.data() + m * g.m_in * kh * kw;
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    double acc = bias_.value[m];
                    for (std::size_t j = 0; j < g.m_in; ++j) {
                        const double* plane = src + j * g.h * g.w;
                        for (std::size_t fy = 0; fy < kh; ++fy) {
                            const long y = static_cast<long>(oy * stride_ + fy) - pad;
                            if (y < 0 || y >= static_cast<long>(g.h)) continue;
                            for (std::size_t fx = 0; fx < kw; ++fx) {
                                const long px = static_cast<long>(ox * stride_ + fx) - pad;
                                if (px < 0 || px >= static_cast<long>(g.w)) continue;
                                acc += static_cast<double>(wm[(j * kh + fy) * kw + fx]) *
                                       plane[y * static_cast<long>(g.w) + px];
                            }
                        }
                    }
                    dst[(m * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    x = std::move(out);
    shape = {g.n, m_out_, g.oh, g.ow};
}

void ReluLayer::forward_f64(std::vector<double>& x, Shape& /*shape*/) const {
    for (double& v : x) v = v > 0.0 ? v : 0.0;
}

void MaxPool2Layer::forward_f64(std::vector<double>& x, Shape& shape) const {
    const std::size_t n = shape[0], c = shape[1], h = shape[2], w = shape[3];
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<double> out(n * c * oh * ow);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* src = x.data() + plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t base = (2 * oy) * w + 2 * ox;
                double bv = src[base];
                bv = std::max(bv, src[base + 1]);
                bv = std::max(bv, src[base + w]);
                bv = std::max(bv, src[base + w + 1]);
                out[(plane * oh + oy) * ow + ox] = bv;
            }
        }
    }
    x = std::move(out);
    shape = {n, c, oh, ow};
}

void FlattenLayer::forward_f64(std::vector<double>& /*x*/, Shape& shape) const {
    shape = {shape[0], shape[1] * shape[2] * shape[3]};
}

void DenseLayer::forward_f64(std::vector<double>& x, Shape& shape) const {
    const std::size_t n = shape[0];
    std::vector<double> out(n * out_);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = x.data() + r * in_;
        for (std::size_t c = 0; c < out_; ++c) {
            const float* wr = weight_.value.data() + c * in_;
            double acc = bias_.value[c];
            for (std::size_t i = 0; i < in_; ++i) acc += static_cast<double>(wr[i]) * row[i];
            out[r * out_ + c] = acc;
        }
    }
    x = std::move(out);
    shape = {n, out_};
}

void DropoutLayer::forward_f64(std::vector<double>& /*x*/, Shape& /*shape*/) const {
    // eval mode: identity
}

void ResidualBlockLayer::forward_f64(std::vector<double>& x, Shape& shape) const {
    std::vector<double> main = x;
    Shape main_shape = shape;
    conv1_.forward_f64(main, main_shape);
    relu1_.forward_f64(main, main_shape);
    conv2_.forward_f64(main, main_shape);
    if (shortcut_enabled_) {
        shortcut_.forward_f64(x, shape);
        for (std::size_t i = 0; i < main.size(); ++i) main[i] += x[i];
    }
    for (double& v : main) v = v > 0.0 ? v : 0.0;
    x = std::move(main);
    shape = main_shape;
}

}  // namespace insidebias
