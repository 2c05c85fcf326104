#pragma once

#include <memory>
#include <string>
#include <vector>

#include "insidebias/rng.hpp"
#include "insidebias/tensor.hpp"

namespace insidebias {

/// One trainable tensor with its gradient and SGD momentum buffer.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor momentum;

    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape());
        momentum = Tensor(value.shape());
    }
};

/// Which statistic a probe point contributes to: conv-style feature maps
/// (default for the Activation Ratio) or dense layers viewed as 1xN maps.
enum class ProbeKind { none, conv, dense };

struct TraceEntry {
    std::string layer;     // probe-point name
    ProbeKind kind;
    Tensor activation;     // batched: [N, m, h, w] or [N, f]
};

struct ForwardMode {
    bool training = false;
    bool capture = false;
};

/// Base class for the layer set needed by the two stock architectures.
/// Layers operate on batched tensors ([N, C, H, W] or [N, F]) and cache
/// whatever forward state their backward pass needs.
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    const std::string& name() const { return name_; }

    virtual Tensor forward(const Tensor& x, const ForwardMode& mode) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    /// Evaluation-mode forward in 64-bit floats, in place. Used by the
    /// gradient checker, where float32 forward rounding would swamp the
    /// finite differences. Must compute the same function as forward() in
    /// eval mode, promoted to double.
    virtual void forward_f64(std::vector<double>& x, Shape& shape) const = 0;
    virtual void collect_params(std::vector<Param*>&) {}
    /// Probe points this layer exposes, in order (empty for most layers).
    virtual void probe_points(std::vector<std::pair<std::string, ProbeKind>>&) const {}
    /// Captured activations from the last forward with capture enabled.
    virtual void collect_trace(std::vector<TraceEntry>&) {}
    /// Release cached forward state (kept between forward and backward).
    virtual void clear_cache() {}

protected:
    std::string name_;
};

/// 3x3/1x1 convolution over [N, m_in, h, w], im2col + SGEMM inside.
class Conv2dLayer : public Layer {
public:
    Conv2dLayer(std::string name, std::size_t m_in, std::size_t m_out, std::size_t kernel,
                std::size_t stride, std::size_t padding);

    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;
    void collect_params(std::vector<Param*>& out) override;
    void clear_cache() override;

    void init_he_uniform(Rng& rng);
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return padding_; }

private:
    std::size_t m_in_, m_out_, kernel_, stride_, padding_;
    Param weight_;  // [m_out, m_in, k, k]
    Param bias_;    // [m_out]
    Tensor cached_input_;
    // Scratch buffers reused across steps; re-allocating these (tens of MB
    // per step on the larger layers) dominates the cost of the GEMMs.
    std::vector<float> col_;
    std::vector<float> tmp_;
    std::vector<float> gcm_;
    std::vector<float> dcol_;
};

/// Element-wise ReLU; optionally a named probe point.
class ReluLayer : public Layer {
public:
    /// `probe_name` defaults to the layer name; probes are usually named
    /// after the convolution they follow.
    ReluLayer(std::string name, ProbeKind probe = ProbeKind::none, std::string probe_name = "");

    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;
    void probe_points(std::vector<std::pair<std::string, ProbeKind>>& out) const override;
    void collect_trace(std::vector<TraceEntry>& out) override;
    void clear_cache() override;

private:
    ProbeKind probe_;
    std::string probe_name_;
    Tensor cached_output_;
    bool captured_ = false;
};

/// 2x2 max-pooling with stride 2 over [N, C, h, w].
class MaxPool2Layer : public Layer {
public:
    explicit MaxPool2Layer(std::string name) : Layer(std::move(name)) {}

    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;
    void clear_cache() override;

private:
    Shape in_shape_;
    std::vector<std::uint32_t> argmax_;
};

/// Collapse [N, C, H, W] to [N, C*H*W] (metadata only, same layout).
class FlattenLayer : public Layer {
public:
    explicit FlattenLayer(std::string name) : Layer(std::move(name)) {}
    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;

private:
    Shape in_shape_;
};

/// Fully connected layer over [N, in] -> [N, out].
class DenseLayer : public Layer {
public:
    DenseLayer(std::string name, std::size_t in_features, std::size_t out_features);

    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;
    void collect_params(std::vector<Param*>& out) override;
    void clear_cache() override;

    void init_he_uniform(Rng& rng);
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

private:
    std::size_t in_, out_;
    Param weight_;  // [out, in]
    Param bias_;    // [out]
    Tensor cached_input_;
};

/// Inverted dropout: seeded mask and 1/(1-rate) scaling while training,
/// identity at eval time.
class DropoutLayer : public Layer {
public:
    DropoutLayer(std::string name, float rate, Rng* rng);

    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;
    void clear_cache() override;

private:
    float rate_;
    Rng* rng_;      // owned by the model
    std::vector<std::uint8_t> mask_;
    bool active_ = false;
};

/// Residual building block: conv(3x3, stride 2) + ReLU + conv(3x3), merged
/// with a 1x1 stride-2 shortcut convolution, then ReLU. Probe points at the
/// internal post-ReLU and at the post-merge activation.
class ResidualBlockLayer : public Layer {
public:
    ResidualBlockLayer(std::string name, std::size_t m_in, std::size_t m_out);

    Tensor forward(const Tensor& x, const ForwardMode& mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void forward_f64(std::vector<double>& x, Shape& shape) const override;
    void collect_params(std::vector<Param*>& out) override;
    void probe_points(std::vector<std::pair<std::string, ProbeKind>>& out) const override;
    void collect_trace(std::vector<TraceEntry>& out) override;
    void clear_cache() override;

    void init_he_uniform(Rng& rng);
    /// Test hook: when disabled the shortcut contributes nothing to the merge.
    void set_shortcut_enabled(bool on) { shortcut_enabled_ = on; }

private:
    Conv2dLayer conv1_;
    ReluLayer relu1_;
    Conv2dLayer conv2_;
    Conv2dLayer shortcut_;
    bool shortcut_enabled_ = true;
    Tensor cached_merge_out_;  // post-merge ReLU output (mask source)
    bool captured_ = false;
};

namespace detail {
/// out[N, m_out, oh, ow] = conv(x[N, m_in, h, w]); GEMM-backed batched path.
Tensor conv_forward_batched(const Tensor& x, const Tensor& weight, const Tensor& bias,
                            std::size_t stride, std::size_t padding, std::vector<float>& col_scratch,
                            std::vector<float>& tmp_scratch);
}  // namespace detail

}  // namespace insidebias
