#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "insidebias/layers.hpp"
#include "insidebias/rng.hpp"
#include "insidebias/tensor.hpp"

namespace insidebias {

using ActivationTrace = std::vector<TraceEntry>;

/// Ordered feed-forward graph of layers with named probe points.
/// The forward pass yields pre-softmax logits; softmax lives in the loss and
/// in predict().
class Model {
public:
    Model(std::string arch_id, std::array<std::size_t, 3> input_hwc, std::size_t num_classes,
          std::uint64_t seed);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const std::string& arch_id() const { return arch_id_; }
    /// Declared input as [H, W, C].
    const std::array<std::size_t, 3>& input_shape() const { return input_hwc_; }
    std::size_t num_classes() const { return num_classes_; }
    std::uint64_t seed() const { return seed_; }

    void add_layer(std::unique_ptr<Layer> layer);
    Layer& layer(const std::string& name);
    template <typename T>
    T& layer_as(const std::string& name) {
        return dynamic_cast<T&>(layer(name));
    }

    std::vector<Param*> params();
    std::size_t param_count() const;
    /// Probe-point names with their kinds, in topological order.
    std::vector<std::pair<std::string, ProbeKind>> probe_points() const;

    /// Batched forward: input [N, C, H, W] (or a single [C, H, W] image),
    /// returns logits [N, classes]. With `trace` non-null, post-activation
    /// tensors of every probe point are captured in layer order.
    Tensor forward(const Tensor& input, bool training = false, ActivationTrace* trace = nullptr);

    /// Reverse sweep from dLoss/dLogits through every layer; parameter
    /// gradients accumulate into Param::grad.
    Tensor backward(const Tensor& grad_logits);

    /// Softmax class probabilities, eval mode.
    Tensor predict(const Tensor& input);

    /// Eval-mode logits in 64-bit floats for a single [C, H, W] image.
    /// Backs the finite-difference checker, where float32 forward rounding
    /// would otherwise dominate the differences being measured.
    std::vector<double> logits_f64(const Tensor& input) const;

    // Heap-allocated so layer-held pointers survive Model moves.
    Rng& dropout_rng() { return *dropout_rng_; }
    /// Reset the dropout stream (training runs re-seed for reproducibility).
    void seed_dropout(std::uint64_t seed) { dropout_rng_->seed(seed); }

    /// Drop cached forward state and scratch buffers.
    void clear_caches();

private:
    std::string arch_id_;
    std::array<std::size_t, 3> input_hwc_;
    std::size_t num_classes_;
    std::uint64_t seed_;
    std::unique_ptr<Rng> dropout_rng_;
    std::vector<std::unique_ptr<Layer>> layers_;
    mutable std::vector<Param*> param_cache_;
};

/// Mean cross-entropy of the model on a batch, eval mode (64-bit accumulation).
double compute_loss(Model& model, const Tensor& inputs, const std::vector<int>& labels);

/// Forward + reverse pass; accumulates parameter gradients (callers zero them
/// first via zero_grads) and returns the mean cross-entropy loss.
double backprop(Model& model, const Tensor& inputs, const std::vector<int>& labels, bool training);

void zero_grads(Model& model);

/// One vanilla-SGD step (optional momentum): runs backprop in training mode,
/// updates every parameter, returns the pre-update batch loss.
/// Throws NumericError (with layer attribution) if loss or gradients go
/// non-finite.
double train_step(Model& model, const Tensor& inputs, const std::vector<int>& labels, float lr,
                  float momentum = 0.0f);

/// Compare analytic gradients against central finite differences on
/// `n_weights` randomly selected parameters (seeded). Returns the max
/// relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Runs in eval mode so dropout does not perturb the check.
double finite_diff_check(Model& model, const Tensor& sample, int label, double epsilon,
                         std::size_t n_weights = 100, std::uint64_t seed = 0);

}  // namespace insidebias
