#include "insidebias/model.hpp"

#include <algorithm>
#include <cmath>

#include "insidebias/errors.hpp"

namespace insidebias {

Model::Model(std::string arch_id, std::array<std::size_t, 3> input_hwc, std::size_t num_classes,
             std::uint64_t seed)
    : arch_id_(std::move(arch_id)),
      input_hwc_(input_hwc),
      num_classes_(num_classes),
      seed_(seed),
      dropout_rng_(std::make_unique<Rng>(derive_seed(seed, 0x5eedd))) {}

void Model::add_layer(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    param_cache_.clear();
}

Layer& Model::layer(const std::string& name) {
    for (auto& l : layers_) {
        if (l->name() == name) return *l;
    }
    throw ConfigError("no layer named '" + name + "' in " + arch_id_);
}

std::vector<Param*> Model::params() {
    if (param_cache_.empty()) {
        for (auto& l : layers_) l->collect_params(param_cache_);
    }
    return param_cache_;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        std::vector<Param*> ps;
        l->collect_params(ps);
        for (const Param* p : ps) n += p->value.size();
    }
    return n;
}

std::vector<std::pair<std::string, ProbeKind>> Model::probe_points() const {
    std::vector<std::pair<std::string, ProbeKind>> out;
    for (const auto& l : layers_) l->probe_points(out);
    return out;
}

Tensor Model::forward(const Tensor& input, bool training, ActivationTrace* trace) {
    Tensor x = input;
    if (x.rank() == 3) {
        Shape s = x.shape();
        x = x.reshaped({1, s[0], s[1], s[2]});
    }
    if (x.rank() != 4) {
        throw ShapeError(arch_id_ + ": input must be [N, C, H, W] or [C, H, W], got " +
                         shape_to_string(input.shape()));
    }
    const auto& [h, w, c] = input_hwc_;
    if (x.dim(1) != c || x.dim(2) != h || x.dim(3) != w) {
        throw ShapeError(arch_id_ + ": input " + shape_to_string(x.shape()) + " does not match declared " +
                         std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c));
    }
    ForwardMode mode{training, trace != nullptr};
    for (auto& l : layers_) {
        x = l->forward(x, mode);
        if (training) x.check_finite("layer " + l->name());
        if (trace) l->collect_trace(*trace);
    }
    return x;
}

Tensor Model::backward(const Tensor& grad_logits) {
    Tensor g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        g = (*it)->backward(g);
    }
    return g;
}

Tensor Model::predict(const Tensor& input) {
    return softmax_rows(forward(input, /*training=*/false));
}

void Model::clear_caches() {
    for (auto& l : layers_) l->clear_cache();
}

namespace {

// Mean cross-entropy and, optionally, dLoss/dLogits.
double softmax_xent(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
    const std::size_t n = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != n) {
        throw ShapeError("batch has " + std::to_string(n) + " inputs but " +
                         std::to_string(labels.size()) + " labels");
    }
    const Tensor probs = softmax_rows(logits);
    if (dlogits) *dlogits = probs;
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        }
        const double p = std::max(static_cast<double>(probs[r * classes + y]), 1e-12);
        loss -= std::log(p) * inv_n;
        if (dlogits) {
            float* row = dlogits->data() + r * classes;
            row[y] -= 1.0f;
            for (std::size_t k = 0; k < classes; ++k) row[k] = static_cast<float>(row[k] * inv_n);
        }
    }
    return loss;
}

}  // namespace

std::vector<double> Model::logits_f64(const Tensor& input) const {
    if (input.rank() != 3) {
        throw ShapeError(arch_id_ + ": logits_f64 expects a single [C, H, W] image, got " +
                         shape_to_string(input.shape()));
    }
    std::vector<double> x(input.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = input.data()[i];
    Shape shape{1, input.dim(0), input.dim(1), input.dim(2)};
    for (const auto& l : layers_) l->forward_f64(x, shape);
    return x;
}

double compute_loss(Model& model, const Tensor& inputs, const std::vector<int>& labels) {
    const Tensor logits = model.forward(inputs, /*training=*/false);
    return softmax_xent(logits, labels, nullptr);
}

void zero_grads(Model& model) {
    for (Param* p : model.params()) {
        std::fill(p->grad.values().begin(), p->grad.values().end(), 0.0f);
    }
}

double backprop(Model& model, const Tensor& inputs, const std::vector<int>& labels, bool training) {
    if (labels.empty()) throw ConfigError("empty batch");
    Tensor x = inputs;
    if (x.rank() == 3) {
        Shape s = x.shape();
        x = x.reshaped({1, s[0], s[1], s[2]});
    }
    const Tensor logits = model.forward(x, training);
    Tensor dlogits;
    const double loss = softmax_xent(logits, labels, &dlogits);
    model.backward(dlogits);
    return loss;
}

double train_step(Model& model, const Tensor& inputs, const std::vector<int>& labels, float lr,
                  float momentum) {
    zero_grads(model);
    const double loss = backprop(model, inputs, labels, /*training=*/true);
    if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
    for (Param* p : model.params()) {
        float* v = p->value.data();
        float* g = p->grad.data();
        float* m = p->momentum.data();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in " + p->name);
            if (momentum != 0.0f) {
                m[i] = momentum * m[i] + g[i];
                v[i] -= lr * m[i];
            } else {
                v[i] -= lr * g[i];
            }
        }
    }
    return loss;
}

double finite_diff_check(Model& model, const Tensor& sample, int label, double epsilon,
                         std::size_t n_weights, std::uint64_t seed) {
    if (epsilon <= 0.0 || epsilon > 1e-2) throw ConfigError("epsilon must be in (0, 1e-2]");
    const std::vector<int> labels{label};

    zero_grads(model);
    backprop(model, sample, labels, /*training=*/false);

    auto params = model.params();
    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (param idx, offset)
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i]->value.size(); ++j) slots.emplace_back(i, j);
    }
    Rng rng(derive_seed(seed, 0xfd));
    shuffle_indices(slots, rng);
    if (slots.size() > n_weights) slots.resize(n_weights);

    // The perturbed losses are evaluated through the double-precision forward
    // path: float32 forward rounding (~1e-7 relative) divided by 2*epsilon
    // would otherwise swamp any gradient below ~1e-3 of the loss scale.
    auto loss_at = [&](void) {
        const std::vector<double> logits = model.logits_f64(sample);
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : logits) denom += std::exp(v - mx);
        return std::log(denom) - (logits[static_cast<std::size_t>(label)] - mx);
    };

    double max_rel = 0.0;
    for (const auto& [pi, off] : slots) {
        float& w = params[pi]->value.data()[off];
        const float saved = w;
        const double analytic = params[pi]->grad[off];
        const float wp = saved + static_cast<float>(epsilon);
        const float wm = saved - static_cast<float>(epsilon);
        w = wp;
        const double lp = loss_at();
        w = wm;
        const double lm = loss_at();
        w = saved;
        // Divide by the perturbation as actually represented in float32.
        const double numeric = (lp - lm) / (static_cast<double>(wp) - static_cast<double>(wm));
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace insidebias
