#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "insidebias/probe.hpp"

namespace insidebias::detect {

/// Activation Ratio at one layer: min over groups of lambda divided by the
/// max over groups. Requires >= 2 groups and a positive max.
double activation_ratio(const std::map<std::string, double>& lambda_by_group);

/// Which probe layer(s) the verdict reads: the last convolutional/residual
/// probe (default), a named probe, or the mean ratio over the final k
/// convolutional probes.
struct LayerSelector {
    enum class Kind { last_conv, named, final_k };
    Kind kind = Kind::last_conv;
    std::string layer;      // for named
    std::size_t k = 1;      // for final_k

    /// Parse "last-conv", "final-3", or an explicit probe name.
    static LayerSelector parse(const std::string& text);
    std::string to_string() const;

    /// Resolve to the probe layers the ratio is computed from.
    std::vector<std::string> resolve(
        const std::vector<std::pair<std::string, ProbeKind>>& probes) const;
};

struct BiasVerdict {
    std::string criterion;
    std::string layer;          // probe name, or "mean(final-k)" description
    double ratio = 0.0;         // Activation Ratio
    double tau = 0.0;
    bool biased = false;        // ratio < tau
    double margin = 0.0;        // ratio - tau
    std::string min_group;
    std::string max_group;
};

/// Verdict over already-computed per-group profiles. The ratio is computed on
/// raw lambda; under the shared per-model normalizer the normalized values
/// give the identical ratio.
BiasVerdict verdict(const std::vector<probe::ActivationProfile>& profiles,
                    const LayerSelector& selector, double tau, const std::string& criterion);

struct AuditOptions {
    std::string criterion = "color";
    double tau = 0.90;
    LayerSelector selector;
    probe::Stat stat = probe::Stat::max;
    probe::NormalizerScope scope = probe::NormalizerScope::per_model_pooled;
    std::size_t bootstrap_resamples = 200;  // 0 disables the spread estimate
    std::uint64_t bootstrap_seed = 0;
    std::size_t batch_size = 32;
};

struct GroupOutcome {
    std::size_t n_samples = 0;
    std::size_t n_correct = 0;
    double accuracy = 0.0;
    double mean_confidence = 0.0;  // mean softmax probability of the true class
};

struct BiasReport {
    std::string model_id;
    std::string weight_digest;
    std::string data_digest;
    BiasVerdict verdict;
    std::vector<probe::ActivationProfile> profiles;  // per group + pooled normalizer applied
    std::map<std::string, GroupOutcome> outcomes;
    double bootstrap_ratio_mean = 0.0;
    double bootstrap_ratio_std = 0.0;
    AuditOptions config;

    nlohmann::json to_json() const;
};

/// End-to-end audit: per-group profiles, normalization, verdict, per-group
/// accuracy and mean confidence S, and a seeded bootstrap spread of the
/// ratio over sample resamples.
BiasReport audit(Model& model, const data::GroupedDataset& ds, const AuditOptions& opts,
                 const std::string& weight_digest = "");

/// Exit-code contract used by the CLI: 0 unbiased at tau, 3 biased.
int exit_code_for(const BiasVerdict& v);

}  // namespace insidebias::detect
