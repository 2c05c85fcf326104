#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "insidebias/dataset.hpp"
#include "insidebias/model.hpp"

namespace insidebias::probe {

/// Per-map reduction used for the layer activation statistic; the maximum
/// is the default, the mean is kept for comparison.
enum class Stat { max, mean };

Stat stat_from_name(const std::string& name);
const char* stat_name(Stat s);

/// Spatial mean of one 2-D feature map.
double mean_map_activation(const Tensor& feature_map);

/// Layer activation: max (or mean) over feature maps of the per-map spatial
/// mean. Accepts [m, n1, n2] stacks; dense activations are viewed as a
/// single 1 x n map.
double layer_activation(const Tensor& maps, Stat stat = Stat::max);

/// How the lambda-prime normalizer is scoped: the per-model pooled curve
/// (default, keeps groups mutually comparable) or each group's own maximum.
enum class NormalizerScope { per_model_pooled, per_group };

struct ActivationProfile {
    std::string model_id;
    std::string group;
    std::vector<std::pair<std::string, ProbeKind>> layers;  // probe order
    std::map<std::string, double> lambda;
    std::map<std::string, double> lambda_norm;  // empty until normalize_profiles
    std::size_t n_samples = 0;
};

struct ProfileOptions {
    Stat stat = Stat::max;
    std::size_t batch_size = 32;
    bool keep_per_image = false;
};

struct GroupProfileResult {
    ActivationProfile profile;
    /// Per-image lambda values, one row per image in group order (only when
    /// keep_per_image is set); row layout follows profile.layers.
    std::vector<std::vector<double>> per_image;
};

/// Mean over a group's images of the per-image layer activation at every
/// probe point.
GroupProfileResult group_profile(Model& model, const data::GroupedDataset& ds,
                                 const std::vector<std::size_t>& indices, const std::string& group,
                                 const ProfileOptions& opts = {});

/// Fill lambda_norm on every profile: lambda divided by the max-over-layers
/// of the pooled (sample-weighted) lambda curve, or of the group's own curve
/// under per_group scope. Idempotent. Throws NumericError if the normalizer
/// is zero (degenerate model).
void normalize_profiles(std::vector<ActivationProfile>& profiles,
                        NormalizerScope scope = NormalizerScope::per_model_pooled);

/// CSV with header `layer,group,lambda,lambda_norm,n`, layers in probe order.
void write_profiles_csv(std::ostream& os, const std::vector<ActivationProfile>& profiles);

}  // namespace insidebias::probe
