#include "insidebias/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "insidebias/errors.hpp"

namespace insidebias::probe {

Stat stat_from_name(const std::string& name) {
    if (name == "max") return Stat::max;
    if (name == "mean") return Stat::mean;
    throw ConfigError("unknown activation statistic '" + name + "' (expected max|mean)");
}

const char* stat_name(Stat s) {
    return s == Stat::max ? "max" : "mean";
}

double mean_map_activation(const Tensor& feature_map) {
    if (feature_map.rank() != 2) {
        throw ShapeError("mean_map_activation expects a 2-D map, got " +
                         shape_to_string(feature_map.shape()));
    }
    if (feature_map.size() == 0) throw ShapeError("empty feature map");
    double acc = 0.0;
    for (std::size_t i = 0; i < feature_map.size(); ++i) acc += feature_map[i];
    return acc / static_cast<double>(feature_map.size());
}

namespace {

// lambda over a contiguous [m, spatial] block.
double lambda_of(const float* data, std::size_t maps, std::size_t spatial, Stat stat) {
    double result = stat == Stat::max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t i = 0; i < maps; ++i) {
        double acc = 0.0;
        const float* p = data + i * spatial;
        for (std::size_t s = 0; s < spatial; ++s) acc += p[s];
        const double mean = acc / static_cast<double>(spatial);
        if (stat == Stat::max) {
            result = std::max(result, mean);
        } else {
            result += mean / static_cast<double>(maps);
        }
    }
    return result;
}

}  // namespace

double layer_activation(const Tensor& maps, Stat stat) {
    if (maps.rank() == 1) {
        // dense activation viewed as one 1 x n map
        return lambda_of(maps.data(), 1, maps.size(), stat);
    }
    if (maps.rank() != 3) {
        throw ShapeError("layer_activation expects [m, n1, n2] or a dense vector, got " +
                         shape_to_string(maps.shape()));
    }
    return lambda_of(maps.data(), maps.dim(0), maps.dim(1) * maps.dim(2), stat);
}

GroupProfileResult group_profile(Model& model, const data::GroupedDataset& ds,
                                 const std::vector<std::size_t>& indices, const std::string& group,
                                 const ProfileOptions& opts) {
    if (indices.empty()) throw DataError("group '" + group + "' has no samples to profile");

    const auto probes = model.probe_points();
    GroupProfileResult res;
    res.profile.model_id = model.arch_id();
    res.profile.group = group;
    res.profile.layers = probes;
    res.profile.n_samples = indices.size();

    std::map<std::string, double> sum;
    for (const auto& [name, kind] : probes) sum[name] = 0.0;
    if (opts.keep_per_image) res.per_image.reserve(indices.size());

    for (std::size_t start = 0; start < indices.size(); start += opts.batch_size) {
        const std::size_t end = std::min(indices.size(), start + opts.batch_size);
        const std::vector<std::size_t> chunk(indices.begin() + static_cast<long>(start),
                                             indices.begin() + static_cast<long>(end));
        auto [batch, labels] = data::make_batch(ds, chunk);
        ActivationTrace trace;
        model.forward(batch, /*training=*/false, &trace);
        if (trace.size() != probes.size()) {
            throw Error("trace holds " + std::to_string(trace.size()) + " entries, expected " +
                        std::to_string(probes.size()));
        }
        const std::size_t n = chunk.size();
        std::vector<std::vector<double>> rows;
        if (opts.keep_per_image) rows.assign(n, std::vector<double>(probes.size()));
        for (std::size_t t = 0; t < trace.size(); ++t) {
            const Tensor& act = trace[t].activation;
            const std::size_t per_image = act.size() / n;
            // [N, m, h, w] -> maps/spatial; [N, f] -> one 1 x f map
            const std::size_t maps = act.rank() == 4 ? act.dim(1) : 1;
            const std::size_t spatial = per_image / maps;
            for (std::size_t img = 0; img < n; ++img) {
                const double lam = lambda_of(act.data() + img * per_image, maps, spatial, opts.stat);
                sum[trace[t].layer] += lam;
                if (opts.keep_per_image) rows[img][t] = lam;
            }
        }
        if (opts.keep_per_image) {
            for (auto& r : rows) res.per_image.push_back(std::move(r));
        }
    }

    for (const auto& [name, kind] : probes) {
        res.profile.lambda[name] = sum[name] / static_cast<double>(indices.size());
    }
    model.clear_caches();
    return res;
}

void normalize_profiles(std::vector<ActivationProfile>& profiles, NormalizerScope scope) {
    if (profiles.empty()) throw ConfigError("no profiles to normalize");
    for (const auto& p : profiles) {
        if (p.layers != profiles.front().layers) {
            throw ConfigError("profiles disagree on probe points; are they from the same model?");
        }
    }

    if (scope == NormalizerScope::per_group) {
        for (auto& p : profiles) {
            double mx = 0.0;
            for (const auto& [l, v] : p.lambda) mx = std::max(mx, v);
            if (mx <= 0.0) {
                throw NumericError("all-zero activations for group '" + p.group + "'; degenerate model");
            }
            for (const auto& [l, v] : p.lambda) p.lambda_norm[l] = v / mx;
        }
        return;
    }

    // Pooled scope: sample-weighted mean curve over all groups, shared
    // normalizer = its max over layers.
    std::map<std::string, double> pooled;
    double total_n = 0.0;
    for (const auto& p : profiles) total_n += static_cast<double>(p.n_samples);
    for (const auto& [name, kind] : profiles.front().layers) {
        double acc = 0.0;
        for (const auto& p : profiles) {
            acc += p.lambda.at(name) * static_cast<double>(p.n_samples);
        }
        pooled[name] = acc / total_n;
    }
    double mx = 0.0;
    for (const auto& [l, v] : pooled) mx = std::max(mx, v);
    if (mx <= 0.0) throw NumericError("all-zero activations across every group; degenerate model");
    for (auto& p : profiles) {
        for (const auto& [l, v] : p.lambda) p.lambda_norm[l] = v / mx;
    }
}

void write_profiles_csv(std::ostream& os, const std::vector<ActivationProfile>& profiles) {
    os << "layer,group,lambda,lambda_norm,n\n";
    for (const auto& p : profiles) {
        for (const auto& [name, kind] : p.layers) {
            os << name << "," << p.group << ",";
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.9g", p.lambda.at(name));
            os << buf << ",";
            if (p.lambda_norm.count(name)) {
                std::snprintf(buf, sizeof(buf), "%.9g", p.lambda_norm.at(name));
                os << buf;
            }
            os << "," << p.n_samples << "\n";
        }
    }
}

}  // namespace insidebias::probe
