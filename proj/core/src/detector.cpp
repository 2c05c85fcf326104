#include "insidebias/detector.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "insidebias/errors.hpp"
#include "insidebias/rng.hpp"

namespace insidebias::detect {

double activation_ratio(const std::map<std::string, double>& lambda_by_group) {
    if (lambda_by_group.size() < 2) {
        throw DataError("Activation Ratio needs at least 2 groups, got " +
                          std::to_string(lambda_by_group.size()));
    }
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (const auto& [g, v] : lambda_by_group) {
        if (v < 0.0) throw NumericError("negative lambda for group '" + g + "'");
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    if (mx <= 0.0) throw NumericError("max lambda is zero across groups; degenerate model");
    return mn / mx;
}

LayerSelector LayerSelector::parse(const std::string& text) {
    LayerSelector s;
    if (text.empty() || text == "last-conv") {
        s.kind = Kind::last_conv;
    } else if (text.rfind("final-", 0) == 0) {
        s.kind = Kind::final_k;
        try {
            s.k = static_cast<std::size_t>(std::stoul(text.substr(6)));
        } catch (const std::exception&) {
            throw ConfigError("bad layer selector '" + text + "'");
        }
        if (s.k == 0) throw ConfigError("final-k selector needs k >= 1");
    } else {
        s.kind = Kind::named;
        s.layer = text;
    }
    return s;
}

std::string LayerSelector::to_string() const {
    switch (kind) {
        case Kind::last_conv: return "last-conv";
        case Kind::named: return layer;
        case Kind::final_k: return "final-" + std::to_string(k);
    }
    return "?";
}

std::vector<std::string> LayerSelector::resolve(
    const std::vector<std::pair<std::string, ProbeKind>>& probes) const {
    std::vector<std::string> conv;
    for (const auto& [name, kind_] : probes) {
        if (kind_ == ProbeKind::conv) conv.push_back(name);
    }
    switch (kind) {
        case Kind::last_conv:
            if (conv.empty()) throw ConfigError("model has no convolutional probe points");
            return {conv.back()};
        case Kind::named: {
            for (const auto& [name, kind_] : probes) {
                if (name != layer) continue;
                if (kind_ != ProbeKind::conv) {
                    throw ConfigError("layer selector '" + layer +
                                      "' names a dense probe; the Activation Ratio is computed "
                                      "over convolutional feature maps");
                }
                return {layer};
            }
            throw ConfigError("layer selector '" + layer + "' matches no probe point");
        }
        case Kind::final_k: {
            if (conv.size() < k) {
                throw ConfigError("final-" + std::to_string(k) + " selector, but only " +
                                  std::to_string(conv.size()) + " conv probes");
            }
            return {conv.end() - static_cast<long>(k), conv.end()};
        }
    }
    throw ConfigError("unreachable selector kind");
}

namespace {

BiasVerdict verdict_from_lambda(
    const std::vector<std::string>& layers,
    const std::function<double(const std::string& group, const std::string& layer)>& lam,
    const std::vector<std::string>& groups, double tau, const std::string& criterion) {
    BiasVerdict v;
    v.criterion = criterion;
    v.tau = tau;
    double ratio_sum = 0.0;
    for (const auto& layer : layers) {
        std::map<std::string, double> by_group;
        for (const auto& g : groups) by_group[g] = lam(g, layer);
        ratio_sum += activation_ratio(by_group);
    }
    v.ratio = ratio_sum / static_cast<double>(layers.size());
    v.layer = layers.size() == 1 ? layers.front() : "mean(" + layers.front() + ".." + layers.back() + ")";

    // min/max groups reported at the last selected layer
    const auto& last = layers.back();
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (const auto& g : groups) {
        const double val = lam(g, last);
        if (val < mn) {
            mn = val;
            v.min_group = g;
        }
        if (val > mx) {
            mx = val;
            v.max_group = g;
        }
    }
    v.biased = v.ratio < tau;
    v.margin = v.ratio - tau;
    return v;
}

}  // namespace

BiasVerdict verdict(const std::vector<probe::ActivationProfile>& profiles,
                    const LayerSelector& selector, double tau, const std::string& criterion) {
    if (profiles.size() < 2) throw ConfigError("verdict needs profiles for at least 2 groups");
    const auto layers = selector.resolve(profiles.front().layers);
    std::vector<std::string> groups;
    for (const auto& p : profiles) groups.push_back(p.group);
    return verdict_from_lambda(
        layers,
        [&](const std::string& g, const std::string& l) {
            for (const auto& p : profiles) {
                if (p.group == g) return p.lambda.at(l);
            }
            throw ConfigError("no profile for group '" + g + "'");
        },
        groups, tau, criterion);
}

nlohmann::json BiasReport::to_json() const {
    nlohmann::json j;
    j["schema"] = "insidebias.bias_report/1";
    j["model_id"] = model_id;
    j["weight_digest"] = weight_digest;
    j["data_digest"] = data_digest;
    j["verdict"] = {
        {"criterion", verdict.criterion}, {"layer", verdict.layer},   {"ratio", verdict.ratio},
        {"tau", verdict.tau},             {"biased", verdict.biased}, {"margin", verdict.margin},
        {"min_group", verdict.min_group}, {"max_group", verdict.max_group},
    };
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& p : profiles) {
        nlohmann::json g;
        g["n_samples"] = p.n_samples;
        nlohmann::json lam = nlohmann::json::object(), lamn = nlohmann::json::object();
        for (const auto& [l, v] : p.lambda) lam[l] = v;
        for (const auto& [l, v] : p.lambda_norm) lamn[l] = v;
        g["lambda"] = lam;
        g["lambda_norm"] = lamn;
        if (outcomes.count(p.group)) {
            const auto& o = outcomes.at(p.group);
            g["accuracy"] = o.accuracy;
            g["mean_confidence"] = o.mean_confidence;
            g["n_correct"] = o.n_correct;
        }
        groups[p.group] = g;
    }
    j["groups"] = groups;
    nlohmann::json layer_order = nlohmann::json::array();
    if (!profiles.empty()) {
        for (const auto& [name, kind] : profiles.front().layers) {
            layer_order.push_back({{"layer", name}, {"kind", kind == ProbeKind::conv ? "conv" : "dense"}});
        }
    }
    j["layers"] = layer_order;
    if (config.bootstrap_resamples > 0) {
        j["bootstrap"] = {{"resamples", config.bootstrap_resamples},
                          {"ratio_mean", bootstrap_ratio_mean},
                          {"ratio_std", bootstrap_ratio_std}};
    }
    j["config"] = {{"criterion", config.criterion},
                   {"tau", config.tau},
                   {"layers", config.selector.to_string()},
                   {"stat", probe::stat_name(config.stat)},
                   {"normalizer", config.scope == probe::NormalizerScope::per_model_pooled
                                      ? "per-model-pooled"
                                      : "per-group"}};
    return j;
}

BiasReport audit(Model& model, const data::GroupedDataset& ds, const AuditOptions& opts,
                 const std::string& weight_digest) {
    const auto parts = data::partition(ds, opts.criterion);
    if (parts.size() < 2) {
        throw ConfigError("audit criterion '" + opts.criterion + "' yields fewer than 2 groups");
    }

    BiasReport report;
    report.model_id = model.arch_id();
    report.weight_digest = weight_digest;
    report.data_digest = ds.digest();
    report.config = opts;

    probe::ProfileOptions popts;
    popts.stat = opts.stat;
    popts.batch_size = opts.batch_size;
    popts.keep_per_image = opts.bootstrap_resamples > 0;

    std::vector<probe::ActivationProfile> profiles;
    std::map<std::string, std::vector<std::vector<double>>> per_image;
    for (const auto& [group, indices] : parts) {
        auto res = probe::group_profile(model, ds, indices, group, popts);
        profiles.push_back(std::move(res.profile));
        if (popts.keep_per_image) per_image[group] = std::move(res.per_image);
    }
    probe::normalize_profiles(profiles, opts.scope);
    report.verdict = verdict(profiles, opts.selector, opts.tau, opts.criterion);

    // Per-group accuracy and mean confidence S (softmax probability of the
    // ground-truth class).
    for (const auto& [group, indices] : parts) {
        GroupOutcome out;
        out.n_samples = indices.size();
        double conf_acc = 0.0;
        for (std::size_t start = 0; start < indices.size(); start += opts.batch_size) {
            const std::size_t end = std::min(indices.size(), start + opts.batch_size);
            const std::vector<std::size_t> chunk(indices.begin() + static_cast<long>(start),
                                                 indices.begin() + static_cast<long>(end));
            auto [batch, labels] = data::make_batch(ds, chunk);
            const Tensor probs = model.predict(batch);
            const std::size_t classes = probs.dim(1);
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                const float* row = probs.data() + i * classes;
                std::size_t arg = 0;
                for (std::size_t c = 1; c < classes; ++c) {
                    if (row[c] > row[arg]) arg = c;
                }
                if (static_cast<int>(arg) == labels[i]) ++out.n_correct;
                conf_acc += row[labels[i]];
            }
        }
        out.accuracy = static_cast<double>(out.n_correct) / static_cast<double>(out.n_samples);
        out.mean_confidence = conf_acc / static_cast<double>(out.n_samples);
        report.outcomes[group] = out;
    }
    model.clear_caches();

    // Bootstrap spread of the ratio over per-image lambda resamples.
    if (opts.bootstrap_resamples > 0) {
        const auto layers = opts.selector.resolve(profiles.front().layers);
        std::vector<std::size_t> layer_pos;
        for (const auto& l : layers) {
            for (std::size_t t = 0; t < profiles.front().layers.size(); ++t) {
                if (profiles.front().layers[t].first == l) layer_pos.push_back(t);
            }
        }
        Rng rng(derive_seed(opts.bootstrap_seed, 0xB0075));
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t b = 0; b < opts.bootstrap_resamples; ++b) {
            double ratio_sum = 0.0;
            for (std::size_t li = 0; li < layer_pos.size(); ++li) {
                std::map<std::string, double> by_group;
                for (const auto& [group, rows] : per_image) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                        acc += rows[uniform_index(rng, rows.size())][layer_pos[li]];
                    }
                    by_group[group] = acc / static_cast<double>(rows.size());
                }
                ratio_sum += activation_ratio(by_group);
            }
            const double r = ratio_sum / static_cast<double>(layer_pos.size());
            sum += r;
            sum2 += r * r;
        }
        const double n = static_cast<double>(opts.bootstrap_resamples);
        report.bootstrap_ratio_mean = sum / n;
        report.bootstrap_ratio_std = std::sqrt(std::max(0.0, sum2 / n - (sum / n) * (sum / n)));
    }

    report.profiles = std::move(profiles);
    return report;
}

int exit_code_for(const BiasVerdict& v) {
    return v.biased ? 3 : 0;
}

}  // namespace insidebias::detect
