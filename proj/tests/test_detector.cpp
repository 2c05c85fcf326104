#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "insidebias/dataset.hpp"
#include "insidebias/detector.hpp"
#include "insidebias/errors.hpp"
#include "insidebias/model_zoo.hpp"
#include "oracles.hpp"

using namespace insidebias;
using namespace insidebias::detect;

namespace {

probe::ActivationProfile make_profile(std::string group, std::vector<double> lam) {
    probe::ActivationProfile p;
    p.model_id = "m";
    p.group = std::move(group);
    for (std::size_t i = 0; i < lam.size(); ++i) {
        const std::string name = "conv" + std::to_string(i + 1);
        p.layers.emplace_back(name, ProbeKind::conv);
        p.lambda[name] = lam[i];
    }
    p.n_samples = 10;
    return p;
}

data::GroupedDataset audit_fixture(std::uint64_t seed) {
    data::GroupedDataset::Builder b(28, 28, 10, false, "test", "detector fixture");
    Rng rng(seed);
    std::size_t id = 0;
    for (int d = 0; d < 10; ++d)
        for (int i = 0; i < 3; ++i) {
            std::vector<std::uint8_t> px(28 * 28);
            for (auto& p : px) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
            b.add_gray("a-" + std::to_string(id++), d, std::move(px));
        }
    data::ColorBiasConfig cfg;
    cfg.primary_fraction = 1.0 / 3.0;
    cfg.seed = seed;
    return data::colorize(b.finish(), cfg);
}

}  // namespace

TEST_CASE("reference activation-ratio rows reproduce within 0.005") {
    // Biased (B) / Unbiased lambda triples and their reference ratios.
    CHECK(std::abs(activation_ratio({{"A", 2.24}, {"B", 3.25}, {"C", 2.61}}) - 0.69) <= 0.005);
    CHECK(std::abs(activation_ratio({{"A", 2.49}, {"B", 2.67}, {"C", 2.51}}) - 0.93) <= 0.005);
    CHECK(std::abs(activation_ratio({{"A", 2.33}, {"B", 2.32}, {"C", 2.34}}) - 0.99) <= 0.005);
}

TEST_CASE("activation ratio edge cases") {
    CHECK(activation_ratio({{"A", 5.0}, {"B", 5.0}}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(activation_ratio({{"A", 1.0}}), DataError);
    CHECK_THROWS_AS(activation_ratio({{"A", 0.0}, {"B", 0.0}}), NumericError);
    CHECK_THROWS_AS(activation_ratio({{"A", -0.1}, {"B", 1.0}}), NumericError);
    // Scale invariance is exact: the ratio is a quotient.
    const double r1 = activation_ratio({{"A", 1.25}, {"B", 3.5}});
    const double r2 = activation_ratio({{"A", 1.25 * 8}, {"B", 3.5 * 8}});
    CHECK(r1 == r2);  // power-of-two scaling, bit-exact
}

TEST_CASE("layer selector parsing and resolution") {
    const std::vector<std::pair<std::string, ProbeKind>> probes = {
        {"conv1", ProbeKind::conv},
        {"conv2", ProbeKind::conv},
        {"conv3", ProbeKind::conv},
        {"fc1", ProbeKind::dense},
    };
    CHECK(LayerSelector::parse("last-conv").resolve(probes) == std::vector<std::string>{"conv3"});
    CHECK(LayerSelector::parse("final-2").resolve(probes) ==
          std::vector<std::string>{"conv2", "conv3"});
    CHECK(LayerSelector::parse("conv1").resolve(probes) == std::vector<std::string>{"conv1"});
    CHECK_THROWS_AS(LayerSelector::parse("final-0"), ConfigError);
    CHECK_THROWS_AS(LayerSelector::parse("conv9").resolve(probes), ConfigError);
    // The dense probe never feeds the default ratio.
    CHECK_THROWS_AS(LayerSelector::parse("fc1").resolve(probes), ConfigError);
}

TEST_CASE("verdict thresholding at the last conv layer") {
    std::vector<probe::ActivationProfile> biased{make_profile("A", {1.0, 2.24}),
                                                 make_profile("B", {1.0, 3.25}),
                                                 make_profile("C", {1.0, 2.61})};
    auto v = verdict(biased, LayerSelector{}, 0.9, "color");
    CHECK(v.layer == "conv2");
    CHECK(v.biased);
    CHECK(v.margin == doctest::Approx(v.ratio - 0.9));
    CHECK(v.min_group == "A");
    CHECK(v.max_group == "B");

    std::vector<probe::ActivationProfile> unbiased{make_profile("A", {1.0, 2.49}),
                                                   make_profile("B", {1.0, 2.67}),
                                                   make_profile("C", {1.0, 2.51})};
    CHECK_FALSE(verdict(unbiased, LayerSelector{}, 0.9, "color").biased);

    // tau = 0: never biased for a valid ratio.
    CHECK_FALSE(verdict(biased, LayerSelector{}, 0.0, "color").biased);
}

TEST_CASE("raw and normalized lambda give the identical verdict") {
    std::vector<probe::ActivationProfile> ps{make_profile("A", {2.0, 2.24}),
                                             make_profile("B", {1.5, 3.25}),
                                             make_profile("C", {1.0, 2.61})};
    auto raw = verdict(ps, LayerSelector{}, 0.9, "color");
    probe::normalize_profiles(ps);  // shared normalizer: same quotient
    std::map<std::string, double> norm_last;
    for (const auto& p : ps) norm_last[p.group] = p.lambda_norm.at("conv2");
    CHECK(activation_ratio(norm_last) == doctest::Approx(raw.ratio).epsilon(1e-12));
}

TEST_CASE("removing the lowest group can only raise the ratio") {
    std::map<std::string, double> lam{{"A", 2.24}, {"B", 3.25}, {"C", 2.61}};
    const double all = activation_ratio(lam);
    lam.erase("A");
    CHECK(activation_ratio(lam) >= all);
}

TEST_CASE("exit-code contract") {
    BiasVerdict v;
    v.biased = true;
    CHECK(exit_code_for(v) == 3);
    v.biased = false;
    CHECK(exit_code_for(v) == 0);
}

TEST_CASE("audit end-to-end: deterministic, self-describing report") {
    auto ds = audit_fixture(19);
    Model model = zoo::build_vgg({28, 28, 3}, 10, 23);
    AuditOptions opts;
    opts.criterion = "color";
    opts.bootstrap_resamples = 25;
    opts.bootstrap_seed = 4;

    auto r1 = audit(model, ds, opts, "cafef00d");
    auto r2 = audit(model, ds, opts, "cafef00d");
    CHECK(r1.to_json().dump(2) == r2.to_json().dump(2));

    CHECK(r1.verdict.criterion == "color");
    CHECK(r1.verdict.layer == "conv8");
    CHECK(r1.profiles.size() == 3);
    CHECK(r1.outcomes.size() == 3);
    for (const auto& [g, o] : r1.outcomes) {
        CHECK(o.n_samples == 10);
        CHECK(o.mean_confidence > 0.0);
        CHECK(o.mean_confidence < 1.0);
    }
    CHECK(r1.bootstrap_ratio_std >= 0.0);

    const auto j = r1.to_json();
    CHECK(j.at("schema") == "insidebias.bias_report/1");
    CHECK(j.at("weight_digest") == "cafef00d");
    CHECK(j.at("verdict").contains("ratio"));
    CHECK(j.at("groups").size() == 3);
}

TEST_CASE("audit rejects unusable inputs") {
    auto ds = audit_fixture(3);
    Model model = zoo::build_vgg({28, 28, 3}, 10, 1);
    AuditOptions opts;
    opts.criterion = "ethnicity";  // undeclared criterion
    CHECK_THROWS_AS(audit(model, ds, opts), DataError);
}
