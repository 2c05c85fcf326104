#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "insidebias/dataset.hpp"
#include "insidebias/errors.hpp"
#include "insidebias/model_zoo.hpp"
#include "insidebias/probe.hpp"
#include "oracles.hpp"

using namespace insidebias;
using namespace insidebias::probe;

namespace {

/// Small colored dataset for profiling tests.
data::GroupedDataset tiny_colored(std::size_t per_digit, std::uint64_t seed) {
    data::GroupedDataset::Builder b(28, 28, 10, false, "test", "probe fixture");
    Rng rng(seed);
    std::size_t id = 0;
    for (int d = 0; d < 10; ++d)
        for (std::size_t i = 0; i < per_digit; ++i) {
            std::vector<std::uint8_t> px(28 * 28);
            for (auto& p : px) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
            b.add_gray("t-" + std::to_string(id++), d, std::move(px));
        }
    data::ColorBiasConfig cfg;
    cfg.primary_fraction = 1.0 / 3.0;
    cfg.seed = seed;
    return data::colorize(b.finish(), cfg);
}

std::vector<std::size_t> all_indices(const data::GroupedDataset& ds) {
    std::vector<std::size_t> v(ds.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

}  // namespace

TEST_CASE("mean map activation") {
    CHECK(mean_map_activation(Tensor({4, 4})) == 0.0);
    Tensor hand({2, 2}, std::vector<float>{1, 3, 5, 7});
    CHECK(mean_map_activation(hand) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(mean_map_activation(Tensor({0, 3})), ShapeError);
    CHECK_THROWS_AS(mean_map_activation(Tensor({2, 2, 2})), ShapeError);

    Rng rng(6);
    Tensor m = oracle::random_tensor({1, 7, 7}, rng);
    Tensor flat = m.reshaped({7, 7});
    CHECK(std::abs(mean_map_activation(flat) - oracle::map_mean(m, 0)) <= 1e-7);
}

TEST_CASE("layer activation: max over per-map means") {
    Tensor two({2, 1, 2}, std::vector<float>{0.1f, 0.3f, 0.6f, 0.8f});  // means 0.2, 0.7
    CHECK(layer_activation(two, Stat::max) == doctest::Approx(0.7));
    CHECK(layer_activation(two, Stat::mean) == doctest::Approx(0.45));

    Rng rng(14);
    Tensor maps = oracle::random_tensor({8, 5, 6}, rng, 0.f, 1.f);
    CHECK(std::abs(layer_activation(maps, Stat::max) - oracle::layer_activation_max(maps)) <= 1e-7);
    CHECK(std::abs(layer_activation(maps, Stat::mean) - oracle::layer_activation_mean(maps)) <=
          1e-7);

    // Single map: equals the map mean. Dense 1-D input is viewed as 1 x n.
    Tensor one = oracle::random_tensor({1, 3, 3}, rng);
    CHECK(layer_activation(one) == doctest::Approx(mean_map_activation(one.reshaped({3, 3}))));
    Tensor dense({4}, std::vector<float>{1, 2, 3, 6});
    CHECK(layer_activation(dense) == doctest::Approx(3.0));
}

TEST_CASE("group profile equals a naive per-image loop") {
    auto ds = tiny_colored(2, 31);
    Model model = zoo::build_vgg({28, 28, 3}, 10, 5);
    auto parts = data::partition(ds, "color");
    const auto& idx = parts.begin()->second;
    REQUIRE(idx.size() >= 5);
    std::vector<std::size_t> five(idx.begin(), idx.begin() + 5);

    auto res = group_profile(model, ds, five, "g", {});

    // Naive reference: one image at a time, explicit loops over the trace.
    std::map<std::string, double> want;
    for (auto i : five) {
        ActivationTrace trace;
        model.forward(ds.image(i), false, &trace);
        for (const auto& e : trace) {
            const Tensor& a = e.activation;
            Tensor maps = a.rank() == 4 ? Tensor(Shape{a.dim(1), a.dim(2), a.dim(3)},
                                                 std::vector<float>(a.values().begin(),
                                                                    a.values().end()))
                                        : Tensor(Shape{1, 1, a.dim(1)},
                                                 std::vector<float>(a.values().begin(),
                                                                    a.values().end()));
            want[e.layer] += oracle::layer_activation_max(maps);
        }
    }
    REQUIRE(res.profile.n_samples == 5);
    for (auto& [layer, sum] : want)
        CHECK(res.profile.lambda.at(layer) == doctest::Approx(sum / 5.0).epsilon(1e-7));
}

TEST_CASE("profile of one image; duplication is idempotent") {
    auto ds = tiny_colored(1, 8);
    Model model = zoo::build_resnet({28, 28, 3}, 10, 9);
    auto one = group_profile(model, ds, {0}, "g", {});
    auto twice = group_profile(model, ds, {0, 0}, "g", {});
    // Not bit-exact: the batched conv GEMM blocks differently as the batch
    // width changes, so accumulation order (and float32 rounding) shifts.
    for (const auto& [layer, v] : one.profile.lambda)
        CHECK(twice.profile.lambda.at(layer) == doctest::Approx(v).epsilon(1e-6));
    CHECK_THROWS_AS(group_profile(model, ds, {}, "g", {}), DataError);
}

TEST_CASE("per-image lambda is invariant to batch composition") {
    auto ds = tiny_colored(2, 77);
    Model model = zoo::build_vgg({28, 28, 3}, 10, 21);
    ProfileOptions alone_opts;
    alone_opts.batch_size = 1;
    auto alone = group_profile(model, ds, {3}, "g", alone_opts);
    ProfileOptions batched_opts;
    batched_opts.batch_size = 7;
    batched_opts.keep_per_image = true;
    auto batched = group_profile(model, ds, all_indices(ds), "g", batched_opts);
    for (std::size_t l = 0; l < batched.profile.layers.size(); ++l) {
        const auto& name = batched.profile.layers[l].first;
        CHECK(std::abs(batched.per_image[3][l] - alone.profile.lambda.at(name)) <= 1e-6);
    }
}

TEST_CASE("lambda is non-negative at every probe point") {
    auto ds = tiny_colored(1, 50);
    for (const char* arch : {zoo::kVggSmall, zoo::kResnetSmall}) {
        Model model = zoo::build(arch, {28, 28, 3}, 10, 2);
        auto res = group_profile(model, ds, all_indices(ds), "g", {});
        for (const auto& [layer, v] : res.profile.lambda) CHECK(v >= 0.0);
    }
}

TEST_CASE("normalization arithmetic") {
    auto mk = [](std::string group, std::vector<double> lam, std::size_t n) {
        ActivationProfile p;
        p.model_id = "m";
        p.group = std::move(group);
        for (std::size_t i = 0; i < lam.size(); ++i) {
            p.layers.emplace_back("L" + std::to_string(i), ProbeKind::conv);
            p.lambda["L" + std::to_string(i)] = lam[i];
        }
        p.n_samples = n;
        return p;
    };

    SUBCASE("[1,2,4] -> [0.25,0.5,1.0]; constant curve -> all ones") {
        std::vector<ActivationProfile> ps{mk("A", {1, 2, 4}, 10)};
        normalize_profiles(ps);
        CHECK(ps[0].lambda_norm.at("L0") == doctest::Approx(0.25));
        CHECK(ps[0].lambda_norm.at("L1") == doctest::Approx(0.5));
        CHECK(ps[0].lambda_norm.at("L2") == doctest::Approx(1.0));

        std::vector<ActivationProfile> cs{mk("A", {3, 3, 3}, 4)};
        normalize_profiles(cs);
        for (const auto& [l, v] : cs[0].lambda_norm) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("shared normalizer across groups") {
        std::vector<ActivationProfile> ps{mk("A", {2, 4}, 5), mk("B", {1, 4}, 5)};
        normalize_profiles(ps);
        CHECK(ps[0].lambda_norm.at("L0") == doctest::Approx(0.5));
        CHECK(ps[0].lambda_norm.at("L1") == doctest::Approx(1.0));
        CHECK(ps[1].lambda_norm.at("L0") == doctest::Approx(0.25));
        CHECK(ps[1].lambda_norm.at("L1") == doctest::Approx(1.0));
    }
    SUBCASE("per-group scope normalizes each curve to its own max") {
        std::vector<ActivationProfile> ps{mk("A", {2, 4}, 5), mk("B", {1, 2}, 5)};
        normalize_profiles(ps, NormalizerScope::per_group);
        CHECK(ps[1].lambda_norm.at("L1") == doctest::Approx(1.0));
    }
    SUBCASE("idempotent") {
        std::vector<ActivationProfile> ps{mk("A", {2, 4}, 5), mk("B", {1, 4}, 3)};
        normalize_profiles(ps);
        auto snapshot = ps;
        normalize_profiles(ps);
        for (std::size_t i = 0; i < ps.size(); ++i)
            for (const auto& [l, v] : ps[i].lambda_norm)
                CHECK(v == doctest::Approx(snapshot[i].lambda_norm.at(l)).epsilon(1e-12));
    }
    SUBCASE("degenerate all-zero activations") {
        std::vector<ActivationProfile> ps{mk("A", {0, 0}, 5)};
        CHECK_THROWS_AS(normalize_profiles(ps), NumericError);
    }
}

TEST_CASE("input scaling scales lambda on a bias-free conv prefix") {
    // Zero-bias conv + relu + pool is positively homogeneous.
    Model m("homog", {8, 8, 3}, 2, 0);
    m.add_layer(std::make_unique<Conv2dLayer>("c1", 3, 4, 3, 1, 1));
    m.add_layer(std::make_unique<ReluLayer>("c1:relu", ProbeKind::conv, "c1"));
    m.add_layer(std::make_unique<MaxPool2Layer>("p1"));
    m.add_layer(std::make_unique<Conv2dLayer>("c2", 4, 4, 3, 1, 1));
    m.add_layer(std::make_unique<ReluLayer>("c2:relu", ProbeKind::conv, "c2"));
    m.add_layer(std::make_unique<FlattenLayer>("flat"));
    m.add_layer(std::make_unique<DenseLayer>("fc", 4 * 4 * 4, 2));
    Rng rng(3);
    m.layer_as<Conv2dLayer>("c1").init_he_uniform(rng);
    m.layer_as<Conv2dLayer>("c2").init_he_uniform(rng);
    m.layer_as<DenseLayer>("fc").init_he_uniform(rng);
    // Biases start at zero from construction; leave them there.

    Tensor x = oracle::random_tensor({3, 8, 8}, rng, 0.f, 1.f);
    Tensor x3 = x;
    for (auto& v : x3.values()) v *= 3.f;

    ActivationTrace t1, t3;
    m.forward(x, false, &t1);
    m.forward(x3, false, &t3);
    REQUIRE(t1.size() == t3.size());
    for (std::size_t i = 0; i < t1.size(); ++i) {
        const Tensor& a = t1[i].activation;
        const Tensor& b = t3[i].activation;
        auto as_maps = [](const Tensor& t) {
            return Tensor(Shape{t.dim(1), t.dim(2), t.dim(3)},
                          std::vector<float>(t.values().begin(), t.values().end()));
        };
        CHECK(oracle::layer_activation_max(as_maps(b)) ==
              doctest::Approx(3.0 * oracle::layer_activation_max(as_maps(a))).epsilon(1e-5));
    }
}

TEST_CASE("profile CSV serialization") {
    ActivationProfile p;
    p.model_id = "m";
    p.group = "red";
    p.layers = {{"conv1", ProbeKind::conv}, {"fc1", ProbeKind::dense}};
    p.lambda = {{"conv1", 2.0}, {"fc1", 1.0}};
    p.n_samples = 7;
    std::vector<ActivationProfile> ps{p};
    normalize_profiles(ps);
    std::ostringstream os;
    write_profiles_csv(os, ps);
    const std::string text = os.str();
    CHECK(text.rfind("layer,group,lambda,lambda_norm,n\n", 0) == 0);
    CHECK(text.find("conv1,red,2,1,7\n") != std::string::npos);
    CHECK(text.find("fc1,red,1,0.5,7\n") != std::string::npos);
}
