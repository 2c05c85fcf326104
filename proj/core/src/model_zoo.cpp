#include "insidebias/model_zoo.hpp"

#include <memory>

#include "insidebias/errors.hpp"

namespace insidebias::zoo {

namespace {

void check_input(const std::array<std::size_t, 3>& hwc, std::size_t num_classes,
                 const char* arch) {
    const auto [h, w, c] = hwc;
    if (c != 3) throw ConfigError(std::string(arch) + ": input must have 3 channels, got " + std::to_string(c));
    const bool digit_scale = h == 28 && w == 28;
    if (!digit_scale && (h < 32 || w < 32)) {
        throw ConfigError(std::string(arch) + ": input must be 28x28 or at least 32x32, got " +
                          std::to_string(h) + "x" + std::to_string(w));
    }
    if (num_classes != 2 && num_classes != 10) {
        throw ConfigError(std::string(arch) + ": num_classes must be 2 or 10, got " +
                          std::to_string(num_classes));
    }
}

}  // namespace

Model build_vgg(std::array<std::size_t, 3> input_hwc, std::size_t num_classes, std::uint64_t seed) {
    check_input(input_hwc, num_classes, kVggSmall);
    const auto [h, w, c] = input_hwc;

    Model model(kVggSmall, input_hwc, num_classes, seed);
    Rng init_rng(derive_seed(seed, 0x111));

    const std::size_t widths[4] = {32, 64, 128, 256};
    std::size_t in_maps = c, sh = h, sw = w;
    int conv_idx = 0;
    for (std::size_t block = 0; block < 4; ++block) {
        for (int rep = 0; rep < 2; ++rep) {
            ++conv_idx;
            const std::string cname = "conv" + std::to_string(conv_idx);
            auto conv = std::make_unique<Conv2dLayer>(cname, in_maps, widths[block], 3, 1, 1);
            conv->init_he_uniform(init_rng);
            model.add_layer(std::move(conv));
            model.add_layer(std::make_unique<ReluLayer>(cname + ":relu", ProbeKind::conv, cname));
            in_maps = widths[block];
        }
        model.add_layer(std::make_unique<MaxPool2Layer>("pool" + std::to_string(block + 1)));
        sh /= 2;
        sw /= 2;
    }

    model.add_layer(std::make_unique<FlattenLayer>("flatten"));
    const std::size_t flat = in_maps * sh * sw;
    auto fc1 = std::make_unique<DenseLayer>("fc1", flat, 256);
    fc1->init_he_uniform(init_rng);
    model.add_layer(std::move(fc1));
    model.add_layer(std::make_unique<ReluLayer>("fc1:relu", ProbeKind::dense, "fc1"));
    model.add_layer(std::make_unique<DropoutLayer>("drop1", 0.5f, &model.dropout_rng()));
    auto fc2 = std::make_unique<DenseLayer>("fc2", 256, num_classes);
    fc2->init_he_uniform(init_rng);
    model.add_layer(std::move(fc2));
    return model;
}

Model build_resnet(std::array<std::size_t, 3> input_hwc, std::size_t num_classes,
                   std::uint64_t seed) {
    check_input(input_hwc, num_classes, kResnetSmall);
    const auto [h, w, c] = input_hwc;

    Model model(kResnetSmall, input_hwc, num_classes, seed);
    Rng init_rng(derive_seed(seed, 0x222));

    const std::size_t widths[3] = {32, 64, 144};
    std::size_t in_maps = c, sh = h, sw = w;
    for (std::size_t b = 0; b < 3; ++b) {
        auto block = std::make_unique<ResidualBlockLayer>("block" + std::to_string(b + 1), in_maps,
                                                          widths[b]);
        block->init_he_uniform(init_rng);
        model.add_layer(std::move(block));
        in_maps = widths[b];
        // stride-2 conv with 3x3 kernel, padding 1: out = floor((s-1)/2) + 1
        sh = (sh - 1) / 2 + 1;
        sw = (sw - 1) / 2 + 1;
    }

    model.add_layer(std::make_unique<FlattenLayer>("flatten"));
    auto fc = std::make_unique<DenseLayer>("fc", in_maps * sh * sw, num_classes);
    fc->init_he_uniform(init_rng);
    model.add_layer(std::move(fc));
    return model;
}

Model build(const std::string& arch_id, std::array<std::size_t, 3> input_hwc,
            std::size_t num_classes, std::uint64_t seed) {
    if (arch_id == kVggSmall) return build_vgg(input_hwc, num_classes, seed);
    if (arch_id == kResnetSmall) return build_resnet(input_hwc, num_classes, seed);
    throw ConfigError("unknown arch id '" + arch_id + "'");
}

std::string last_conv_probe(const Model& model) {
    std::string last;
    for (const auto& [name, kind] : model.probe_points()) {
        if (kind == ProbeKind::conv) last = name;
    }
    if (last.empty()) throw ConfigError(model.arch_id() + ": no convolutional probe points");
    return last;
}

}  // namespace insidebias::zoo
