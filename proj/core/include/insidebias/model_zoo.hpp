#pragma once

#include <array>
#include <string>

#include "insidebias/model.hpp"

namespace insidebias::zoo {

inline constexpr const char* kVggSmall = "vgg_small";
inline constexpr const char* kResnetSmall = "resnet_small";

/// Eight 3x3 convolutions (32-32 / 64-64 / 128-128 / 256-256) with 2x2
/// max-pools between pairs, then dense-256 + dropout and a dense softmax
/// head. All eight post-conv activations are probe points; input is
/// [H, W, 3] with H,W == 28 or >= 32; classes 2 or 10.
Model build_vgg(std::array<std::size_t, 3> input_hwc, std::size_t num_classes, std::uint64_t seed);

/// Three residual blocks (widths 32/64/144), each halving the spatial extent,
/// then a dense softmax head. Probe points at each block's internal conv
/// activation and post-merge output.
Model build_resnet(std::array<std::size_t, 3> input_hwc, std::size_t num_classes, std::uint64_t seed);

/// Dispatch on arch id ("vgg_small" | "resnet_small").
Model build(const std::string& arch_id, std::array<std::size_t, 3> input_hwc,
            std::size_t num_classes, std::uint64_t seed);

/// Name of the last convolutional/residual probe point for an arch.
std::string last_conv_probe(const Model& model);

}  // namespace insidebias::zoo
