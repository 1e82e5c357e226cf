#pragma once

#include "mbnet/data.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace mbnet {

/// Procedural RGB-D scenes rendered with Lambertian shading under a
/// directional light. Rendering is mirror-consistent: flipping a scene lit
/// from the west gives the mirrored scene lit from the east, so every pair
/// strategy produces physically valid examples.
struct SyntheticScene {
    torch::Tensor albedo;  // [1,3,H,W]
    torch::Tensor depth;   // [1,1,H,W], in [0,1]
};

SyntheticScene make_synthetic_scene(int64_t height, int64_t width, uint64_t seed);

/// Multiplicative RGB tint approximating an illuminant colour temperature.
std::array<float, 3> temperature_tint(int kelvin);

/// Render `scene` lit from `angle` with an illuminant of `kelvin`.
torch::Tensor render(const SyntheticScene& scene, Angle angle, int kelvin);

struct SyntheticDatasetOptions {
    int64_t scenes = 4;
    int64_t height = 128;
    int64_t width = 128;
    uint64_t seed = 1;
    std::vector<std::pair<int, Angle>> conditions{
        {6500, Angle::N}, {6500, Angle::NE}, {4500, Angle::E}, {4500, Angle::W}};
    bool sixteen_bit_depth = true;
    NamingScheme naming;
    /// Scene ids are `<prefix><index>` with three digits.
    std::string scene_prefix = "scene";
};

/// Write a dataset tree to `root`; returns the scene ids.
std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& root,
                                                 const SyntheticDatasetOptions& options);

}  // namespace mbnet
