#include "mbnet/synthetic_scene.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/image_io.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace mbnet {

namespace F = torch::nn::functional;

namespace {

constexpr double kElevation = 35.0 * std::numbers::pi / 180.0;
constexpr double kAmbient = 0.25;
constexpr double kReliefGain = 6.0;

torch::Tensor smooth_noise(int64_t channels, int64_t grid, int64_t height, int64_t width, at::Generator& gen) {
    auto coarse = torch::rand({1, channels, grid, grid}, gen, torch::kFloat32);
    return F::interpolate(coarse, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{height, width})
                                      .mode(torch::kBicubic)
                                      .align_corners(true));
}

double azimuth(Angle angle) { return static_cast<double>(static_cast<int>(angle)) * std::numbers::pi / 4.0; }

}  // namespace

SyntheticScene make_synthetic_scene(int64_t height, int64_t width, uint64_t seed) {
    if (height < 4 || width < 4) {
        throw ShapeError("synthetic scene must be at least 4x4");
    }
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    SyntheticScene scene;

    auto relief = smooth_noise(1, 5, height, width, gen);
    auto ramp = torch::linspace(0.0, 1.0, height).view({1, 1, height, 1}).expand({1, 1, height, width});
    scene.depth = (0.15 + 0.45 * relief + 0.35 * ramp).clamp(0.0, 1.0).contiguous();

    auto base = smooth_noise(3, 4, height, width, gen);
    auto detail = smooth_noise(3, 9, height, width, gen);
    scene.albedo = (0.3 + 0.45 * base + 0.2 * detail).clamp(0.05, 0.95).contiguous();
    return scene;
}

std::array<float, 3> temperature_tint(int kelvin) {
    switch (kelvin) {
        case 2500:
            return {1.00F, 0.64F, 0.30F};
        case 3500:
            return {1.00F, 0.78F, 0.55F};
        case 4500:
            return {1.00F, 0.88F, 0.74F};
        case 5500:
            return {1.00F, 0.95F, 0.88F};
        case 6500:
            return {1.00F, 1.00F, 1.00F};
        default:
            throw ConfigError("no tint for colour temperature " + std::to_string(kelvin));
    }
}

torch::Tensor render(const SyntheticScene& scene, Angle angle, int kelvin) {
    const auto& d = scene.depth;
    auto padded = F::pad(d, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    const auto h = d.size(2);
    const auto w = d.size(3);
    auto dzdx = (padded.narrow(3, 2, w).narrow(2, 1, h) - padded.narrow(3, 0, w).narrow(2, 1, h)) * 0.5 *
                static_cast<double>(w) / 32.0;
    auto dzdy = (padded.narrow(2, 2, h).narrow(3, 1, w) - padded.narrow(2, 0, h).narrow(3, 1, w)) * 0.5 *
                static_cast<double>(h) / 32.0;
    auto nx = -kReliefGain * dzdx;
    auto ny = -kReliefGain * dzdy;
    auto norm = torch::sqrt(nx * nx + ny * ny + 1.0);

    const double phi = azimuth(angle);
    const double lx = std::sin(phi) * std::cos(kElevation);
    const double ly = -std::cos(phi) * std::cos(kElevation);
    const double lz = std::sin(kElevation);
    auto lambert = ((nx * lx + ny * ly + lz) / norm).clamp_min(0.0);
    auto shading = kAmbient + (1.0 - kAmbient) * lambert;

    const auto tint = temperature_tint(kelvin);
    auto tint_t = torch::tensor({tint[0], tint[1], tint[2]}).view({1, 3, 1, 1});
    return (scene.albedo * shading * tint_t).clamp(0.0, 1.0);
}

std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& root,
                                                 const SyntheticDatasetOptions& options) {
    std::filesystem::create_directories(root);
    std::vector<std::string> ids;
    for (int64_t i = 0; i < options.scenes; ++i) {
        std::ostringstream id;
        id << options.scene_prefix << std::setw(3) << std::setfill('0') << i;
        const auto scene = make_synthetic_scene(options.height, options.width, options.seed * 7919 + static_cast<uint64_t>(i));
        for (const auto& [temp, angle] : options.conditions) {
            write_rgb8(root / options.naming.image_name(id.str(), temp, angle), render(scene, angle, temp));
        }
        write_gray(root / options.naming.depth_name(id.str()), scene.depth, options.sixteen_bit_depth);
        ids.push_back(id.str());
    }
    return ids;
}

}  // namespace mbnet
