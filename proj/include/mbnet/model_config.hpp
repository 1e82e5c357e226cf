#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mbnet {

/// Output strides of the three encoder taps that feed the fusion path.
inline constexpr std::array<int64_t, 3> kTapStrides{8, 16, 32};

/// Inputs must be divisible by the deepest tap stride.
inline constexpr int64_t kInputMultiple = 32;

/// Network hyper-parameters. Defaults describe the full-size network
/// (ResNet-50 widths and depths in both encoder streams). The decoder and
/// fusion widths are repository choices; they are not prescribed anywhere
/// else and are documented in README.md.
struct ModelConfig {
    /// Bottleneck width of backbone stage conv2; doubles per later stage.
    int64_t base_width = 64;
    /// Output channels of conv1..conv5.
    std::array<int64_t, 5> stage_channels{64, 256, 512, 1024, 2048};
    /// Bottleneck blocks in conv2..conv5.
    std::array<int64_t, 4> stage_blocks{3, 4, 6, 3};
    /// Side of the per-pixel dynamic kernel.
    int64_t kgu_kernel_size = 3;
    /// Dilation of each dynamic branch; one branch per entry.
    std::vector<int64_t> dilations{1, 3, 5};
    /// Channels of the fused feature and of the reduced decoder feature.
    int64_t mid_channels = 64;
    /// Growth rate of every densely connected layer.
    int64_t growth = 32;
    /// Dense layers in each fusion block (the kernel generator always uses four).
    int64_t fusion_layers = 4;
    /// Channels of the decoder at strides 32/16/8.
    int64_t decoder_channels = 128;
    /// Channels of the full-resolution refinement stages.
    int64_t head_channels = 32;
    /// Upper bound on GroupNorm groups in the backbone.
    int64_t norm_groups = 32;
    bool use_pretrained_backbone = false;
    /// Named-tensor archive directory used when use_pretrained_backbone is set.
    std::string pretrained_path;
    bool residual_output = true;
    bool clamp_output = true;

    /// Throws ConfigError when an invariant does not hold.
    void validate() const;

    /// Edge of the dense-equivalent kernel for a dilation.
    [[nodiscard]] int64_t effective_kernel_size(int64_t dilation) const {
        return dilation * (kgu_kernel_size - 1) + 1;
    }

    /// Desk-scale network used by tests and the fixture workflow.
    static ModelConfig tiny();
    /// Smallest useful network, under 50k parameters, for gradient checks.
    static ModelConfig micro();
};

}  // namespace mbnet
