#pragma once

#include "mbnet/dynamic_conv.hpp"
#include "mbnet/model_config.hpp"

#include <torch/torch.h>

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace mbnet {

/// Features tapped from one encoder stream at strides 8, 16 and 32.
struct EncoderTaps {
    torch::Tensor f3;
    torch::Tensor f4;
    torch::Tensor f5;

    [[nodiscard]] const torch::Tensor& at_level(int level) const;
};

/// Fused RGB-D features, one per tap level (index 0 = conv3).
using FusedFeatures = std::array<torch::Tensor, 3>;

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

class BottleneckImpl : public torch::nn::Module {
public:
    BottleneckImpl(int64_t in_channels, int64_t width, int64_t out_channels, int64_t stride, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d reduce_{nullptr}, spatial_{nullptr}, expand_{nullptr};
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
    torch::nn::Conv2d shortcut_{nullptr};
    torch::nn::GroupNorm shortcut_norm_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Five-stage residual encoder (ResNet-50 topology family). The stem takes
/// three channels; single-channel depth is replicated before entering.
class BackboneImpl : public torch::nn::Module {
public:
    explicit BackboneImpl(const ModelConfig& config);
    EncoderTaps forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d stem_{nullptr};
    torch::nn::GroupNorm stem_norm_{nullptr};
    std::array<torch::nn::Sequential, 4> stages_;
};
TORCH_MODULE(Backbone);

// ---------------------------------------------------------------------------
// Fusion and dynamic dilated pyramid
// ---------------------------------------------------------------------------

/// Densely connected block: layer i sees the input plus the outputs of
/// layers 0..i-1, i.e. in_channels + i*growth channels. The forward result is
/// the concatenation of the input and every layer output.
class DenseBlockImpl : public torch::nn::Module {
public:
    DenseBlockImpl(int64_t in_channels, int64_t growth, int64_t layers);
    torch::Tensor forward(const torch::Tensor& x);

    [[nodiscard]] int64_t layer_count() const { return static_cast<int64_t>(layers_.size()); }
    [[nodiscard]] int64_t layer_in_channels(int64_t i) const { return in_channels_ + i * growth_; }
    [[nodiscard]] int64_t out_channels() const { return in_channels_ + layer_count() * growth_; }
    [[nodiscard]] torch::nn::Conv2d& layer(int64_t i) { return layers_.at(static_cast<size_t>(i)); }

private:
    int64_t in_channels_;
    int64_t growth_;
    std::vector<torch::nn::Conv2d> layers_;
};
TORCH_MODULE(DenseBlock);

/// Concatenate RGB and depth taps, run a dense block, project to mid channels.
class FusionBlockImpl : public torch::nn::Module {
public:
    FusionBlockImpl(int64_t tap_channels, int64_t mid_channels, int64_t growth, int64_t layers);
    torch::Tensor forward(const torch::Tensor& rgb_tap, const torch::Tensor& depth_tap);

    DenseBlock dense{nullptr};
    torch::nn::Conv2d project{nullptr};
};
TORCH_MODULE(FusionBlock);

/// Kernel generation unit: four dense layers followed by one 1x1 head per
/// dilation branch, each emitting k*k per-pixel weights.
class KernelGeneratorImpl : public torch::nn::Module {
public:
    static constexpr int64_t kDenseLayers = 4;

    KernelGeneratorImpl(int64_t mid_channels, int64_t growth, int64_t kernel_size, std::vector<int64_t> dilations);
    std::vector<KernelField> forward(const torch::Tensor& fused);

    DenseBlock dense{nullptr};
    std::vector<torch::nn::Conv2d> heads;

private:
    int64_t kernel_size_;
    std::vector<int64_t> dilations_;
};
TORCH_MODULE(KernelGenerator);

/// Dynamic dilated pyramid module. Reduces the decoder feature to mid
/// channels, filters it with the generated per-pixel kernels at every
/// dilation, refines each branch with a 3x3 convolution, and projects the
/// sum of the branches plus the reduced feature with a final 3x3 convolution.
class DynamicPyramidImpl : public torch::nn::Module {
public:
    DynamicPyramidImpl(int64_t decoder_channels, const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& fused, const torch::Tensor& decoder_feature);

    [[nodiscard]] int64_t branch_count() const { return static_cast<int64_t>(branch_convs.size()); }

    torch::nn::Conv2d reduce{nullptr};
    KernelGenerator kgu{nullptr};
    std::vector<torch::nn::Conv2d> branch_convs;
    torch::nn::Conv2d combine{nullptr};

private:
    std::vector<int64_t> dilations_;
};
TORCH_MODULE(DynamicPyramid);

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Parallel 1x1, 3x3 and 5x5 convolutions, concatenated and projected.
class MultiScaleBlockImpl : public torch::nn::Module {
public:
    static constexpr std::array<int64_t, 3> kKernelSizes{1, 3, 5};

    MultiScaleBlockImpl(int64_t in_channels, int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

    std::vector<torch::nn::Conv2d> branches;
    torch::nn::Conv2d project{nullptr};
};
TORCH_MODULE(MultiScaleBlock);

/// U-shaped decoder. At each of strides 32, 16 and 8 the running feature is
/// concatenated with the pyramid output and the RGB skip tap and passed
/// through a multi-scale block; three bilinear x2 stages then return to full
/// resolution and a 3x3 head emits three channels.
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ModelConfig& config);

    /// Running feature at stride 32 from the deepest RGB tap and its pyramid output.
    torch::Tensor start(const torch::Tensor& rgb_f5, const torch::Tensor& pyramid_out);
    /// Merge a same-resolution pyramid output and skip tap (levels 4 and 3).
    torch::Tensor merge(int level, const torch::Tensor& running, const torch::Tensor& pyramid_out,
                        const torch::Tensor& skip);
    /// Stride 8 to full resolution, then the 3-channel head.
    torch::Tensor finish(const torch::Tensor& stride8);

    std::array<MultiScaleBlock, 3> blocks{nullptr, nullptr, nullptr};  // index 0 = level 3
    std::array<torch::nn::Conv2d, 3> refine{nullptr, nullptr, nullptr};
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Decoder);

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

/// Multi-modal bifurcated relighting network: independent RGB and depth
/// encoders, dense fusion at three taps, dynamic dilated pyramids and a
/// U-shaped decoder predicting a residual image.
class MBNetImpl : public torch::nn::Module {
public:
    explicit MBNetImpl(ModelConfig config);

    [[nodiscard]] const ModelConfig& config() const { return config_; }

    EncoderTaps encode_rgb(const torch::Tensor& image);
    /// Depth [B,1,H,W] is replicated to three channels before the stream.
    EncoderTaps encode_depth(const torch::Tensor& depth);
    torch::Tensor fuse(const torch::Tensor& rgb_tap, const torch::Tensor& depth_tap, int level);
    std::vector<KernelField> kgu(const torch::Tensor& fused, int level);
    torch::Tensor ddpm(const torch::Tensor& fused, const torch::Tensor& decoder_feature, int level);
    /// Residual image. The pyramids consume the running decoder feature, so
    /// they are evaluated inside the decoder walk.
    torch::Tensor decode(const EncoderTaps& rgb_taps, const FusedFeatures& fused);

    /// image + residual (or the head output when residual_output is off),
    /// without clamping. Used for training.
    torch::Tensor forward_raw(const torch::Tensor& image, const torch::Tensor& depth);
    /// forward_raw followed by the [0,1] clamp when clamp_output is on.
    torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& depth);

    Backbone rgb_encoder{nullptr};
    Backbone depth_encoder{nullptr};
    std::array<FusionBlock, 3> fusion{nullptr, nullptr, nullptr};
    std::array<DynamicPyramid, 3> pyramids{nullptr, nullptr, nullptr};
    Decoder decoder{nullptr};

private:
    ModelConfig config_;
};
TORCH_MODULE(MBNet);

/// Source of pretrained encoder weights.
class BackboneInitializer {
public:
    virtual ~BackboneInitializer() = default;
    virtual void initialize(Backbone& backbone) const = 0;
};

/// Loads encoder weights from a named-tensor archive (see tensor_archive.hpp).
/// Every backbone parameter must be present with a matching shape.
class ArchiveBackboneInitializer final : public BackboneInitializer {
public:
    explicit ArchiveBackboneInitializer(std::string directory) : directory_(std::move(directory)) {}
    void initialize(Backbone& backbone) const override;

private:
    std::string directory_;
};

/// Validate the config and construct the network. Encoder weights come from
/// `initializer` when given, from the archive at config.pretrained_path when
/// use_pretrained_backbone is set, and He-normal random init otherwise.
MBNet build_model(const ModelConfig& config, const BackboneInitializer* initializer = nullptr);

int64_t count_parameters(const torch::nn::Module& module);

/// Throws ShapeError unless x is [B, channels, H, W] with H, W multiples of 32.
void check_input(const torch::Tensor& x, int64_t channels, const char* what);

}  // namespace mbnet
