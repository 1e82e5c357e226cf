#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <vector>

namespace mbnet {

/// Weights of the Charbonnier, SSIM and perceptual terms.
struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.1;
    double lambda3 = 0.1;

    void validate() const;
};

inline constexpr double kDefaultCharbonnierEps = 1e-3;

/// Frozen map from an image batch to a feature tensor.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual torch::Tensor extract(const torch::Tensor& images) const = 0;
};

class IdentityExtractor final : public FeatureExtractor {
public:
    torch::Tensor extract(const torch::Tensor& images) const override { return images; }
};

/// VGG-style stack of 3x3 convolutions (zero padding 1, ReLU) read from a
/// named-tensor archive. Names must look like `conv<block>_<index>.weight`
/// and `conv<block>_<index>.bias`; a 2x2 max-pool separates blocks. To
/// emulate a conv3-3 tap, supply conv1_1 .. conv3_3. Weights never receive
/// gradients.
class ConvFeatureExtractor final : public FeatureExtractor {
public:
    struct Layer {
        int block = 0;
        torch::Tensor weight;  // [out, in, 3, 3]
        torch::Tensor bias;    // [out]
    };

    explicit ConvFeatureExtractor(std::vector<Layer> layers);
    static ConvFeatureExtractor load(const std::filesystem::path& manifest, const std::filesystem::path& blob);

    torch::Tensor extract(const torch::Tensor& images) const override;
    [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }

private:
    std::vector<Layer> layers_;
};

struct SsimOptions {
    int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
    /// When set, inputs smaller than the window shrink the window (odd side,
    /// sigma scaled proportionally) instead of raising DegenerateInputError.
    bool shrink_window_for_small_inputs = false;
};

/// Mean Charbonnier penalty sqrt((x - x_hat)^2 + eps^2) over all elements.
torch::Tensor charbonnier(const torch::Tensor& x, const torch::Tensor& x_hat, double eps = kDefaultCharbonnierEps);

/// Mean local SSIM over channels and valid window positions (no padding),
/// Gaussian window. Inputs are [B, C, H, W].
torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& x_hat, const SsimOptions& options = {});

torch::Tensor ssim_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const SsimOptions& options = {});

/// Mean absolute difference of extracted features.
torch::Tensor perceptual(const torch::Tensor& x, const torch::Tensor& x_hat, const FeatureExtractor& extractor);

struct LossTerms {
    torch::Tensor charbonnier;
    torch::Tensor ssim_loss;
    torch::Tensor perceptual;
    torch::Tensor total;
};

/// lambda1 * charbonnier + lambda2 * ssim_loss + lambda3 * perceptual.
/// Terms with a zero weight are still evaluated so they can be logged.
LossTerms loss_terms(const torch::Tensor& x, const torch::Tensor& x_hat, const LossWeights& weights, double eps,
                     const FeatureExtractor& extractor);

torch::Tensor total_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const LossWeights& weights, double eps,
                         const FeatureExtractor& extractor);

}  // namespace mbnet
