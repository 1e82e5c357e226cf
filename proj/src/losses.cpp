#include "mbnet/losses.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/tensor_archive.hpp"

#include <cmath>
#include <map>
#include <regex>
#include <string>

namespace mbnet {

namespace F = torch::nn::functional;

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.sizes().equals(b.sizes())) {
        throw ShapeError(std::string(what) + ": shapes " + c10::str(a.sizes()) + " and " + c10::str(b.sizes()) +
                         " differ");
    }
}

torch::Tensor gaussian_1d(int64_t size, double sigma, const torch::TensorOptions& options) {
    auto coords = torch::arange(size, torch::TensorOptions().dtype(torch::kFloat64)) - static_cast<double>(size / 2);
    auto g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
    return (g / g.sum()).to(options);
}

/// Valid (unpadded) separable Gaussian filtering of [N,1,H,W].
torch::Tensor blur(const torch::Tensor& x, const torch::Tensor& g) {
    const auto n = g.size(0);
    auto y = F::conv2d(x, g.view({1, 1, 1, n}));
    return F::conv2d(y, g.view({1, 1, n, 1}));
}

}  // namespace

void LossWeights::validate() const {
    for (double w : {lambda1, lambda2, lambda3}) {
        if (!std::isfinite(w) || w < 0.0) {
            throw ConfigError("loss weights must be finite and >= 0");
        }
    }
}

torch::Tensor charbonnier(const torch::Tensor& x, const torch::Tensor& x_hat, double eps) {
    require_same_shape(x, x_hat, "charbonnier");
    if (!(eps > 0.0)) {
        throw ConfigError("charbonnier: eps must be positive");
    }
    const auto diff = x - x_hat;
    return torch::sqrt(diff * diff + eps * eps).mean();
}

torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& x_hat, const SsimOptions& options) {
    require_same_shape(x, x_hat, "ssim");
    if (x.dim() != 4) {
        throw ShapeError("ssim: expected [B, C, H, W], got " + c10::str(x.sizes()));
    }
    int64_t window = options.window;
    double sigma = options.sigma;
    const int64_t smallest = std::min(x.size(2), x.size(3));
    if (smallest < window) {
        if (!options.shrink_window_for_small_inputs || smallest < 1) {
            throw DegenerateInputError("ssim: image " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                                       " is smaller than the " + std::to_string(window) + "x" +
                                       std::to_string(window) + " window");
        }
        const int64_t shrunk = smallest % 2 == 1 ? smallest : smallest - 1;
        sigma *= static_cast<double>(shrunk) / static_cast<double>(window);
        window = shrunk;
    }

    const double c1 = std::pow(options.k1 * options.data_range, 2);
    const double c2 = std::pow(options.k2 * options.data_range, 2);
    const auto g = gaussian_1d(window, sigma, x.options());

    const auto n = x.size(0) * x.size(1);
    const auto a = x.reshape({n, 1, x.size(2), x.size(3)});
    const auto b = x_hat.reshape({n, 1, x.size(2), x.size(3)});

    const auto mu_a = blur(a, g);
    const auto mu_b = blur(b, g);
    const auto var_a = blur(a * a, g) - mu_a * mu_a;
    const auto var_b = blur(b * b, g) - mu_b * mu_b;
    const auto cov = blur(a * b, g) - mu_a * mu_b;

    const auto numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
    const auto denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    return (numerator / denominator).mean();
}

torch::Tensor ssim_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const SsimOptions& options) {
    return -ssim(x, x_hat, options);
}

torch::Tensor perceptual(const torch::Tensor& x, const torch::Tensor& x_hat, const FeatureExtractor& extractor) {
    require_same_shape(x, x_hat, "perceptual");
    return (extractor.extract(x) - extractor.extract(x_hat)).abs().mean();
}

LossTerms loss_terms(const torch::Tensor& x, const torch::Tensor& x_hat, const LossWeights& weights, double eps,
                     const FeatureExtractor& extractor) {
    weights.validate();
    LossTerms terms;
    terms.charbonnier = charbonnier(x, x_hat, eps);
    terms.ssim_loss = ssim_loss(x, x_hat);
    terms.perceptual = perceptual(x, x_hat, extractor);
    terms.total = weights.lambda1 * terms.charbonnier + weights.lambda2 * terms.ssim_loss +
                  weights.lambda3 * terms.perceptual;
    return terms;
}

torch::Tensor total_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const LossWeights& weights, double eps,
                         const FeatureExtractor& extractor) {
    return loss_terms(x, x_hat, weights, eps, extractor).total;
}

// ---------------------------------------------------------------------------

ConvFeatureExtractor::ConvFeatureExtractor(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) {
        throw ConfigError("conv feature extractor needs at least one layer");
    }
    int64_t channels = 3;
    for (size_t i = 0; i < layers_.size(); ++i) {
        auto& layer = layers_[i];
        if (layer.weight.dim() != 4 || layer.weight.size(2) != 3 || layer.weight.size(3) != 3) {
            throw ShapeError("conv feature extractor: layer " + std::to_string(i) + " weight must be [out, in, 3, 3]");
        }
        if (layer.weight.size(1) != channels) {
            throw ShapeError("conv feature extractor: layer " + std::to_string(i) + " expects " +
                             std::to_string(layer.weight.size(1)) + " input channels, previous layer gives " +
                             std::to_string(channels));
        }
        if (layer.bias.dim() != 1 || layer.bias.size(0) != layer.weight.size(0)) {
            throw ShapeError("conv feature extractor: layer " + std::to_string(i) + " bias does not match weight");
        }
        channels = layer.weight.size(0);
        layer.weight = layer.weight.detach().clone().set_requires_grad(false);
        layer.bias = layer.bias.detach().clone().set_requires_grad(false);
    }
}

ConvFeatureExtractor ConvFeatureExtractor::load(const std::filesystem::path& manifest,
                                                const std::filesystem::path& blob) {
    static const std::regex name_re(R"(conv(\d+)_(\d+)\.(weight|bias))");
    std::map<std::pair<int, int>, Layer> by_position;
    for (auto& t : read_tensor_archive(manifest, blob)) {
        std::smatch m;
        if (!std::regex_match(t.name, m, name_re)) {
            throw ConfigError("conv feature extractor: unexpected tensor name '" + t.name + "'");
        }
        const int block = std::stoi(m[1].str());
        auto& layer = by_position[{block, std::stoi(m[2].str())}];
        layer.block = block;
        (m[3].str() == "weight" ? layer.weight : layer.bias) = t.value;
    }
    std::vector<Layer> layers;
    for (auto& [position, layer] : by_position) {
        if (!layer.weight.defined() || !layer.bias.defined()) {
            throw ConfigError("conv feature extractor: conv" + std::to_string(position.first) + "_" +
                              std::to_string(position.second) + " needs both weight and bias");
        }
        layers.push_back(std::move(layer));
    }
    return ConvFeatureExtractor(std::move(layers));
}

torch::Tensor ConvFeatureExtractor::extract(const torch::Tensor& images) const {
    auto x = images;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        if (i > 0 && layer.block != layers_[i - 1].block) {
            x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
        }
        x = torch::relu(F::conv2d(x, layer.weight.to(x.options()),
                                  F::Conv2dFuncOptions().bias(layer.bias.to(x.options())).padding(1)));
    }
    return x;
}

}  // namespace mbnet
