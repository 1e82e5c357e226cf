#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mbnet {

inline constexpr double kPsnrCapDb = 100.0;

/// 10*log10(peak^2 / MSE), or `cap_db` when the MSE is zero.
double psnr(const torch::Tensor& x, const torch::Tensor& x_hat, double peak = 1.0, double cap_db = kPsnrCapDb);

/// SSIM with the loss parameterisation, evaluated in double precision.
double ssim_metric(const torch::Tensor& x, const torch::Tensor& x_hat);

/// Mean perceptual score: 0.5 * (ssim + (1 - lpips)).
double mps(double ssim_value, double lpips_value);

/// Learned perceptual distance; lower is better.
class LpipsScorer {
public:
    virtual ~LpipsScorer() = default;
    /// Inputs are [1,3,H,W] float tensors in [0,1].
    virtual double score(const torch::Tensor& x, const torch::Tensor& x_hat) const = 0;
};

/// Scorer backed by a shared library exporting
///   extern "C" double mbnet_lpips(const float* a, const float* b,
///                                 int64_t channels, int64_t height, int64_t width);
/// with planar (CHW) float buffers in [0,1].
class PluginLpipsScorer final : public LpipsScorer {
public:
    explicit PluginLpipsScorer(const std::filesystem::path& library);
    ~PluginLpipsScorer() override;
    PluginLpipsScorer(const PluginLpipsScorer&) = delete;
    PluginLpipsScorer& operator=(const PluginLpipsScorer&) = delete;

    double score(const torch::Tensor& x, const torch::Tensor& x_hat) const override;

private:
    using Fn = double (*)(const float*, const float*, int64_t, int64_t, int64_t);
    void* handle_ = nullptr;
    Fn fn_ = nullptr;
};

struct ImageMetrics {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> lpips;
    std::optional<double> mps;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::optional<double> mean_lpips;
    std::optional<double> mean_mps;
    int64_t count = 0;
};

/// Means accumulated in the given order.
MetricReport aggregate(std::vector<ImageMetrics> per_image);

/// Pair same-named PNGs in both directories (sorted by name) and score them.
/// Throws PairingError listing unmatched names, IoError on unreadable files.
MetricReport evaluate_dir(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                          const LpipsScorer* scorer = nullptr);

/// Human-readable report.
std::string report_to_text(const MetricReport& report);
/// Comma-separated table (name,psnr,ssim,lpips,mps) with a trailing `mean` row.
std::string report_to_csv(const MetricReport& report);

}  // namespace mbnet
