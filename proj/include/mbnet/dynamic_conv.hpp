#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace mbnet {

/// Per-pixel kernels of side k, stored as [B, k*k, H, W] in row-major tap
/// order (tap index i*k + j for kernel row i, column j).
struct KernelField {
    torch::Tensor weights;
    int64_t dilation = 1;

    /// Side length k recovered from the tap count; throws ShapeError when the
    /// tap count is not a perfect square of an odd number.
    [[nodiscard]] int64_t kernel_size() const;
};

/// Zero-inserted (dilated) form of a kernel field. The dense representation
/// is [B, E*E, H, W] with E = d*(k-1)+1; source tap (i, j) lands on dense
/// tap (i*d, j*d) and every other dense tap is zero.
class DilatedKernel {
public:
    DilatedKernel(KernelField source, int64_t dilation);

    [[nodiscard]] int64_t dilation() const { return dilation_; }
    [[nodiscard]] int64_t source_size() const { return source_size_; }
    [[nodiscard]] int64_t effective_size() const { return dilation_ * (source_size_ - 1) + 1; }
    [[nodiscard]] const KernelField& source() const { return source_; }

    /// Offsets (dy, dx) relative to the centre that the source taps sample.
    [[nodiscard]] std::vector<std::pair<int64_t, int64_t>> sample_offsets() const;

    /// Materialise the zero-inserted kernel, [B, E*E, H, W].
    [[nodiscard]] torch::Tensor dense() const;

private:
    KernelField source_;
    int64_t dilation_;
    int64_t source_size_;
};

/// Kernel transformation: re-express a k x k kernel field as a dilated one.
/// Throws ConfigError for dilation < 1.
DilatedKernel ktu(const KernelField& kernels, int64_t dilation);

/// Channel-shared per-pixel convolution with zero padding:
///   out(b,c,y,x) = sum_{i,j} K(b, i*k+j, y, x) * f(b, c, y + d(i - k/2), x + d(j - k/2)).
/// Differentiable with respect to both the feature and the kernels.
torch::Tensor dynamic_conv(const torch::Tensor& feature, const torch::Tensor& kernels, int64_t dilation);

/// Same as above, applying a dilated kernel produced by ktu().
torch::Tensor dynamic_conv(const torch::Tensor& feature, const DilatedKernel& kernel);

}  // namespace mbnet
