#include "mbnet/dynamic_conv.hpp"

#include "mbnet/errors.hpp"

#include <cmath>
#include <string>

namespace mbnet {

namespace {

int64_t side_from_taps(int64_t taps) {
    const auto side = static_cast<int64_t>(std::lround(std::sqrt(static_cast<double>(taps))));
    if (side < 1 || side * side != taps || side % 2 == 0) {
        throw ShapeError("kernel field: tap count " + std::to_string(taps) + " is not the square of an odd size");
    }
    return side;
}

void check_field(const torch::Tensor& kernels) {
    if (kernels.dim() != 4) {
        throw ShapeError("kernel field must be [B, k*k, H, W], got rank " + std::to_string(kernels.dim()));
    }
}

}  // namespace

int64_t KernelField::kernel_size() const {
    check_field(weights);
    return side_from_taps(weights.size(1));
}

DilatedKernel::DilatedKernel(KernelField source, int64_t dilation)
    : source_(std::move(source)), dilation_(dilation), source_size_(source_.kernel_size()) {
    if (dilation_ < 1) {
        throw ConfigError("dilation must be >= 1, got " + std::to_string(dilation_));
    }
    source_.dilation = dilation_;
}

std::vector<std::pair<int64_t, int64_t>> DilatedKernel::sample_offsets() const {
    std::vector<std::pair<int64_t, int64_t>> offsets;
    const int64_t half = source_size_ / 2;
    offsets.reserve(static_cast<size_t>(source_size_ * source_size_));
    for (int64_t i = 0; i < source_size_; ++i) {
        for (int64_t j = 0; j < source_size_; ++j) {
            offsets.emplace_back(dilation_ * (i - half), dilation_ * (j - half));
        }
    }
    return offsets;
}

torch::Tensor DilatedKernel::dense() const {
    const auto& w = source_.weights;
    const int64_t e = effective_size();
    auto out = torch::zeros({w.size(0), e * e, w.size(2), w.size(3)}, w.options());
    // Source taps sit on the stride-d sub-lattice of the dense grid.
    auto index = torch::empty({source_size_ * source_size_}, torch::kLong);
    auto acc = index.accessor<int64_t, 1>();
    for (int64_t i = 0; i < source_size_; ++i) {
        for (int64_t j = 0; j < source_size_; ++j) {
            acc[i * source_size_ + j] = (i * dilation_) * e + j * dilation_;
        }
    }
    return out.index_copy(1, index.to(w.device()), w);
}

DilatedKernel ktu(const KernelField& kernels, int64_t dilation) {
    if (dilation < 1) {
        throw ConfigError("dilation must be >= 1, got " + std::to_string(dilation));
    }
    return DilatedKernel(kernels, dilation);
}

torch::Tensor dynamic_conv(const torch::Tensor& feature, const torch::Tensor& kernels, int64_t dilation) {
    if (feature.dim() != 4) {
        throw ShapeError("dynamic_conv: feature must be [B, C, H, W]");
    }
    check_field(kernels);
    if (dilation < 1) {
        throw ConfigError("dynamic_conv: dilation must be >= 1, got " + std::to_string(dilation));
    }
    if (kernels.size(0) != feature.size(0) || kernels.size(2) != feature.size(2) ||
        kernels.size(3) != feature.size(3)) {
        throw ShapeError("dynamic_conv: kernel field " + std::to_string(kernels.size(2)) + "x" +
                         std::to_string(kernels.size(3)) + " does not match feature " +
                         std::to_string(feature.size(2)) + "x" + std::to_string(feature.size(3)));
    }
    const int64_t k = side_from_taps(kernels.size(1));
    const int64_t height = feature.size(2);
    const int64_t width = feature.size(3);
    const int64_t pad = dilation * (k / 2);

    const auto padded = torch::constant_pad_nd(feature, {pad, pad, pad, pad}, 0.0);
    torch::Tensor out;
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            auto window = padded.narrow(2, i * dilation, height).narrow(3, j * dilation, width);
            auto term = window * kernels.narrow(1, i * k + j, 1);
            out = out.defined() ? out + term : term;
        }
    }
    return out;
}

torch::Tensor dynamic_conv(const torch::Tensor& feature, const DilatedKernel& kernel) {
    return dynamic_conv(feature, kernel.source().weights, kernel.dilation());
}

}  // namespace mbnet
