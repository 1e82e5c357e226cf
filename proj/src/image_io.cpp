#include "mbnet/image_io.hpp"

#include "mbnet/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace mbnet {

namespace {

cv::Mat decode(const std::filesystem::path& path) {
    cv::Mat mat;
    try {
        mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    } catch (const cv::Exception& e) {
        throw IoError("cannot decode " + path.string() + ": " + e.what());
    }
    if (mat.empty()) {
        throw IoError("cannot read image " + path.string());
    }
    if (mat.depth() != CV_8U && mat.depth() != CV_16U) {
        throw IoError(path.string() + ": only 8- and 16-bit images are supported");
    }
    return mat;
}

/// HWC integer image to [1, C, H, W] float in [0,1].
torch::Tensor to_tensor(const cv::Mat& mat) {
    const double scale = mat.depth() == CV_16U ? 65535.0 : 255.0;
    cv::Mat f;
    mat.convertTo(f, CV_32F, 1.0 / scale);
    const auto h = static_cast<int64_t>(f.rows);
    const auto w = static_cast<int64_t>(f.cols);
    const auto c = static_cast<int64_t>(f.channels());
    auto t = torch::from_blob(f.ptr<float>(), {h, w, c}, torch::kFloat32).clone();
    return t.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

void encode(const std::filesystem::path& path, const cv::Mat& mat) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), mat);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) {
        throw IoError("cannot write " + path.string());
    }
}

}  // namespace

torch::Tensor read_rgb(const std::filesystem::path& path) {
    auto mat = decode(path);
    auto t = to_tensor(mat);
    switch (t.size(1)) {
        case 1:
            return t.expand({1, 3, t.size(2), t.size(3)}).contiguous();
        case 3:
        case 4:
            // OpenCV stores BGR(A).
            return t.index_select(1, torch::tensor({2, 1, 0}, torch::kLong)).contiguous();
        default:
            throw IoError(path.string() + ": unsupported channel count " + std::to_string(t.size(1)));
    }
}

torch::Tensor read_gray(const std::filesystem::path& path) {
    auto t = to_tensor(decode(path));
    if (t.size(1) == 1) {
        return t;
    }
    // First channel in RGB order is the last one OpenCV stores for BGR.
    const int64_t red = t.size(1) >= 3 ? 2 : 0;
    return t.narrow(1, red, 1).contiguous();
}

torch::Tensor quantize_u8(const torch::Tensor& image) {
    return torch::floor(image.detach().to(torch::kFloat64).clamp(0.0, 1.0) * 255.0 + 0.5).to(torch::kUInt8);
}

void write_rgb8(const std::filesystem::path& path, const torch::Tensor& image) {
    auto t = image.dim() == 4 ? image.squeeze(0) : image;
    if (t.dim() != 3 || t.size(0) != 3) {
        throw ShapeError("write_rgb8: expected [1,3,H,W] or [3,H,W], got " + c10::str(image.sizes()));
    }
    // RGB -> BGR, CHW -> HWC.
    auto hwc = quantize_u8(t.cpu()).index_select(0, torch::tensor({2, 1, 0}, torch::kLong)).permute({1, 2, 0}).contiguous();
    cv::Mat mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
    encode(path, mat);
}

void write_gray(const std::filesystem::path& path, const torch::Tensor& image, bool sixteen_bit) {
    if (image.dim() != 4 || image.size(0) != 1 || image.size(1) != 1) {
        throw ShapeError("write_gray: expected [1,1,H,W], got " + c10::str(image.sizes()));
    }
    const auto plane = image.detach().cpu().to(torch::kFloat64).clamp(0.0, 1.0)[0][0];
    const int rows = static_cast<int>(plane.size(0));
    const int cols = static_cast<int>(plane.size(1));
    if (sixteen_bit) {
        auto q = torch::floor(plane * 65535.0 + 0.5).to(torch::kInt32).to(torch::kInt16).contiguous();
        cv::Mat mat(rows, cols, CV_16UC1, q.data_ptr<int16_t>());
        encode(path, mat);
    } else {
        auto q = torch::floor(plane * 255.0 + 0.5).to(torch::kUInt8).contiguous();
        cv::Mat mat(rows, cols, CV_8UC1, q.data_ptr<uint8_t>());
        encode(path, mat);
    }
}

}  // namespace mbnet
