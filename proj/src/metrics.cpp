#include "mbnet/metrics.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/image_io.hpp"
#include "mbnet/losses.hpp"

#include <dlfcn.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace mbnet {

namespace fs = std::filesystem;

double psnr(const torch::Tensor& x, const torch::Tensor& x_hat, double peak, double cap_db) {
    if (!x.sizes().equals(x_hat.sizes())) {
        throw ShapeError("psnr: shapes " + c10::str(x.sizes()) + " and " + c10::str(x_hat.sizes()) + " differ");
    }
    const auto diff = x.detach().to(torch::kFloat64) - x_hat.detach().to(torch::kFloat64);
    const double mse = (diff * diff).mean().item<double>();
    if (mse == 0.0) {
        return cap_db;
    }
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim_metric(const torch::Tensor& x, const torch::Tensor& x_hat) {
    return ssim(x.detach().to(torch::kFloat64), x_hat.detach().to(torch::kFloat64)).item<double>();
}

double mps(double ssim_value, double lpips_value) { return 0.5 * (ssim_value + (1.0 - lpips_value)); }

// ---------------------------------------------------------------------------

PluginLpipsScorer::PluginLpipsScorer(const fs::path& library) {
    handle_ = dlopen(library.c_str(), RTLD_NOW | RTLD_LOCAL);
    if (handle_ == nullptr) {
        const char* why = dlerror();
        throw IoError("cannot load LPIPS plugin " + library.string() + ": " + (why ? why : "unknown error"));
    }
    fn_ = reinterpret_cast<Fn>(dlsym(handle_, "mbnet_lpips"));
    if (fn_ == nullptr) {
        dlclose(handle_);
        handle_ = nullptr;
        throw IoError("LPIPS plugin " + library.string() + " does not export mbnet_lpips");
    }
}

PluginLpipsScorer::~PluginLpipsScorer() {
    if (handle_ != nullptr) {
        dlclose(handle_);
    }
}

double PluginLpipsScorer::score(const torch::Tensor& x, const torch::Tensor& x_hat) const {
    if (!x.sizes().equals(x_hat.sizes()) || x.dim() != 4 || x.size(0) != 1) {
        throw ShapeError("lpips: expected two [1,C,H,W] tensors of equal shape");
    }
    const auto a = x.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const auto b = x_hat.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    return fn_(a.data_ptr<float>(), b.data_ptr<float>(), a.size(1), a.size(2), a.size(3));
}

// ---------------------------------------------------------------------------

MetricReport aggregate(std::vector<ImageMetrics> per_image) {
    MetricReport report;
    report.count = static_cast<int64_t>(per_image.size());
    if (!per_image.empty()) {
        const bool with_lpips = std::all_of(per_image.begin(), per_image.end(),
                                            [](const ImageMetrics& m) { return m.lpips.has_value(); });
        double sum_psnr = 0.0;
        double sum_ssim = 0.0;
        double sum_lpips = 0.0;
        double sum_mps = 0.0;
        for (const auto& m : per_image) {
            sum_psnr += m.psnr;
            sum_ssim += m.ssim;
            if (with_lpips) {
                sum_lpips += *m.lpips;
                sum_mps += m.mps.value_or(mps(m.ssim, *m.lpips));
            }
        }
        const auto n = static_cast<double>(per_image.size());
        report.mean_psnr = sum_psnr / n;
        report.mean_ssim = sum_ssim / n;
        if (with_lpips) {
            report.mean_lpips = sum_lpips / n;
            report.mean_mps = sum_mps / n;
        }
    }
    report.per_image = std::move(per_image);
    return report;
}

namespace {

std::set<std::string> png_names(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw IoError(dir.string() + " is not a directory");
    }
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            names.insert(entry.path().filename().string());
        }
    }
    return names;
}

std::string join(const std::vector<std::string>& items) {
    std::string s;
    for (const auto& i : items) {
        s += (s.empty() ? "" : ", ") + i;
    }
    return s;
}

}  // namespace

MetricReport evaluate_dir(const fs::path& pred_dir, const fs::path& gt_dir, const LpipsScorer* scorer) {
    const auto pred = png_names(pred_dir);
    const auto gt = png_names(gt_dir);
    std::vector<std::string> missing;
    std::vector<std::string> extra;
    std::set_difference(gt.begin(), gt.end(), pred.begin(), pred.end(), std::back_inserter(missing));
    std::set_difference(pred.begin(), pred.end(), gt.begin(), gt.end(), std::back_inserter(extra));
    if (!missing.empty() || !extra.empty()) {
        std::string message = "prediction/ground-truth mismatch;";
        if (!missing.empty()) {
            message += " missing predictions: " + join(missing) + ";";
        }
        if (!extra.empty()) {
            message += " predictions without ground truth: " + join(extra) + ";";
        }
        throw PairingError(message);
    }

    std::vector<ImageMetrics> rows;
    for (const auto& name : gt) {
        const auto p = read_rgb(pred_dir / name).to(torch::kFloat64);
        const auto g = read_rgb(gt_dir / name).to(torch::kFloat64);
        if (!p.sizes().equals(g.sizes())) {
            throw ShapeError(name + ": prediction " + c10::str(p.sizes()) + " vs ground truth " +
                             c10::str(g.sizes()));
        }
        ImageMetrics m;
        m.name = name;
        m.psnr = psnr(g, p);
        m.ssim = ssim_metric(g, p);
        if (scorer != nullptr) {
            m.lpips = scorer->score(g, p);
            m.mps = mps(m.ssim, *m.lpips);
        }
        rows.push_back(std::move(m));
    }
    return aggregate(std::move(rows));
}

std::string report_to_text(const MetricReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(6);
    for (const auto& m : report.per_image) {
        out << m.name << "  psnr " << m.psnr << " dB  ssim " << m.ssim;
        if (m.lpips) {
            out << "  lpips " << *m.lpips << "  mps " << *m.mps;
        }
        out << '\n';
    }
    out << "---\n";
    out << "images " << report.count << '\n';
    out << "mean psnr " << report.mean_psnr << " dB\n";
    out << "mean ssim " << report.mean_ssim << '\n';
    if (report.mean_lpips) {
        out << "mean lpips " << *report.mean_lpips << '\n';
        out << "mean mps " << *report.mean_mps << '\n';
    }
    return out.str();
}

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    out << std::setprecision(17);
    const auto optional_field = [&out](const std::optional<double>& v) {
        if (v) {
            out << *v;
        }
    };
    out << "name,psnr,ssim,lpips,mps\n";
    for (const auto& m : report.per_image) {
        out << m.name << ',' << m.psnr << ',' << m.ssim << ',';
        optional_field(m.lpips);
        out << ',';
        optional_field(m.mps);
        out << '\n';
    }
    out << "mean," << report.mean_psnr << ',' << report.mean_ssim << ',';
    optional_field(report.mean_lpips);
    out << ',';
    optional_field(report.mean_mps);
    out << '\n';
    return out.str();
}

}  // namespace mbnet
