#include "mbnet/model.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/tensor_archive.hpp"

#include <numeric>
#include <string>
#include <unordered_map>

namespace mbnet {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, bool bias = true) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias));
}

nn::GroupNorm group_norm(int64_t channels, int64_t max_groups) {
    return nn::GroupNorm(nn::GroupNormOptions(std::gcd(channels, max_groups), channels));
}

void he_init(nn::Conv2d& c) {
    torch::NoGradGuard guard;
    nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    if (c->bias.defined()) {
        c->bias.zero_();
    }
}

int level_index(int level) {
    if (level < 3 || level > 5) {
        throw ConfigError("tap level must be 3, 4 or 5, got " + std::to_string(level));
    }
    return level - 3;
}

void require_same_spatial(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.dim() != 4 || b.dim() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) ||
        a.size(3) != b.size(3)) {
        throw ShapeError(std::string(what) + ": spatial sizes differ (" + std::to_string(a.size(-2)) + "x" +
                         std::to_string(a.size(-1)) + " vs " + std::to_string(b.size(-2)) + "x" +
                         std::to_string(b.size(-1)) + ")");
    }
}

torch::Tensor upsample2x(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace

const torch::Tensor& EncoderTaps::at_level(int level) const {
    switch (level_index(level)) {
        case 0:
            return f3;
        case 1:
            return f4;
        default:
            return f5;
    }
}

void check_input(const torch::Tensor& x, int64_t channels, const char* what) {
    if (x.dim() != 4 || x.size(1) != channels) {
        throw ShapeError(std::string(what) + ": expected [B, " + std::to_string(channels) + ", H, W], got " +
                         c10::str(x.sizes()));
    }
    if (x.size(2) % kInputMultiple != 0 || x.size(3) % kInputMultiple != 0 || x.size(2) == 0 || x.size(3) == 0) {
        throw ShapeError(std::string(what) + ": spatial size " + std::to_string(x.size(2)) + "x" +
                         std::to_string(x.size(3)) + " is not a positive multiple of 32");
    }
}

// ---------------------------------------------------------------------------

BottleneckImpl::BottleneckImpl(int64_t in_channels, int64_t width, int64_t out_channels, int64_t stride,
                               int64_t groups) {
    reduce_ = register_module("reduce", conv(in_channels, width, 1, 1, false));
    norm1_ = register_module("norm1", group_norm(width, groups));
    spatial_ = register_module("spatial", conv(width, width, 3, stride, false));
    norm2_ = register_module("norm2", group_norm(width, groups));
    expand_ = register_module("expand", conv(width, out_channels, 1, 1, false));
    norm3_ = register_module("norm3", group_norm(out_channels, groups));
    he_init(reduce_);
    he_init(spatial_);
    he_init(expand_);
    if (stride != 1 || in_channels != out_channels) {
        shortcut_ = register_module("shortcut", conv(in_channels, out_channels, 1, stride, false));
        shortcut_norm_ = register_module("shortcut_norm", group_norm(out_channels, groups));
        he_init(shortcut_);
    }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(norm1_(reduce_(x)));
    y = torch::relu(norm2_(spatial_(y)));
    y = norm3_(expand_(y));
    auto identity = shortcut_.is_empty() ? x : shortcut_norm_(shortcut_(x));
    return torch::relu(y + identity);
}

BackboneImpl::BackboneImpl(const ModelConfig& config) {
    const auto& ch = config.stage_channels;
    stem_ = register_module("stem", conv(3, ch[0], 7, 2, false));
    stem_norm_ = register_module("stem_norm", group_norm(ch[0], config.norm_groups));
    he_init(stem_);

    int64_t in = ch[0];
    for (size_t s = 0; s < stages_.size(); ++s) {
        const int64_t width = config.base_width << s;
        const int64_t out = ch[s + 1];
        nn::Sequential stage;
        for (int64_t b = 0; b < config.stage_blocks[s]; ++b) {
            const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
            stage->push_back(Bottleneck(b == 0 ? in : out, width, out, stride, config.norm_groups));
        }
        stages_[s] = register_module("conv" + std::to_string(s + 2), stage);
        in = out;
    }
}

EncoderTaps BackboneImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(stem_norm_(stem_(x)));
    y = F::max_pool2d(y, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
    y = stages_[0]->forward(y);
    EncoderTaps taps;
    taps.f3 = stages_[1]->forward(y);
    taps.f4 = stages_[2]->forward(taps.f3);
    taps.f5 = stages_[3]->forward(taps.f4);
    return taps;
}

// ---------------------------------------------------------------------------

DenseBlockImpl::DenseBlockImpl(int64_t in_channels, int64_t growth, int64_t layers)
    : in_channels_(in_channels), growth_(growth) {
    for (int64_t i = 0; i < layers; ++i) {
        layers_.push_back(register_module("layer" + std::to_string(i), conv(layer_in_channels(i), growth, 3)));
        he_init(layers_.back());
    }
}

torch::Tensor DenseBlockImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> features{x};
    for (auto& layer : layers_) {
        features.push_back(torch::relu(layer(torch::cat(features, 1))));
    }
    return torch::cat(features, 1);
}

FusionBlockImpl::FusionBlockImpl(int64_t tap_channels, int64_t mid_channels, int64_t growth, int64_t layers) {
    dense = register_module("dense", DenseBlock(2 * tap_channels, growth, layers));
    project = register_module("project", conv(dense->out_channels(), mid_channels, 1));
}

torch::Tensor FusionBlockImpl::forward(const torch::Tensor& rgb_tap, const torch::Tensor& depth_tap) {
    require_same_spatial(rgb_tap, depth_tap, "fuse");
    return project(dense(torch::cat({rgb_tap, depth_tap}, 1)));
}

KernelGeneratorImpl::KernelGeneratorImpl(int64_t mid_channels, int64_t growth, int64_t kernel_size,
                                         std::vector<int64_t> dilations)
    : kernel_size_(kernel_size), dilations_(std::move(dilations)) {
    dense = register_module("dense", DenseBlock(mid_channels, growth, kDenseLayers));
    for (size_t i = 0; i < dilations_.size(); ++i) {
        heads.push_back(register_module("head" + std::to_string(i),
                                        conv(dense->out_channels(), kernel_size_ * kernel_size_, 1)));
    }
}

std::vector<KernelField> KernelGeneratorImpl::forward(const torch::Tensor& fused) {
    const auto features = dense(fused);
    std::vector<KernelField> fields;
    fields.reserve(heads.size());
    for (size_t i = 0; i < heads.size(); ++i) {
        fields.push_back(KernelField{heads[i](features), dilations_[i]});
    }
    return fields;
}

DynamicPyramidImpl::DynamicPyramidImpl(int64_t decoder_channels, const ModelConfig& config)
    : dilations_(config.dilations) {
    const int64_t mid = config.mid_channels;
    reduce = register_module("reduce", conv(decoder_channels, mid, 1));
    kgu = register_module("kgu", KernelGenerator(mid, config.growth, config.kgu_kernel_size, config.dilations));
    for (size_t i = 0; i < dilations_.size(); ++i) {
        branch_convs.push_back(register_module("branch" + std::to_string(i), conv(mid, mid, 3)));
    }
    combine = register_module("combine", conv(mid, mid, 3));
}

torch::Tensor DynamicPyramidImpl::forward(const torch::Tensor& fused, const torch::Tensor& decoder_feature) {
    require_same_spatial(fused, decoder_feature, "ddpm");
    const auto reduced = reduce(decoder_feature);
    const auto kernels = kgu(fused);
    auto sum = reduced;
    for (size_t i = 0; i < kernels.size(); ++i) {
        sum = sum + branch_convs[i](dynamic_conv(reduced, ktu(kernels[i], dilations_[i])));
    }
    return combine(sum);
}

// ---------------------------------------------------------------------------

MultiScaleBlockImpl::MultiScaleBlockImpl(int64_t in_channels, int64_t out_channels) {
    for (auto k : kKernelSizes) {
        branches.push_back(register_module("k" + std::to_string(k), conv(in_channels, out_channels, k)));
        he_init(branches.back());
    }
    project = register_module("project", conv(out_channels * static_cast<int64_t>(kKernelSizes.size()), out_channels, 1));
    he_init(project);
}

torch::Tensor MultiScaleBlockImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    outs.reserve(branches.size());
    for (auto& branch : branches) {
        outs.push_back(torch::relu(branch(x)));
    }
    return torch::relu(project(torch::cat(outs, 1)));
}

DecoderImpl::DecoderImpl(const ModelConfig& config) {
    const int64_t dec = config.decoder_channels;
    const int64_t mid = config.mid_channels;
    const auto& ch = config.stage_channels;
    blocks[2] = register_module("block5", MultiScaleBlock(ch[4] + mid, dec));
    blocks[1] = register_module("block4", MultiScaleBlock(dec + mid + ch[3], dec));
    blocks[0] = register_module("block3", MultiScaleBlock(dec + mid + ch[2], dec));
    int64_t in = dec;
    for (size_t i = 0; i < refine.size(); ++i) {
        refine[i] = register_module("refine" + std::to_string(i), conv(in, config.head_channels, 3));
        he_init(refine[i]);
        in = config.head_channels;
    }
    head = register_module("head", conv(config.head_channels, 3, 3));
    if (config.residual_output) {
        torch::NoGradGuard guard;
        head->weight.zero_();
        head->bias.zero_();
    }
}

torch::Tensor DecoderImpl::start(const torch::Tensor& rgb_f5, const torch::Tensor& pyramid_out) {
    require_same_spatial(rgb_f5, pyramid_out, "decode (stride 32)");
    return blocks[2](torch::cat({rgb_f5, pyramid_out}, 1));
}

torch::Tensor DecoderImpl::merge(int level, const torch::Tensor& running, const torch::Tensor& pyramid_out,
                                 const torch::Tensor& skip) {
    const int idx = level_index(level);
    if (idx == 2) {
        throw ConfigError("decode: merge applies to levels 3 and 4");
    }
    require_same_spatial(running, pyramid_out, "decode");
    require_same_spatial(running, skip, "decode");
    return blocks[static_cast<size_t>(idx)](torch::cat({running, pyramid_out, skip}, 1));
}

torch::Tensor DecoderImpl::finish(const torch::Tensor& stride8) {
    auto x = stride8;
    for (auto& r : refine) {
        x = torch::relu(r(upsample2x(x)));
    }
    return head(x);
}

// ---------------------------------------------------------------------------

MBNetImpl::MBNetImpl(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    rgb_encoder = register_module("rgb_encoder", Backbone(config_));
    depth_encoder = register_module("depth_encoder", Backbone(config_));
    for (int level = 3; level <= 5; ++level) {
        const auto i = static_cast<size_t>(level - 3);
        fusion[i] = register_module("fuse" + std::to_string(level),
                                    FusionBlock(config_.stage_channels[i + 2], config_.mid_channels, config_.growth,
                                                config_.fusion_layers));
        const int64_t decoder_in = level == 5 ? config_.stage_channels[4] : config_.decoder_channels;
        pyramids[i] = register_module("ddpm" + std::to_string(level), DynamicPyramid(decoder_in, config_));
    }
    decoder = register_module("decoder", Decoder(config_));
}

EncoderTaps MBNetImpl::encode_rgb(const torch::Tensor& image) {
    check_input(image, 3, "encode_rgb");
    return rgb_encoder(image);
}

EncoderTaps MBNetImpl::encode_depth(const torch::Tensor& depth) {
    check_input(depth, 1, "encode_depth");
    return depth_encoder(depth.expand({depth.size(0), 3, depth.size(2), depth.size(3)}).contiguous());
}

torch::Tensor MBNetImpl::fuse(const torch::Tensor& rgb_tap, const torch::Tensor& depth_tap, int level) {
    return fusion[static_cast<size_t>(level_index(level))](rgb_tap, depth_tap);
}

std::vector<KernelField> MBNetImpl::kgu(const torch::Tensor& fused, int level) {
    return pyramids[static_cast<size_t>(level_index(level))]->kgu(fused);
}

torch::Tensor MBNetImpl::ddpm(const torch::Tensor& fused, const torch::Tensor& decoder_feature, int level) {
    return pyramids[static_cast<size_t>(level_index(level))](fused, decoder_feature);
}

torch::Tensor MBNetImpl::decode(const EncoderTaps& rgb_taps, const FusedFeatures& fused) {
    const auto& f5 = rgb_taps.f5;
    if (rgb_taps.f4.size(2) != 2 * f5.size(2) || rgb_taps.f4.size(3) != 2 * f5.size(3) ||
        rgb_taps.f3.size(2) != 2 * rgb_taps.f4.size(2) || rgb_taps.f3.size(3) != 2 * rgb_taps.f4.size(3)) {
        throw ShapeError("decode: encoder taps do not form a x2 pyramid");
    }
    auto running = decoder->start(f5, ddpm(fused[2], f5, 5));
    for (int level : {4, 3}) {
        running = upsample2x(running);
        const auto pyramid_out = ddpm(fused[static_cast<size_t>(level - 3)], running, level);
        running = decoder->merge(level, running, pyramid_out, rgb_taps.at_level(level));
    }
    return decoder->finish(running);
}

torch::Tensor MBNetImpl::forward_raw(const torch::Tensor& image, const torch::Tensor& depth) {
    check_input(image, 3, "forward (image)");
    check_input(depth, 1, "forward (depth)");
    if (image.size(0) != depth.size(0) || image.size(2) != depth.size(2) || image.size(3) != depth.size(3)) {
        throw ShapeError("forward: image " + c10::str(image.sizes()) + " and depth " + c10::str(depth.sizes()) +
                         " disagree");
    }
    const auto rgb = encode_rgb(image);
    const auto dep = encode_depth(depth);
    FusedFeatures fused;
    for (int level = 3; level <= 5; ++level) {
        fused[static_cast<size_t>(level - 3)] = fuse(rgb.at_level(level), dep.at_level(level), level);
    }
    auto residual = decode(rgb, fused);
    return config_.residual_output ? image + residual : residual;
}

torch::Tensor MBNetImpl::forward(const torch::Tensor& image, const torch::Tensor& depth) {
    auto out = forward_raw(image, depth);
    return config_.clamp_output ? out.clamp(0.0, 1.0) : out;
}

// ---------------------------------------------------------------------------

void ArchiveBackboneInitializer::initialize(Backbone& backbone) const {
    const std::filesystem::path dir(directory_);
    const auto tensors = read_tensor_archive(dir / "manifest.txt", dir / "weights.bin");
    std::unordered_map<std::string, const torch::Tensor*> by_name;
    for (const auto& t : tensors) {
        by_name.emplace(t.name, &t.value);
    }
    torch::NoGradGuard guard;
    for (auto& item : backbone->named_parameters()) {
        auto it = by_name.find(item.key());
        if (it == by_name.end()) {
            throw ConfigError("pretrained backbone archive " + directory_ + " lacks tensor " + item.key());
        }
        if (!it->second->sizes().equals(item.value().sizes())) {
            throw ShapeError("pretrained tensor " + item.key() + " has shape " + c10::str(it->second->sizes()) +
                             ", expected " + c10::str(item.value().sizes()));
        }
        item.value().copy_(*it->second);
    }
}

MBNet build_model(const ModelConfig& config, const BackboneInitializer* initializer) {
    config.validate();
    MBNet model(config);
    std::unique_ptr<ArchiveBackboneInitializer> from_config;
    if (initializer == nullptr && config.use_pretrained_backbone) {
        from_config = std::make_unique<ArchiveBackboneInitializer>(config.pretrained_path);
        initializer = from_config.get();
    }
    if (initializer != nullptr) {
        initializer->initialize(model->rgb_encoder);
        initializer->initialize(model->depth_encoder);
    }
    return model;
}

int64_t count_parameters(const torch::nn::Module& module) {
    int64_t total = 0;
    for (const auto& p : module.parameters()) {
        total += p.numel();
    }
    return total;
}

}  // namespace mbnet
