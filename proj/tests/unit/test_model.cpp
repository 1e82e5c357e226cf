#include "mbnet/errors.hpp"
#include "mbnet/model.hpp"
#include "mbnet/tensor_archive.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace mbnet;

namespace {

MBNet tiny_model(uint64_t seed = 3) {
    torch::manual_seed(seed);
    return build_model(ModelConfig::tiny());
}

void expect_shape(const torch::Tensor& t, std::vector<int64_t> shape) {
    CAPTURE(t.sizes());
    CHECK(t.sizes().vec() == shape);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config defaults and validation") {
    ModelConfig cfg;
    CHECK(cfg.kgu_kernel_size == 3);
    CHECK(cfg.dilations == std::vector<int64_t>{1, 3, 5});
    CHECK(cfg.effective_kernel_size(1) == 3);
    CHECK(cfg.effective_kernel_size(3) == 7);
    CHECK(cfg.effective_kernel_size(5) == 11);
    CHECK(cfg.residual_output);
    CHECK(cfg.clamp_output);
    CHECK_NOTHROW(cfg.validate());

    auto even = ModelConfig::tiny();
    even.kgu_kernel_size = 4;
    CHECK_THROWS_AS(build_model(even), ConfigError);

    auto flat = ModelConfig::tiny();
    flat.stage_channels = {8, 16, 16, 64, 128};
    CHECK_THROWS_AS(flat.validate(), ConfigError);

    auto zero_d = ModelConfig::tiny();
    zero_d.dilations = {1, 0};
    CHECK_THROWS_AS(zero_d.validate(), ConfigError);
}

TEST_CASE("tiny model builds with parameters") {
    auto model = tiny_model();
    CHECK(count_parameters(*model) > 0);
}

TEST_CASE("micro config stays under 50k parameters") {
    auto model = build_model(ModelConfig::micro());
    CHECK(count_parameters(*model) <= 50000);
}

TEST_CASE("encoder taps at strides 8, 16, 32") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto taps = model->encode_rgb(torch::rand({1, 3, 64, 64}));
    expect_shape(taps.f3, {1, 32, 8, 8});
    expect_shape(taps.f4, {1, 64, 4, 4});
    expect_shape(taps.f5, {1, 128, 2, 2});

    const auto tall = model->encode_rgb(torch::rand({1, 3, 96, 64}));
    expect_shape(tall.f3, {1, 32, 12, 8});

    CHECK_THROWS_AS(model->encode_rgb(torch::rand({1, 3, 50, 50})), ShapeError);
}

TEST_CASE("depth stream has the RGB tap shapes") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto rgb = model->encode_rgb(torch::rand({1, 3, 64, 64}));
    const auto dep = model->encode_depth(torch::rand({1, 1, 64, 64}));
    CHECK(rgb.f3.sizes() == dep.f3.sizes());
    CHECK(rgb.f4.sizes() == dep.f4.sizes());
    CHECK(rgb.f5.sizes() == dep.f5.sizes());
}

TEST_CASE("depth is replicated to three channels before the stream") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto depth = torch::full({1, 1, 64, 64}, 0.37);
    const auto a = model->encode_depth(depth);
    const auto b = model->depth_encoder(torch::full({1, 3, 64, 64}, 0.37));
    CHECK(torch::equal(a.f5, b.f5));
}

TEST_CASE("encoder streams do not share weights") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto image = torch::rand({1, 3, 64, 64});
    const auto depth = torch::rand({1, 1, 64, 64});
    const auto rgb_before = model->encode_rgb(image).f5.clone();
    const auto dep_before = model->encode_depth(depth).f5.clone();
    for (auto& p : model->depth_encoder->parameters()) {
        p.add_(torch::randn_like(p));
    }
    CHECK(torch::equal(model->encode_rgb(image).f5, rgb_before));
    CHECK_FALSE(torch::equal(model->encode_depth(depth).f5, dep_before));

    const auto dep_now = model->encode_depth(depth).f5.clone();
    for (auto& p : model->rgb_encoder->parameters()) {
        p.add_(torch::randn_like(p));
    }
    CHECK(torch::equal(model->encode_depth(depth).f5, dep_now));
}

TEST_CASE("dense fusion shapes and connectivity") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto fused = model->fuse(torch::rand({1, 32, 8, 8}), torch::rand({1, 32, 8, 8}), 3);
    expect_shape(fused, {1, 16, 8, 8});

    auto& dense = model->fusion[0]->dense;
    const auto cfg = ModelConfig::tiny();
    for (int64_t i = 0; i < dense->layer_count(); ++i) {
        CHECK(dense->layer_in_channels(i) == 64 + i * cfg.growth);
        CHECK(dense->layer(i)->weight.size(1) == 64 + i * cfg.growth);
    }
    CHECK_THROWS_AS(model->fuse(torch::rand({1, 32, 8, 8}), torch::rand({1, 32, 4, 4}), 3), ShapeError);
}

TEST_CASE("kernel generator emits one k*k field per dilation") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto fields = model->kgu(torch::rand({1, 16, 8, 8}), 3);
    REQUIRE(fields.size() == 3);
    for (size_t i = 0; i < fields.size(); ++i) {
        expect_shape(fields[i].weights, {1, 9, 8, 8});
        CHECK(fields[i].dilation == std::vector<int64_t>{1, 3, 5}[i]);
    }
    CHECK(model->pyramids[0]->kgu->dense->layer_count() == 4);
}

TEST_CASE("zero fused feature with zero biases gives zero kernels") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    auto& kgu = model->pyramids[1]->kgu;
    for (auto& item : kgu->named_parameters()) {
        if (item.key().find("bias") != std::string::npos) {
            item.value().zero_();
        }
    }
    for (const auto& field : model->kgu(torch::zeros({1, 16, 4, 4}), 4)) {
        CHECK(field.weights.eq(0).all().item<bool>());
    }
}

TEST_CASE("pyramid output shape and branch count") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    // Level 3 and 4 pyramids read the decoder stream (decoder_channels = 16).
    const auto out = model->ddpm(torch::rand({1, 16, 8, 8}), torch::rand({1, 16, 8, 8}), 3);
    expect_shape(out, {1, 16, 8, 8});
    CHECK(model->pyramids[0]->branch_count() == 3);
    CHECK_THROWS_AS(model->ddpm(torch::rand({1, 16, 8, 8}), torch::rand({1, 16, 4, 4}), 3), ShapeError);

    auto wide = ModelConfig::tiny();
    wide.decoder_channels = 64;
    torch::manual_seed(0);
    auto model64 = build_model(wide);
    expect_shape(model64->ddpm(torch::rand({1, 16, 8, 8}), torch::rand({1, 64, 8, 8}), 3), {1, 16, 8, 8});
}

TEST_CASE("zero kernel heads reduce the pyramid to a convolution of the reduced feature") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    auto& pyr = model->pyramids[0];
    for (auto& head : pyr->kgu->heads) {
        head->weight.zero_();
        head->bias.zero_();
    }
    for (auto& branch : pyr->branch_convs) {
        branch->bias.zero_();
    }
    pyr->combine->weight.zero_();
    pyr->combine->bias.zero_();
    for (int64_t c = 0; c < pyr->combine->weight.size(0); ++c) {
        pyr->combine->weight.index_put_({c, c, 1, 1}, 1.0);
    }
    const auto fused = torch::rand({1, 16, 8, 8});
    const auto feature = torch::rand({1, 16, 8, 8});
    const auto out = model->ddpm(fused, feature, 3);
    CHECK(torch::allclose(out, pyr->reduce(feature), 1e-6, 1e-6));
}

TEST_CASE("multi-scale block uses kernel sizes 1, 3, 5") {
    auto model = tiny_model();
    for (auto& block : model->decoder->blocks) {
        REQUIRE(block->branches.size() == 3);
        CHECK(block->branches[0]->weight.size(2) == 1);
        CHECK(block->branches[1]->weight.size(2) == 3);
        CHECK(block->branches[2]->weight.size(2) == 5);
    }
}

TEST_CASE("decode yields a zero residual from the zero-initialised head") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto image = torch::rand({1, 3, 64, 64});
    const auto rgb = model->encode_rgb(image);
    const auto dep = model->encode_depth(torch::rand({1, 1, 64, 64}));
    FusedFeatures fused;
    for (int level = 3; level <= 5; ++level) {
        fused[static_cast<size_t>(level - 3)] = model->fuse(rgb.at_level(level), dep.at_level(level), level);
    }
    const auto residual = model->decode(rgb, fused);
    expect_shape(residual, {1, 3, 64, 64});
    CHECK(residual.eq(0).all().item<bool>());
}

TEST_CASE("fresh model returns its input bit for bit") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    const auto image = torch::rand({2, 3, 64, 96});
    const auto depth = torch::rand({2, 1, 64, 96});
    CHECK(torch::equal(model->forward(image, depth), image));
}

TEST_CASE("forward output stays in [0,1] and keeps the input shape") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    for (auto& p : model->decoder->head->parameters()) {
        p.normal_(0.0, 1.0);
    }
    const auto out = model->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 1, 64, 64}));
    expect_shape(out, {1, 3, 64, 64});
    CHECK(out.min().item<float>() >= 0.0F);
    CHECK(out.max().item<float>() <= 1.0F);
    const auto raw = model->forward_raw(torch::rand({1, 3, 64, 64}), torch::rand({1, 1, 64, 64}));
    CHECK((raw.min().item<float>() < 0.0F || raw.max().item<float>() > 1.0F));
}

TEST_CASE("shape preservation over several input sizes") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    for (auto [h, w] : {std::pair<int64_t, int64_t>{32, 32}, {64, 32}, {96, 128}, {128, 64}}) {
        const auto out = model->forward(torch::rand({1, 3, h, w}), torch::rand({1, 1, h, w}));
        expect_shape(out, {1, 3, h, w});
    }
}

TEST_CASE("image and depth disagreeing in size is a shape error") {
    auto model = tiny_model();
    torch::NoGradGuard guard;
    CHECK_THROWS_AS(model->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 1, 32, 64})), ShapeError);
    CHECK_THROWS_AS(model->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 3, 64, 64})), ShapeError);
}

TEST_CASE("residual flag off returns the head output alone") {
    auto cfg = ModelConfig::tiny();
    cfg.residual_output = false;
    torch::manual_seed(1);
    auto model = build_model(cfg);
    torch::NoGradGuard guard;
    CHECK(model->decoder->head->weight.abs().sum().item<float>() > 0.0F);
    const auto out = model->forward(torch::rand({1, 3, 32, 32}), torch::rand({1, 1, 32, 32}));
    expect_shape(out, {1, 3, 32, 32});
}

TEST_CASE("backbone initializer copies archived weights into both streams") {
    oracle::TempDir dir("mbnet-backbone");
    torch::manual_seed(11);
    Backbone source(ModelConfig::tiny());
    std::vector<NamedTensor> tensors;
    for (const auto& item : source->named_parameters()) {
        tensors.push_back({item.key(), item.value().detach().clone()});
    }
    write_tensor_archive(dir / "manifest.txt", dir / "weights.bin", tensors);

    auto cfg = ModelConfig::tiny();
    cfg.use_pretrained_backbone = true;
    cfg.pretrained_path = dir.path().string();
    auto model = build_model(cfg);
    const auto rgb = model->rgb_encoder->named_parameters();
    const auto dep = model->depth_encoder->named_parameters();
    for (const auto& t : tensors) {
        CHECK(torch::equal(*rgb.find(t.name), t.value));
        CHECK(torch::equal(*dep.find(t.name), t.value));
    }

    tensors.pop_back();
    write_tensor_archive(dir / "manifest.txt", dir / "weights.bin", tensors);
    CHECK_THROWS_AS(build_model(cfg), ConfigError);
}

TEST_CASE("default configuration relights a 1024x1024 image" * doctest::description("slow")) {
    torch::manual_seed(0);
    auto model = build_model(ModelConfig{});
    model->eval();
    torch::NoGradGuard guard;
    const auto image = torch::rand({1, 3, 1024, 1024});
    const auto out = model->forward(image, torch::rand({1, 1, 1024, 1024}));
    expect_shape(out, {1, 3, 1024, 1024});
    CHECK(torch::equal(out, image));
}

}
