#include "mbnet/model_config.hpp"

#include "mbnet/errors.hpp"

#include <string>

namespace mbnet {

namespace {

void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ConfigError("model config: " + message);
    }
}

}  // namespace

void ModelConfig::validate() const {
    require(base_width > 0, "base_width must be positive");
    for (size_t i = 0; i < stage_channels.size(); ++i) {
        require(stage_channels[i] > 0, "stage_channels must be positive");
        if (i > 0) {
            require(stage_channels[i] > stage_channels[i - 1], "stage_channels must be strictly increasing");
        }
    }
    for (auto blocks : stage_blocks) {
        require(blocks >= 1, "stage_blocks entries must be >= 1");
    }
    require(kgu_kernel_size >= 1 && kgu_kernel_size % 2 == 1,
            "kgu_kernel_size must be odd and >= 1, got " + std::to_string(kgu_kernel_size));
    require(!dilations.empty(), "dilations must not be empty");
    for (auto d : dilations) {
        require(d >= 1, "every dilation must be >= 1, got " + std::to_string(d));
    }
    require(mid_channels > 0, "mid_channels must be positive");
    require(growth > 0, "growth must be positive");
    require(fusion_layers >= 1, "fusion_layers must be >= 1");
    require(decoder_channels > 0, "decoder_channels must be positive");
    require(head_channels > 0, "head_channels must be positive");
    require(norm_groups >= 1, "norm_groups must be >= 1");
    require(!use_pretrained_backbone || !pretrained_path.empty(),
            "use_pretrained_backbone requires pretrained_path");
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.base_width = 8;
    c.stage_channels = {8, 16, 32, 64, 128};
    c.stage_blocks = {1, 1, 1, 1};
    c.mid_channels = 16;
    c.growth = 8;
    c.fusion_layers = 2;
    c.decoder_channels = 16;
    c.head_channels = 8;
    c.norm_groups = 4;
    return c;
}

ModelConfig ModelConfig::micro() {
    ModelConfig c;
    c.base_width = 2;
    c.stage_channels = {4, 6, 8, 12, 16};
    c.stage_blocks = {1, 1, 1, 1};
    c.mid_channels = 4;
    c.growth = 2;
    c.fusion_layers = 2;
    c.decoder_channels = 4;
    c.head_channels = 4;
    c.norm_groups = 2;
    return c;
}

}  // namespace mbnet
