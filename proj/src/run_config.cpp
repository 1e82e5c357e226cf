#include "mbnet/run_config.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/tensor_archive.hpp"

#include <charconv>
#include <functional>
#include <iomanip>
#include <sstream>

namespace mbnet {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> items;
    std::stringstream ss{std::string(text)};
    for (std::string item; std::getline(ss, item, ',');) {
        auto t = trim(item);
        if (!t.empty()) {
            items.push_back(t);
        }
    }
    return items;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view expected, std::string_view got) {
    throw ConfigError(std::string(key) + ": expected " + std::string(expected) + ", got '" + std::string(got) + "'");
}

int64_t to_int(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        bad_value(key, "an integer", text);
    }
    return v;
}

uint64_t to_uint(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        bad_value(key, "a non-negative integer", text);
    }
    return v;
}

double to_double(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    try {
        size_t used = 0;
        const double v = std::stod(t, &used);
        if (used == t.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    bad_value(key, "a number", text);
}

bool to_bool(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    bad_value(key, "a boolean", text);
}

std::vector<int64_t> to_int_list(std::string_view key, std::string_view text) {
    std::vector<int64_t> values;
    for (const auto& item : split_list(text)) {
        values.push_back(to_int(key, item));
    }
    return values;
}

template <size_t N>
std::array<int64_t, N> to_int_array(std::string_view key, std::string_view text) {
    const auto values = to_int_list(key, text);
    if (values.size() != N) {
        bad_value(key, std::to_string(N) + " comma-separated integers", text);
    }
    std::array<int64_t, N> out{};
    std::copy(values.begin(), values.end(), out.begin());
    return out;
}

std::optional<std::array<int64_t, 2>> to_size(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    if (t.empty() || t == "native") {
        return std::nullopt;
    }
    const auto x = t.find('x');
    if (x == std::string::npos) {
        bad_value(key, "HxW or 'native'", text);
    }
    return std::array<int64_t, 2>{to_int(key, t.substr(0, x)), to_int(key, t.substr(x + 1))};
}

std::optional<std::filesystem::path> to_optional_path(std::string_view text) {
    const auto t = trim(text);
    if (t.empty()) {
        return std::nullopt;
    }
    return std::filesystem::path(t);
}

template <typename Seq>
std::string join_ints(const Seq& values) {
    std::string s;
    for (auto v : values) {
        s += (s.empty() ? "" : ",") + std::to_string(v);
    }
    return s;
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_path(const std::optional<std::filesystem::path>& p) { return p ? p->string() : std::string(); }

struct KeyEntry {
    std::string key;
    std::string description;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyEntry>& key_table() {
    static const std::vector<KeyEntry> table = [] {
        std::vector<KeyEntry> t;
        const auto add = [&t](std::string key, std::string description,
                              std::function<void(RunConfig&, std::string_view)> set,
                              std::function<std::string(const RunConfig&)> get) {
            t.push_back({std::move(key), std::move(description), std::move(set), std::move(get)});
        };
        // model
        add("model.base_width", "bottleneck width of backbone stage conv2",
            [](RunConfig& c, std::string_view v) { c.model.base_width = to_int("model.base_width", v); },
            [](const RunConfig& c) { return std::to_string(c.model.base_width); });
        add("model.stage_channels", "output channels of conv1..conv5 (5 integers)",
            [](RunConfig& c, std::string_view v) { c.model.stage_channels = to_int_array<5>("model.stage_channels", v); },
            [](const RunConfig& c) { return join_ints(c.model.stage_channels); });
        add("model.stage_blocks", "bottleneck blocks in conv2..conv5 (4 integers)",
            [](RunConfig& c, std::string_view v) { c.model.stage_blocks = to_int_array<4>("model.stage_blocks", v); },
            [](const RunConfig& c) { return join_ints(c.model.stage_blocks); });
        add("model.kgu_kernel_size", "side of the generated per-pixel kernels (odd)",
            [](RunConfig& c, std::string_view v) { c.model.kgu_kernel_size = to_int("model.kgu_kernel_size", v); },
            [](const RunConfig& c) { return std::to_string(c.model.kgu_kernel_size); });
        add("model.dilations", "dilation of each dynamic branch",
            [](RunConfig& c, std::string_view v) { c.model.dilations = to_int_list("model.dilations", v); },
            [](const RunConfig& c) { return join_ints(c.model.dilations); });
        add("model.mid_channels", "channels of fused and reduced features",
            [](RunConfig& c, std::string_view v) { c.model.mid_channels = to_int("model.mid_channels", v); },
            [](const RunConfig& c) { return std::to_string(c.model.mid_channels); });
        add("model.growth", "growth rate of densely connected layers",
            [](RunConfig& c, std::string_view v) { c.model.growth = to_int("model.growth", v); },
            [](const RunConfig& c) { return std::to_string(c.model.growth); });
        add("model.fusion_layers", "dense layers per fusion block",
            [](RunConfig& c, std::string_view v) { c.model.fusion_layers = to_int("model.fusion_layers", v); },
            [](const RunConfig& c) { return std::to_string(c.model.fusion_layers); });
        add("model.decoder_channels", "decoder channels at strides 32/16/8",
            [](RunConfig& c, std::string_view v) { c.model.decoder_channels = to_int("model.decoder_channels", v); },
            [](const RunConfig& c) { return std::to_string(c.model.decoder_channels); });
        add("model.head_channels", "channels of the full-resolution stages",
            [](RunConfig& c, std::string_view v) { c.model.head_channels = to_int("model.head_channels", v); },
            [](const RunConfig& c) { return std::to_string(c.model.head_channels); });
        add("model.norm_groups", "maximum GroupNorm groups in the backbone",
            [](RunConfig& c, std::string_view v) { c.model.norm_groups = to_int("model.norm_groups", v); },
            [](const RunConfig& c) { return std::to_string(c.model.norm_groups); });
        add("model.use_pretrained_backbone", "load encoder weights from model.pretrained_path",
            [](RunConfig& c, std::string_view v) {
                c.model.use_pretrained_backbone = to_bool("model.use_pretrained_backbone", v);
            },
            [](const RunConfig& c) { return fmt_bool(c.model.use_pretrained_backbone); });
        add("model.pretrained_path", "named-tensor archive directory with encoder weights",
            [](RunConfig& c, std::string_view v) { c.model.pretrained_path = trim(v); },
            [](const RunConfig& c) { return c.model.pretrained_path; });
        add("model.residual_output", "predict a residual added to the input image",
            [](RunConfig& c, std::string_view v) { c.model.residual_output = to_bool("model.residual_output", v); },
            [](const RunConfig& c) { return fmt_bool(c.model.residual_output); });
        add("model.clamp_output", "clamp inference output to [0,1]",
            [](RunConfig& c, std::string_view v) { c.model.clamp_output = to_bool("model.clamp_output", v); },
            [](const RunConfig& c) { return fmt_bool(c.model.clamp_output); });
        // train
        add("train.epochs", "number of epochs",
            [](RunConfig& c, std::string_view v) { c.train.epochs = to_int("train.epochs", v); },
            [](const RunConfig& c) { return std::to_string(c.train.epochs); });
        add("train.batch_size", "pairs per optimisation step",
            [](RunConfig& c, std::string_view v) { c.train.batch_size = to_int("train.batch_size", v); },
            [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
        add("train.lr0", "initial learning rate",
            [](RunConfig& c, std::string_view v) { c.train.lr0 = to_double("train.lr0", v); },
            [](const RunConfig& c) { return fmt_double(c.train.lr0); });
        add("train.beta1", "Adam first-moment decay",
            [](RunConfig& c, std::string_view v) { c.train.beta1 = to_double("train.beta1", v); },
            [](const RunConfig& c) { return fmt_double(c.train.beta1); });
        add("train.beta2", "Adam second-moment decay",
            [](RunConfig& c, std::string_view v) { c.train.beta2 = to_double("train.beta2", v); },
            [](const RunConfig& c) { return fmt_double(c.train.beta2); });
        add("train.adam_eps", "Adam denominator epsilon",
            [](RunConfig& c, std::string_view v) { c.train.adam_eps = to_double("train.adam_eps", v); },
            [](const RunConfig& c) { return fmt_double(c.train.adam_eps); });
        add("train.lr_decay_every", "epochs per learning-rate block",
            [](RunConfig& c, std::string_view v) { c.train.lr_decay_every = to_int("train.lr_decay_every", v); },
            [](const RunConfig& c) { return std::to_string(c.train.lr_decay_every); });
        add("train.lr_decay_factor", "divisor applied at each decay",
            [](RunConfig& c, std::string_view v) { c.train.lr_decay_factor = to_double("train.lr_decay_factor", v); },
            [](const RunConfig& c) { return fmt_double(c.train.lr_decay_factor); });
        add("train.lr_decay_mode", "repeated (every block) or once",
            [](RunConfig& c, std::string_view v) {
                const auto t = trim(v);
                if (t == "repeated") {
                    c.train.lr_decay_mode = LrDecayMode::Repeated;
                } else if (t == "once") {
                    c.train.lr_decay_mode = LrDecayMode::Once;
                } else {
                    bad_value("train.lr_decay_mode", "'repeated' or 'once'", v);
                }
            },
            [](const RunConfig& c) {
                return std::string(c.train.lr_decay_mode == LrDecayMode::Repeated ? "repeated" : "once");
            });
        add("train.seed", "seed for initialisation and shuffling (fallback: MBNET_SEED)",
            [](RunConfig& c, std::string_view v) { c.train.seed = to_uint("train.seed", v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); });
        add("train.checkpoint_dir", "directory receiving checkpoints and the loss curve",
            [](RunConfig& c, std::string_view v) { c.train.checkpoint_dir = trim(v); },
            [](const RunConfig& c) { return c.train.checkpoint_dir.string(); });
        add("train.keep_epoch_checkpoints", "keep one archive per epoch besides latest/best",
            [](RunConfig& c, std::string_view v) {
                c.train.keep_epoch_checkpoints = to_bool("train.keep_epoch_checkpoints", v);
            },
            [](const RunConfig& c) { return fmt_bool(c.train.keep_epoch_checkpoints); });
        // data
        add("data.root", "dataset directory",
            [](RunConfig& c, std::string_view v) { c.data.root = trim(v); },
            [](const RunConfig& c) { return c.data.root.string(); });
        add("data.train_list", "file listing training scene ids (optional)",
            [](RunConfig& c, std::string_view v) { c.data.train_list = to_optional_path(v); },
            [](const RunConfig& c) { return fmt_path(c.data.train_list); });
        add("data.val_list", "file listing validation scene ids (optional)",
            [](RunConfig& c, std::string_view v) { c.data.val_list = to_optional_path(v); },
            [](const RunConfig& c) { return fmt_path(c.data.val_list); });
        add("data.image_pattern", "image filename template ({scene}, {temp}, {angle})",
            [](RunConfig& c, std::string_view v) { c.data.naming.image_pattern = trim(v); },
            [](const RunConfig& c) { return c.data.naming.image_pattern; });
        add("data.depth_pattern", "depth filename template ({scene})",
            [](RunConfig& c, std::string_view v) { c.data.naming.depth_pattern = trim(v); },
            [](const RunConfig& c) { return c.data.naming.depth_pattern; });
        add("data.strategies", "pair strategies: direct, extra_angle, flipped_west",
            [](RunConfig& c, std::string_view v) {
                std::vector<PairStrategy> s;
                for (const auto& item : split_list(v)) {
                    try {
                        s.push_back(parse_strategy(item));
                    } catch (const ConfigError&) {
                        bad_value("data.strategies", "direct, extra_angle or flipped_west", item);
                    }
                }
                if (s.empty()) {
                    bad_value("data.strategies", "at least one strategy", v);
                }
                c.data.strategies = std::move(s);
            },
            [](const RunConfig& c) {
                std::string s;
                for (auto st : c.data.strategies) {
                    s += (s.empty() ? "" : ",") + std::string(to_string(st));
                }
                return s;
            });
        add("data.image_size", "resize pairs to HxW (multiples of 32) or 'native'",
            [](RunConfig& c, std::string_view v) { c.train.image_size = to_size("data.image_size", v); },
            [](const RunConfig& c) {
                return c.train.image_size ? std::to_string((*c.train.image_size)[0]) + "x" +
                                                std::to_string((*c.train.image_size)[1])
                                          : std::string("native");
            });
        add("data.split", "split label written to the manifest (train, val, test)",
            [](RunConfig& c, std::string_view v) {
                try {
                    c.data.split = parse_split(trim(v));
                } catch (const ConfigError&) {
                    bad_value("data.split", "train, val or test", v);
                }
            },
            [](const RunConfig& c) { return std::string(to_string(c.data.split)); });
        add("data.manifest", "output path of the index command",
            [](RunConfig& c, std::string_view v) { c.data.manifest = trim(v); },
            [](const RunConfig& c) { return c.data.manifest.string(); });
        // loss
        add("loss.lambda1", "Charbonnier weight",
            [](RunConfig& c, std::string_view v) { c.loss.weights.lambda1 = to_double("loss.lambda1", v); },
            [](const RunConfig& c) { return fmt_double(c.loss.weights.lambda1); });
        add("loss.lambda2", "SSIM-loss weight",
            [](RunConfig& c, std::string_view v) { c.loss.weights.lambda2 = to_double("loss.lambda2", v); },
            [](const RunConfig& c) { return fmt_double(c.loss.weights.lambda2); });
        add("loss.lambda3", "perceptual weight",
            [](RunConfig& c, std::string_view v) { c.loss.weights.lambda3 = to_double("loss.lambda3", v); },
            [](const RunConfig& c) { return fmt_double(c.loss.weights.lambda3); });
        add("loss.eps", "Charbonnier epsilon",
            [](RunConfig& c, std::string_view v) { c.loss.eps = to_double("loss.eps", v); },
            [](const RunConfig& c) { return fmt_double(c.loss.eps); });
        add("loss.extractor", "perceptual feature extractor: identity or conv",
            [](RunConfig& c, std::string_view v) {
                const auto t = trim(v);
                if (t != "identity" && t != "conv") {
                    bad_value("loss.extractor", "'identity' or 'conv'", v);
                }
                c.loss.extractor = t;
            },
            [](const RunConfig& c) { return c.loss.extractor; });
        add("loss.extractor_manifest", "manifest of the conv extractor weights",
            [](RunConfig& c, std::string_view v) { c.loss.extractor_manifest = to_optional_path(v); },
            [](const RunConfig& c) { return fmt_path(c.loss.extractor_manifest); });
        add("loss.extractor_blob", "float32 blob of the conv extractor weights",
            [](RunConfig& c, std::string_view v) { c.loss.extractor_blob = to_optional_path(v); },
            [](const RunConfig& c) { return fmt_path(c.loss.extractor_blob); });
        // eval
        add("eval.pred_dir", "directory of predicted PNGs",
            [](RunConfig& c, std::string_view v) { c.eval.pred_dir = trim(v); },
            [](const RunConfig& c) { return c.eval.pred_dir.string(); });
        add("eval.gt_dir", "directory of ground-truth PNGs",
            [](RunConfig& c, std::string_view v) { c.eval.gt_dir = trim(v); },
            [](const RunConfig& c) { return c.eval.gt_dir.string(); });
        add("eval.lpips_plugin", "shared library exporting mbnet_lpips (optional)",
            [](RunConfig& c, std::string_view v) { c.eval.lpips_plugin = to_optional_path(v); },
            [](const RunConfig& c) { return fmt_path(c.eval.lpips_plugin); });
        add("eval.report", "report path prefix (.txt and .csv are appended)",
            [](RunConfig& c, std::string_view v) { c.eval.report = trim(v); },
            [](const RunConfig& c) { return c.eval.report.string(); });
        // infer
        add("infer.checkpoint", "checkpoint directory to load",
            [](RunConfig& c, std::string_view v) { c.infer.checkpoint = trim(v); },
            [](const RunConfig& c) { return c.infer.checkpoint.string(); });
        add("infer.input_dir", "directory with (6500, N) images and depth maps",
            [](RunConfig& c, std::string_view v) { c.infer.input_dir = trim(v); },
            [](const RunConfig& c) { return c.infer.input_dir.string(); });
        add("infer.output_dir", "directory receiving relit PNGs",
            [](RunConfig& c, std::string_view v) { c.infer.output_dir = trim(v); },
            [](const RunConfig& c) { return c.infer.output_dir.string(); });
        return t;
    }();
    return table;
}

const KeyEntry* find_key(std::string_view key) {
    for (const auto& e : key_table()) {
        if (e.key == key) {
            return &e;
        }
    }
    return nullptr;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    const auto* entry = find_key(key);
    if (entry == nullptr) {
        throw ConfigError("unknown key '" + std::string(key) + "'");
    }
    entry->set(*this, value);
    assigned.insert(std::string(key));
}

std::string RunConfig::get(std::string_view key) const {
    const auto* entry = find_key(key);
    if (entry == nullptr) {
        throw ConfigError("unknown key '" + std::string(key) + "'");
    }
    return entry->get(*this);
}

std::string RunConfig::echo() const {
    std::string out;
    for (const auto& e : key_table()) {
        out += e.key + " = " + e.get(*this) + "\n";
    }
    return out;
}

void RunConfig::validate_for(std::string_view command) const {
    const auto require = [this](std::string_view key) {
        if (!is_set(key)) {
            throw ConfigError(std::string(key) + " missing");
        }
    };
    if (command == "index") {
        require("data.root");
    } else if (command == "train") {
        require("data.root");
        model.validate();
        train.validate();
        loss.weights.validate();
        if (!(loss.eps > 0.0)) {
            throw ConfigError("loss.eps must be positive");
        }
        if (loss.extractor == "conv" && (!loss.extractor_manifest || !loss.extractor_blob)) {
            throw ConfigError("loss.extractor = conv needs loss.extractor_manifest and loss.extractor_blob");
        }
    } else if (command == "infer") {
        require("infer.checkpoint");
        require("infer.input_dir");
        model.validate();
    } else if (command == "evaluate") {
        require("eval.pred_dir");
        require("eval.gt_dir");
    } else {
        throw ConfigError("unknown command '" + std::string(command) + "'");
    }
}

RunConfig parse_config_text(const std::string& text, const std::string& source) {
    RunConfig config;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        const auto content = trim(line);
        if (content.empty() || content.front() == '#') {
            continue;
        }
        const auto where = source + ":" + std::to_string(line_no) + ": ";
        const auto eq = content.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + "expected 'section.key = value'");
        }
        const auto key = trim(content.substr(0, eq));
        try {
            config.set(key, trim(content.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
    return parse_config_text(read_text_file(path), path.string());
}

void apply_override(RunConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    }
    config.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<KeyInfo> config_keys() {
    std::vector<KeyInfo> keys;
    for (const auto& e : key_table()) {
        keys.push_back({e.key, e.description});
    }
    return keys;
}

}  // namespace mbnet
