#pragma once

#include "mbnet/data.hpp"
#include "mbnet/losses.hpp"
#include "mbnet/model_config.hpp"
#include "mbnet/trainer.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mbnet {

struct DataConfig {
    std::filesystem::path root;
    std::optional<std::filesystem::path> train_list;
    std::optional<std::filesystem::path> val_list;
    NamingScheme naming;
    std::vector<PairStrategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
    Split split = Split::Train;
    std::filesystem::path manifest = "manifest.txt";
};

struct LossSection {
    LossWeights weights;
    double eps = kDefaultCharbonnierEps;
    /// "identity" or "conv".
    std::string extractor = "identity";
    std::optional<std::filesystem::path> extractor_manifest;
    std::optional<std::filesystem::path> extractor_blob;
};

struct EvalConfig {
    std::filesystem::path pred_dir;
    std::filesystem::path gt_dir;
    std::optional<std::filesystem::path> lpips_plugin;
    /// Output prefix; `<report>.txt` and `<report>.csv` are written.
    std::filesystem::path report = "report";
};

struct InferConfig {
    std::filesystem::path checkpoint;
    std::filesystem::path input_dir;
    std::filesystem::path output_dir = "predictions";
};

/// Every setting the command line tool understands, grouped by section.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    LossSection loss;
    EvalConfig eval;
    InferConfig infer;
    /// Keys assigned by the file or overrides (e.g. "train.seed").
    std::set<std::string> assigned;

    [[nodiscard]] bool is_set(std::string_view key) const { return assigned.count(std::string(key)) > 0; }

    /// Set one key from its textual value. Throws ConfigError naming the key
    /// for unknown keys and malformed values.
    void set(std::string_view key, std::string_view value);

    /// Current value of a key in its textual form.
    [[nodiscard]] std::string get(std::string_view key) const;

    /// `section.key = value` for every key, in table order.
    [[nodiscard]] std::string echo() const;

    /// Check that the keys `command` depends on are present and valid.
    void validate_for(std::string_view command) const;
};

/// Parse `section.key = value` lines. Blank lines and lines starting with
/// '#' are ignored. Errors carry `<source>:<line>`.
RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

/// Apply a `section.key=value` override.
void apply_override(RunConfig& config, std::string_view assignment);

struct KeyInfo {
    std::string key;
    std::string description;
};
/// All recognised keys with a short description, in table order.
std::vector<KeyInfo> config_keys();

}  // namespace mbnet
