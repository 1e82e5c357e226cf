#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mbnet {

enum class Angle { N, NE, E, SE, S, SW, W, NW };
inline constexpr std::array<Angle, 8> kAllAngles{Angle::N,  Angle::NE, Angle::E, Angle::SE,
                                                 Angle::S,  Angle::SW, Angle::W, Angle::NW};

/// Colour temperatures present in the dataset, in kelvin.
inline constexpr std::array<int, 5> kColorTemps{2500, 3500, 4500, 5500, 6500};

std::string_view to_string(Angle angle);
/// Throws ConfigError for an unknown name.
Angle parse_angle(std::string_view name);
bool is_valid_temp(int kelvin);

/// Mirror an azimuth across the north-south axis (W<->E, NW<->NE, SW<->SE).
Angle flip_angle(Angle angle);

enum class Split { Train, Val, Test };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SceneRecord {
    std::string scene_id;
    Angle angle = Angle::N;
    int color_temp = 6500;
    std::filesystem::path image_path;
    std::filesystem::path depth_path;

    auto operator<=>(const SceneRecord&) const = default;
};

struct DatasetManifest {
    std::vector<SceneRecord> records;
    Split split = Split::Train;

    [[nodiscard]] const SceneRecord* find(const std::string& scene, int temp, Angle angle) const;
    [[nodiscard]] std::vector<std::string> scene_ids() const;
};

/// Filename templates with `{scene}`, `{temp}` and `{angle}` placeholders.
struct NamingScheme {
    std::string image_pattern = "{scene}_{temp}_{angle}.png";
    std::string depth_pattern = "{scene}_depth.png";

    [[nodiscard]] std::string image_name(const std::string& scene, int temp, Angle angle) const;
    [[nodiscard]] std::string depth_name(const std::string& scene) const;
};

/// Scan `root` (non-recursive) for images and depth maps. When
/// `scene_filter` is given only those scenes are kept. Records are ordered by
/// (scene_id, angle, temp). Throws IndexingError when a scene has images but
/// no depth map.
DatasetManifest index_dataset(const std::filesystem::path& root, Split split, const NamingScheme& naming = {},
                              const std::optional<std::vector<std::string>>& scene_filter = std::nullopt);

/// One record per line: scene_id angle temp image_path depth_path (tab separated).
std::string manifest_to_text(const DatasetManifest& manifest);
DatasetManifest manifest_from_text(const std::string& text, Split split);

/// Scene lists are plain text, one scene id per line.
std::vector<std::string> read_scene_list(const std::filesystem::path& path);

enum class PairStrategy { Direct, ExtraAngle, FlippedWest };
inline constexpr std::array<PairStrategy, 3> kAllStrategies{PairStrategy::Direct, PairStrategy::ExtraAngle,
                                                            PairStrategy::FlippedWest};
std::string_view to_string(PairStrategy strategy);
PairStrategy parse_strategy(std::string_view name);

/// Fixed relighting task: input (6500 K, N) to target (4500 K, E).
inline constexpr int kInputTemp = 6500;
inline constexpr int kTargetTemp = 4500;

struct TrainingPair {
    std::string scene_id;
    std::filesystem::path input_image;
    std::filesystem::path depth;
    std::filesystem::path target_image;
    PairStrategy provenance = PairStrategy::Direct;
    /// Input, depth and target are mirrored horizontally after decoding.
    bool flip_input = false;

    auto operator<=>(const TrainingPair&) const = default;
};

struct PairSet {
    std::vector<TrainingPair> pairs;
    /// (scene, strategy) combinations dropped for lack of a needed condition.
    int64_t skipped = 0;
};

/// Build pairs scene by scene, in strategy order direct, extra_angle,
/// flipped_west. Throws ConfigError when no pair can be formed.
PairSet make_pairs(const DatasetManifest& manifest, const std::vector<PairStrategy>& strategies);

/// Reverse the width axis of a rank-4 tensor.
torch::Tensor hflip(const torch::Tensor& x);

struct LoadedPair {
    torch::Tensor input;   // [1,3,H,W]
    torch::Tensor depth;   // [1,1,H,W]
    torch::Tensor target;  // [1,3,H,W]
};

/// Decode a pair to [0,1] float tensors, mirror it when flip_input is set and
/// optionally resize (bilinear) to `target_size` (H, W), which must be
/// multiples of 32.
LoadedPair load_pair(const TrainingPair& pair, std::optional<std::array<int64_t, 2>> target_size = std::nullopt);

}  // namespace mbnet
