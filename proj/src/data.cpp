#include "mbnet/data.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/image_io.hpp"
#include "mbnet/tensor_archive.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>
#include <sstream>

namespace mbnet {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 8> kAngleNames{"N", "NE", "E", "SE", "S", "SW", "W", "NW"};

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
    for (size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
        text.replace(pos, from.size(), to);
    }
    return text;
}

/// Compiled filename template: regex plus the placeholder order of its groups.
struct CompiledPattern {
    std::regex regex;
    std::vector<std::string> groups;
};

CompiledPattern compile_pattern(const std::string& pattern) {
    static const std::map<std::string, std::string> kGroup{
        {"scene", "(.+)"}, {"temp", "([0-9]+)"}, {"angle", "(NE|NW|SE|SW|N|E|S|W)"}};
    CompiledPattern compiled;
    std::string expr;
    for (size_t i = 0; i < pattern.size();) {
        if (pattern[i] == '{') {
            const auto close = pattern.find('}', i);
            if (close == std::string::npos) {
                throw ConfigError("filename pattern '" + pattern + "': unterminated placeholder");
            }
            const auto name = pattern.substr(i + 1, close - i - 1);
            const auto it = kGroup.find(name);
            if (it == kGroup.end()) {
                throw ConfigError("filename pattern '" + pattern + "': unknown placeholder {" + name + "}");
            }
            expr += it->second;
            compiled.groups.push_back(name);
            i = close + 1;
        } else {
            if (std::string_view(R"(\^$.|?*+()[]{})").find(pattern[i]) != std::string_view::npos) {
                expr += '\\';
            }
            expr += pattern[i];
            ++i;
        }
    }
    compiled.regex = std::regex(expr);
    return compiled;
}

}  // namespace

std::string_view to_string(Angle angle) { return kAngleNames[static_cast<size_t>(angle)]; }

Angle parse_angle(std::string_view name) {
    for (size_t i = 0; i < kAngleNames.size(); ++i) {
        if (kAngleNames[i] == name) {
            return static_cast<Angle>(i);
        }
    }
    throw ConfigError("unknown illumination angle '" + std::string(name) + "'");
}

bool is_valid_temp(int kelvin) {
    return std::find(kColorTemps.begin(), kColorTemps.end(), kelvin) != kColorTemps.end();
}

Angle flip_angle(Angle angle) {
    switch (angle) {
        case Angle::E:
            return Angle::W;
        case Angle::W:
            return Angle::E;
        case Angle::NE:
            return Angle::NW;
        case Angle::NW:
            return Angle::NE;
        case Angle::SE:
            return Angle::SW;
        case Angle::SW:
            return Angle::SE;
        case Angle::N:
        case Angle::S:
            break;
    }
    return angle;
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::Train:
            return "train";
        case Split::Val:
            return "val";
        case Split::Test:
            return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::string_view to_string(PairStrategy strategy) {
    switch (strategy) {
        case PairStrategy::Direct:
            return "direct";
        case PairStrategy::ExtraAngle:
            return "extra_angle";
        case PairStrategy::FlippedWest:
            return "flipped_west";
    }
    return "direct";
}

PairStrategy parse_strategy(std::string_view name) {
    for (auto s : kAllStrategies) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown pair strategy '" + std::string(name) + "'");
}

std::string NamingScheme::image_name(const std::string& scene, int temp, Angle angle) const {
    auto name = replace_all(image_pattern, "{scene}", scene);
    name = replace_all(name, "{temp}", std::to_string(temp));
    return replace_all(name, "{angle}", std::string(to_string(angle)));
}

std::string NamingScheme::depth_name(const std::string& scene) const {
    return replace_all(depth_pattern, "{scene}", scene);
}

const SceneRecord* DatasetManifest::find(const std::string& scene, int temp, Angle angle) const {
    for (const auto& r : records) {
        if (r.scene_id == scene && r.color_temp == temp && r.angle == angle) {
            return &r;
        }
    }
    return nullptr;
}

std::vector<std::string> DatasetManifest::scene_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : records) {
        if (ids.empty() || ids.back() != r.scene_id) {
            ids.push_back(r.scene_id);
        }
    }
    return ids;
}

DatasetManifest index_dataset(const fs::path& root, Split split, const NamingScheme& naming,
                              const std::optional<std::vector<std::string>>& scene_filter) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw IoError("dataset root " + root.string() + " is not a directory");
    }
    const auto image_re = compile_pattern(naming.image_pattern);
    const auto depth_re = compile_pattern(naming.depth_pattern);
    std::optional<std::set<std::string>> keep;
    if (scene_filter) {
        keep.emplace(scene_filter->begin(), scene_filter->end());
    }

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_regular_file()) {
            names.push_back(entry.path().filename().string());
        }
    }
    std::sort(names.begin(), names.end());

    std::map<std::string, fs::path> depth_by_scene;
    std::vector<SceneRecord> records;
    for (const auto& name : names) {
        std::smatch m;
        if (std::regex_match(name, m, depth_re.regex)) {
            std::string scene;
            for (size_t g = 0; g < depth_re.groups.size(); ++g) {
                if (depth_re.groups[g] == "scene") {
                    scene = m[g + 1].str();
                }
            }
            depth_by_scene[scene] = root / name;
            continue;
        }
        if (!std::regex_match(name, m, image_re.regex)) {
            continue;
        }
        SceneRecord record;
        for (size_t g = 0; g < image_re.groups.size(); ++g) {
            const auto& group = image_re.groups[g];
            const auto value = m[g + 1].str();
            if (group == "scene") {
                record.scene_id = value;
            } else if (group == "temp") {
                record.color_temp = std::stoi(value);
            } else {
                record.angle = parse_angle(value);
            }
        }
        if (!is_valid_temp(record.color_temp)) {
            throw IndexingError(name + ": colour temperature " + std::to_string(record.color_temp) +
                                " is not one of 2500/3500/4500/5500/6500");
        }
        if (keep && !keep->count(record.scene_id)) {
            continue;
        }
        record.image_path = root / name;
        records.push_back(std::move(record));
    }

    std::set<std::string> missing;
    for (auto& r : records) {
        auto it = depth_by_scene.find(r.scene_id);
        if (it == depth_by_scene.end()) {
            missing.insert(r.scene_id);
        } else {
            r.depth_path = it->second;
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& s : missing) {
            list += (list.empty() ? "" : ", ") + s;
        }
        throw IndexingError("missing depth map for scene(s): " + list);
    }

    std::sort(records.begin(), records.end(), [](const SceneRecord& a, const SceneRecord& b) {
        return std::tie(a.scene_id, a.angle, a.color_temp) < std::tie(b.scene_id, b.angle, b.color_temp);
    });
    return DatasetManifest{std::move(records), split};
}

std::string manifest_to_text(const DatasetManifest& manifest) {
    std::ostringstream out;
    for (const auto& r : manifest.records) {
        out << r.scene_id << '\t' << to_string(r.angle) << '\t' << r.color_temp << '\t' << r.image_path.string()
            << '\t' << r.depth_path.string() << '\n';
    }
    return out.str();
}

DatasetManifest manifest_from_text(const std::string& text, Split split) {
    DatasetManifest manifest;
    manifest.split = split;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, '\t');) {
            fields.push_back(f);
        }
        if (fields.size() != 5) {
            throw IndexingError("manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields");
        }
        SceneRecord r;
        r.scene_id = fields[0];
        r.angle = parse_angle(fields[1]);
        r.color_temp = std::stoi(fields[2]);
        r.image_path = fields[3];
        r.depth_path = fields[4];
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

std::vector<std::string> read_scene_list(const fs::path& path) {
    std::istringstream lines(read_text_file(path));
    std::vector<std::string> scenes;
    for (std::string line; std::getline(lines, line);) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        const auto last = line.find_last_not_of(" \t\r");
        scenes.push_back(line.substr(first, last - first + 1));
    }
    return scenes;
}

PairSet make_pairs(const DatasetManifest& manifest, const std::vector<PairStrategy>& strategies) {
    std::set<PairStrategy> enabled(strategies.begin(), strategies.end());
    PairSet result;
    for (const auto& scene : manifest.scene_ids()) {
        for (auto strategy : kAllStrategies) {
            if (!enabled.count(strategy)) {
                continue;
            }
            const Angle input_angle = strategy == PairStrategy::ExtraAngle ? Angle::NE : Angle::N;
            const Angle target_angle = strategy == PairStrategy::FlippedWest ? Angle::W : Angle::E;
            const auto* input = manifest.find(scene, kInputTemp, input_angle);
            const auto* target = manifest.find(scene, kTargetTemp, target_angle);
            if (input == nullptr || target == nullptr) {
                ++result.skipped;
                continue;
            }
            result.pairs.push_back(TrainingPair{scene, input->image_path, input->depth_path, target->image_path,
                                                strategy, strategy == PairStrategy::FlippedWest});
        }
    }
    if (result.pairs.empty()) {
        throw ConfigError("make_pairs: no training pair could be formed from " +
                          std::to_string(manifest.records.size()) + " records");
    }
    return result;
}

torch::Tensor hflip(const torch::Tensor& x) {
    if (x.dim() != 4) {
        throw ShapeError("hflip expects a rank-4 tensor, got rank " + std::to_string(x.dim()));
    }
    return torch::flip(x, {3});
}

LoadedPair load_pair(const TrainingPair& pair, std::optional<std::array<int64_t, 2>> target_size) {
    LoadedPair loaded{read_rgb(pair.input_image), read_gray(pair.depth), read_rgb(pair.target_image)};
    const auto same = [](const torch::Tensor& a, const torch::Tensor& b) {
        return a.size(2) == b.size(2) && a.size(3) == b.size(3);
    };
    if (!same(loaded.input, loaded.depth)) {
        throw ShapeError(pair.depth.string() + ": depth size does not match " + pair.input_image.string());
    }
    if (!same(loaded.input, loaded.target)) {
        throw ShapeError(pair.target_image.string() + ": target size does not match " + pair.input_image.string());
    }
    if (pair.flip_input) {
        loaded.input = hflip(loaded.input);
        loaded.depth = hflip(loaded.depth);
        loaded.target = hflip(loaded.target);
    }
    if (target_size) {
        const auto [h, w] = *target_size;
        if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0) {
            throw ShapeError("load_pair: target size " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not a positive multiple of 32");
        }
        if (loaded.input.size(2) != h || loaded.input.size(3) != w) {
            namespace F = torch::nn::functional;
            const auto options = F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{h, w})
                                     .mode(torch::kBilinear)
                                     .align_corners(false);
            loaded.input = F::interpolate(loaded.input, options);
            loaded.depth = F::interpolate(loaded.depth, options);
            loaded.target = F::interpolate(loaded.target, options);
        }
    }
    return loaded;
}

}  // namespace mbnet
