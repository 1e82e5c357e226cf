#include "mbnet/tensor_archive.hpp"

#include "mbnet/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mbnet {

namespace fs = std::filesystem;

namespace {

static_assert(sizeof(float) == 4);

std::string shape_to_string(c10::IntArrayRef sizes) {
    if (sizes.empty()) {
        return "-";
    }
    std::string s;
    for (size_t i = 0; i < sizes.size(); ++i) {
        if (i > 0) {
            s += ',';
        }
        s += std::to_string(sizes[i]);
    }
    return s;
}

std::vector<int64_t> parse_shape(const std::string& text, const std::string& where) {
    std::vector<int64_t> shape;
    if (text == "-") {
        return shape;
    }
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            size_t used = 0;
            const auto v = std::stoll(part, &used);
            if (used != part.size() || v < 0) {
                throw std::invalid_argument(part);
            }
            shape.push_back(v);
        } catch (const std::exception&) {
            throw CorruptionError(where + ": bad shape '" + text + "'");
        }
    }
    return shape;
}

int64_t parse_count(const std::string& text, const std::string& where) {
    try {
        size_t used = 0;
        const auto v = std::stoll(text, &used);
        if (used == text.size() && v >= 0) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw CorruptionError(where + ": bad integer '" + text + "'");
}

void to_little_endian(std::vector<char>& bytes) {
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i + 3 < bytes.size(); i += 4) {
            std::reverse(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                         bytes.begin() + static_cast<std::ptrdiff_t>(i + 4));
        }
    }
}

}  // namespace

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            throw IoError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

void write_tensor_archive(const fs::path& manifest, const fs::path& blob, const std::vector<NamedTensor>& tensors) {
    std::ostringstream text;
    std::string bytes;
    for (const auto& t : tensors) {
        if (t.name.empty() || t.name.find_first_of(" \t\n#") != std::string::npos) {
            throw ConfigError("tensor archive: invalid tensor name '" + t.name + "'");
        }
        const auto values = t.value.detach().to(torch::kCPU, torch::kFloat32).contiguous();
        const auto length = values.numel() * 4;
        text << t.name << " f32 " << shape_to_string(values.sizes()) << ' ' << bytes.size() << ' ' << length << '\n';
        std::vector<char> raw(static_cast<size_t>(length));
        if (length > 0) {
            std::memcpy(raw.data(), values.data_ptr<float>(), raw.size());
        }
        to_little_endian(raw);
        bytes.append(raw.begin(), raw.end());
    }
    write_file_atomic(blob, bytes);
    write_file_atomic(manifest, text.str());
}

std::vector<NamedTensor> read_tensor_archive(const fs::path& manifest, const fs::path& blob) {
    const auto text = read_text_file(manifest);
    const auto data = read_text_file(blob);
    const auto blob_size = static_cast<int64_t>(data.size());

    std::vector<NamedTensor> tensors;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    bool long_form = false;
    int64_t furthest = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream fields(line);
        std::vector<std::string> parts;
        for (std::string f; fields >> f;) {
            parts.push_back(f);
        }
        if (parts.empty()) {
            continue;
        }
        const auto where = manifest.string() + ":" + std::to_string(line_no);
        std::vector<int64_t> shape;
        int64_t offset = 0;
        int64_t length = 0;
        if (parts.size() == 5) {
            if (parts[1] != "f32") {
                throw CorruptionError(where + ": unsupported dtype '" + parts[1] + "'");
            }
            long_form = true;
            shape = parse_shape(parts[2], where);
            offset = parse_count(parts[3], where);
            length = parse_count(parts[4], where);
        } else if (parts.size() == 3) {
            shape = parse_shape(parts[1], where);
            offset = parse_count(parts[2], where);
            length = -1;
        } else {
            throw CorruptionError(where + ": expected 3 or 5 fields, got " + std::to_string(parts.size()));
        }
        int64_t numel = 1;
        for (auto d : shape) {
            numel *= d;
        }
        if (length < 0) {
            length = numel * 4;
        }
        if (length != numel * 4) {
            throw CorruptionError(where + ": byte length " + std::to_string(length) + " does not match shape");
        }
        if (offset + length > blob_size) {
            throw CorruptionError(where + ": tensor " + parts[0] + " extends past the end of " + blob.string() +
                                  " (" + std::to_string(offset + length) + " > " + std::to_string(blob_size) + ")");
        }
        furthest = std::max(furthest, offset + length);
        std::vector<char> raw(data.begin() + offset, data.begin() + offset + length);
        to_little_endian(raw);
        auto value = torch::empty(shape, torch::kFloat32);
        if (length > 0) {
            std::memcpy(value.data_ptr<float>(), raw.data(), raw.size());
        }
        tensors.push_back(NamedTensor{parts[0], std::move(value)});
    }
    if (long_form && furthest != blob_size) {
        throw CorruptionError(blob.string() + ": " + std::to_string(blob_size) + " bytes on disk, manifest covers " +
                              std::to_string(furthest));
    }
    return tensors;
}

}  // namespace mbnet
