#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace mbnet {

struct NamedTensor {
    std::string name;
    torch::Tensor value;
};

/// Named float tensors stored as a text manifest plus one flat blob of
/// little-endian 32-bit floats.
///
/// Manifest lines (one tensor each, '#' starts a comment):
///   <name> f32 <d0,d1,...|-> <byte offset> <byte length>
/// The reader also accepts the short form `<name> <shape> <byte offset>`,
/// where the length follows from the shape.
void write_tensor_archive(const std::filesystem::path& manifest, const std::filesystem::path& blob,
                          const std::vector<NamedTensor>& tensors);

/// Throws IoError when a file is unreadable and CorruptionError when the
/// manifest is malformed or disagrees with the blob size.
std::vector<NamedTensor> read_tensor_archive(const std::filesystem::path& manifest,
                                             const std::filesystem::path& blob);

/// Write `contents` to `path` through a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace mbnet
