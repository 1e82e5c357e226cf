#pragma once

#include "mbnet/run_config.hpp"
#include "mbnet/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mbnet {

inline constexpr std::array<std::string_view, 4> kCommands{"index", "train", "infer", "evaluate"};

/// Execute a command. Returns 0 on success; errors are reported on `err`
/// and mapped to a non-zero status.
int run_command(std::string_view command, const RunConfig& config, std::ostream& out, std::ostream& err);

/// Two-column `step loss` file with a header, ascending by step. Returns
/// false (and writes nothing) for an empty history.
bool emit_loss_curve(std::vector<LossRecord> history, const std::filesystem::path& path);
std::vector<LossRecord> read_loss_curve(const std::filesystem::path& path);

/// Relight one image/depth pair of arbitrary size: edges are replicated up
/// to the next multiple of 32 and the prediction is cropped back.
torch::Tensor relight(MBNetImpl& model, const torch::Tensor& image, const torch::Tensor& depth);

}  // namespace mbnet
