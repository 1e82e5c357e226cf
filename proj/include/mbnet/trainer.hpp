#pragma once

#include "mbnet/data.hpp"
#include "mbnet/losses.hpp"
#include "mbnet/model.hpp"
#include "mbnet/tensor_archive.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mbnet {

enum class LrDecayMode { Repeated, Once };

struct TrainConfig {
    int64_t epochs = 200;
    int64_t batch_size = 3;
    double lr0 = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int64_t lr_decay_every = 50;
    double lr_decay_factor = 10.0;
    LrDecayMode lr_decay_mode = LrDecayMode::Repeated;
    uint64_t seed = 0;
    std::filesystem::path checkpoint_dir = "checkpoints";
    /// Resize every pair to (H, W) when set; both must be multiples of 32.
    std::optional<std::array<int64_t, 2>> image_size;
    /// Keep the per-epoch archives; otherwise only `latest` (and `best`) remain.
    bool keep_epoch_checkpoints = true;

    void validate() const;
};

/// Learning rate for a zero-based epoch: lr0 / factor^floor(epoch / every)
/// in repeated mode, a single division from epoch `every` onward in once mode.
double lr_at(int64_t epoch, const TrainConfig& config);

struct LossConfig {
    LossWeights weights;
    double eps = kDefaultCharbonnierEps;
    std::shared_ptr<const FeatureExtractor> extractor = std::make_shared<IdentityExtractor>();
};

struct Batch {
    torch::Tensor input;
    torch::Tensor depth;
    torch::Tensor target;
};

/// Model weights, Adam moments and loop counters.
struct Checkpoint {
    std::vector<NamedTensor> parameters;
    std::vector<NamedTensor> exp_avg;     // same order and names as parameters
    std::vector<NamedTensor> exp_avg_sq;  // same order and names as parameters
    int64_t adam_step = 0;
    int64_t epoch = 0;  // completed epochs
    uint64_t seed = 0;
    /// `key = value` lines describing the run that produced the checkpoint.
    std::string config_echo;
};

/// Directory archive: manifest.txt, weights.bin and state.txt. The directory
/// is assembled under a temporary name and renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& directory);
Checkpoint load_checkpoint(const std::filesystem::path& directory);

/// Copy checkpoint parameters into a model with the same architecture.
void load_parameters(MBNetImpl& model, const Checkpoint& checkpoint);

struct LossRecord {
    int64_t step = 0;
    double loss = 0.0;
};

struct EpochReport {
    int64_t epoch = 0;  // 1-based
    double learning_rate = 0.0;
    double mean_loss = 0.0;
    std::optional<double> val_psnr;
};

struct FitResult {
    Checkpoint final_checkpoint;
    std::vector<LossRecord> history;
    std::vector<EpochReport> epochs;
    std::optional<double> best_val_psnr;
};

/// Loads pairs on demand and keeps them in memory up to a byte budget.
class PairLoader {
public:
    PairLoader(std::vector<TrainingPair> pairs, std::optional<std::array<int64_t, 2>> image_size,
               int64_t cache_budget_bytes = int64_t{1} << 30);

    [[nodiscard]] size_t size() const { return pairs_.size(); }
    [[nodiscard]] const std::vector<TrainingPair>& pairs() const { return pairs_; }
    LoadedPair get(size_t index);
    Batch batch(const std::vector<size_t>& indices);

private:
    std::vector<TrainingPair> pairs_;
    std::optional<std::array<int64_t, 2>> image_size_;
    int64_t cache_budget_;
    int64_t cached_bytes_ = 0;
    std::map<size_t, LoadedPair> cache_;
};

/// Adam training loop with the step learning-rate schedule.
class Trainer {
public:
    Trainer(MBNet model, TrainConfig config, LossConfig loss);

    /// One optimisation step at the learning rate of `epoch`. Returns the
    /// loss before the update. Throws DivergenceError on a non-finite loss;
    /// parameters are left untouched in that case.
    double train_step(const Batch& batch, int64_t epoch);
    double train_step_with_lr(const Batch& batch, double lr);

    /// Run config.epochs epochs over `pairs`, reshuffling every epoch with a
    /// generator seeded from (seed, epoch). Writes a checkpoint per epoch
    /// and, with validation pairs, keeps the best-PSNR one under `best`.
    FitResult fit(const std::vector<TrainingPair>& pairs, const std::vector<TrainingPair>& validation = {},
                  const std::function<void(const EpochReport&)>& on_epoch = {});

    /// Same loop over an already-built loader; start_epoch resumes a run.
    FitResult fit(PairLoader& loader, PairLoader* validation, int64_t start_epoch = 0,
                  const std::function<void(const EpochReport&)>& on_epoch = {});

    /// Shuffled visiting order for a zero-based epoch.
    [[nodiscard]] std::vector<size_t> epoch_order(size_t pair_count, int64_t epoch) const;

    [[nodiscard]] Checkpoint checkpoint(int64_t completed_epochs, std::string config_echo = {}) const;
    void restore(const Checkpoint& checkpoint);

    /// Mean PSNR of clamped predictions over a loader.
    double evaluate_psnr(PairLoader& loader);

    MBNet& model() { return model_; }
    [[nodiscard]] const TrainConfig& config() const { return config_; }
    [[nodiscard]] int64_t steps_taken() const { return steps_; }
    void set_config_echo(std::string echo) { config_echo_ = std::move(echo); }

private:
    MBNet model_;
    TrainConfig config_;
    LossConfig loss_;
    std::vector<std::pair<std::string, torch::Tensor>> named_params_;
    std::unique_ptr<torch::optim::Adam> optimizer_;
    int64_t steps_ = 0;
    std::string config_echo_;
};

/// Steps per epoch: ceil(pairs / batch_size); the partial batch is kept.
int64_t steps_per_epoch(int64_t pair_count, int64_t batch_size);

}  // namespace mbnet
