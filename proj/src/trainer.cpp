#include "mbnet/trainer.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace mbnet {

namespace fs = std::filesystem;

namespace {

constexpr const char* kParamPrefix = "model.";
constexpr const char* kExpAvgPrefix = "adam.exp_avg.";
constexpr const char* kExpAvgSqPrefix = "adam.exp_avg_sq.";

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string finite_summary(const torch::Tensor& t) {
    return torch::isfinite(t).all().item<bool>() ? "finite" : "non-finite";
}

}  // namespace

void TrainConfig::validate() const {
    const auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("lr0 must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
    if (lr_decay_every < 1) fail("lr_decay_every must be >= 1");
    if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be > 0");
    if (image_size) {
        const auto [h, w] = *image_size;
        if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0) fail("image_size must be positive multiples of 32");
    }
}

double lr_at(int64_t epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) {
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) +
                          ")");
    }
    const int64_t blocks = epoch / config.lr_decay_every;
    if (config.lr_decay_mode == LrDecayMode::Once) {
        return blocks > 0 ? config.lr0 / config.lr_decay_factor : config.lr0;
    }
    return config.lr0 / std::pow(config.lr_decay_factor, static_cast<double>(blocks));
}

int64_t steps_per_epoch(int64_t pair_count, int64_t batch_size) {
    return (pair_count + batch_size - 1) / batch_size;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& directory) {
    std::vector<NamedTensor> tensors;
    tensors.reserve(checkpoint.parameters.size() * 3);
    for (const auto& p : checkpoint.parameters) {
        tensors.push_back({kParamPrefix + p.name, p.value});
    }
    for (const auto& m : checkpoint.exp_avg) {
        tensors.push_back({kExpAvgPrefix + m.name, m.value});
    }
    for (const auto& v : checkpoint.exp_avg_sq) {
        tensors.push_back({kExpAvgSqPrefix + v.name, v.value});
    }

    std::ostringstream state;
    state << "epoch " << checkpoint.epoch << '\n'
          << "seed " << checkpoint.seed << '\n'
          << "adam_step " << checkpoint.adam_step << '\n'
          << "[config]\n"
          << checkpoint.config_echo;

    auto staging = directory;
    staging += ".partial";
    std::error_code ec;
    fs::remove_all(staging, ec);
    fs::create_directories(staging, ec);
    if (ec) {
        throw IoError("cannot create " + staging.string() + ": " + ec.message());
    }
    write_tensor_archive(staging / "manifest.txt", staging / "weights.bin", tensors);
    write_file_atomic(staging / "state.txt", state.str());

    auto previous = directory;
    previous += ".old";
    fs::remove_all(previous, ec);
    if (fs::exists(directory)) {
        fs::rename(directory, previous, ec);
        if (ec) {
            throw IoError("cannot replace " + directory.string() + ": " + ec.message());
        }
    }
    fs::rename(staging, directory, ec);
    if (ec) {
        throw IoError("cannot move checkpoint into " + directory.string() + ": " + ec.message());
    }
    fs::remove_all(previous, ec);
}

Checkpoint load_checkpoint(const fs::path& directory) {
    if (!fs::is_directory(directory)) {
        throw IoError("checkpoint " + directory.string() + " does not exist");
    }
    Checkpoint ckpt;
    for (auto& t : read_tensor_archive(directory / "manifest.txt", directory / "weights.bin")) {
        if (starts_with(t.name, kExpAvgSqPrefix)) {
            ckpt.exp_avg_sq.push_back({t.name.substr(std::string(kExpAvgSqPrefix).size()), std::move(t.value)});
        } else if (starts_with(t.name, kExpAvgPrefix)) {
            ckpt.exp_avg.push_back({t.name.substr(std::string(kExpAvgPrefix).size()), std::move(t.value)});
        } else if (starts_with(t.name, kParamPrefix)) {
            ckpt.parameters.push_back({t.name.substr(std::string(kParamPrefix).size()), std::move(t.value)});
        } else {
            throw CorruptionError(directory.string() + ": unexpected tensor " + t.name);
        }
    }
    const auto n = ckpt.parameters.size();
    if (ckpt.exp_avg.size() != n || ckpt.exp_avg_sq.size() != n) {
        throw CorruptionError(directory.string() + ": optimizer state does not cover every parameter");
    }
    for (size_t i = 0; i < n; ++i) {
        if (ckpt.exp_avg[i].name != ckpt.parameters[i].name || ckpt.exp_avg_sq[i].name != ckpt.parameters[i].name) {
            throw CorruptionError(directory.string() + ": optimizer state out of order at " + ckpt.parameters[i].name);
        }
    }

    std::istringstream state(read_text_file(directory / "state.txt"));
    std::string line;
    bool in_config = false;
    int found = 0;
    std::string echo;
    while (std::getline(state, line)) {
        if (in_config) {
            echo += line + '\n';
            continue;
        }
        if (line == "[config]") {
            in_config = true;
            continue;
        }
        std::istringstream fields(line);
        std::string key;
        fields >> key;
        bool ok = true;
        if (key == "epoch") {
            ok = static_cast<bool>(fields >> ckpt.epoch);
        } else if (key == "seed") {
            ok = static_cast<bool>(fields >> ckpt.seed);
        } else if (key == "adam_step") {
            ok = static_cast<bool>(fields >> ckpt.adam_step);
        } else if (!key.empty()) {
            throw CorruptionError(directory.string() + "/state.txt: unknown entry '" + key + "'");
        }
        if (!ok) {
            throw CorruptionError(directory.string() + "/state.txt: malformed '" + line + "'");
        }
        found += key.empty() ? 0 : 1;
    }
    if (found != 3 || !in_config) {
        throw CorruptionError(directory.string() + "/state.txt: incomplete");
    }
    ckpt.config_echo = std::move(echo);
    return ckpt;
}

void load_parameters(MBNetImpl& model, const Checkpoint& checkpoint) {
    auto params = model.named_parameters();
    if (params.size() != checkpoint.parameters.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(checkpoint.parameters.size()) +
                          " tensors, model has " + std::to_string(params.size()) + "; architecture mismatch");
    }
    torch::NoGradGuard guard;
    for (const auto& saved : checkpoint.parameters) {
        auto* target = params.find(saved.name);
        if (target == nullptr) {
            throw ConfigError("checkpoint tensor " + saved.name + " has no counterpart in the model");
        }
        if (!target->sizes().equals(saved.value.sizes())) {
            throw ShapeError("checkpoint tensor " + saved.name + " has shape " + c10::str(saved.value.sizes()) +
                             ", model expects " + c10::str(target->sizes()));
        }
        target->copy_(saved.value);
    }
}

// ---------------------------------------------------------------------------

PairLoader::PairLoader(std::vector<TrainingPair> pairs, std::optional<std::array<int64_t, 2>> image_size,
                       int64_t cache_budget_bytes)
    : pairs_(std::move(pairs)), image_size_(image_size), cache_budget_(cache_budget_bytes) {}

LoadedPair PairLoader::get(size_t index) {
    if (auto it = cache_.find(index); it != cache_.end()) {
        return it->second;
    }
    auto loaded = load_pair(pairs_.at(index), image_size_);
    const int64_t bytes = (loaded.input.numel() + loaded.depth.numel() + loaded.target.numel()) * 4;
    if (cached_bytes_ + bytes <= cache_budget_) {
        cached_bytes_ += bytes;
        cache_.emplace(index, loaded);
    }
    return loaded;
}

Batch PairLoader::batch(const std::vector<size_t>& indices) {
    std::vector<torch::Tensor> inputs, depths, targets;
    for (auto i : indices) {
        auto p = get(i);
        if (!inputs.empty() && !p.input.sizes().equals(inputs.front().sizes())) {
            throw ShapeError("pairs in one batch differ in size (" + pairs_[i].input_image.string() +
                             "); set train.image_size to resize them");
        }
        inputs.push_back(p.input);
        depths.push_back(p.depth);
        targets.push_back(p.target);
    }
    return Batch{torch::cat(inputs), torch::cat(depths), torch::cat(targets)};
}

// ---------------------------------------------------------------------------

Trainer::Trainer(MBNet model, TrainConfig config, LossConfig loss)
    : model_(std::move(model)), config_(std::move(config)), loss_(std::move(loss)) {
    config_.validate();
    loss_.weights.validate();
    if (!loss_.extractor) {
        loss_.extractor = std::make_shared<IdentityExtractor>();
    }
    std::vector<torch::Tensor> params;
    for (auto& item : model_->named_parameters()) {
        named_params_.emplace_back(item.key(), item.value());
        params.push_back(item.value());
    }
    optimizer_ = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(config_.lr0)
                    .betas(std::make_tuple(config_.beta1, config_.beta2))
                    .eps(config_.adam_eps));
    model_->train();
}

double Trainer::train_step(const Batch& batch, int64_t epoch) {
    return train_step_with_lr(batch, lr_at(epoch, config_));
}

double Trainer::train_step_with_lr(const Batch& batch, double lr) {
    for (auto& group : optimizer_->param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
    model_->train();
    optimizer_->zero_grad();
    const auto prediction = model_->forward_raw(batch.input, batch.depth);
    const auto terms = loss_terms(batch.target, prediction, loss_.weights, loss_.eps, *loss_.extractor);
    const double value = terms.total.item<double>();
    if (!std::isfinite(value)) {
        std::ostringstream why;
        why << "non-finite loss at step " << steps_ + 1 << " (charbonnier " << terms.charbonnier.item<double>()
            << ", ssim_loss " << terms.ssim_loss.item<double>() << ", perceptual " << terms.perceptual.item<double>()
            << "; input " << finite_summary(batch.input) << ", depth " << finite_summary(batch.depth) << ", target "
            << finite_summary(batch.target) << ")";
        throw DivergenceError(why.str());
    }
    terms.total.backward();
    optimizer_->step();
    ++steps_;
    return value;
}

std::vector<size_t> Trainer::epoch_order(size_t pair_count, int64_t epoch) const {
    std::vector<size_t> order(pair_count);
    std::iota(order.begin(), order.end(), size_t{0});
    std::seed_seq seq{static_cast<uint32_t>(config_.seed), static_cast<uint32_t>(config_.seed >> 32),
                      static_cast<uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

FitResult Trainer::fit(const std::vector<TrainingPair>& pairs, const std::vector<TrainingPair>& validation,
                       const std::function<void(const EpochReport&)>& on_epoch) {
    PairLoader loader(pairs, config_.image_size);
    if (validation.empty()) {
        return fit(loader, nullptr, 0, on_epoch);
    }
    PairLoader val_loader(validation, config_.image_size);
    return fit(loader, &val_loader, 0, on_epoch);
}

FitResult Trainer::fit(PairLoader& loader, PairLoader* validation, int64_t start_epoch,
                       const std::function<void(const EpochReport&)>& on_epoch) {
    if (loader.size() == 0) {
        throw ConfigError("fit: no training pairs");
    }
    FitResult result;
    const auto batch = static_cast<size_t>(config_.batch_size);
    for (int64_t epoch = start_epoch; epoch < config_.epochs; ++epoch) {
        const auto order = epoch_order(loader.size(), epoch);
        double sum = 0.0;
        int64_t count = 0;
        for (size_t first = 0; first < order.size(); first += batch) {
            const std::vector<size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(first),
                                              order.begin() + static_cast<std::ptrdiff_t>(std::min(first + batch, order.size())));
            const double loss = train_step(loader.batch(indices), epoch);
            result.history.push_back({steps_, loss});
            sum += loss;
            ++count;
        }

        EpochReport report;
        report.epoch = epoch + 1;
        report.learning_rate = lr_at(epoch, config_);
        report.mean_loss = sum / static_cast<double>(count);

        const auto ckpt = checkpoint(epoch + 1, config_echo_);
        if (config_.keep_epoch_checkpoints) {
            std::ostringstream name;
            name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1;
            save_checkpoint(ckpt, config_.checkpoint_dir / name.str());
        }
        save_checkpoint(ckpt, config_.checkpoint_dir / "latest");
        if (validation != nullptr && validation->size() > 0) {
            report.val_psnr = evaluate_psnr(*validation);
            if (!result.best_val_psnr || *report.val_psnr > *result.best_val_psnr) {
                result.best_val_psnr = report.val_psnr;
                save_checkpoint(ckpt, config_.checkpoint_dir / "best");
            }
        }
        result.epochs.push_back(report);
        if (on_epoch) {
            on_epoch(report);
        }
    }
    result.final_checkpoint = checkpoint(config_.epochs, config_echo_);
    return result;
}

double Trainer::evaluate_psnr(PairLoader& loader) {
    torch::NoGradGuard guard;
    model_->eval();
    double sum = 0.0;
    for (size_t i = 0; i < loader.size(); ++i) {
        const auto p = loader.get(i);
        sum += psnr(p.target, model_->forward(p.input, p.depth));
    }
    model_->train();
    return loader.size() == 0 ? 0.0 : sum / static_cast<double>(loader.size());
}

Checkpoint Trainer::checkpoint(int64_t completed_epochs, std::string config_echo) const {
    Checkpoint ckpt;
    ckpt.epoch = completed_epochs;
    ckpt.seed = config_.seed;
    ckpt.adam_step = steps_;
    ckpt.config_echo = std::move(config_echo);
    auto& state = optimizer_->state();
    for (const auto& [name, param] : named_params_) {
        ckpt.parameters.push_back({name, param.detach().cpu().clone()});
        auto it = state.find(param.unsafeGetTensorImpl());
        if (it != state.end()) {
            const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
            ckpt.exp_avg.push_back({name, s.exp_avg().detach().cpu().clone()});
            ckpt.exp_avg_sq.push_back({name, s.exp_avg_sq().detach().cpu().clone()});
        } else {
            ckpt.exp_avg.push_back({name, torch::zeros_like(param).cpu()});
            ckpt.exp_avg_sq.push_back({name, torch::zeros_like(param).cpu()});
        }
    }
    return ckpt;
}

void Trainer::restore(const Checkpoint& checkpoint) {
    load_parameters(*model_, checkpoint);
    auto& state = optimizer_->state();
    state.clear();
    if (checkpoint.adam_step > 0) {
        std::unordered_map<std::string, size_t> index;
        for (size_t i = 0; i < checkpoint.parameters.size(); ++i) {
            index.emplace(checkpoint.parameters[i].name, i);
        }
        for (const auto& [name, param] : named_params_) {
            const auto i = index.at(name);
            auto s = std::make_unique<torch::optim::AdamParamState>();
            s->step(checkpoint.adam_step);
            s->exp_avg(checkpoint.exp_avg[i].value.to(param.options()).clone());
            s->exp_avg_sq(checkpoint.exp_avg_sq[i].value.to(param.options()).clone());
            state[param.unsafeGetTensorImpl()] = std::move(s);
        }
    }
    steps_ = checkpoint.adam_step;
}

}  // namespace mbnet
