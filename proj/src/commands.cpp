#include "mbnet/commands.hpp"

#include "mbnet/errors.hpp"
#include "mbnet/image_io.hpp"
#include "mbnet/metrics.hpp"
#include "mbnet/tensor_archive.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mbnet {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

std::optional<std::vector<std::string>> scene_filter_for(const DataConfig& data, Split split) {
    if (split == Split::Train && data.train_list) {
        return read_scene_list(*data.train_list);
    }
    if (split == Split::Val && data.val_list) {
        return read_scene_list(*data.val_list);
    }
    return std::nullopt;
}

std::shared_ptr<const FeatureExtractor> make_extractor(const LossSection& loss) {
    if (loss.extractor == "conv") {
        return std::make_shared<ConvFeatureExtractor>(
            ConvFeatureExtractor::load(*loss.extractor_manifest, *loss.extractor_blob));
    }
    return std::make_shared<IdentityExtractor>();
}

int run_index(const RunConfig& config, std::ostream& out) {
    const auto manifest =
        index_dataset(config.data.root, config.data.split, config.data.naming, scene_filter_for(config.data, config.data.split));
    if (config.data.manifest.has_parent_path()) {
        fs::create_directories(config.data.manifest.parent_path());
    }
    write_file_atomic(config.data.manifest, manifest_to_text(manifest));
    out << "indexed " << manifest.records.size() << " records from " << manifest.scene_ids().size()
        << " scenes into " << config.data.manifest.string() << '\n';
    return 0;
}

int run_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
    torch::manual_seed(config.train.seed);

    const auto manifest = index_dataset(config.data.root, Split::Train, config.data.naming,
                                        scene_filter_for(config.data, Split::Train));
    const auto pairs = make_pairs(manifest, config.data.strategies);
    if (pairs.skipped > 0) {
        err << "warning: skipped " << pairs.skipped << " (scene, strategy) combinations lacking a condition\n";
    }
    std::vector<TrainingPair> validation;
    if (config.data.val_list) {
        const auto val_manifest =
            index_dataset(config.data.root, Split::Val, config.data.naming, scene_filter_for(config.data, Split::Val));
        validation = make_pairs(val_manifest, {PairStrategy::Direct}).pairs;
    }
    out << "training on " << pairs.pairs.size() << " pairs";
    if (!validation.empty()) {
        out << ", validating on " << validation.size();
    }
    out << "; " << steps_per_epoch(static_cast<int64_t>(pairs.pairs.size()), config.train.batch_size)
        << " steps per epoch\n";

    auto model = build_model(config.model);
    Trainer trainer(model, config.train, LossConfig{config.loss.weights, config.loss.eps, make_extractor(config.loss)});
    trainer.set_config_echo(config.echo());
    const auto result = trainer.fit(pairs.pairs, validation, [&out](const EpochReport& r) {
        out << "epoch " << r.epoch << "  lr " << r.learning_rate << "  loss " << std::setprecision(6) << r.mean_loss;
        if (r.val_psnr) {
            out << "  val psnr " << *r.val_psnr << " dB";
        }
        out << std::endl;
    });
    const auto curve = config.train.checkpoint_dir / "loss_curve.txt";
    if (!emit_loss_curve(result.history, curve)) {
        err << "warning: empty loss history, no curve written\n";
    }
    out << "checkpoints in " << config.train.checkpoint_dir.string() << "; loss curve " << curve.string() << '\n';
    return 0;
}

int run_infer(const RunConfig& config, std::ostream& out) {
    const auto ckpt = load_checkpoint(config.infer.checkpoint);
    // Architecture comes from the checkpoint; explicit model.* keys win.
    RunConfig arch = ckpt.config_echo.empty() ? RunConfig{} : parse_config_text(ckpt.config_echo, "checkpoint config");
    for (const auto& key : config.assigned) {
        if (key.rfind("model.", 0) == 0) {
            arch.set(key, config.get(key));
        }
    }
    if (ckpt.config_echo.empty()) {
        arch.model = config.model;
    }
    arch.model.use_pretrained_backbone = false;
    auto model = build_model(arch.model);
    load_parameters(*model, ckpt);
    model->eval();

    const auto manifest = index_dataset(config.infer.input_dir, Split::Test, config.data.naming);
    fs::create_directories(config.infer.output_dir);
    int64_t written = 0;
    for (const auto& scene : manifest.scene_ids()) {
        const auto* record = manifest.find(scene, kInputTemp, Angle::N);
        if (record == nullptr) {
            continue;
        }
        const auto image = read_rgb(record->image_path);
        const auto depth = read_gray(record->depth_path);
        const auto relit = relight(*model, image, depth);
        write_rgb8(config.infer.output_dir / config.data.naming.image_name(scene, kTargetTemp, Angle::E), relit);
        ++written;
    }
    if (written == 0) {
        throw IoError("no (6500, N) input images found in " + config.infer.input_dir.string());
    }
    out << "wrote " << written << " predictions to " << config.infer.output_dir.string() << '\n';
    return 0;
}

int run_evaluate(const RunConfig& config, std::ostream& out) {
    std::unique_ptr<LpipsScorer> scorer;
    if (config.eval.lpips_plugin) {
        scorer = std::make_unique<PluginLpipsScorer>(*config.eval.lpips_plugin);
    }
    const auto report = evaluate_dir(config.eval.pred_dir, config.eval.gt_dir, scorer.get());
    auto txt = config.eval.report;
    txt += ".txt";
    auto csv = config.eval.report;
    csv += ".csv";
    if (config.eval.report.has_parent_path()) {
        fs::create_directories(config.eval.report.parent_path());
    }
    const auto text = report_to_text(report);
    write_file_atomic(txt, text);
    write_file_atomic(csv, report_to_csv(report));
    out << text;
    return 0;
}

}  // namespace

torch::Tensor relight(MBNetImpl& model, const torch::Tensor& image, const torch::Tensor& depth) {
    if (image.dim() != 4 || depth.dim() != 4 || image.size(2) != depth.size(2) || image.size(3) != depth.size(3)) {
        throw ShapeError("relight: image " + c10::str(image.sizes()) + " and depth " + c10::str(depth.sizes()) +
                         " disagree");
    }
    torch::NoGradGuard guard;
    const int64_t h = image.size(2);
    const int64_t w = image.size(3);
    const int64_t pad_h = (kInputMultiple - h % kInputMultiple) % kInputMultiple;
    const int64_t pad_w = (kInputMultiple - w % kInputMultiple) % kInputMultiple;
    if (pad_h == 0 && pad_w == 0) {
        return model.forward(image, depth);
    }
    const auto pad = F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate);
    const auto out = model.forward(F::pad(image, pad), F::pad(depth, pad));
    return out.narrow(2, 0, h).narrow(3, 0, w).contiguous();
}

bool emit_loss_curve(std::vector<LossRecord> history, const fs::path& path) {
    if (history.empty()) {
        return false;
    }
    std::stable_sort(history.begin(), history.end(),
                     [](const LossRecord& a, const LossRecord& b) { return a.step < b.step; });
    std::ostringstream text;
    text << "step loss\n" << std::setprecision(17);
    for (const auto& r : history) {
        text << r.step << ' ' << r.loss << '\n';
    }
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    write_file_atomic(path, text.str());
    return true;
}

std::vector<LossRecord> read_loss_curve(const fs::path& path) {
    std::istringstream lines(read_text_file(path));
    std::vector<LossRecord> history;
    std::string line;
    std::getline(lines, line);
    if (line != "step loss") {
        throw IoError(path.string() + ": missing 'step loss' header");
    }
    while (std::getline(lines, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        LossRecord r;
        if (!(fields >> r.step >> r.loss)) {
            throw IoError(path.string() + ": malformed line '" + line + "'");
        }
        history.push_back(r);
    }
    return history;
}

int run_command(std::string_view command, const RunConfig& config, std::ostream& out, std::ostream& err) {
    try {
        config.validate_for(command);
        if (command == "index") {
            return run_index(config, out);
        }
        if (command == "train") {
            return run_train(config, out, err);
        }
        if (command == "infer") {
            return run_infer(config, out);
        }
        return run_evaluate(config, out);
    } catch (const ConfigError& e) {
        err << "mbnet " << command << ": config error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "mbnet " << command << ": " << e.what() << '\n';
        return 1;
    } catch (const c10::Error& e) {
        err << "mbnet " << command << ": tensor error: " << e.what_without_backtrace() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "mbnet " << command << ": " << e.what() << '\n';
        return 1;
    }
}

}  // namespace mbnet
