// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include "mbnet/data.hpp"
#include "mbnet/dynamic_conv.hpp"
#include "mbnet/losses.hpp"
#include "mbnet/metrics.hpp"
#include "mbnet/model.hpp"
#include "mbnet/synthetic_scene.hpp"
#include "mbnet/trainer.hpp"
#include "oracles.hpp"

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace mbnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;  // 0 when the criterion has no runtime bound
    std::function<Outcome()> run;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

// 1 ------------------------------------------------------------------------

Outcome ktu_equivalence() {
    torch::manual_seed(1);
    int cases = 0;
    for (int64_t k : {1, 3, 5}) {
        for (int64_t d : {1, 3, 5}) {
            const auto taps = torch::rand({2, k * k, 3, 4}) + 0.5;
            const auto view = ktu(KernelField{taps, 1}, d);
            const auto dense = view.dense();
            if (!torch::equal(dense, oracle::zero_insert(taps, k, d))) {
                return {false, "dense kernel differs from zero insertion at k=" + std::to_string(k) +
                                   " d=" + std::to_string(d)};
            }
            const auto nonzero = dense.select(0, 0).select(1, 0).select(1, 0).ne(0).sum().item<int64_t>();
            if (nonzero != k * k || view.effective_size() != d * (k - 1) + 1) {
                return {false, "tap count or size wrong at k=" + std::to_string(k) + " d=" + std::to_string(d)};
            }
            ++cases;
        }
    }
    const auto k3 = torch::rand({1, 9, 1, 1});
    const int64_t e1 = ktu(KernelField{k3, 1}, 1).effective_size();
    const int64_t e3 = ktu(KernelField{k3, 1}, 3).effective_size();
    const int64_t e5 = ktu(KernelField{k3, 1}, 5).effective_size();
    if (e1 != 3 || e3 != 7 || e5 != 11) {
        return {false, "k=3 effective sizes " + std::to_string(e1) + "/" + std::to_string(e3) + "/" +
                           std::to_string(e5)};
    }
    return {true, std::to_string(cases) + " (k, d) cases exact; k=3 sizes 3/7/11"};
}

// 2 ------------------------------------------------------------------------

Outcome dynamic_conv_oracle() {
    std::mt19937_64 rng(2);
    torch::manual_seed(2);
    std::uniform_int_distribution<int64_t> batch(1, 2);
    std::uniform_int_distribution<int64_t> channels(1, 8);
    std::uniform_int_distribution<int64_t> side(1, 16);
    const int64_t dilations[] = {1, 3, 5};
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int64_t b = batch(rng);
        const int64_t c = channels(rng);
        const int64_t h = side(rng);
        const int64_t w = side(rng);
        const int64_t d = dilations[i % 3];
        const auto f = torch::randn({b, c, h, w}, torch::kDouble);
        const auto k = torch::randn({b, 9, h, w}, torch::kDouble);
        const auto got = dynamic_conv(f, k, d);
        const auto want = oracle::naive_dynamic_conv(f, k, d);
        worst = std::max(worst, (got - want).abs().max().item<double>());
    }
    return {worst < 1e-6, fmt("100 cases, max abs diff %.3g (limit 1e-6)", worst)};
}

// 3 ------------------------------------------------------------------------

Outcome gradient_checks() {
    torch::manual_seed(3);
    std::mt19937_64 rng(3);
    IdentityExtractor id;
    const auto x = torch::rand({1, 3, 16, 16}, torch::kDouble);
    std::ostringstream detail;
    bool ok = true;

    const std::vector<std::pair<std::string, std::function<torch::Tensor(const torch::Tensor&)>>> losses{
        {"charbonnier", [&](const torch::Tensor& xh) { return charbonnier(x, xh); }},
        {"ssim_loss", [&](const torch::Tensor& xh) { return ssim_loss(x, xh); }},
        {"perceptual", [&](const torch::Tensor& xh) { return perceptual(x, xh, id); }},
        {"total_loss", [&](const torch::Tensor& xh) { return total_loss(x, xh, {}, kDefaultCharbonnierEps, id); }},
    };
    for (const auto& [name, fn] : losses) {
        auto x_hat = torch::rand({1, 3, 16, 16}, torch::kDouble).requires_grad_(true);
        fn(x_hat).backward();
        const auto grad = x_hat.grad().clone();
        auto probe = x_hat.detach().clone();
        const auto r = oracle::finite_difference(probe, grad, [&] { return fn(probe).item<double>(); }, 20, rng);
        ok = ok && r.samples >= 20 && r.max_rel_error < 1e-3;
        detail << name << ' ' << fmt("%.2g", r.max_rel_error) << "; ";
    }

    // End to end through the network, in double precision, with a random
    // head so every parameter receives gradient.
    auto model = build_model(ModelConfig::tiny());
    model->to(torch::kDouble);
    {
        torch::NoGradGuard guard;
        model->decoder->head->weight.normal_(0.0, 0.05);
        model->decoder->head->bias.normal_(0.0, 0.05);
    }
    const auto image = torch::rand({1, 3, 32, 32}, torch::kDouble).requires_grad_(true);
    const auto depth = torch::rand({1, 1, 32, 32}, torch::kDouble);
    const auto target = torch::rand({1, 3, 32, 32}, torch::kDouble);
    const auto objective = [&] { return charbonnier(target, model->forward_raw(image, depth)); };
    model->zero_grad();
    objective().backward();

    const auto eval = [&] {
        torch::NoGradGuard guard;
        return objective().item<double>();
    };
    // ReLU and max-pool kinks make wide steps unreliable; double precision
    // keeps the default small step well above rounding noise.
    const double step = 1e-6;
    auto input_probe = image.detach();
    const auto input_result =
        oracle::finite_difference(input_probe, image.grad().clone(), eval, 20, rng, step);

    const auto params = model->named_parameters(true);
    std::vector<double> weights;
    for (const auto& p : params) {
        weights.push_back(static_cast<double>(p.value().numel()));
    }
    std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
    double param_worst = 0.0;
    int64_t param_samples = 0;
    for (int i = 0; i < 20; ++i) {
        const auto& p = params[pick(rng)].value();
        auto probe = p.detach();
        const auto r = oracle::finite_difference(probe, p.grad().clone(), eval, 1, rng, step);
        param_worst = std::max(param_worst, r.max_rel_error);
        param_samples += r.samples;
    }
    ok = ok && input_result.samples >= 20 && input_result.max_rel_error < 1e-3 && param_samples >= 20 &&
         param_worst < 1e-3;
    detail << "model inputs " << fmt("%.2g", input_result.max_rel_error) << "; model parameters "
           << fmt("%.2g", param_worst) << " (20 samples each, limit 1e-3)";
    return {ok, detail.str()};
}

// 4 ------------------------------------------------------------------------

Outcome closed_form_ssim() {
    const auto constant = [](double v) { return torch::full({1, 3, 16, 16}, v, torch::kDouble); };
    const double mixed = ssim(constant(0.25), constant(0.75)).item<double>();
    const double same = ssim(constant(0.5), constant(0.5)).item<double>();
    const bool ok = std::abs(mixed - 0.60007) <= 1e-4 && std::abs(same - 1.0) <= 1e-9;
    return {ok, fmt("0.25 vs 0.75 -> %.6f; identical -> 1 %+.2g", mixed, same - 1.0)};
}

// 5 ------------------------------------------------------------------------

Outcome mps_reproduction() {
    struct Row {
        const char* team;
        double ssim;
        double lpips;
        double mps;
    };
    const Row rows[] = {{"auy200", 0.6874, 0.1634, 0.7620},     {"aics", 0.6799, 0.1597, 0.7601},
                        {"lifu", 0.6903, 0.1702, 0.7600},       {"jimmy3505090", 0.6772, 0.1670, 0.7551},
                        {"DeepBlueAI", 0.6879, 0.1891, 0.7494}, {"Ours", 0.6931, 0.1605, 0.7663}};
    // Inputs and outputs carry four decimals, so a difference of exactly half
    // a unit in the last place passes; the margin only absorbs binary rounding.
    const double tolerance = 5e-5 + 1e-12;
    double worst = 0.0;
    bool ok = true;
    for (const auto& r : rows) {
        const double diff = std::abs(mps(r.ssim, r.lpips) - r.mps);
        worst = std::max(worst, diff);
        ok = ok && diff <= tolerance;
    }
    return {ok, fmt("6 rows, max |diff| %.3g (limit 5e-5)", worst)};
}

// 6 ------------------------------------------------------------------------

Outcome residual_identity() {
    torch::manual_seed(6);
    bool ok = true;
    for (const auto& config : {ModelConfig::tiny(), ModelConfig{}}) {
        auto model = build_model(config);
        model->eval();
        torch::NoGradGuard guard;
        const auto image = torch::rand({1, 3, 64, 64});
        const auto depth = torch::rand({1, 1, 64, 64});
        ok = ok && torch::equal(model->forward(image, depth), image) &&
             torch::equal(model->forward_raw(image, depth), image);
    }
    return {ok, "tiny and default configurations return the input bit-exactly"};
}

// 7 ------------------------------------------------------------------------

Outcome overfit() {
    torch::manual_seed(7);
    oracle::TempDir dir("mbnet-accept-overfit");
    SyntheticDatasetOptions options;
    options.scenes = 4;
    options.height = 128;
    options.width = 128;
    options.seed = 7;
    write_synthetic_dataset(dir.path(), options);
    const auto pairs = make_pairs(index_dataset(dir.path(), Split::Train), {PairStrategy::Direct}).pairs;
    if (pairs.size() != 4) {
        return {false, "expected 4 pairs, found " + std::to_string(pairs.size())};
    }
    PairLoader loader(pairs, std::nullopt);
    const auto batch = loader.batch({0, 1, 2, 3});

    TrainConfig train;
    train.seed = 7;
    auto model = build_model(ModelConfig::tiny());
    Trainer trainer(model, train, LossConfig{});
    const double psnr_before = psnr(batch.target, batch.input);

    const int steps = 500;
    const int window = 50;
    std::vector<double> window_means;
    double sum = 0.0;
    for (int s = 0; s < steps; ++s) {
        sum += trainer.train_step(batch, 0);
        if ((s + 1) % window == 0) {
            window_means.push_back(sum / window);
            sum = 0.0;
        }
    }
    bool monotone = true;
    for (size_t i = 1; i < window_means.size(); ++i) {
        monotone = monotone && window_means[i] < window_means[i - 1];
    }
    model->eval();
    torch::NoGradGuard guard;
    const double psnr_after = psnr(batch.target, model->forward(batch.input, batch.depth));
    std::ostringstream detail;
    detail << fmt("training PSNR %.2f dB (from %.2f dB, limit 30); window means ", psnr_after, psnr_before);
    for (size_t i = 0; i < window_means.size(); ++i) {
        detail << (i ? " " : "") << fmt("%.4f", window_means[i]);
    }
    detail << (monotone ? " (decreasing)" : " (NOT decreasing)");
    return {psnr_after >= 30.0 && monotone, detail.str()};
}

// 8 ------------------------------------------------------------------------

Outcome data_pipeline() {
    oracle::TempDir dir("mbnet-accept-data");
    SyntheticDatasetOptions options;
    options.scenes = 3;
    options.height = 32;
    options.width = 32;
    write_synthetic_dataset(dir.path(), options);
    const auto manifest = index_dataset(dir.path(), Split::Train);
    const auto all = make_pairs(manifest, {kAllStrategies.begin(), kAllStrategies.end()});
    std::map<std::string, int> per_scene;
    std::set<PairStrategy> strategies;
    for (const auto& p : all.pairs) {
        ++per_scene[p.scene_id];
        strategies.insert(p.provenance);
    }
    bool counts = per_scene.size() == 3 && all.skipped == 0 && strategies.size() == 3;
    for (const auto& [scene, n] : per_scene) {
        counts = counts && n == 3;
    }

    const auto x = torch::rand({2, 3, 5, 7});
    const bool double_flip = torch::equal(hflip(hflip(x)), x) &&
                             !torch::equal(hflip(x), x);

    bool involution = true;
    for (Angle a : kAllAngles) {
        involution = involution && flip_angle(flip_angle(a)) == a;
    }
    const bool west_east = flip_angle(Angle::W) == Angle::E && flip_angle(Angle::E) == Angle::W &&
                           flip_angle(Angle::N) == Angle::N && flip_angle(Angle::NW) == Angle::NE;

    // A flipped west pair must be the mirror image of rendering the scene from
    // the east: the loaded input is hflip(W render) and equals the E render of
    // the mirrored scene.
    bool mirrored = false;
    for (const auto& p : all.pairs) {
        if (p.provenance == PairStrategy::FlippedWest) {
            const auto loaded = load_pair(p);
            const auto raw = load_pair(TrainingPair{p.scene_id, p.input_image, p.depth, p.target_image,
                                                    PairStrategy::Direct, false});
            mirrored = torch::equal(loaded.input, hflip(raw.input)) && torch::equal(loaded.depth, hflip(raw.depth)) &&
                       torch::equal(loaded.target, hflip(raw.target));
            break;
        }
    }
    const bool ok = counts && double_flip && involution && west_east && mirrored;
    std::ostringstream detail;
    detail << all.pairs.size() << " pairs over " << per_scene.size() << " scenes (3 each: "
           << (counts ? "yes" : "no") << "); double hflip " << (double_flip ? "identity" : "BROKEN")
           << "; flip_angle involution " << (involution ? "yes" : "no") << "; W->E " << (west_east ? "yes" : "no")
           << "; flipped pair mirrored " << (mirrored ? "yes" : "no");
    return {ok, detail.str()};
}

// 9 ------------------------------------------------------------------------

std::vector<LossRecord> seeded_run(const std::vector<TrainingPair>& pairs, const fs::path& checkpoints) {
    torch::manual_seed(9);
    TrainConfig train;
    train.epochs = 3;
    train.batch_size = 2;
    train.seed = 9;
    train.lr0 = 1e-3;
    train.checkpoint_dir = checkpoints;
    Trainer trainer(build_model(ModelConfig::micro()), train, LossConfig{});
    return trainer.fit(pairs).history;
}

Outcome determinism() {
    oracle::TempDir dir("mbnet-accept-determinism");
    SyntheticDatasetOptions options;
    options.scenes = 3;
    options.height = 32;
    options.width = 32;
    write_synthetic_dataset(dir / "data", options);
    const auto pairs = make_pairs(index_dataset(dir / "data", Split::Train), {PairStrategy::Direct}).pairs;

    const auto a = seeded_run(pairs, dir / "a");
    const auto b = seeded_run(pairs, dir / "b");
    bool same = a.size() == b.size() && !a.empty();
    for (size_t i = 0; same && i < a.size(); ++i) {
        same = a[i].step == b[i].step && a[i].loss == b[i].loss;
    }
    const auto files = {"manifest.txt", "weights.bin", "state.txt"};
    bool runs_identical = true;
    for (const auto* f : files) {
        runs_identical = runs_identical &&
                         oracle::read_bytes(dir / "a" / "latest" / f) == oracle::read_bytes(dir / "b" / "latest" / f);
    }

    const auto loaded = load_checkpoint(dir / "a" / "latest");
    save_checkpoint(loaded, dir / "resaved");
    bool round_trip = true;
    for (const auto* f : files) {
        round_trip = round_trip &&
                     oracle::read_bytes(dir / "a" / "latest" / f) == oracle::read_bytes(dir / "resaved" / f);
    }
    std::ostringstream detail;
    detail << a.size() << " steps, trajectories " << (same ? "identical" : "DIFFER") << "; checkpoints of both runs "
           << (runs_identical ? "byte-identical" : "DIFFER") << "; save/load/save "
           << (round_trip ? "byte-identical" : "DIFFERS");
    return {same && runs_identical && round_trip, detail.str()};
}

// 10 -----------------------------------------------------------------------

struct AblationArm {
    std::string name;
    std::vector<PairStrategy> strategies;
    bool residual;
};

double ablation_psnr(const AblationArm& arm, const fs::path& data, const std::vector<std::string>& train_scenes,
                     const std::vector<std::string>& test_scenes, const fs::path& checkpoints) {
    torch::manual_seed(10);
    const auto train_pairs =
        make_pairs(index_dataset(data, Split::Train, {}, train_scenes), arm.strategies).pairs;
    const auto test_pairs = make_pairs(index_dataset(data, Split::Test, {}, test_scenes), {PairStrategy::Direct}).pairs;
    ModelConfig model = ModelConfig::tiny();
    model.residual_output = arm.residual;
    TrainConfig train;
    train.epochs = 30;
    train.batch_size = 2;
    train.seed = 10;
    train.keep_epoch_checkpoints = false;
    train.checkpoint_dir = checkpoints;
    Trainer trainer(build_model(model), train, LossConfig{});
    trainer.fit(train_pairs);
    PairLoader loader(test_pairs, std::nullopt);
    return trainer.evaluate_psnr(loader);
}

Outcome ablation_protocol() {
    oracle::TempDir dir("mbnet-accept-ablation");
    SyntheticDatasetOptions options;
    options.scenes = 6;
    options.height = 64;
    options.width = 64;
    options.seed = 10;
    const auto scenes = write_synthetic_dataset(dir / "data", options);
    const std::vector<std::string> train_scenes(scenes.begin(), scenes.begin() + 4);
    const std::vector<std::string> test_scenes(scenes.begin() + 4, scenes.end());

    const std::vector<AblationArm> arms{
        {"baseline", {PairStrategy::Direct}, false},
        {"+extra data", {kAllStrategies.begin(), kAllStrategies.end()}, false},
        {"+residual", {kAllStrategies.begin(), kAllStrategies.end()}, true},
    };
    std::vector<double> scores;
    std::ostringstream detail;
    detail << "held-out fixture PSNR:";
    for (const auto& arm : arms) {
        scores.push_back(ablation_psnr(arm, dir / "data", train_scenes, test_scenes, dir / arm.name));
        detail << ' ' << arm.name << ' ' << fmt("%.2f dB", scores.back()) << ';';
    }
    const bool ok = scores[1] >= scores[0] && scores[2] >= scores[1];
    detail << (ok ? " no arm degrades" : " an added component degrades")
           << "; published full-scale ablation values are not reproduced at this scale";
    return {ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        selected.insert(std::stoi(argv[i]));
    }
    const std::vector<Criterion> criteria{
        {1, "ktu oracle equivalence", 1.0, ktu_equivalence},
        {2, "dynamic convolution oracle", 30.0, dynamic_conv_oracle},
        {3, "gradient checks", 300.0, gradient_checks},
        {4, "closed-form ssim", 0.0, closed_form_ssim},
        {5, "mps reproduction", 0.0, mps_reproduction},
        {6, "residual identity at init", 0.0, residual_identity},
        {7, "overfit smoke", 600.0, overfit},
        {8, "data pipeline", 0.0, data_pipeline},
        {9, "determinism", 0.0, determinism},
        {10, "ablation protocol", 0.0, ablation_protocol},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && selected.count(c.id) == 0) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = c.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bool pass = outcome.pass;
        std::string timing = fmt("%.2f s", seconds);
        if (c.budget_s > 0.0) {
            timing += fmt(" of %.0f s", c.budget_s);
            pass = pass && seconds < c.budget_s;
        }
        std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << outcome.detail << " ("
                  << timing << ")" << std::endl;
        failures += pass ? 0 : 1;
    }
    std::cout << (failures == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(failures) + " failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
