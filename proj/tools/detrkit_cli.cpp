// Command-line surface: synthetic scene generation, the end-to-end toy
// forward pass, metric evaluation, set-loss inspection, kernel benchmarks and
// the self-verification suites.
//
// Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 selftest
// invariant failure.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detrkit/json_io.hpp"
#include "detrkit/pipeline.hpp"
#include "detrkit/selftest.hpp"

namespace {

using namespace detrkit;

// precedence: --seed flag, then DETRK_SEED, then the config value
std::uint64_t resolve_seed(std::uint64_t config_seed, bool flag_given, std::uint64_t flag_seed) {
    std::uint64_t seed = config_seed;
    if (const char* env = std::getenv("DETRK_SEED")) {
        try {
            std::size_t used = 0;
            seed = std::stoull(env, &used);
            if (env[used] != '\0') throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw SchemaError("DETRK_SEED: expected a nonnegative integer, got '" +
                              std::string(env) + "'");
        }
    }
    if (flag_given) seed = flag_seed;
    return seed;
}

PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    return config_from_json(read_json_file(path), path);
}

int run_gen(const std::string& out, const std::string& gt_out, std::size_t count,
            std::size_t nodules, std::size_t image_size, std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.image_size = image_size;
    cfg.nodule_count = nodules;
    cfg.seed = seed;
    cfg.validate();
    std::vector<SyntheticScene> scenes;
    std::vector<GroundTruth> gts;
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, i));
        scenes.push_back(gen_synthetic_scene(cfg, rng, "scene_" + std::to_string(i)));
        gts.insert(gts.end(), scenes.back().gts.begin(), scenes.back().gts.end());
    }
    write_json_file(out, scenes_to_json(scenes));
    if (!gt_out.empty()) write_json_file(gt_out, ground_truth_to_json(gts));
    std::cout << "wrote " << count << " scenes to " << out;
    if (!gt_out.empty()) std::cout << " and " << gts.size() << " ground truths to " << gt_out;
    std::cout << "\n";
    return 0;
}

int run_forward(const std::string& config_path, const std::string& scenes_path,
                const std::string& out, bool seed_given, std::uint64_t seed_flag,
                bool temp_given, double temp_flag) {
    PipelineConfig cfg = load_config(config_path);
    cfg.seed = resolve_seed(cfg.seed, seed_given, seed_flag);
    if (temp_given) cfg.posenc_temperature = temp_flag;
    const std::vector<SyntheticScene> scenes =
        scenes_from_json(read_json_file(scenes_path), scenes_path);
    const PipelineParams params = make_params(cfg);
    std::vector<Detection> dets;
    for (const SyntheticScene& scene : scenes) {
        const ForwardResult fwd = toy_forward(scene, cfg, params);
        dets.insert(dets.end(), fwd.detections.begin(), fwd.detections.end());
    }
    write_json_file(out, detections_to_json(dets));
    std::cout << "ran " << scenes.size() << " scenes, wrote " << dets.size() << " detections to "
              << out << "\n";
    return 0;
}

int run_eval(const std::string& det_path, const std::string& gt_path, const std::string& out) {
    const auto dets = detections_from_json(read_json_file(det_path), det_path);
    const auto gts = ground_truth_from_json(read_json_file(gt_path), gt_path);
    const EvalReport report = map_range(dets, gts);
    std::cout << report_table(report);
    if (!out.empty()) write_json_file(out, report_to_json(report));
    return 0;
}

int run_loss(const std::string& det_path, const std::string& gt_path,
             const std::string& config_path) {
    const PipelineConfig cfg = load_config(config_path);
    const auto dets = detections_from_json(read_json_file(det_path), det_path);
    const auto gts = ground_truth_from_json(read_json_file(gt_path), gt_path);

    std::map<std::string, std::pair<std::vector<Prediction>, std::vector<BoundingBox>>> images;
    for (const auto& d : dets) images[d.image_id].first.push_back({d.box, d.score});
    for (const auto& g : gts) images[g.image_id].second.push_back(g.box);

    double total = 0.0;
    for (const auto& [image, data] : images) {
        const SetLossResult r = set_loss(data.first, data.second, cfg.loss_weights);
        total += r.loss;
        std::cout << image << ": loss " << r.loss << ", matched";
        for (const auto& [pi, gi] : r.assignment.pairs)
            std::cout << " (" << pi << "->" << gi << ")";
        if (r.assignment.pairs.empty()) std::cout << " none";
        std::cout << ", " << r.assignment.unmatched_predictions.size() << " background\n";
    }
    std::cout << "total set loss: " << total << "\n";
    return 0;
}

template <typename F>
double time_ms(std::size_t reps, F&& fn) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < reps; ++i) fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() /
           static_cast<double>(reps);
}

int run_bench() {
    Rng rng(1);
    std::cout.setf(std::ios::fixed);
    std::cout.precision(3);

    const Tensor feat = Tensor::random({64, 32, 32}, rng, 1.0);
    const FrequencyAssignment fa = default_assignment(16, 32, 32);
    std::cout << "multi_spectral_compress 64x32x32, 16 groups : "
              << time_ms(20, [&] { multi_spectral_compress(feat, fa); }) << " ms\n";

    ScDownParams sd;
    sd.pointwise = Tensor::random({64, 64}, rng, 0.2);
    sd.depthwise = Tensor::random({64, 3, 3}, rng, 0.2);
    std::cout << "sc_down 64x64x64                            : "
              << time_ms(10, [&] { sc_down(Tensor::random({64, 64, 64}, rng, 1.0), sd); })
              << " ms\n";

    const MsdaParams mp = MsdaParams::random(8, 4, 4, 64, rng, 0.1);
    PyramidLevels pyr;
    for (std::size_t side : {24u, 12u, 6u, 3u}) pyr.push_back(Tensor::random({64, side, side}, rng, 1.0));
    const Tensor q = Tensor::random({64}, rng, 1.0);
    std::cout << "ms_deform_attn d=64 H=8 L=4 K=4 (per query) : "
              << time_ms(2000, [&] { ms_deform_attn(q, ReferencePoint(0.4, 0.6), pyr, mp); })
              << " ms\n";
    const Tensor up = Tensor::random({64}, rng, 1.0);
    std::cout << "ms_deform_attn_grad (per query)             : "
              << time_ms(200, [&] { ms_deform_attn_grad(q, ReferencePoint(0.4, 0.6), pyr, mp, up); })
              << " ms\n";

    Tensor cost = Tensor::random({100, 100}, rng, 5.0);
    std::cout << "hungarian_match 100x100                     : "
              << time_ms(20, [&] { hungarian_match(cost); }) << " ms\n";

    std::vector<LabeledDetection> labeled;
    for (std::size_t i = 0; i < 100000; ++i)
        labeled.push_back({rng.uniform01(), i, rng.bernoulli(0.4)});
    std::cout << "average_precision over 100k detections      : "
              << time_ms(5, [&] { average_precision(labeled, 40000); }) << " ms\n";

    PipelineConfig cfg;
    Rng srng(7);
    const SyntheticScene scene = gen_synthetic_scene(cfg, srng, "bench");
    const PipelineParams params = make_params(cfg);
    std::cout << "toy_forward default config, one scene       : "
              << time_ms(1, [&] { toy_forward(scene, cfg, params); }) << " ms\n";
    return 0;
}

int run_selftest() {
    const std::vector<selftest::CheckResult> results = selftest::run_all();
    bool ok = true;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        std::cout << (r.pass ? "PASS" : "FAIL") << "  [" << i + 1 << "/" << results.size() << "] "
                  << r.name;
        if (!r.detail.empty()) std::cout << " -- " << r.detail;
        std::cout << "\n";
        ok = ok && r.pass;
    }
    std::cout << (ok ? "all suites passed" : "selftest FAILED") << "\n";
    return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale detection-transformer toolkit on synthetic nodule scenes"};
    app.require_subcommand(1);

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate synthetic scenes");
    std::size_t gen_count = 10, gen_nodules = 3, gen_size = 48;
    std::uint64_t gen_seed = 0;
    std::string gen_out, gen_gt_out;
    gen->add_option("--count", gen_count, "number of scenes");
    gen->add_option("--out", gen_out, "output scenes JSON")->required();
    gen->add_option("--gt-out", gen_gt_out, "also write ground truth JSON");
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--nodules", gen_nodules, "nodules per scene");
    gen->add_option("--image-size", gen_size, "square image extent (>= 32)");

    // forward
    auto* fwd = app.add_subcommand("forward", "run the toy pipeline over scenes");
    std::string fwd_config, fwd_scenes, fwd_out;
    std::uint64_t fwd_seed = 0;
    double fwd_temp = 20.0;
    fwd->add_option("--config", fwd_config, "pipeline config JSON");
    fwd->add_option("--scenes", fwd_scenes, "input scenes JSON")->required();
    fwd->add_option("--out", fwd_out, "output detections JSON")->required();
    auto* fwd_seed_opt = fwd->add_option("--seed", fwd_seed, "override config seed");
    auto* fwd_temp_opt =
        fwd->add_option("--temperature", fwd_temp, "override positional encoding temperature");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate detections against ground truth");
    std::string ev_dets, ev_gts, ev_out;
    ev->add_option("--detections", ev_dets, "detections JSON")->required();
    ev->add_option("--groundtruth", ev_gts, "ground truth JSON")->required();
    ev->add_option("--out", ev_out, "write the metric report JSON");

    // loss
    auto* ls = app.add_subcommand("loss", "matched set loss and assignment per image");
    std::string ls_dets, ls_gts, ls_config;
    ls->add_option("--detections", ls_dets, "detections JSON")->required();
    ls->add_option("--groundtruth", ls_gts, "ground truth JSON")->required();
    ls->add_option("--config", ls_config, "pipeline config JSON (loss weights)");

    auto* bench = app.add_subcommand("bench", "time each kernel on fixed sizes");
    auto* st = app.add_subcommand("selftest", "run every oracle and invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            const std::uint64_t seed = resolve_seed(gen_seed, gen_seed_opt->count() > 0, gen_seed);
            return run_gen(gen_out, gen_gt_out, gen_count, gen_nodules, gen_size, seed);
        }
        if (fwd->parsed()) return run_forward(fwd_config, fwd_scenes, fwd_out,
                                              fwd_seed_opt->count() > 0, fwd_seed,
                                              fwd_temp_opt->count() > 0, fwd_temp);
        if (ev->parsed()) return run_eval(ev_dets, ev_gts, ev_out);
        if (ls->parsed()) return run_loss(ls_dets, ls_gts, ls_config);
        if (bench->parsed()) return run_bench();
        if (st->parsed()) return run_selftest();
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
