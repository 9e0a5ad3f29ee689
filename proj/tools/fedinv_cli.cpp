#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "fedinv/experiment.hpp"
#include "fedinv/image_io.hpp"
#include "fedinv/rng.hpp"

namespace fs = std::filesystem;
using namespace fedinv;

namespace {

void cmd_run(const std::string& config_path, const CLI::Option* seed_opt, std::uint64_t seed) {
    ExperimentConfig cfg = parse_config_file(config_path);
    RunOverrides ov;
    if (seed_opt->count()) ov.seed = seed;
    ExperimentResult res = run_experiment(cfg, ov);
    std::printf("%-8s %-12s %-5s %-8s %-12s %-12s %s\n", "method", "noise_level", "n", "asr",
                "ssim(succ)", "mse(succ)", "sec/img");
    for (const CellSummary& c : res.summary) {
        std::printf("%-8s %-12g %-5d %-8.3f ", c.method.c_str(), c.noise_level, c.stats.n_samples,
                    c.stats.asr);
        if (c.stats.mean_ssim_success)
            std::printf("%-12.4f ", *c.stats.mean_ssim_success);
        else
            std::printf("%-12s ", "-");
        if (c.stats.mean_mse_success)
            std::printf("%-12.3g ", *c.stats.mean_mse_success);
        else
            std::printf("%-12s ", "-");
        std::printf("%.2f\n", c.mean_seconds);
    }
    std::printf("wrote %zu records to %s\n", res.records.size(), res.output_dir.string().c_str());
}

void cmd_attack_one(const std::string& image_path, const std::string& config_path, int label,
                    const CLI::Option* seed_opt, std::uint64_t seed) {
    ExperimentConfig cfg = parse_config_file(config_path);
    if (seed_opt->count()) cfg.output.seed = seed;
    if (label < 0 || label >= cfg.data.classes)
        throw Error("--label must be in [0, " + std::to_string(cfg.data.classes) + ")");

    std::string out_dir = cfg.output.directory;
    if (const char* env = std::getenv(kOutputDirEnvVar); env && *env) out_dir = env;
    fs::path dir = fs::path(out_dir) / "attack_one";
    fs::create_directories(dir);

    Tensor img = read_image(image_path);
    img = resize_bilinear(img, cfg.data.image_size, cfg.data.image_size);
    // single-image mode trusts the configured channel statistics
    DatasetStats stats{cfg.data.mean, cfg.data.stddev};

    ModelSpec spec = make_model(cfg, cfg.data.classes);
    Parameters params = init_params(
        spec, mix_seed(cfg.output.seed, 0x6d6f64656cULL),
        cfg.model.init == "uniform" ? InitScheme::uniform : InitScheme::kaiming,
        cfg.model.init_bound);

    Example victim{normalize(img, stats), label};
    ClientUpdate target = client_update(spec, params, {victim});

    DefenseConfig dc;
    dc.mechanism = mechanism_from_name(cfg.defense.mechanism);
    dc.noise_level = cfg.defense.noise_levels.front();
    dc.base_unit = cfg.defense.noise_unit;
    dc.keep_ratio = cfg.defense.keep_ratio;
    dc.seed = mix_seed(cfg.output.seed, 0x646566ULL);
    ClientUpdate defended = perturb(target, dc);

    AttackMethod method = attack_method_from_name(cfg.attack.methods.front());
    AttackConfig ac =
        make_attack_config(cfg, method, mix_seed(cfg.output.seed, 0x61747400ULL), label);
    ImageSample ground_truth{img, label, image_path};
    AttackResult res = run_attack(spec, params, defended, ac, stats, &ground_truth);

    write_png(dir / "original.png", img);
    write_png(dir / "recon.png", res.reconstruction);
    for (const auto& [iter, snap] : res.snapshots) {
        char name[32];
        std::snprintf(name, sizeof name, "iter%06d.png", iter);
        write_png(dir / name, snap);
    }

    std::printf("method=%s label=%d iterations=%d stop=%s objective=%.6g\n",
                attack_method_name(method), res.label, res.iterations,
                stop_reason_name(res.stop_reason), res.best_objective);
    std::printf("ssim=%.4f mse=%.6g seconds=%.2f\n", res.final_ssim.value_or(0.0),
                res.final_mse.value_or(0.0), res.wall_seconds);
    std::printf("wrote %s (%zu snapshots)\n", dir.string().c_str(), res.snapshots.size());
}

void cmd_stats(const std::string& data_dir) {
    LoadResult lr = load_image_dir(data_dir);
    DatasetStats st = compute_stats(lr.samples);
    std::printf("samples: %zu\n", lr.samples.size());
    std::printf("classes:");
    for (const std::string& c : lr.class_names) std::printf(" %s", c.c_str());
    std::printf("\n");
    if (lr.warnings) std::printf("warnings: %d unreadable files skipped\n", lr.warnings);
    std::printf("mean: %.6f %.6f %.6f\n", st.mean[0], st.mean[1], st.mean[2]);
    std::printf("std: %.6f %.6f %.6f\n", st.stddev[0], st.stddev[1], st.stddev[2]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedinv: federated-learning gradient-inversion simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string image_path;
    std::string data_dir;
    std::uint64_t seed = 0;
    int label = 0;

    CLI::App* run = app.add_subcommand("run", "run the configured attack/defense sweep");
    run->add_option("config", config_path, "experiment config file")->required();
    CLI::Option* run_seed = run->add_option("--seed", seed, "override the config seed");

    CLI::App* one = app.add_subcommand("attack-one", "invert one image and dump snapshots");
    one->add_option("image", image_path, "victim image (png/pgm/ppm)")->required();
    one->add_option("config", config_path, "experiment config file")->required();
    one->add_option("--label", label, "class label the victim trains with (default 0)");
    CLI::Option* one_seed = one->add_option("--seed", seed, "override the config seed");

    CLI::App* stats = app.add_subcommand("stats", "per-channel mean/std of an image directory");
    stats->add_option("data-dir", data_dir, "directory with one subdirectory per class")
        ->required();

    CLI::App* validate = app.add_subcommand("validate", "check a config and exit");
    validate->add_option("config", config_path, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            cmd_run(config_path, run_seed, seed);
        } else if (one->parsed()) {
            cmd_attack_one(image_path, config_path, label, one_seed, seed);
        } else if (stats->parsed()) {
            cmd_stats(data_dir);
        } else if (validate->parsed()) {
            parse_config_file(config_path);
            std::printf("OK\n");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
