#ifndef FEDINV_ATTACK_HPP
#define FEDINV_ATTACK_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedinv/data.hpp"
#include "fedinv/federation.hpp"
#include "fedinv/model.hpp"
#include "fedinv/optim.hpp"

namespace fedinv {

enum class AttackMethod { dlg, idlg, cpl, gradinv };

const char* attack_method_name(AttackMethod m);
AttackMethod attack_method_from_name(const std::string& name);

enum class LabelMode { optimize_soft, infer_analytic, known };

enum class DummyInit { random_normal, constant_half };

struct AttackConfig {
    AttackMethod method = AttackMethod::dlg;
    LabelMode label_mode = LabelMode::optimize_soft;
    DummyInit init = DummyInit::random_normal;
    int max_iterations = 300;
    double tv_weight = 0.0;
    int restarts = 1;
    std::uint64_t seed = 0;
    int snapshot_stride = 0;  // 0 disables snapshots
    int known_label = -1;     // required when label_mode == known
    /// Stop as soon as the objective drops below this (CPL-style early exit).
    double early_stop_objective = -1.0;  // negative disables
    /// Test hook: start from these normalized-space pixel values instead of
    /// the seeded dummy init.
    std::optional<std::vector<double>> init_override;
    LbfgsConfig lbfgs;
    AdamConfig adam;
};

/// Per-method defaults: dlg (random init, soft-label optimization), idlg
/// (analytic label), cpl (constant 0.5 init, analytic label, early stop at
/// 1e-10), gradinv (Adam on the cosine objective, 24000 iterations, TV 1e-6).
AttackConfig attack_preset(AttackMethod method);

struct AttackResult {
    Tensor reconstruction;       // {C,H,W}, image space, clamped to [0,1]
    Tensor reconstruction_raw;   // normalized space, unclamped
    int label = -1;
    std::vector<double> label_distribution;
    std::vector<double> trace;   // objective per accepted step, trace[0] at init
    std::vector<std::pair<int, Tensor>> snapshots;  // (iteration, [0,1] image)
    StopReason stop_reason = StopReason::max_iterations;
    int iterations = 0;
    int restarts_run = 0;
    double final_objective = 0.0;
    double best_objective = 0.0;
    double wall_seconds = 0.0;
    std::optional<double> final_mse;   // vs ground truth, when provided
    std::optional<double> final_ssim;
};

/// Analytic label recovery from the sign structure of the final dense
/// layer's bias gradient: the true class is the strictly negative entry
/// (argmin under noise). No strictly negative entry is an error, as is a
/// model whose head is not a dense layer with bias.
int infer_label(const ModelSpec& spec, const std::vector<Tensor>& target_gradients);

/// Smoothed anisotropic total variation: sum of sqrt(d^2 + 1e-12) over all
/// horizontal and vertical neighbor differences, channels summed. Graph-aware.
Tensor total_variation(const Tensor& img);

/// L2 gradient-matching inversion (DLG family): minimizes
/// ||grad(L(F(x'), y')) - grad_target||^2 with L-BFGS.
AttackResult gradient_matching_attack(const ModelSpec& spec, const Parameters& params,
                                      const ClientUpdate& target, const AttackConfig& config,
                                      const DatasetStats& stats,
                                      const ImageSample* ground_truth = nullptr);

/// Cosine-similarity inversion (GradInv style): minimizes
/// 1 - <g', g> / (||g'|| ||g||) + tv_weight * TV(x') with Adam. A target with
/// zero gradient norm is an error.
AttackResult cosine_inversion_attack(const ModelSpec& spec, const Parameters& params,
                                     const ClientUpdate& target, const AttackConfig& config,
                                     const DatasetStats& stats,
                                     const ImageSample* ground_truth = nullptr);

/// Dispatches on config.method.
AttackResult run_attack(const ModelSpec& spec, const Parameters& params,
                        const ClientUpdate& target, const AttackConfig& config,
                        const DatasetStats& stats, const ImageSample* ground_truth = nullptr);

}  // namespace fedinv

#endif
