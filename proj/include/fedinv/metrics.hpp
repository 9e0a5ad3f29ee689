#ifndef FEDINV_METRICS_HPP
#define FEDINV_METRICS_HPP

#include <optional>
#include <vector>

#include "fedinv/tensor.hpp"

namespace fedinv {

/// Mean squared error over all elements; shapes must match.
double mse(const Tensor& a, const Tensor& b);

/// Mean local SSIM between two CxHxW images, averaged over channels and all
/// valid window positions. Uses the 11x11 Gaussian window (sigma 1.5) with
/// C1=(0.01 L)^2, C2=(0.03 L)^2; images smaller than the window fall back to
/// a uniform min(H,W) window. Population (biased) moments.
double ssim(const Tensor& a, const Tensor& b, double dynamic_range = 1.0);

/// Fraction of values at or above the success threshold.
double attack_success_rate(const std::vector<double>& ssim_values, double threshold = 0.9);

struct ScorePair {
    double ssim;
    double mse;
};

struct SuccessSummary {
    int n_samples = 0;
    int n_success = 0;
    double asr = 0.0;
    std::optional<double> mean_ssim_success;  // empty when nothing succeeded
    std::optional<double> mean_mse_success;
};

/// ASR plus means of SSIM/MSE restricted to successful reconstructions
/// (ssim >= threshold, inclusive).
SuccessSummary summarize_successful(const std::vector<ScorePair>& scores,
                                    double threshold = 0.9);

}  // namespace fedinv

#endif
