#ifndef FEDINV_OPTIM_HPP
#define FEDINV_OPTIM_HPP

#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fedinv/tensor.hpp"

namespace fedinv {

/// Objective closure: maps candidate tensors to (value, gradient per tensor).
/// Gradients must match the candidate shapes. The closure owns whatever graph
/// machinery it needs; the optimizers only see values.
using Objective =
    std::function<std::pair<double, std::vector<Tensor>>(const std::vector<Tensor>&)>;

/// Invoked once for the initial point and once per accepted step.
using IterationCallback = std::function<void(int iteration, double f, const std::vector<Tensor>&)>;

struct LbfgsConfig {
    int history = 10;
    int max_iterations = 100;
    double c1 = 1e-4;                 // sufficient decrease
    double c2 = 0.9;                  // curvature
    double grad_tolerance = 1e-7;     // stop when ||g||_2 <= this
    int max_line_search_steps = 25;   // objective evaluations per search
    double stop_below = -std::numeric_limits<double>::infinity();
};

struct AdamConfig {
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int max_iterations = 1000;
    double grad_tolerance = 0.0;      // 0 disables the gradient stop
    double stop_below = -std::numeric_limits<double>::infinity();
};

enum class StopReason { converged, max_iterations, line_search_failed, early_stop };

const char* stop_reason_name(StopReason r);

/// Line-search diagnostics for one accepted L-BFGS step: phi(0), phi'(0),
/// phi(alpha), phi'(alpha) along the accepted direction.
struct StepInfo {
    double alpha;
    double f0;
    double g0d;
    double f1;
    double g1d;
};

struct MinimizeResult {
    std::vector<Tensor> x;
    std::vector<double> trace;  // trace[0] is f(x0), then one entry per accepted step
    StopReason reason = StopReason::max_iterations;
    int iterations = 0;
    double final_objective = 0.0;
    std::vector<StepInfo> steps;  // L-BFGS only
};

/// Limited-memory BFGS with a strong-Wolfe line search. Curvature pairs with
/// y.s <= 1e-10 are skipped. Non-finite objective values at trial points are
/// treated as +inf and stepped over by the search; a non-finite value at x0
/// raises NonFiniteError.
MinimizeResult lbfgs_minimize(const Objective& objective, std::vector<Tensor> x0,
                              const LbfgsConfig& config = {},
                              const IterationCallback& callback = {});

MinimizeResult adam_minimize(const Objective& objective, std::vector<Tensor> x0,
                             const AdamConfig& config = {},
                             const IterationCallback& callback = {});

}  // namespace fedinv

#endif
