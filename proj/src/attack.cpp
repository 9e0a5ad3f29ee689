#include "fedinv/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "fedinv/metrics.hpp"
#include "fedinv/rng.hpp"

namespace fedinv {

const char* attack_method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::dlg: return "dlg";
        case AttackMethod::idlg: return "idlg";
        case AttackMethod::cpl: return "cpl";
        case AttackMethod::gradinv: return "gradinv";
    }
    return "?";
}

AttackMethod attack_method_from_name(const std::string& name) {
    if (name == "dlg") return AttackMethod::dlg;
    if (name == "idlg") return AttackMethod::idlg;
    if (name == "cpl") return AttackMethod::cpl;
    if (name == "gradinv") return AttackMethod::gradinv;
    throw Error("unknown attack method: " + name);
}

AttackConfig attack_preset(AttackMethod method) {
    AttackConfig cfg;
    cfg.method = method;
    switch (method) {
        case AttackMethod::dlg:
            cfg.label_mode = LabelMode::optimize_soft;
            cfg.init = DummyInit::random_normal;
            cfg.max_iterations = 300;
            break;
        case AttackMethod::idlg:
            cfg.label_mode = LabelMode::infer_analytic;
            cfg.init = DummyInit::random_normal;
            cfg.max_iterations = 300;
            break;
        case AttackMethod::cpl:
            cfg.label_mode = LabelMode::infer_analytic;
            cfg.init = DummyInit::constant_half;
            cfg.max_iterations = 300;
            cfg.early_stop_objective = 1e-10;
            break;
        case AttackMethod::gradinv:
            cfg.label_mode = LabelMode::infer_analytic;
            cfg.init = DummyInit::random_normal;
            cfg.max_iterations = 24000;
            cfg.tv_weight = 1e-6;
            cfg.adam.learning_rate = 0.1;
            break;
    }
    return cfg;
}

int infer_label(const ModelSpec& spec, const std::vector<Tensor>& target_gradients) {
    if (spec.layers.empty() || !std::holds_alternative<DenseSpec>(spec.layers.back()))
        throw Error("infer_label: model head is not a dense layer");
    // bias gradient of the head is the last parameter tensor
    if (target_gradients.empty()) throw Error("infer_label: no gradients");
    const Tensor& gb = target_gradients.back();
    if (gb.shape() != Shape{spec.classes})
        throw ShapeError("infer_label: head bias gradient has shape " + shape_str(gb.shape()) +
                         ", expected [" + std::to_string(spec.classes) + "]");
    const auto& d = gb.data();
    int best = 0;
    for (std::size_t i = 1; i < d.size(); ++i)
        if (d[i] < d[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    if (!(d[static_cast<std::size_t>(best)] < 0.0))
        throw Error("infer_label: no strictly negative bias-gradient entry; label is ambiguous");
    return best;
}

Tensor total_variation(const Tensor& img) {
    if (img.shape().size() != 3)
        throw ShapeError("total_variation: CxHxW tensor required, got " + shape_str(img.shape()));
    int c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    if (h < 2 || w < 2) throw ShapeError("total_variation: image too small");
    Tensor dx = sub(slice(img, {0, 0, 1}, {c, h, w - 1}), slice(img, {0, 0, 0}, {c, h, w - 1}));
    Tensor dy = sub(slice(img, {0, 1, 0}, {c, h - 1, w}), slice(img, {0, 0, 0}, {c, h - 1, w}));
    Tensor hx = sum(sqrt(add_scalar(mul(dx, dx), 1e-12)));
    Tensor vy = sum(sqrt(add_scalar(mul(dy, dy), 1e-12)));
    return add(hx, vy);
}

namespace {

struct LabelPlan {
    LabelMode mode;
    int fixed_label = -1;  // infer_analytic / known
};

LabelPlan resolve_label(const ModelSpec& spec, const ClientUpdate& target,
                        const AttackConfig& cfg) {
    LabelPlan plan{cfg.label_mode, -1};
    switch (cfg.label_mode) {
        case LabelMode::optimize_soft:
            break;
        case LabelMode::infer_analytic:
            plan.fixed_label = infer_label(spec, target.gradients);
            break;
        case LabelMode::known:
            if (cfg.known_label < 0 || cfg.known_label >= spec.classes)
                throw Error("attack: known_label outside [0, classes)");
            plan.fixed_label = cfg.known_label;
            break;
    }
    return plan;
}

void check_target(const ModelSpec& spec, const Parameters& params, const ClientUpdate& target) {
    if (target.gradients.size() != params.tensors.size())
        throw Error("attack: target update has " + std::to_string(target.gradients.size()) +
                    " tensors, model has " + std::to_string(params.tensors.size()));
    for (std::size_t i = 0; i < target.gradients.size(); ++i)
        if (target.gradients[i].shape() != params.tensors[i].second.shape())
            throw ShapeError("attack: target gradient " + std::to_string(i) +
                             " shape mismatch with model parameters");
    (void)spec;
}

std::vector<Tensor> initial_vars(const ModelSpec& spec, const AttackConfig& cfg,
                                 const LabelPlan& plan, const DatasetStats& stats,
                                 std::uint64_t restart_seed) {
    Rng rng(restart_seed);
    std::vector<double> x0(static_cast<std::size_t>(shape_numel(spec.input_shape)));
    if (cfg.init_override) {
        if (cfg.init_override->size() != x0.size())
            throw Error("attack: init_override size mismatch");
        x0 = *cfg.init_override;
    } else if (cfg.init == DummyInit::random_normal) {
        for (double& v : x0) v = rng.normal();
    } else {
        // mid-gray in image space, mapped into the normalized domain
        x0 = normalize(Tensor::full(spec.input_shape, 0.5), stats).data();
    }
    std::vector<Tensor> vars;
    vars.emplace_back(spec.input_shape, std::move(x0));
    if (plan.mode == LabelMode::optimize_soft) {
        std::vector<double> y0(static_cast<std::size_t>(spec.classes));
        for (double& v : y0) v = rng.normal();
        vars.emplace_back(Shape{spec.classes}, std::move(y0));
    }
    return vars;
}

// Shared state for one optimization run.
struct RunState {
    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<double> best_x;
    std::vector<double> best_y;
    std::vector<std::pair<int, Tensor>> snapshots;
};

Tensor to_image(const std::vector<double>& raw, const Shape& shape, const DatasetStats& stats) {
    return clamp01(denormalize(Tensor(shape, raw), stats));
}

}  // namespace

AttackResult gradient_matching_attack(const ModelSpec& spec, const Parameters& params,
                                      const ClientUpdate& target, const AttackConfig& config,
                                      const DatasetStats& stats,
                                      const ImageSample* ground_truth) {
    check_target(spec, params, target);
    LabelPlan plan = resolve_label(spec, target, config);
    auto t_start = std::chrono::steady_clock::now();

    auto objective = [&](const std::vector<Tensor>& vars)
        -> std::pair<double, std::vector<Tensor>> {
        Graph g;
        std::vector<Tensor> ps = register_params(g, params);
        Tensor x = g.leaf(vars[0]);
        std::vector<Tensor> opt{x};
        Tensor logits = forward(spec, ps, x);
        Tensor loss;
        if (plan.mode == LabelMode::optimize_soft) {
            Tensor yl = g.leaf(vars[1]);
            opt.push_back(yl);
            loss = softmax_cross_entropy(logits, softmax(yl));
        } else {
            loss = softmax_cross_entropy(logits, plan.fixed_label);
        }
        std::vector<Tensor> gw = gradient(loss, ps, /*create_graph=*/true);
        Tensor obj;
        for (std::size_t i = 0; i < gw.size(); ++i) {
            Tensor d = sub(gw[i], target.gradients[i].detach());
            Tensor term = sum(mul(d, d));
            obj = i == 0 ? term : add(obj, term);
        }
        if (config.tv_weight != 0.0) obj = add(obj, scale(total_variation(x), config.tv_weight));
        double value = obj.scalar();
        std::vector<Tensor> gx = gradient(obj, opt);
        for (Tensor& t : gx) t = t.detach();
        return {value, std::move(gx)};
    };

    AttackResult best_res;
    RunState best_state;
    int restarts = std::max(1, config.restarts);
    for (int r = 0; r < restarts; ++r) {
        std::vector<Tensor> vars =
            initial_vars(spec, config, plan, stats,
                         mix_seed(config.seed, static_cast<std::uint64_t>(r)));
        RunState state;
        auto callback = [&](int iter, double f, const std::vector<Tensor>& xs) {
            if (f < state.best_obj) {
                state.best_obj = f;
                state.best_x = xs[0].data();
                if (xs.size() > 1) state.best_y = xs[1].data();
            }
            if (config.snapshot_stride > 0 && iter % config.snapshot_stride == 0)
                state.snapshots.emplace_back(iter,
                                             to_image(xs[0].data(), spec.input_shape, stats));
        };
        LbfgsConfig lcfg = config.lbfgs;
        lcfg.max_iterations = config.max_iterations;
        if (config.early_stop_objective >= 0.0) lcfg.stop_below = config.early_stop_objective;
        MinimizeResult mr = lbfgs_minimize(objective, std::move(vars), lcfg, callback);

        if (r == 0 || state.best_obj < best_state.best_obj) {
            best_state = std::move(state);
            best_res.trace = std::move(mr.trace);
            best_res.stop_reason = mr.reason;
            best_res.iterations = mr.iterations;
            best_res.final_objective = mr.final_objective;
        }
    }

    best_res.restarts_run = restarts;
    best_res.best_objective = best_state.best_obj;
    best_res.reconstruction_raw = Tensor(spec.input_shape, best_state.best_x);
    best_res.reconstruction = to_image(best_state.best_x, spec.input_shape, stats);
    best_res.snapshots = std::move(best_state.snapshots);
    if (plan.mode == LabelMode::optimize_soft) {
        Tensor probs = softmax(Tensor({spec.classes}, best_state.best_y));
        const auto& pd = probs.data();
        best_res.label_distribution = pd;
        best_res.label =
            static_cast<int>(std::max_element(pd.begin(), pd.end()) - pd.begin());
    } else {
        best_res.label = plan.fixed_label;
        best_res.label_distribution.assign(static_cast<std::size_t>(spec.classes), 0.0);
        best_res.label_distribution[static_cast<std::size_t>(plan.fixed_label)] = 1.0;
    }
    if (ground_truth) {
        best_res.final_mse = mse(best_res.reconstruction, ground_truth->pixels);
        best_res.final_ssim = ssim(best_res.reconstruction, ground_truth->pixels);
    }
    best_res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return best_res;
}

AttackResult cosine_inversion_attack(const ModelSpec& spec, const Parameters& params,
                                     const ClientUpdate& target, const AttackConfig& config,
                                     const DatasetStats& stats, const ImageSample* ground_truth) {
    check_target(spec, params, target);
    LabelPlan plan = resolve_label(spec, target, config);
    auto t_start = std::chrono::steady_clock::now();

    // Precompute the unit-normalized target with the same reduction order
    // the graph uses: per-tensor sequential square sums, chain-added, then a
    // multiplication by the reciprocal norm.
    double tnorm2 = 0.0;
    for (const Tensor& t : target.gradients) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        tnorm2 = tnorm2 + s;
    }
    if (tnorm2 == 0.0)
        throw Error("cosine_inversion_attack: target gradient norm is zero; cosine undefined");
    double trec = 1.0 / std::sqrt(tnorm2);
    std::vector<Tensor> unit_target;
    unit_target.reserve(target.gradients.size());
    for (const Tensor& t : target.gradients) {
        std::vector<double> d = t.data();
        for (double& v : d) v = v * trec;
        unit_target.emplace_back(t.shape(), std::move(d));
    }

    // 1 - cos(g', g) computed as ||g'/|g'| - g/|g|||^2 / 2; identical
    // algebraically, and exactly zero when the gradients coincide.
    auto objective = [&](const std::vector<Tensor>& vars)
        -> std::pair<double, std::vector<Tensor>> {
        Graph g;
        std::vector<Tensor> ps = register_params(g, params);
        Tensor x = g.leaf(vars[0]);
        std::vector<Tensor> opt{x};
        Tensor logits = forward(spec, ps, x);
        Tensor loss;
        if (plan.mode == LabelMode::optimize_soft) {
            Tensor yl = g.leaf(vars[1]);
            opt.push_back(yl);
            loss = softmax_cross_entropy(logits, softmax(yl));
        } else {
            loss = softmax_cross_entropy(logits, plan.fixed_label);
        }
        std::vector<Tensor> gw = gradient(loss, ps, /*create_graph=*/true);
        Tensor norm2;
        for (std::size_t i = 0; i < gw.size(); ++i) {
            Tensor s = sum(mul(gw[i], gw[i]));
            norm2 = i == 0 ? s : add(norm2, s);
        }
        Tensor rec = div(Tensor::scalar_value(1.0), sqrt(norm2));
        Tensor dist;
        for (std::size_t i = 0; i < gw.size(); ++i) {
            Tensor d = sub(smul(gw[i], rec), unit_target[i]);
            Tensor term = sum(mul(d, d));
            dist = i == 0 ? term : add(dist, term);
        }
        Tensor obj = scale(dist, 0.5);
        if (config.tv_weight != 0.0) obj = add(obj, scale(total_variation(x), config.tv_weight));
        double value = obj.scalar();
        std::vector<Tensor> gx = gradient(obj, opt);
        for (Tensor& t : gx) t = t.detach();
        return {value, std::move(gx)};
    };

    AttackResult best_res;
    RunState best_state;
    int restarts = std::max(1, config.restarts);
    for (int r = 0; r < restarts; ++r) {
        std::vector<Tensor> vars =
            initial_vars(spec, config, plan, stats,
                         mix_seed(config.seed, static_cast<std::uint64_t>(r)));
        RunState state;
        auto callback = [&](int iter, double f, const std::vector<Tensor>& xs) {
            if (f < state.best_obj) {
                state.best_obj = f;
                state.best_x = xs[0].data();
                if (xs.size() > 1) state.best_y = xs[1].data();
            }
            if (config.snapshot_stride > 0 && iter % config.snapshot_stride == 0)
                state.snapshots.emplace_back(iter,
                                             to_image(xs[0].data(), spec.input_shape, stats));
        };
        AdamConfig acfg = config.adam;
        acfg.max_iterations = config.max_iterations;
        if (config.early_stop_objective >= 0.0) acfg.stop_below = config.early_stop_objective;
        MinimizeResult mr = adam_minimize(objective, std::move(vars), acfg, callback);

        if (r == 0 || state.best_obj < best_state.best_obj) {
            best_state = std::move(state);
            best_res.trace = std::move(mr.trace);
            best_res.stop_reason = mr.reason;
            best_res.iterations = mr.iterations;
            best_res.final_objective = mr.final_objective;
        }
    }

    best_res.restarts_run = restarts;
    best_res.best_objective = best_state.best_obj;
    best_res.reconstruction_raw = Tensor(spec.input_shape, best_state.best_x);
    best_res.reconstruction = to_image(best_state.best_x, spec.input_shape, stats);
    best_res.snapshots = std::move(best_state.snapshots);
    if (plan.mode == LabelMode::optimize_soft) {
        Tensor probs = softmax(Tensor({spec.classes}, best_state.best_y));
        const auto& pd = probs.data();
        best_res.label_distribution = pd;
        best_res.label =
            static_cast<int>(std::max_element(pd.begin(), pd.end()) - pd.begin());
    } else {
        best_res.label = plan.fixed_label;
        best_res.label_distribution.assign(static_cast<std::size_t>(spec.classes), 0.0);
        best_res.label_distribution[static_cast<std::size_t>(plan.fixed_label)] = 1.0;
    }
    if (ground_truth) {
        best_res.final_mse = mse(best_res.reconstruction, ground_truth->pixels);
        best_res.final_ssim = ssim(best_res.reconstruction, ground_truth->pixels);
    }
    best_res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return best_res;
}

AttackResult run_attack(const ModelSpec& spec, const Parameters& params,
                        const ClientUpdate& target, const AttackConfig& config,
                        const DatasetStats& stats, const ImageSample* ground_truth) {
    if (config.method == AttackMethod::gradinv)
        return cosine_inversion_attack(spec, params, target, config, stats, ground_truth);
    return gradient_matching_attack(spec, params, target, config, stats, ground_truth);
}

}  // namespace fedinv
