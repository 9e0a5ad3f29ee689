// End-to-end acceptance battery: ten numbered checks, one PASS/FAIL line
// each. Run without arguments for the full battery, or pass criterion
// numbers to run a subset. The exit code is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fedinv/attack.hpp"
#include "fedinv/data.hpp"
#include "fedinv/defense.hpp"
#include "fedinv/experiment.hpp"
#include "fedinv/federation.hpp"
#include "fedinv/metrics.hpp"
#include "fedinv/model.hpp"
#include "fedinv/rng.hpp"
#include "fedinv/tensor.hpp"

using namespace fedinv;
namespace fs = std::filesystem;

namespace {

struct Fail {
    std::string message;
};

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw Fail{message};
}

const DatasetStats kHalfStats{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};

double ce_loss_value(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                     int label) {
    return softmax_cross_entropy(forward_values(spec, params, x), label).scalar();
}

// |a-b| relative to max(1, |a|, |b|); the usual guarded gradcheck ratio.
double guarded_rel(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

std::vector<Tensor> plain_tensors(const Parameters& params) {
    std::vector<Tensor> out;
    out.reserve(params.tensors.size());
    for (const auto& [name, t] : params.tensors) out.push_back(t);
    return out;
}

struct TempDir {
    fs::path root;
    explicit TempDir(const std::string& tag) : root(fs::temp_directory_path() / tag) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempDir() { fs::remove_all(root); }
};

// ---------------------------------------------------------------- criterion 1

void criterion_gradients(std::string& detail) {
    const double kFirstTol = 1e-4;
    const double kSecondTol = 1e-3;
    const double kH1 = 1e-5;
    const double kH2 = 1e-4;
    const int kModels = 50;

    Rng rng(20260101);
    double worst_first = 0.0;
    double worst_second = 0.0;
    for (int m = 0; m < kModels; ++m) {
        int classes = 2 + static_cast<int>(rng.below(3));
        ModelSpec spec;
        int size;
        if (m % 2 == 0) {
            size = 4 + static_cast<int>(rng.below(3));
            int hidden = 3 + static_cast<int>(rng.below(8));
            spec = build_mlp({3, size, size}, hidden, classes);
        } else {
            size = 8;
            spec = build_cnn4({3, size, size}, classes);
        }
        InitScheme scheme = (m % 4 < 2) ? InitScheme::uniform : InitScheme::kaiming;
        Parameters params = init_params(spec, rng.next_u64(), scheme);
        std::vector<double> xv(static_cast<std::size_t>(3 * size * size));
        for (double& v : xv) v = rng.uniform(-1.5, 1.5);
        Tensor x({3, size, size}, xv);
        int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));

        Graph g;
        std::vector<Tensor> leaves = register_params(g, params);
        Tensor xin = g.leaf(x);
        Tensor loss = softmax_cross_entropy(forward(spec, leaves, xin), label);
        std::vector<Tensor> wrts = leaves;
        wrts.push_back(xin);
        std::vector<Tensor> grads = gradient(loss, wrts);

        // two probe coordinates per parameter tensor against central differences
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            const Tensor& pt = params.tensors[t].second;
            for (int probe = 0; probe < 2; ++probe) {
                auto idx = static_cast<std::int64_t>(
                    rng.below(static_cast<std::uint64_t>(pt.size())));
                auto eval = [&](double delta) {
                    Parameters shifted = params;
                    std::vector<double> vals = pt.data();
                    vals[static_cast<std::size_t>(idx)] += delta;
                    shifted.tensors[t].second = Tensor(pt.shape(), vals);
                    return ce_loss_value(spec, shifted, x, label);
                };
                double fd = (eval(kH1) - eval(-kH1)) / (2.0 * kH1);
                worst_first = std::max(worst_first, guarded_rel(grads[t][idx], fd));
            }
        }
        for (int probe = 0; probe < 3; ++probe) {
            auto idx =
                static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(x.size())));
            auto eval = [&](double delta) {
                std::vector<double> vals = x.data();
                vals[static_cast<std::size_t>(idx)] += delta;
                return ce_loss_value(spec, params, Tensor(x.shape(), vals), label);
            };
            double fd = (eval(kH1) - eval(-kH1)) / (2.0 * kH1);
            worst_first = std::max(worst_first, guarded_rel(grads.back()[idx], fd));
        }

        // second order through the sigmoid paths: d/dx of ||dL/dx||^2,
        // create_graph route against finite differences of the plain route
        if (m % 2 == 0 || m % 10 == 1) {
            std::vector<Tensor> plain = plain_tensors(params);
            auto grad_norm_sq = [&](const Tensor& xval) {
                Graph g2;
                Tensor xi = g2.leaf(xval);
                Tensor l = softmax_cross_entropy(forward(spec, plain, xi), label);
                Tensor gx = gradient(l, {xi})[0];
                double acc = 0.0;
                for (std::int64_t i = 0; i < gx.size(); ++i) acc += gx[i] * gx[i];
                return acc;
            };
            Graph g2;
            Tensor xi = g2.leaf(x);
            Tensor l = softmax_cross_entropy(forward(spec, plain, xi), label);
            Tensor gx = gradient(l, {xi}, /*create_graph=*/true)[0];
            Tensor s = sum(mul(gx, gx));
            Tensor hess_row = gradient(s, {xi})[0];
            for (int probe = 0; probe < 3; ++probe) {
                auto idx = static_cast<std::int64_t>(
                    rng.below(static_cast<std::uint64_t>(x.size())));
                std::vector<double> plus = x.data();
                std::vector<double> minus = x.data();
                plus[static_cast<std::size_t>(idx)] += kH2;
                minus[static_cast<std::size_t>(idx)] -= kH2;
                double fd = (grad_norm_sq(Tensor(x.shape(), plus)) -
                             grad_norm_sq(Tensor(x.shape(), minus))) /
                            (2.0 * kH2);
                worst_second = std::max(worst_second, guarded_rel(hess_row[idx], fd));
            }
        }
    }
    require(worst_first <= kFirstTol,
            fmt("first-order rel err %.3e exceeds %.0e", worst_first, kFirstTol));
    require(worst_second <= kSecondTol,
            fmt("second-order rel err %.3e exceeds %.0e", worst_second, kSecondTol));
    detail = fmt("%d models, max rel err %.1e first / %.1e second", kModels, worst_first,
                 worst_second);
}

// ---------------------------------------------------------------- criterion 2

void criterion_federation(std::string& detail) {
    const double kTol = 1e-12;
    const int kRounds = 20;
    const double kLr = 0.25;

    ModelSpec spec = build_mlp({3, 8, 8}, 10, 3);
    auto raw = synth_dataset(52001, 9, 3, SynthKind::blobs, 8);
    DatasetStats stats = compute_stats(raw);
    std::vector<Example> examples;
    for (const auto& s : raw) examples.push_back({normalize(s.pixels, stats), s.label});

    Parameters start = init_params(spec, 77, InitScheme::kaiming);
    Parameters fed = start;
    Parameters ref = start;

    FedConfig fc;
    fc.clients = 1;
    fc.clients_per_round = 1;
    fc.learning_rate = kLr;
    fc.rounds = 1;
    fc.seed = 9;
    fc.partitions = make_even_partitions(static_cast<int>(examples.size()), 1);

    double worst = 0.0;
    for (int r = 0; r < kRounds; ++r) {
        fed = run_rounds(spec, fed, fc, examples);

        // reference: plain gradient descent on the mean loss
        Graph g;
        std::vector<Tensor> leaves = register_params(g, ref);
        Tensor total;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            Tensor l = softmax_cross_entropy(forward(spec, leaves, g.leaf(examples[i].input)),
                                             examples[i].label);
            total = i == 0 ? l : add(total, l);
        }
        Tensor mean_loss = scale(total, 1.0 / static_cast<double>(examples.size()));
        std::vector<Tensor> grads = gradient(mean_loss, leaves);
        for (std::size_t t = 0; t < ref.tensors.size(); ++t) {
            std::vector<double> vals = ref.tensors[t].second.data();
            for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= kLr * grads[t][static_cast<std::int64_t>(i)];
            ref.tensors[t].second = Tensor(ref.tensors[t].second.shape(), vals);
        }
        for (std::size_t t = 0; t < ref.tensors.size(); ++t)
            for (std::int64_t i = 0; i < ref.tensors[t].second.size(); ++i)
                worst = std::max(worst,
                                 std::fabs(fed.tensors[t].second[i] - ref.tensors[t].second[i]));
        require(worst <= kTol, fmt("round %d diverged: max param diff %.3e", r, worst));
    }

    // one uninterrupted run must land on the same endpoint
    fc.rounds = kRounds;
    Parameters one_shot = run_rounds(spec, start, fc, examples);
    for (std::size_t t = 0; t < ref.tensors.size(); ++t)
        for (std::int64_t i = 0; i < ref.tensors[t].second.size(); ++i)
            worst = std::max(worst,
                             std::fabs(one_shot.tensors[t].second[i] - ref.tensors[t].second[i]));
    require(worst <= kTol, fmt("endpoint max param diff %.3e exceeds %.0e", worst, kTol));
    detail = fmt("max param diff %.1e over %d rounds", worst, kRounds);
}

// ---------------------------------------------------------------- criterion 3

void criterion_dlg(std::string& detail) {
    const double kMseTol = 1e-3;
    const int kTrials = 20;
    const int kNeeded = 18;

    int hits = 0;
    for (int t = 0; t < kTrials; ++t) {
        std::uint64_t base = 3000 + static_cast<std::uint64_t>(t);
        ModelSpec spec = build_mlp({3, 8, 8}, 144, 4);
        Parameters params = init_params(spec, mix_seed(base, 1), InitScheme::kaiming);
        auto data = synth_dataset(mix_seed(base, 2), 4, 4, SynthKind::blobs, 8);
        const ImageSample& truth = data[static_cast<std::size_t>(t) % data.size()];
        Example ex{normalize(truth.pixels, kHalfStats), truth.label};
        ClientUpdate target = client_update(spec, params, {ex});

        AttackConfig cfg = attack_preset(AttackMethod::dlg);
        cfg.label_mode = LabelMode::known;
        cfg.known_label = ex.label;
        cfg.max_iterations = 300;
        cfg.seed = mix_seed(base, 3);
        AttackResult res = run_attack(spec, params, target, cfg, kHalfStats, &truth);
        if (res.final_mse && *res.final_mse <= kMseTol) ++hits;
    }
    require(hits >= kNeeded,
            fmt("only %d/%d trials reached image mse <= %.0e", hits, kTrials, kMseTol));
    detail = fmt("%d/%d trials reached image mse <= 1e-3", hits, kTrials);
}

// ---------------------------------------------------------------- criterion 4

void criterion_labels(std::string& detail) {
    const int kTrials = 100;

    Rng rng(424201);
    int correct = 0;
    for (int t = 0; t < kTrials; ++t) {
        int classes = 2 + static_cast<int>(rng.below(9));
        ModelSpec spec;
        int size;
        if (t % 2 == 0) {
            size = 6 + static_cast<int>(rng.below(5));
            spec = build_mlp({3, size, size}, 4 + static_cast<int>(rng.below(12)), classes);
        } else {
            size = 8;
            spec = build_cnn4({3, size, size}, classes);
        }
        InitScheme scheme = (t % 4 < 2) ? InitScheme::uniform : InitScheme::kaiming;
        Parameters params = init_params(spec, rng.next_u64(), scheme);
        auto data = synth_dataset(rng.next_u64(), 1, 1,
                                  (t % 3 != 0) ? SynthKind::blobs : SynthKind::stripes, size);
        int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
        Example ex{normalize(data[0].pixels, kHalfStats), label};
        ClientUpdate target = client_update(spec, params, {ex});
        if (infer_label(spec, target.gradients) == label) ++correct;
    }
    require(correct == kTrials, fmt("%d/%d labels recovered", correct, kTrials));
    detail = fmt("%d/%d labels recovered", correct, kTrials);
}

// ---------------------------------------------------------------- criterion 5

void criterion_asr(std::string& detail) {
    const double kAsrFloor = 0.40;
    const double kThreshold = 0.9;
    const double kPerImageBudget = 120.0;  // seconds
    const int kImages = 100;

    ModelSpec spec = build_cnn4({3, 32, 32}, 4);
    Parameters params = init_params(spec, mix_seed(5000, 1), InitScheme::kaiming);
    auto data = synth_dataset(mix_seed(5000, 2), kImages, 4, SynthKind::blobs, 32);
    DatasetStats stats = compute_stats(data);

    std::vector<double> ssims;
    double slowest = 0.0;
    double total_seconds = 0.0;
    for (int i = 0; i < kImages; ++i) {
        Example ex{normalize(data[static_cast<std::size_t>(i)].pixels, stats),
                   data[static_cast<std::size_t>(i)].label};
        ClientUpdate target = client_update(spec, params, {ex});
        AttackConfig cfg = attack_preset(AttackMethod::idlg);
        cfg.max_iterations = 2000;
        cfg.early_stop_objective = 1e-10;
        cfg.lbfgs.history = 50;
        cfg.seed = mix_seed(5000, 100 + static_cast<std::uint64_t>(i));
        AttackResult res = run_attack(spec, params, target, cfg, stats,
                                      &data[static_cast<std::size_t>(i)]);
        ssims.push_back(res.final_ssim.value_or(0.0));
        slowest = std::max(slowest, res.wall_seconds);
        total_seconds += res.wall_seconds;
    }
    double rate = attack_success_rate(ssims, kThreshold);
    require(rate >= kAsrFloor, fmt("asr %.2f below floor %.2f", rate, kAsrFloor));
    require(slowest <= kPerImageBudget,
            fmt("slowest image took %.1f s (budget %.0f s)", slowest, kPerImageBudget));
    detail = fmt("asr %.2f over %d images, %.1f s/image mean, %.1f s worst", rate, kImages,
                 total_seconds / kImages, slowest);
}

// ---------------------------------------------------------------- criterion 6

void criterion_defense(std::string& detail) {
    const std::vector<double> kLevels{0.0, 100.0, 200.0, 300.0, 400.0};
    const double kAdjacentSlack = 0.02;
    const double kEndpointGap = 0.15;
    const double kUnit = 5e-4;
    const int kImages = 50;

    ModelSpec spec = build_mlp({3, 8, 8}, 36, 4);
    Parameters params = init_params(spec, mix_seed(6000, 1), InitScheme::kaiming);
    auto data = synth_dataset(mix_seed(6000, 2), kImages, 4, SynthKind::blobs, 8);
    DatasetStats stats = compute_stats(data);

    std::vector<double> means;
    for (double level : kLevels) {
        double acc = 0.0;
        for (int i = 0; i < kImages; ++i) {
            const ImageSample& truth = data[static_cast<std::size_t>(i)];
            Example ex{normalize(truth.pixels, stats), truth.label};
            ClientUpdate clean = client_update(spec, params, {ex}, /*client_id=*/i);
            DefenseConfig dc;
            dc.mechanism = Mechanism::laplace;
            dc.noise_level = level;
            dc.base_unit = kUnit;
            dc.seed = mix_seed(6000, 7);
            ClientUpdate noisy = perturb(clean, dc);

            AttackConfig cfg = attack_preset(AttackMethod::idlg);
            cfg.max_iterations = 300;
            cfg.seed = mix_seed(6000, 100 + static_cast<std::uint64_t>(i));
            try {
                AttackResult res = run_attack(spec, params, noisy, cfg, stats, &truth);
                acc += res.final_ssim.value_or(0.0);
            } catch (const Error&) {
                // heavy noise can destroy the label signal entirely; that is
                // a defense win, scored as an unusable reconstruction
            }
        }
        means.push_back(acc / kImages);
    }
    std::string curve;
    for (double m : means) curve += fmt(" %.3f", m);
    for (std::size_t j = 0; j + 1 < means.size(); ++j)
        require(means[j + 1] <= means[j] + kAdjacentSlack,
                fmt("ssim rose from %.4f to %.4f between levels %.0f and %.0f", means[j],
                    means[j + 1], kLevels[j], kLevels[j + 1]));
    require(means.front() - means.back() >= kEndpointGap,
            fmt("endpoint drop %.4f below %.2f", means.front() - means.back(), kEndpointGap));
    detail = "mean ssim" + curve;
}

// ---------------------------------------------------------------- criterion 7

// direct-formula ssim: explicit 11x11 gaussian window, central moments
double ssim_oracle(const Tensor& a, const Tensor& b, double range) {
    int channels = a.shape()[0], height = a.shape()[1], width = a.shape()[2];
    const int win = 11;
    double g1[win];
    double norm = 0.0;
    for (int i = 0; i < win; ++i) {
        double d = i - 5.0;
        g1[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        norm += g1[i];
    }
    for (int i = 0; i < win; ++i) g1[i] /= norm;
    double w[win][win];
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) w[i][j] = g1[i] * g1[j];

    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    auto at = [&](const Tensor& t, int c, int y, int x) {
        return t[(static_cast<std::int64_t>(c) * height + y) * width + x];
    };
    double total = 0.0;
    std::int64_t windows = 0;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y + win <= height; ++y)
            for (int x = 0; x + win <= width; ++x) {
                double mua = 0.0, mub = 0.0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        mua += w[i][j] * at(a, c, y + i, x + j);
                        mub += w[i][j] * at(b, c, y + i, x + j);
                    }
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        double da = at(a, c, y + i, x + j) - mua;
                        double db = at(b, c, y + i, x + j) - mub;
                        va += w[i][j] * da * da;
                        vb += w[i][j] * db * db;
                        cov += w[i][j] * da * db;
                    }
                total += ((2.0 * mua * mub + c1) * (2.0 * cov + c2)) /
                         ((mua * mua + mub * mub + c1) * (va + vb + c2));
                ++windows;
            }
    return total / static_cast<double>(windows);
}

double mse_oracle(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

void criterion_metrics(std::string& detail) {
    const double kTol = 1e-9;
    const int kPairs = 20;

    Rng rng(70707);
    double worst_ssim = 0.0, worst_mse = 0.0;
    std::vector<double> ssim_values;
    for (int p = 0; p < kPairs; ++p) {
        int h = 11 + static_cast<int>(rng.below(10));
        int w = 11 + static_cast<int>(rng.below(10));
        auto draw = [&]() {
            std::vector<double> v(static_cast<std::size_t>(3 * h * w));
            for (double& x : v) x = rng.uniform01();
            return Tensor({3, h, w}, v);
        };
        Tensor a = draw();
        Tensor b = draw();
        worst_mse = std::max(worst_mse, std::fabs(mse(a, b) - mse_oracle(a, b)));
        double s = ssim(a, b);
        worst_ssim = std::max(worst_ssim, std::fabs(s - ssim_oracle(a, b, 1.0)));
        ssim_values.push_back(s);

        require(ssim(a, a) == 1.0, "ssim(x, x) is not exactly 1");
        require(mse(a, a) == 0.0, "mse(x, x) is not exactly 0");
    }
    for (double threshold : {0.3, 0.9}) {
        int count = 0;
        for (double s : ssim_values)
            if (s >= threshold) ++count;
        double expect = static_cast<double>(count) / static_cast<double>(ssim_values.size());
        require(attack_success_rate(ssim_values, threshold) == expect,
                fmt("asr mismatch at threshold %.1f", threshold));
    }
    require(worst_mse <= kTol, fmt("mse oracle gap %.3e exceeds %.0e", worst_mse, kTol));
    require(worst_ssim <= kTol, fmt("ssim oracle gap %.3e exceeds %.0e", worst_ssim, kTol));
    detail = fmt("%d pairs, oracle gap %.1e mse / %.1e ssim", kPairs, worst_mse, worst_ssim);
}

// ---------------------------------------------------------------- criterion 8

ClientUpdate scale_update(const ClientUpdate& u, double factor) {
    ClientUpdate out = u;
    for (Tensor& t : out.gradients) {
        std::vector<double> vals = t.data();
        for (double& v : vals) v *= factor;
        t = Tensor(t.shape(), vals);
    }
    return out;
}

void criterion_cosine(std::string& detail) {
    ModelSpec spec = build_mlp({3, 8, 8}, 16, 2);
    Parameters params = init_params(spec, mix_seed(8000, 1), InitScheme::kaiming);
    auto data = synth_dataset(mix_seed(8000, 2), 2, 2, SynthKind::blobs, 8);
    const ImageSample& truth = data[1];
    Example ex{normalize(truth.pixels, kHalfStats), truth.label};
    ClientUpdate target = client_update(spec, params, {ex});

    // exactly zero at the ground truth
    AttackConfig at_truth = attack_preset(AttackMethod::gradinv);
    at_truth.tv_weight = 0.0;
    at_truth.max_iterations = 5;
    at_truth.label_mode = LabelMode::known;
    at_truth.known_label = ex.label;
    at_truth.init_override = ex.input.data();
    at_truth.seed = 1;
    AttackResult gt = run_attack(spec, params, target, at_truth, kHalfStats, &truth);
    require(!gt.trace.empty() && gt.trace[0] == 0.0,
            fmt("objective at truth is %.3e, not exactly 0", gt.trace.empty() ? -1.0 : gt.trace[0]));
    require(gt.best_objective == 0.0,
            fmt("best objective at truth is %.3e, not exactly 0", gt.best_objective));

    // positive rescaling of the target gradients must not change anything;
    // powers of two keep the comparison exact
    AttackConfig cfg = attack_preset(AttackMethod::gradinv);
    cfg.max_iterations = 300;
    cfg.seed = 7;
    AttackResult base = run_attack(spec, params, target, cfg, kHalfStats, &truth);
    for (double factor : {4.0, 0.25}) {
        AttackResult scaled =
            run_attack(spec, params, scale_update(target, factor), cfg, kHalfStats, &truth);
        require(scaled.label == base.label, fmt("label changed under x%.2f scaling", factor));
        require(scaled.trace.size() == base.trace.size(),
                fmt("trace length changed under x%.2f scaling", factor));
        for (std::size_t i = 0; i < base.trace.size(); ++i)
            require(scaled.trace[i] == base.trace[i],
                    fmt("objective trace diverged at step %zu under x%.2f scaling", i, factor));
        require(scaled.reconstruction_raw.data() == base.reconstruction_raw.data(),
                fmt("reconstruction changed under x%.2f scaling", factor));
    }
    detail = fmt("zero at truth; %zu-step trace bit-identical under x4 and x0.25", base.trace.size());
}

// ---------------------------------------------------------------- criterion 9

void criterion_noise(std::string& detail) {
    const int kDraws = 1000000;
    std::string parts;
    for (double b : {0.05, 0.8}) {
        Rng rng(990000 + static_cast<std::uint64_t>(b * 1000.0));
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < kDraws; ++i) {
            double v = rng.laplace(b);
            sum += v;
            sumsq += v * v;
        }
        double mean = sum / kDraws;
        double var = sumsq / kDraws - mean * mean;
        double mean_bound = 4.0 * b * std::sqrt(2.0) / 1000.0;
        double var_target = 2.0 * b * b;
        require(std::fabs(mean) <= mean_bound,
                fmt("b=%.2f: |mean| %.3e exceeds %.3e", b, std::fabs(mean), mean_bound));
        require(std::fabs(var - var_target) <= 0.05 * var_target,
                fmt("b=%.2f: var %.5f outside 5%% of %.5f", b, var, var_target));
        parts += fmt(" b=%.2f var off %.2f%%", b, 100.0 * std::fabs(var - var_target) / var_target);
    }
    detail = fmt("%d draws each;%s", kDraws, parts.c_str());
}

// --------------------------------------------------------------- criterion 10

const char* kSweepConfig = R"(
schema_version = 1

[data]
source = synth
synth_kind = blobs
synth_samples = 6
classes = 2
image_size = 8
stats = explicit
mean = 0.5,0.5,0.5
std = 0.25,0.25,0.25

[model]
kind = mlp
hidden = 6
init = kaiming

[federation]
clients = 2
clients_per_round = 2
learning_rate = 0.1
rounds = 2
attack_round = 1

[defense]
mechanism = laplace
noise_levels = 0,50
noise_unit = 0.001

[attack]
methods = idlg,cpl
samples = 2
max_iterations = 15

[output]
directory = unused
seed = 5
threads = 1
save_images = false
)";

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    require(in.good(), "missing " + p.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

void criterion_determinism(std::string& detail) {
    TempDir a("fedinv-accept-run-a");
    TempDir b("fedinv-accept-run-b");
    ExperimentConfig cfg = parse_config(kSweepConfig);

    RunOverrides ova;
    ova.output_dir = a.root.string();
    run_experiment(cfg, ova);
    RunOverrides ovb;
    ovb.output_dir = b.root.string();
    run_experiment(cfg, ovb);

    auto la = read_lines(a.root / "summary.csv");
    auto lb = read_lines(b.root / "summary.csv");
    require(la.size() == lb.size(), "summary row counts differ");
    require(la.size() >= 5, fmt("expected 4 sweep cells, got %zu rows", la.size() - 1));
    const std::string header =
        "method,noise_level,n_samples,asr,mean_ssim_success,mean_mse_success,mean_seconds";
    require(la[0] == header && lb[0] == header, "summary header mismatch");
    for (std::size_t i = 1; i < la.size(); ++i) {
        auto cut = la[i].rfind(',');
        auto cut_b = lb[i].rfind(',');
        require(cut != std::string::npos && cut_b != std::string::npos,
                fmt("row %zu is not csv", i));
        require(la[i].substr(0, cut) == lb[i].substr(0, cut_b),
                fmt("row %zu differs outside the timing column", i));
        for (const std::string& row : {la[i], lb[i]}) {
            std::string cell = row.substr(row.rfind(',') + 1);
            char* end = nullptr;
            double secs = std::strtod(cell.c_str(), &end);
            require(end && *end == '\0' && std::isfinite(secs) && secs >= 0.0,
                    fmt("row %zu timing column is not a time: '%s'", i, cell.c_str()));
        }
    }
    detail = fmt("%zu summary rows identical modulo the timing column", la.size() - 1);
}

}  // namespace

int main(int argc, char** argv) {
    struct Entry {
        int id;
        const char* label;
        void (*fn)(std::string&);
    };
    const Entry entries[] = {
        {1, "gradients match central finite differences", criterion_gradients},
        {2, "single-client federation equals centralized descent", criterion_federation},
        {3, "dlg rebuilds 8x8 images when the label is known", criterion_dlg},
        {4, "analytic label inference is exact", criterion_labels},
        {5, "attack success rate on the undefended cnn", criterion_asr},
        {6, "reconstruction quality decays with the noise level", criterion_defense},
        {7, "metrics agree with direct-formula oracles", criterion_metrics},
        {8, "cosine objective is zero at truth and scale invariant", criterion_cosine},
        {9, "laplace sample moments", criterion_noise},
        {10, "sweep reruns reproduce summary.csv", criterion_determinism},
    };

    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Entry& e : entries) {
        if (!wanted.empty() && wanted.count(e.id) == 0) continue;
        std::string det;
        auto t0 = std::chrono::steady_clock::now();
        try {
            e.fn(det);
            double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("PASS %2d  %s (%s; %.1f s)\n", e.id, e.label, det.c_str(), secs);
        } catch (const Fail& f) {
            ++failures;
            std::printf("FAIL %2d  %s: %s\n", e.id, e.label, f.message.c_str());
        } catch (const std::exception& ex) {
            ++failures;
            std::printf("FAIL %2d  %s: unexpected error: %s\n", e.id, e.label, ex.what());
        }
        std::fflush(stdout);
    }
    return failures;
}
