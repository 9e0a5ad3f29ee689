#include "fedinv/metrics.hpp"

#include <cmath>

namespace fedinv {

double mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const auto& x = a.data();
    const auto& y = b.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = x[i] - y[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.size());
}

namespace {

// separable filter with a normalized 1-d window, valid positions only
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& win) {
    int m = static_cast<int>(win.size());
    int oh = h - m + 1, ow = w - m + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < m; ++t) acc += win[static_cast<std::size_t>(t)] * img[static_cast<std::size_t>(y) * w + x + t];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < m; ++t) acc += win[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

std::vector<double> gaussian_window(int m, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(m));
    double c = (m - 1) / 2.0;
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        acc += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= acc;
    return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double dynamic_range) {
    if (a.shape() != b.shape())
        throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (a.shape().size() != 3)
        throw ShapeError("ssim: CxHxW tensors required, got " + shape_str(a.shape()));
    if (!(dynamic_range > 0.0)) throw Error("ssim: dynamic range must be positive");

    int c = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
    int m = std::min(11, std::min(h, w));
    std::vector<double> win =
        m == 11 ? gaussian_window(11, 1.5)
                : std::vector<double>(static_cast<std::size_t>(m), 1.0 / m);

    double c1 = 0.01 * dynamic_range;
    c1 *= c1;
    double c2 = 0.03 * dynamic_range;
    c2 *= c2;

    std::size_t plane = static_cast<std::size_t>(h) * w;
    double total = 0.0;
    std::int64_t count = 0;
    for (int ch = 0; ch < c; ++ch) {
        std::vector<double> x(a.data().begin() + static_cast<std::ptrdiff_t>(ch) * static_cast<std::ptrdiff_t>(plane),
                              a.data().begin() + static_cast<std::ptrdiff_t>(ch + 1) * static_cast<std::ptrdiff_t>(plane));
        std::vector<double> y(b.data().begin() + static_cast<std::ptrdiff_t>(ch) * static_cast<std::ptrdiff_t>(plane),
                              b.data().begin() + static_cast<std::ptrdiff_t>(ch + 1) * static_cast<std::ptrdiff_t>(plane));
        std::vector<double> xx(plane), yy(plane), xy(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        auto mu_x = filter_valid(x, h, w, win);
        auto mu_y = filter_valid(y, h, w, win);
        auto e_xx = filter_valid(xx, h, w, win);
        auto e_yy = filter_valid(yy, h, w, win);
        auto e_xy = filter_valid(xy, h, w, win);
        for (std::size_t i = 0; i < mu_x.size(); ++i) {
            double mx = mu_x[i], my = mu_y[i];
            double vx = e_xx[i] - mx * mx;
            double vy = e_yy[i] - my * my;
            double cov = e_xy[i] - mx * my;
            double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            double den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double attack_success_rate(const std::vector<double>& ssim_values, double threshold) {
    if (ssim_values.empty()) throw Error("attack_success_rate: empty value list");
    std::int64_t hits = 0;
    for (double v : ssim_values)
        if (v >= threshold) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ssim_values.size());
}

SuccessSummary summarize_successful(const std::vector<ScorePair>& scores, double threshold) {
    if (scores.empty()) throw Error("summarize_successful: empty score list");
    SuccessSummary out;
    out.n_samples = static_cast<int>(scores.size());
    double ssim_acc = 0.0, mse_acc = 0.0;
    for (const ScorePair& s : scores) {
        if (s.ssim >= threshold) {
            ++out.n_success;
            ssim_acc += s.ssim;
            mse_acc += s.mse;
        }
    }
    out.asr = static_cast<double>(out.n_success) / static_cast<double>(out.n_samples);
    if (out.n_success > 0) {
        out.mean_ssim_success = ssim_acc / out.n_success;
        out.mean_mse_success = mse_acc / out.n_success;
    }
    return out;
}

}  // namespace fedinv
