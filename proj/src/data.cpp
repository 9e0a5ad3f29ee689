#include "fedinv/data.hpp"

#include <algorithm>
#include <cmath>

#include "fedinv/image_io.hpp"
#include "fedinv/rng.hpp"

namespace fedinv {

LoadResult load_image_dir(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError(root.string() + " is not a directory");

    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw IoError(root.string() + " contains no class directories");

    LoadResult out;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        out.class_names.push_back(class_dirs[label].filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(class_dirs[label]))
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            try {
                Tensor img = read_image(f);
                out.samples.push_back(ImageSample{
                    std::move(img), static_cast<int>(label),
                    out.class_names.back() + "/" + f.filename().string()});
            } catch (const IoError&) {
                ++out.warnings;
            }
        }
    }
    if (out.samples.empty()) throw IoError(root.string() + " contains no readable images");
    return out;
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (img.shape().size() != 3)
        throw ShapeError("resize_bilinear: CxHxW tensor required, got " + shape_str(img.shape()));
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: bad output size");
    int c = img.shape()[0], in_h = img.shape()[1], in_w = img.shape()[2];
    if (in_h == out_h && in_w == out_w) return img.detach();

    double sy = static_cast<double>(in_h) / out_h;
    double sx = static_cast<double>(in_w) / out_w;
    const auto& src = img.data();
    std::vector<double> dst(static_cast<std::size_t>(c) * out_h * out_w);
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, in_h - 1);
        int y1c = std::clamp(y0 + 1, 0, in_h - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, in_w - 1);
            int x1c = std::clamp(x0 + 1, 0, in_w - 1);
            for (int ch = 0; ch < c; ++ch) {
                const double* plane = src.data() + static_cast<std::size_t>(ch) * in_h * in_w;
                double top = plane[y0c * in_w + x0c] * (1.0 - wx) + plane[y0c * in_w + x1c] * wx;
                double bot = plane[y1c * in_w + x0c] * (1.0 - wx) + plane[y1c * in_w + x1c] * wx;
                dst[(static_cast<std::size_t>(ch) * out_h + y) * out_w + x] =
                    top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return Tensor({c, out_h, out_w}, std::move(dst));
}

namespace {

void require_chw3(const Tensor& img, const char* what) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        throw ShapeError(std::string(what) + ": 3xHxW tensor required, got " +
                         shape_str(img.shape()));
}

}  // namespace

Tensor normalize(const Tensor& img, const DatasetStats& stats) {
    require_chw3(img, "normalize");
    for (double s : stats.stddev)
        if (!(s > 0.0)) throw Error("normalize: channel std must be positive");
    int hw = img.shape()[1] * img.shape()[2];
    std::vector<double> out(img.data().size());
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < hw; ++i) {
            std::size_t idx = static_cast<std::size_t>(c) * hw + i;
            out[idx] = (img.data()[idx] - stats.mean[static_cast<std::size_t>(c)]) /
                       stats.stddev[static_cast<std::size_t>(c)];
        }
    return Tensor(img.shape(), std::move(out));
}

Tensor denormalize(const Tensor& img, const DatasetStats& stats) {
    require_chw3(img, "denormalize");
    int hw = img.shape()[1] * img.shape()[2];
    std::vector<double> out(img.data().size());
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < hw; ++i) {
            std::size_t idx = static_cast<std::size_t>(c) * hw + i;
            out[idx] = img.data()[idx] * stats.stddev[static_cast<std::size_t>(c)] +
                       stats.mean[static_cast<std::size_t>(c)];
        }
    return Tensor(img.shape(), std::move(out));
}

Tensor clamp01(const Tensor& img) {
    std::vector<double> out(img.data().size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::min(1.0, std::max(0.0, img.data()[i]));
    return Tensor(img.shape(), std::move(out));
}

DatasetStats compute_stats(const std::vector<ImageSample>& samples) {
    if (samples.empty()) throw Error("compute_stats: empty sample list");
    double n[3] = {0, 0, 0}, mean[3] = {0, 0, 0}, m2[3] = {0, 0, 0};
    for (const ImageSample& s : samples) {
        require_chw3(s.pixels, "compute_stats");
        int hw = s.pixels.shape()[1] * s.pixels.shape()[2];
        const auto& d = s.pixels.data();
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < hw; ++i) {
                double x = d[static_cast<std::size_t>(c) * hw + i];
                n[c] += 1.0;
                double delta = x - mean[c];
                mean[c] += delta / n[c];
                m2[c] += delta * (x - mean[c]);
            }
    }
    DatasetStats out;
    for (int c = 0; c < 3; ++c) {
        out.mean[static_cast<std::size_t>(c)] = mean[c];
        out.stddev[static_cast<std::size_t>(c)] = std::sqrt(m2[c] / n[c]);
    }
    return out;
}

namespace {

std::array<double, 3> class_color(int label, int k) {
    // evenly spaced hues, fixed saturation/value
    double h = 6.0 * label / std::max(1, k);
    double s = 0.7, v = 0.9;
    int i = static_cast<int>(h) % 6;
    double f = h - std::floor(h);
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

}  // namespace

std::vector<ImageSample> synth_dataset(std::uint64_t seed, int n, int k, SynthKind kind,
                                       int size) {
    if (n < 1 || k < 1 || size < 4) throw Error("synth_dataset: bad geometry");
    std::vector<ImageSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int label = i % k;
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        std::array<double, 3> color = class_color(label, k);
        std::vector<double> img(static_cast<std::size_t>(3) * size * size, 0.0);
        auto px = [&](int c, int y, int x) -> double& {
            return img[(static_cast<std::size_t>(c) * size + y) * size + x];
        };

        if (kind == SynthKind::blobs) {
            for (int c = 0; c < 3; ++c) {
                double bg = 0.08 + 0.06 * rng.uniform01();
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) px(c, y, x) = bg;
            }
            int blobs = 1 + label;
            for (int b = 0; b < blobs; ++b) {
                double cx = rng.uniform(3.0, size - 3.0);
                double cy = rng.uniform(3.0, size - 3.0);
                double sigma = rng.uniform(size / 12.0, size / 6.0);
                double gain = 0.65 + 0.3 * rng.uniform01();
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                        double g = gain * std::exp(-d2 / (2.0 * sigma * sigma));
                        for (int c = 0; c < 3; ++c)
                            px(c, y, x) += g * color[static_cast<std::size_t>(c)];
                    }
            }
        } else {
            double theta = 3.14159265358979323846 * label / k + rng.uniform(-0.08, 0.08);
            double freq = 2.0 + label + rng.uniform(-0.2, 0.2);
            double phase = rng.uniform(0.0, 6.2831853071795864769);
            double ct = std::cos(theta), st = std::sin(theta);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double proj = (x * ct + y * st) / size;
                    double wave = 0.5 + 0.45 * std::sin(6.2831853071795864769 * freq * proj +
                                                        phase);
                    for (int c = 0; c < 3; ++c)
                        px(c, y, x) = wave * (0.35 + 0.65 * color[static_cast<std::size_t>(c)]);
                }
        }

        for (double& v : img) v = std::min(1.0, std::max(0.0, v));
        out.push_back(ImageSample{Tensor({3, size, size}, std::move(img)), label,
                                  "synth/" + std::to_string(i)});
    }
    return out;
}

}  // namespace fedinv
