#ifndef FEDINV_DATA_HPP
#define FEDINV_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedinv/tensor.hpp"

namespace fedinv {

/// One image with its class label. pixels is {3,H,W} in [0,1].
struct ImageSample {
    Tensor pixels;
    int label = 0;
    std::string source_id;
};

struct DatasetStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
};

struct LoadResult {
    std::vector<ImageSample> samples;
    std::vector<std::string> class_names;  // sorted subdirectory names
    int warnings = 0;                      // unreadable files skipped
};

/// Loads root/<class>/<file> with one subdirectory per class. Classes and
/// files are visited in lexicographic order; labels are the class indices in
/// that order. Unreadable image files are skipped and counted. A root with
/// no class directories or no images at all is an error.
LoadResult load_image_dir(const std::filesystem::path& root);

/// Bilinear resize with half-pixel centers, channels handled independently.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

/// (x - mean_c) / std_c per channel.
Tensor normalize(const Tensor& img, const DatasetStats& stats);

/// Inverse of normalize: x * std_c + mean_c.
Tensor denormalize(const Tensor& img, const DatasetStats& stats);

Tensor clamp01(const Tensor& img);

/// Per-channel mean and population standard deviation over every pixel of
/// every sample. Single-pass streaming (Welford) accumulation.
DatasetStats compute_stats(const std::vector<ImageSample>& samples);

enum class SynthKind { blobs, stripes };

/// Deterministic synthetic dataset: n images of size {3,size,size} across k
/// classes (labels round-robin). blobs draws class-colored Gaussian bumps,
/// stripes draws class-oriented sinusoidal gratings.
std::vector<ImageSample> synth_dataset(std::uint64_t seed, int n, int k, SynthKind kind,
                                       int size = 32);

}  // namespace fedinv

#endif
