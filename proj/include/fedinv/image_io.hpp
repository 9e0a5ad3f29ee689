#ifndef FEDINV_IMAGE_IO_HPP
#define FEDINV_IMAGE_IO_HPP

#include <filesystem>

#include "fedinv/tensor.hpp"

namespace fedinv {

class IoError : public Error {
public:
    using Error::Error;
};

/// True for the file extensions read_image understands (.png .pgm .ppm .pnm).
bool is_image_file(const std::filesystem::path& path);

/// Decodes a PNG or PNM file into a {3,H,W} tensor with values in [0,1].
/// Grayscale sources are replicated across the three channels.
Tensor read_image(const std::filesystem::path& path);

/// Writes a {3,H,W} tensor as an 8-bit RGB PNG; values are clamped to [0,1]
/// and rounded to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Tensor& img);

}  // namespace fedinv

#endif
