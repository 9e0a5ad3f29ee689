#include "fedinv/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace fedinv {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string e = path.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

Tensor from_rgb8(const std::vector<unsigned char>& buf, int h, int w) {
    std::vector<double> data(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t src = (static_cast<std::size_t>(y) * w + x) * 3;
            for (int c = 0; c < 3; ++c)
                data[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<double>(buf[src + static_cast<std::size_t>(c)]) / 255.0;
        }
    return Tensor({3, h, w}, std::move(data));
}

Tensor read_png_file(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw IoError("cannot decode " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot decode " + path.string() + ": " + msg);
    }
    int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    if (h <= 0 || w <= 0) throw IoError("empty image " + path.string());
    return from_rgb8(buf, h, w);
}

// Minimal PNM reader: P2/P3 ascii, P5/P6 binary, maxval up to 65535.
Tensor read_pnm_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());

    auto next_token = [&]() -> std::string {
        std::string tok;
        int c;
        while ((c = is.get()) != EOF) {
            if (c == '#') {
                while ((c = is.get()) != EOF && c != '\n') {
                }
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        if (tok.empty()) throw IoError("truncated PNM header in " + path.string());
        return tok;
    };

    std::string magic = next_token();
    bool ascii = magic == "P2" || magic == "P3";
    bool binary = magic == "P5" || magic == "P6";
    if (!ascii && !binary) throw IoError(path.string() + ": unsupported PNM type " + magic);
    bool color = magic == "P3" || magic == "P6";

    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw IoError(path.string() + ": bad PNM geometry");

    std::size_t values = static_cast<std::size_t>(w) * h * (color ? 3 : 1);
    std::vector<double> raw(values);
    if (ascii) {
        for (double& v : raw) v = std::stoi(next_token());
    } else {
        int bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(values * static_cast<std::size_t>(bytes));
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!is) throw IoError(path.string() + ": truncated PNM pixel data");
        for (std::size_t i = 0; i < values; ++i)
            raw[i] = bytes == 1 ? buf[i]
                                : static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }

    std::vector<double> data(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t px = static_cast<std::size_t>(y) * w + x;
            for (int c = 0; c < 3; ++c) {
                double v = color ? raw[px * 3 + static_cast<std::size_t>(c)] : raw[px];
                data[(static_cast<std::size_t>(c) * h + y) * w + x] = v / maxval;
            }
        }
    return Tensor({3, h, w}, std::move(data));
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
    std::string e = lower_ext(path);
    return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

Tensor read_image(const std::filesystem::path& path) {
    std::string e = lower_ext(path);
    if (e == ".png") return read_png_file(path);
    if (e == ".pgm" || e == ".ppm" || e == ".pnm") return read_pnm_file(path);
    throw IoError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Tensor& img) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        throw ShapeError("write_png: 3xHxW tensor required, got " + shape_str(img.shape()));
    int h = img.shape()[1], w = img.shape()[2];
    std::vector<unsigned char> buf(static_cast<std::size_t>(3) * h * w);
    const auto& d = img.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = d[(static_cast<std::size_t>(c) * h + y) * w + x];
                v = std::min(1.0, std::max(0.0, v));
                buf[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }

    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write " + path.string() + ": " + image.message);
}

}  // namespace fedinv
