#ifndef SEPNET_IMAGE_HPP
#define SEPNET_IMAGE_HPP

#include "sepnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepnet {

/// 8-bit RGB pixels, row-major, interleaved.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decodes an 8-bit PNG or JPEG (detected from the file signature). Grayscale
/// and palette images come back as RGB.
Image decode_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& image);

/// x / scale - offset; the defaults map [0,255] onto [-1,1].
struct Normalization {
    double scale = 127.5;
    double offset = 1.0;

    float normalize(double v) const { return static_cast<float>(v / scale - offset); }
    double denormalize(float v) const { return (v + offset) * scale; }
};

/// Bilinear resize to res x res with half-pixel centres (edges clamped),
/// normalized, as a 1 x res x res x 3 tensor. Aspect ratio is not preserved.
Tensor image_to_tensor(const Image& image, int resolution, const Normalization& norm = {});

/// decode_image + image_to_tensor.
Tensor load_image(const std::filesystem::path& path, int resolution, const Normalization& norm = {});

/// Difference hash: BT.601 luma area-averaged down to 9 columns x 8 rows; bit
/// r*8+c is set iff cell (r,c) is brighter than cell (r,c+1).
std::uint64_t dhash64(const Image& image);
std::uint64_t dhash64(const std::filesystem::path& path);

int hamming(std::uint64_t a, std::uint64_t b);

std::string hash_to_hex(std::uint64_t h);
std::uint64_t hash_from_hex(const std::string& hex);

}  // namespace sepnet

#endif  // SEPNET_IMAGE_HPP
