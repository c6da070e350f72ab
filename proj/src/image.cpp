#include "sepnet/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <jpeglib.h>
#include <png.h>

namespace sepnet {

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w <= 0 || h <= 0) {
        throw std::invalid_argument("image dimensions must be positive, got " + std::to_string(w) + "x" +
                                    std::to_string(h));
    }
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open image " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image decode_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw ImageError("cannot decode PNG " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    if (png.width == 0 || png.height == 0) {
        png_image_free(&png);
        throw ImageError("cannot decode PNG " + path.string() + ": empty image");
    }
    Image img(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw ImageError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return img;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
    auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
    info->err->format_message(info, err->message);
    std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    jpeg_decompress_struct info{};
    JpegErrorManager err{};
    info.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    Image img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&info);
        throw ImageError("cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&info);
    jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    img.width = static_cast<int>(info.output_width);
    img.height = static_cast<int>(info.output_height);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    while (info.output_scanline < info.output_height) {
        JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(info.output_scanline) * img.width * 3;
        jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    return img;
}

// Area-average one axis in exact integer units: source pixel i covers
// [i*out, (i+1)*out) and destination cell o covers [o*in, (o+1)*in).
struct AreaSpan {
    int first;
    std::vector<std::int64_t> weights;
};

std::vector<AreaSpan> area_spans(int in, int out) {
    std::vector<AreaSpan> spans(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        const std::int64_t lo = std::int64_t{o} * in, hi = std::int64_t{o + 1} * in;
        const int first = static_cast<int>(lo / out);
        const int last = static_cast<int>((hi - 1) / out);
        spans[o].first = first;
        for (int i = first; i <= last; ++i) {
            spans[o].weights.push_back(std::min<std::int64_t>(hi, std::int64_t{i + 1} * out) -
                                       std::max<std::int64_t>(lo, std::int64_t{i} * out));
        }
    }
    return spans;
}

}  // namespace

Image decode_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    static constexpr unsigned char png_sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(std::begin(png_sig), std::end(png_sig), bytes.begin())) {
        return decode_png(bytes, path);
    }
    if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) {
        return decode_jpeg(bytes, path);
    }
    throw ImageError("cannot decode " + path.string() + ": not a PNG or JPEG file");
}

void write_png(const std::filesystem::path& path, const Image& image) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw ImageError("cannot write PNG " + path.string() + ": " + png.message);
    }
}

Tensor image_to_tensor(const Image& image, int resolution, const Normalization& norm) {
    if (resolution < 1) throw std::invalid_argument("resolution must be positive");
    Tensor out({1, resolution, resolution, 3});
    auto coords = [resolution](int in) {
        std::vector<std::pair<int, double>> c(static_cast<std::size_t>(resolution));
        const double scale = static_cast<double>(in) / resolution;
        for (int o = 0; o < resolution; ++o) {
            const double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
            const int i0 = std::min(static_cast<int>(s), in - 1);
            c[o] = {i0, s - i0};
        }
        return c;
    };
    const auto ys = coords(image.height), xs = coords(image.width);
    for (int oy = 0; oy < resolution; ++oy) {
        const auto [y0, fy] = ys[oy];
        const int y1 = std::min(y0 + 1, image.height - 1);
        for (int ox = 0; ox < resolution; ++ox) {
            const auto [x0, fx] = xs[ox];
            const int x1 = std::min(x0 + 1, image.width - 1);
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c);
                const double bottom = (1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c);
                out.at(0, oy, ox, c) = norm.normalize((1 - fy) * top + fy * bottom);
            }
        }
    }
    return out;
}

Tensor load_image(const std::filesystem::path& path, int resolution, const Normalization& norm) {
    return image_to_tensor(decode_image(path), resolution, norm);
}

std::uint64_t dhash64(const Image& image) {
    constexpr int cols = 9, rows = 8;
    const auto xs = area_spans(image.width, cols), ys = area_spans(image.height, rows);
    // Luma in thousandths (299 R + 587 G + 114 B) keeps every cell sum an exact
    // integer, so equal areas compare equal.
    std::vector<std::int64_t> luma(static_cast<std::size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            luma[static_cast<std::size_t>(y) * image.width + x] =
                299 * image.at(y, x, 0) + 587 * image.at(y, x, 1) + 114 * image.at(y, x, 2);

    std::int64_t cell[rows][cols];
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            std::int64_t sum = 0;
            for (std::size_t i = 0; i < ys[r].weights.size(); ++i)
                for (std::size_t j = 0; j < xs[c].weights.size(); ++j)
                    sum += ys[r].weights[i] * xs[c].weights[j] *
                           luma[static_cast<std::size_t>(ys[r].first + i) * image.width + xs[c].first + j];
            cell[r][c] = sum;
        }

    std::uint64_t h = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < 8; ++c)
            if (cell[r][c] > cell[r][c + 1]) h |= std::uint64_t{1} << (r * 8 + c);
    return h;
}

std::uint64_t dhash64(const std::filesystem::path& path) { return dhash64(decode_image(path)); }

int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

std::string hash_to_hex(std::uint64_t h) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[i] = digits[h & 0xf];
    return s;
}

std::uint64_t hash_from_hex(const std::string& hex) {
    if (hex.size() != 16 || hex.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
        throw std::invalid_argument("expected 16 hex digits, got '" + hex + "'");
    }
    return std::stoull(hex, nullptr, 16);
}

}  // namespace sepnet
