#include "sepnet/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace sepnet {

Image synthetic_image(int label, int size, Rng& rng) {
    Image img(size, size);
    const double base = rng.uniform() * 80.0 + 88.0;
    const double gx = (rng.uniform() - 0.5) * 16.0, gy = (rng.uniform() - 0.5) * 16.0;
    const double tint[3] = {rng.uniform() * 20 - 10, rng.uniform() * 20 - 10, rng.uniform() * 20 - 10};

    // Coarse random shading so unrelated images get unrelated difference hashes.
    constexpr int grid = 7;
    double field[grid][grid];
    for (auto& row : field)
        for (double& f : row) f = rng.normal(0.0, 14.0);
    auto shade = [&](int x, int y) {
        const double gxp = static_cast<double>(x) / (size - 1) * (grid - 1), gyp = static_cast<double>(y) / (size - 1) * (grid - 1);
        const int x0 = std::min(static_cast<int>(gxp), grid - 2), y0 = std::min(static_cast<int>(gyp), grid - 2);
        const double fx = gxp - x0, fy = gyp - y0;
        return (1 - fy) * ((1 - fx) * field[y0][x0] + fx * field[y0][x0 + 1]) +
               fy * ((1 - fx) * field[y0 + 1][x0] + fx * field[y0 + 1][x0 + 1]);
    };

    const double radius = size * (0.09 + 0.04 * rng.uniform());
    const double cx = size * (label == 0 ? 0.18 + 0.20 * rng.uniform() : 0.62 + 0.20 * rng.uniform());
    const double cy = size * (0.2 + 0.6 * rng.uniform());
    const double contrast = (label == 0 ? 1.0 : -1.0) * (120.0 + 40.0 * rng.uniform());

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / size - 0.5, v = static_cast<double>(y) / size - 0.5;
            const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
            const double blob = contrast * std::exp(-0.5 * d2) + shade(x, y);
            for (int c = 0; c < 3; ++c) {
                const double value = base + gx * u + gy * v + tint[c] + blob + rng.normal(0.0, 10.0);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
            }
        }
    return img;
}

void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
    if (spec.per_class < 1 || spec.size < 9) throw std::invalid_argument("synthetic dataset needs >= 1 image per class and size >= 9");
    for (int label = 0; label < 2; ++label) {
        const auto dir = root / fmt::format("class{}", label);
        std::filesystem::create_directories(dir);
        Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(label));
        for (int i = 0; i < spec.per_class; ++i) {
            write_png(dir / fmt::format("{:04d}.png", i), synthetic_image(label, spec.size, rng));
        }
    }
}

}  // namespace sepnet
