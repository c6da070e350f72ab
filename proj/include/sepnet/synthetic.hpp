#ifndef SEPNET_SYNTHETIC_HPP
#define SEPNET_SYNTHETIC_HPP

#include "sepnet/image.hpp"
#include "sepnet/rng.hpp"

#include <cstdint>
#include <filesystem>

namespace sepnet {

/// Two-class blob images on a noisy, shaded background. Class 0 has a bright
/// blob in the left half, class 1 a dark blob in the right half; blob size,
/// exact position and contrast vary per image.
struct SyntheticSpec {
    int per_class = 145;
    int size = 64;
    std::uint64_t seed = 0;
};

Image synthetic_image(int label, int size, Rng& rng);

/// Writes <root>/class0/NNNN.png and <root>/class1/NNNN.png.
void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace sepnet

#endif  // SEPNET_SYNTHETIC_HPP
