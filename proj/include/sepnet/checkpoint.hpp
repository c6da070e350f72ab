#ifndef SEPNET_CHECKPOINT_HPP
#define SEPNET_CHECKPOINT_HPP

#include "sepnet/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace sepnet {

// File layout (all integers little-endian):
//   "SCFG"                 4 bytes
//   version                u32
//   header length          u64
//   header                 UTF-8 JSON: config, metadata, tensor table
//                          (name, shape, byte offset into the payload)
//   payload                raw float32 LE tensors, back to back

inline constexpr char kCheckpointMagic[4] = {'S', 'C', 'F', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMetadata {
    int epoch = 0;
    double best_val_accuracy = -1.0;
    double learning_rate = 0.0;

    friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, version_mismatch, inconsistent_layout, short_read };

    CheckpointError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

void save_checkpoint(const Model& model, const TrainingMetadata& metadata, const std::filesystem::path& path);

struct LoadedCheckpoint {
    Model model;
    TrainingMetadata metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sepnet

#endif  // SEPNET_CHECKPOINT_HPP
