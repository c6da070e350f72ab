#include "sepnet/checkpoint.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace sepnet {

namespace {

using json = nlohmann::json;
using Kind = CheckpointError::Kind;

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

json config_to_json(const ModelConfig& c) {
    return json{{"alpha", c.alpha},
                {"resolution", c.resolution},
                {"depth_multiplier", c.depth_multiplier},
                {"variant", std::string(to_string(c.variant))},
                {"head", std::string(to_string(c.head))},
                {"use_batchnorm", c.use_batchnorm},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.alpha = j.at("alpha").get<double>();
    c.resolution = j.at("resolution").get<int>();
    c.depth_multiplier = j.at("depth_multiplier").get<int>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.head = parse_head(j.at("head").get<std::string>());
    c.use_batchnorm = j.at("use_batchnorm").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainingMetadata& metadata, const std::filesystem::path& path) {
    json tensors = json::array();
    std::string payload;
    for (const auto& [name, tensor] : model.parameters()) {
        tensors.push_back({{"name", name}, {"shape", tensor->shape()}, {"offset", payload.size()}});
        for (float v : tensor->values()) put_le(payload, std::bit_cast<std::uint32_t>(v));
    }
    json header{{"config", config_to_json(model.config())},
                {"metadata",
                 {{"epoch", metadata.epoch},
                  {"best_val_accuracy", metadata.best_val_accuracy},
                  {"learning_rate", metadata.learning_rate}}},
                {"tensors", std::move(tensors)},
                {"payload_bytes", payload.size()}};
    const std::string text = header.dump();

    std::string file(kCheckpointMagic, 4);
    put_le(file, kCheckpointVersion);
    put_le(file, static_cast<std::uint64_t>(text.size()));
    file += text;
    file += payload;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::io, "cannot open " + path.string() + " for writing");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw CheckpointError(Kind::io, "write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(Kind::io, "cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";

    constexpr std::size_t kPreamble = 4 + 4 + 8;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw CheckpointError(Kind::bad_magic, where + "not a checkpoint (bad magic)");
    }
    if (bytes.size() < kPreamble) throw CheckpointError(Kind::short_read, where + "truncated preamble");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::version_mismatch, where + "unsupported version " + std::to_string(version) +
                                                          " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
    if (bytes.size() - kPreamble < header_len) throw CheckpointError(Kind::short_read, where + "truncated header");

    json header;
    ModelConfig config;
    TrainingMetadata metadata;
    std::uint64_t payload_bytes = 0;
    try {
        header = json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
        config = config_from_json(header.at("config"));
        const json& m = header.at("metadata");
        metadata.epoch = m.at("epoch").get<int>();
        metadata.best_val_accuracy = m.at("best_val_accuracy").get<double>();
        metadata.learning_rate = m.at("learning_rate").get<double>();
        payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    } catch (const std::exception& e) {
        throw CheckpointError(Kind::inconsistent_layout, where + "malformed header: " + e.what());
    }

    Model model = build_model(config);
    std::map<std::string, Tensor*> by_name;
    for (auto& p : model.parameters()) by_name[p.name] = p.tensor;

    const std::size_t payload_start = kPreamble + header_len;
    const std::size_t available = bytes.size() - payload_start;
    std::uint64_t expected_offset = 0;
    std::size_t seen = 0;
    for (const json& t : header.at("tensors")) {
        std::string name;
        Shape shape;
        std::uint64_t offset = 0;
        try {
            name = t.at("name").get<std::string>();
            shape = t.at("shape").get<Shape>();
            offset = t.at("offset").get<std::uint64_t>();
        } catch (const std::exception& e) {
            throw CheckpointError(Kind::inconsistent_layout, where + "bad tensor entry: " + e.what());
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw CheckpointError(Kind::inconsistent_layout, where + "unknown tensor " + name);
        }
        Tensor& target = *it->second;
        if (shape != target.shape()) {
            throw CheckpointError(Kind::inconsistent_layout, where + "tensor " + name + " has shape " +
                                                                 shape_to_string(shape) + ", model expects " +
                                                                 shape_to_string(target.shape()));
        }
        if (offset != expected_offset) {
            throw CheckpointError(Kind::inconsistent_layout, where + "tensor " + name + " at offset " +
                                                                 std::to_string(offset) + ", expected " +
                                                                 std::to_string(expected_offset));
        }
        const std::uint64_t nbytes = static_cast<std::uint64_t>(target.size()) * 4;
        if (offset + nbytes > available) {
            throw CheckpointError(Kind::short_read, where + "tensor " + name + " truncated (" +
                                                        std::to_string(available) + " payload bytes present, need " +
                                                        std::to_string(offset + nbytes) + ")");
        }
        const unsigned char* src = bytes.data() + payload_start + offset;
        for (Index i = 0; i < target.size(); ++i) {
            target[i] = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
        }
        expected_offset += nbytes;
        ++seen;
    }
    if (seen != by_name.size()) {
        throw CheckpointError(Kind::inconsistent_layout, where + "checkpoint lists " + std::to_string(seen) +
                                                             " tensors, model has " + std::to_string(by_name.size()));
    }
    if (expected_offset != payload_bytes || available != payload_bytes) {
        if (available < payload_bytes) throw CheckpointError(Kind::short_read, where + "payload truncated");
        throw CheckpointError(Kind::inconsistent_layout, where + "payload size mismatch");
    }
    return {std::move(model), metadata};
}

}  // namespace sepnet
