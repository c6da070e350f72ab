#ifndef SEPNET_DATASET_HPP
#define SEPNET_DATASET_HPP

#include "sepnet/image.hpp"
#include "sepnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sepnet {

enum class Split { none, train, val, test };

/// "" for none.
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct ManifestEntry {
    std::string path;  // relative to the dataset root, '/' separated
    int label = 0;
    Split split = Split::none;
    std::string content_hash;  // SHA-256 of the file bytes, lowercase hex
    std::uint64_t phash = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;  // index = label

    std::vector<const ManifestEntry*> in_split(Split s) const;
    Index count(int label, Split s) const;
};

inline constexpr std::string_view kManifestHeader = "path,label,split,content_hash,phash";

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Text form: kManifestHeader, then one LF-terminated row per entry.
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Errors name the offending line.
DatasetManifest read_manifest(std::istream& in);
DatasetManifest load_manifest(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Every subdirectory of root is a class, labelled in lexicographic order of
/// its name; every regular file inside it is an image. Entries are sorted by
/// path. Files are hashed concurrently.
DatasetManifest build_manifest(const std::filesystem::path& root);

/// Either per-class counts or fractions of each class. A missing train count
/// means "everything not assigned to val or test".
struct SplitSpec {
    struct Counts {
        std::optional<Index> train;
        Index val = 0;
        Index test = 0;
    };
    std::optional<Counts> counts;
    double val_fraction = 80.0 / 3014.0;
    double test_fraction = 280.0 / 3014.0;

    static SplitSpec from_counts(Index val, Index test, std::optional<Index> train = std::nullopt);
    static SplitSpec from_fractions(double val, double test);
};

/// Stratified per class: each class is shuffled with a stream derived from
/// (seed, label) and cut into val, test, train. Entries beyond the requested
/// counts are left with Split::none.
DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Duplicate detection

/// A cluster is a sorted list of manifest paths.
using Cluster = std::vector<std::string>;

struct DedupReport {
    int threshold = 8;
    std::vector<Cluster> exact;  // equal content hash
    std::vector<Cluster> near;   // closure of (equal content) or (phash Hamming <= threshold)
    std::vector<Cluster> leaks;  // near clusters whose members carry >= 2 distinct splits

    friend bool operator==(const DedupReport&, const DedupReport&) = default;
};

/// Candidate pairs come from multi-index hashing on threshold+1 disjoint bit
/// chunks of the phash (pigeonhole: any pair within the threshold agrees on at
/// least one chunk), then are verified exactly. Output is sorted and does not
/// depend on manifest order.
DedupReport dedup_scan(const DatasetManifest& manifest, int hamming_threshold = 8);

// ---------------------------------------------------------------------------
// Batches

struct Batch {
    Tensor images;  // N x res x res x 3
    std::vector<int> labels;
};

/// Serves one split in batches. The order for an epoch is a shuffle seeded by
/// (seed, epoch); the last batch may be short. Decoding runs across the
/// configured threads, assembled in index order.
class BatchLoader {
public:
    BatchLoader(std::filesystem::path root, std::vector<ManifestEntry> items, int batch_size, int resolution,
                std::uint64_t seed, bool preload = false, Normalization norm = {});

    Index size() const { return static_cast<Index>(items_.size()); }
    Index batch_count() const { return (size() + batch_size_ - 1) / batch_size_; }
    int batch_size() const { return batch_size_; }
    int resolution() const { return resolution_; }
    const std::vector<ManifestEntry>& items() const { return items_; }

    std::vector<Index> epoch_order(int epoch) const;
    /// Natural (manifest) order, for evaluation.
    std::vector<Index> sequential_order() const;

    Batch make_batch(std::span<const Index> indices) const;

    /// Calls fn for each batch of `order`.
    void for_each(const std::vector<Index>& order, const std::function<void(const Batch&)>& fn) const;

private:
    Tensor load(Index i) const;

    std::filesystem::path root_;
    std::vector<ManifestEntry> items_;
    int batch_size_;
    int resolution_;
    std::uint64_t seed_;
    Normalization norm_;
    std::vector<Tensor> cache_;
};

/// Loader over the entries of `manifest` in split `s`.
BatchLoader make_loader(const std::filesystem::path& root, const DatasetManifest& manifest, Split s, int batch_size,
                        int resolution, std::uint64_t seed, bool preload = false);

}  // namespace sepnet

#endif  // SEPNET_DATASET_HPP
