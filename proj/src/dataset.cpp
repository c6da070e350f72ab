#include "sepnet/dataset.hpp"

#include "sepnet/parallel.hpp"
#include "sepnet/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace sepnet {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::none: break;
    }
    return "";
}

Split parse_split(std::string_view s) {
    if (s.empty()) return Split::none;
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + std::string(s) + "' (expected train, val, test or empty)");
}

std::vector<const ManifestEntry*> DatasetManifest::in_split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == s) out.push_back(&e);
    return out;
}

Index DatasetManifest::count(int label, Split s) const {
    return std::count_if(entries.begin(), entries.end(),
                         [&](const ManifestEntry& e) { return e.label == label && e.split == s; });
}

// ---------------------------------------------------------------------------
// Manifest text format

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string class_of(const std::string& path) { return path.substr(0, path.find('/')); }

void assign_class_names(DatasetManifest& m) {
    std::map<int, std::string> names;
    for (const auto& e : m.entries) {
        auto [it, inserted] = names.emplace(e.label, class_of(e.path));
        if (!inserted && it->second != class_of(e.path)) {
            throw DatasetError("label " + std::to_string(e.label) + " is used by both '" + it->second + "' and '" +
                               class_of(e.path) + "'");
        }
    }
    m.class_names.clear();
    for (const auto& [label, name] : names) {
        if (label != static_cast<int>(m.class_names.size())) {
            throw DatasetError("labels must be 0.." + std::to_string(names.size() - 1));
        }
        m.class_names.push_back(name);
    }
}

}  // namespace

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
    out << kManifestHeader << '\n';
    for (const auto& e : manifest.entries) {
        out << e.path << ',' << e.label << ',' << to_string(e.split) << ',' << e.content_hash << ','
            << hash_to_hex(e.phash) << '\n';
    }
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write manifest " + path.string());
    write_manifest(out, manifest);
    if (!out) throw DatasetError("error writing manifest " + path.string());
}

DatasetManifest read_manifest(std::istream& in) {
    DatasetManifest m;
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) {
        throw DatasetError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
    }
    std::set<std::string> seen;
    for (int lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        const auto where = "manifest line " + std::to_string(lineno) + ": ";
        auto f = split_fields(line);
        if (f.size() != 5) throw DatasetError(where + "expected 5 fields, got " + std::to_string(f.size()));
        ManifestEntry e;
        e.path = f[0];
        if (e.path.empty() || !seen.insert(e.path).second) throw DatasetError(where + "empty or repeated path");
        if (f[1] != "0" && f[1] != "1") throw DatasetError(where + "label must be 0 or 1, got '" + f[1] + "'");
        e.label = f[1][0] - '0';
        try {
            e.split = parse_split(f[2]);
            e.phash = hash_from_hex(f[4]);
        } catch (const std::invalid_argument& ex) {
            throw DatasetError(where + ex.what());
        }
        if (f[3].size() != 64 || f[3].find_first_not_of("0123456789abcdef") != std::string::npos) {
            throw DatasetError(where + "content_hash must be 64 lowercase hex digits");
        }
        e.content_hash = f[3];
        m.entries.push_back(std::move(e));
    }
    assign_class_names(m);
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open manifest " + path.string());
    return read_manifest(in);
}

// ---------------------------------------------------------------------------
// Hashing and manifest construction

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) {
        throw DatasetError("SHA-256 failed");
    }
    std::string hex;
    static constexpr char digits[] = "0123456789abcdef";
    for (unsigned int i = 0; i < len; ++i) {
        hex += digits[digest[i] >> 4];
        hex += digits[digest[i] & 0xf];
    }
    return hex;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

DatasetManifest build_manifest(const fs::path& root) {
    if (!fs::is_directory(root)) throw DatasetError("data directory " + root.string() + " does not exist");
    std::vector<std::string> classes;
    for (const auto& d : fs::directory_iterator(root))
        if (d.is_directory()) classes.push_back(d.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.size() != 2) {
        throw DatasetError("data directory " + root.string() + " must contain exactly 2 class subdirectories, found " +
                           std::to_string(classes.size()));
    }

    DatasetManifest m;
    m.class_names = classes;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        std::vector<std::string> files;
        for (const auto& f : fs::directory_iterator(root / classes[label]))
            if (f.is_regular_file()) files.push_back(classes[label] + "/" + f.path().filename().string());
        if (files.empty()) throw DatasetError("class directory " + (root / classes[label]).string() + " is empty");
        std::sort(files.begin(), files.end());
        for (auto& f : files) m.entries.push_back({std::move(f), static_cast<int>(label), Split::none, "", 0});
    }

    std::vector<std::string> errors(m.entries.size());
    parallel_for(static_cast<Index>(m.entries.size()), [&](Index i) {
        auto& e = m.entries[static_cast<std::size_t>(i)];
        try {
            e.content_hash = sha256_file(root / e.path);
            e.phash = dhash64(root / e.path);
        } catch (const std::exception& ex) {
            errors[static_cast<std::size_t>(i)] = ex.what();
        }
    });
    for (const auto& err : errors)
        if (!err.empty()) throw DatasetError(err);
    return m;
}

// ---------------------------------------------------------------------------
// Splitting

SplitSpec SplitSpec::from_counts(Index val, Index test, std::optional<Index> train) {
    SplitSpec s;
    s.counts = Counts{train, val, test};
    return s;
}

SplitSpec SplitSpec::from_fractions(double val, double test) {
    if (!(val >= 0 && test >= 0 && val + test <= 1)) {
        throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");
    }
    SplitSpec s;
    s.val_fraction = val;
    s.test_fraction = test;
    return s;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitSpec& spec, std::uint64_t seed) {
    DatasetManifest out = manifest;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < out.entries.size(); ++i) by_class[out.entries[i].label].push_back(i);

    for (auto& [label, idx] : by_class) {
        const auto n = static_cast<Index>(idx.size());
        Index val, test, train;
        if (spec.counts) {
            val = spec.counts->val;
            test = spec.counts->test;
            train = spec.counts->train.value_or(n - val - test);
        } else {
            val = std::llround(n * spec.val_fraction);
            test = std::llround(n * spec.test_fraction);
            train = n - val - test;
        }
        if (val < 0 || test < 0 || train < 0 || val + test + train > n) {
            throw DatasetError("class " + std::to_string(label) + " has " + std::to_string(n) +
                               " images, cannot split into train " + std::to_string(train) + " / val " +
                               std::to_string(val) + " / test " + std::to_string(test));
        }
        // Sort by path first so the result does not depend on manifest order.
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return out.entries[a].path < out.entries[b].path; });
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(label));
        rng.shuffle(idx.begin(), idx.end());
        for (Index k = 0; k < n; ++k) {
            Split s = k < val ? Split::val : k < val + test ? Split::test : k < val + test + train ? Split::train
                                                                                                    : Split::none;
            out.entries[idx[static_cast<std::size_t>(k)]].split = s;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dedup

namespace {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

std::vector<Cluster> collect(UnionFind& uf, const std::vector<const ManifestEntry*>& items) {
    std::map<std::size_t, Cluster> groups;
    for (std::size_t i = 0; i < items.size(); ++i) groups[uf.find(i)].push_back(items[i]->path);
    std::vector<Cluster> out;
    for (auto& [root, c] : groups) {
        if (c.size() < 2) continue;
        std::sort(c.begin(), c.end());
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

DedupReport dedup_scan(const DatasetManifest& manifest, int hamming_threshold) {
    if (hamming_threshold < 0 || hamming_threshold > 63) {
        throw std::invalid_argument("hamming threshold must be in [0, 63]");
    }
    std::vector<const ManifestEntry*> items;
    for (const auto& e : manifest.entries) items.push_back(&e);
    std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->path < b->path; });
    const std::size_t n = items.size();

    DedupReport report;
    report.threshold = hamming_threshold;

    UnionFind exact(n), near(n);
    std::unordered_map<std::string, std::size_t> first_with_hash;
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, inserted] = first_with_hash.emplace(items[i]->content_hash, i);
        if (!inserted) {
            exact.unite(it->second, i);
            near.unite(it->second, i);
        }
    }

    const int chunks = hamming_threshold + 1;
    for (int k = 0; k < chunks; ++k) {
        const int lo = 64 * k / chunks, hi = 64 * (k + 1) / chunks;
        const std::uint64_t mask = (hi - lo == 64) ? ~std::uint64_t{0} : ((std::uint64_t{1} << (hi - lo)) - 1);
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
        for (std::size_t i = 0; i < n; ++i) buckets[(items[i]->phash >> lo) & mask].push_back(i);
        for (const auto& [key, members] : buckets)
            for (std::size_t a = 0; a < members.size(); ++a)
                for (std::size_t b = a + 1; b < members.size(); ++b)
                    if (hamming(items[members[a]]->phash, items[members[b]]->phash) <= hamming_threshold)
                        near.unite(members[a], members[b]);
    }

    report.exact = collect(exact, items);
    report.near = collect(near, items);

    std::unordered_map<std::string, Split> split_of;
    for (const auto* e : items) split_of[e->path] = e->split;
    for (const auto& c : report.near) {
        std::set<Split> splits;
        for (const auto& p : c)
            if (split_of[p] != Split::none) splits.insert(split_of[p]);
        if (splits.size() >= 2) report.leaks.push_back(c);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Batches

BatchLoader::BatchLoader(fs::path root, std::vector<ManifestEntry> items, int batch_size, int resolution,
                         std::uint64_t seed, bool preload, Normalization norm)
    : root_(std::move(root)),
      items_(std::move(items)),
      batch_size_(batch_size),
      resolution_(resolution),
      seed_(seed),
      norm_(norm) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1, got " + std::to_string(batch_size));
    if (items_.empty()) throw DatasetError("cannot build batches from an empty split");
    if (preload) {
        std::vector<Tensor> cache(items_.size());
        std::vector<std::string> errors(items_.size());
        parallel_for(size(), [&](Index i) {
            try {
                cache[static_cast<std::size_t>(i)] = load(i);
            } catch (const std::exception& ex) {
                errors[static_cast<std::size_t>(i)] = ex.what();
            }
        });
        for (const auto& err : errors)
            if (!err.empty()) throw DatasetError(err);
        cache_ = std::move(cache);
    }
}

Tensor BatchLoader::load(Index i) const {
    if (!cache_.empty()) return cache_[static_cast<std::size_t>(i)];
    return load_image(root_ / items_[static_cast<std::size_t>(i)].path, resolution_, norm_);
}

std::vector<Index> BatchLoader::epoch_order(int epoch) const {
    std::vector<Index> order = sequential_order();
    Rng rng = Rng::derive(seed_, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());
    return order;
}

std::vector<Index> BatchLoader::sequential_order() const {
    std::vector<Index> order(items_.size());
    std::iota(order.begin(), order.end(), Index{0});
    return order;
}

Batch BatchLoader::make_batch(std::span<const Index> indices) const {
    const auto n = static_cast<Index>(indices.size());
    const Index per = static_cast<Index>(resolution_) * resolution_ * 3;
    Batch b{Tensor({n, resolution_, resolution_, 3}), std::vector<int>(indices.size())};
    std::vector<std::string> errors(indices.size());
    parallel_for(n, [&](Index k) {
        try {
            Tensor t = load(indices[static_cast<std::size_t>(k)]);
            std::copy(t.data(), t.data() + per, b.images.data() + k * per);
        } catch (const std::exception& ex) {
            errors[static_cast<std::size_t>(k)] = ex.what();
        }
    });
    for (const auto& err : errors)
        if (!err.empty()) throw DatasetError(err);
    for (std::size_t k = 0; k < indices.size(); ++k) b.labels[k] = items_[static_cast<std::size_t>(indices[k])].label;
    return b;
}

void BatchLoader::for_each(const std::vector<Index>& order, const std::function<void(const Batch&)>& fn) const {
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
        const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(batch_size_));
        fn(make_batch(std::span<const Index>(order.data() + start, len)));
    }
}

BatchLoader make_loader(const fs::path& root, const DatasetManifest& manifest, Split s, int batch_size, int resolution,
                        std::uint64_t seed, bool preload) {
    std::vector<ManifestEntry> items;
    for (const auto* e : manifest.in_split(s)) items.push_back(*e);
    if (items.empty()) throw DatasetError("manifest has no '" + std::string(to_string(s)) + "' entries");
    return BatchLoader(root, std::move(items), batch_size, resolution, seed, preload);
}

}  // namespace sepnet
