#include "sepnet/dataset.hpp"
#include "sepnet/image.hpp"
#include "sepnet/parallel.hpp"
#include "sepnet/rng.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace sepnet;
namespace fs = std::filesystem;

namespace {

Image gray_ramp(int w, int h, bool decreasing) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(decreasing ? 250 - 10 * x : 10 * x);
    return img;
}

Image noise_image(int w, int h, Rng& rng) {
    Image img(w, h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

void write_gray_png(const fs::path& path, int w, int h, std::uint8_t value) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = w;
    png.height = h;
    png.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h, value);
    ASSERT_TRUE(png_image_write_to_file(&png, path.string().c_str(), 0, px.data(), 0, nullptr));
}

void write_jpeg(const fs::path& path, const Image& img) {
    jpeg_compress_struct info{};
    jpeg_error_mgr err{};
    info.err = jpeg_std_error(&err);
    jpeg_create_compress(&info);
    FILE* f = std::fopen(path.string().c_str(), "wb");
    jpeg_stdio_dest(&info, f);
    info.image_width = img.width;
    info.image_height = img.height;
    info.input_components = 3;
    info.in_color_space = JCS_RGB;
    jpeg_set_defaults(&info);
    jpeg_set_quality(&info, 100, TRUE);
    jpeg_start_compress(&info, TRUE);
    while (info.next_scanline < info.image_height) {
        JSAMPROW row = const_cast<std::uint8_t*>(img.pixels.data()) + info.next_scanline * img.width * 3;
        jpeg_write_scanlines(&info, &row, 1);
    }
    jpeg_finish_compress(&info);
    jpeg_destroy_compress(&info);
    std::fclose(f);
}

void write_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream(path, std::ios::binary) << bytes;
}

ManifestEntry entry(const std::string& path, int label, Split split, const std::string& content, std::uint64_t phash) {
    return {path, label, split, sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(content.data()), content.size())),
            phash};
}

// Brute-force oracle: all pairs, adjacency + DFS components.
std::vector<Cluster> brute_force_near(const DatasetManifest& m, int t) {
    const std::size_t n = m.entries.size();
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto& a = m.entries[i];
            const auto& b = m.entries[j];
            if (a.content_hash == b.content_hash || std::popcount(a.phash ^ b.phash) <= t) {
                adj[i].push_back(j);
                adj[j].push_back(i);
            }
        }
    std::vector<bool> seen(n);
    std::vector<Cluster> out;
    for (std::size_t s = 0; s < n; ++s) {
        if (seen[s]) continue;
        Cluster c;
        std::vector<std::size_t> stack{s};
        seen[s] = true;
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            c.push_back(m.entries[v].path);
            for (auto w : adj[v])
                if (!seen[w]) {
                    seen[w] = true;
                    stack.push_back(w);
                }
        }
        if (c.size() > 1) {
            std::sort(c.begin(), c.end());
            out.push_back(c);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Images

TEST(LoadImage, BlackAndWhiteMapToMinusOneAndOne) {
    auto dir = testutil::scratch_dir("load_bw");
    write_png(dir / "black.png", Image(5, 7, 0));
    write_png(dir / "white.png", Image(5, 7, 255));
    const Tensor black = load_image(dir / "black.png", 8), white = load_image(dir / "white.png", 8);
    EXPECT_EQ(black.shape(), (Shape{1, 8, 8, 3}));
    for (float v : black.values()) EXPECT_EQ(v, -1.0f);
    for (float v : white.values()) EXPECT_EQ(v, 1.0f);
}

TEST(LoadImage, BilinearUpscaleMatchesHandInterpolation) {
    // 2x2 -> 4x4 with half-pixel centres samples source coordinates
    // -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
    Image img(2, 2);
    const double px[2][2] = {{10, 50}, {90, 210}};
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(px[y][x] + c);
    const double w[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
    Tensor t = image_to_tensor(img, 4, Normalization{1.0, 0.0});
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox)
            for (int c = 0; c < 3; ++c) {
                double expect = 0;
                for (int y = 0; y < 2; ++y)
                    for (int x = 0; x < 2; ++x) expect += w[oy][y] * w[ox][x] * (px[y][x] + c);
                EXPECT_NEAR(t.at(0, oy, ox, c), expect, 1e-4) << oy << "," << ox << "," << c;
            }
}

TEST(LoadImage, SameSizeIsIdentityAndDownscaleAveragesPairs) {
    Rng rng(1);
    Image img = noise_image(6, 6, rng);
    Tensor same = image_to_tensor(img, 6, Normalization{1.0, 0.0});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(same.at(0, y, x, c), img.at(y, x, c));
    // 6 -> 3: centre of output pixel o is source coordinate 2o + 0.5.
    Tensor half = image_to_tensor(img, 3, Normalization{1.0, 0.0});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            double e = (img.at(2 * y, 2 * x, 0) + img.at(2 * y, 2 * x + 1, 0) + img.at(2 * y + 1, 2 * x, 0) +
                        img.at(2 * y + 1, 2 * x + 1, 0)) / 4.0;
            EXPECT_NEAR(half.at(0, y, x, 0), e, 1e-4);
        }
}

TEST(LoadImage, NormalizationRoundTripsEveryByte) {
    Normalization n;
    for (int v = 0; v <= 255; ++v) {
        float x = n.normalize(v);
        EXPECT_GE(x, -1.0f);
        EXPECT_LE(x, 1.0f);
        EXPECT_LE(std::abs(n.denormalize(x) - v), 0.5);
    }
}

TEST(LoadImage, GrayscaleIsReplicatedAcrossChannels) {
    auto dir = testutil::scratch_dir("load_gray");
    write_gray_png(dir / "g.png", 3, 3, 51);
    Image img = decode_image(dir / "g.png");
    for (auto p : img.pixels) EXPECT_EQ(p, 51);
    const Tensor t = load_image(dir / "g.png", 3);
    for (float v : t.values()) EXPECT_NEAR(v, 51 / 127.5 - 1, 1e-6);
}

TEST(LoadImage, DecodesJpeg) {
    auto dir = testutil::scratch_dir("load_jpeg");
    Image img(16, 16, 0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            img.at(y, x, 0) = 200;
            img.at(y, x, 1) = 100;
            img.at(y, x, 2) = 30;
        }
    write_jpeg(dir / "a.jpg", img);
    Image back = decode_image(dir / "a.jpg");
    ASSERT_EQ(back.width, 16);
    ASSERT_EQ(back.height, 16);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 3);
}

TEST(LoadImage, PngRoundTripIsExact) {
    auto dir = testutil::scratch_dir("png_rt");
    Rng rng(2);
    Image img = noise_image(13, 5, rng);
    write_png(dir / "n.png", img);
    Image back = decode_image(dir / "n.png");
    EXPECT_EQ(back.width, 13);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.pixels, img.pixels);
}

TEST(LoadImage, ErrorsNameThePath) {
    auto dir = testutil::scratch_dir("load_err");
    write_bytes(dir / "junk.png", "definitely not an image");
    write_bytes(dir / "broken.png", std::string("\x89PNG\r\n\x1a\n", 8) + "truncated");
    write_bytes(dir / "broken.jpg", "\xff\xd8\xff\xe0 nope");
    for (const char* name : {"junk.png", "broken.png", "broken.jpg", "missing.png"}) {
        try {
            load_image(dir / name, 8);
            FAIL() << name << " loaded";
        } catch (const ImageError& e) {
            EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
        }
    }
}

// ---------------------------------------------------------------------------
// dHash

TEST(DHash, ConstantImageIsZero) {
    EXPECT_EQ(dhash64(Image(40, 30, 128)), 0u);
}

TEST(DHash, DecreasingRampSetsEveryBit) {
    EXPECT_EQ(dhash64(gray_ramp(18, 8, true)), ~std::uint64_t{0});
    EXPECT_EQ(dhash64(gray_ramp(25, 11, true)), ~std::uint64_t{0});
    EXPECT_EQ(dhash64(gray_ramp(18, 8, false)), 0u);
}

TEST(DHash, NineByEightImageUsesPixelsDirectly) {
    Rng rng(3);
    Image img(9, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 9; ++x) {
            auto v = static_cast<std::uint8_t>(rng.below(256));
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
    std::uint64_t expect = 0;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            if (img.at(r, c, 0) > img.at(r, c + 1, 0)) expect |= std::uint64_t{1} << (r * 8 + c);
    EXPECT_EQ(dhash64(img), expect);

    // Blowing every pixel up to a 3x3 block leaves the area averages unchanged.
    Image big(27, 24);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 27; ++x)
            for (int c = 0; c < 3; ++c) big.at(y, x, c) = img.at(y / 3, x / 3, c);
    EXPECT_EQ(dhash64(big), expect);
}

TEST(DHash, UsesBt601Luma) {
    // Left half pure green (luma 149.7), right half pure red (luma 76.2); cell 4
    // straddles the boundary and averages the two.
    Image img(18, 8, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 18; ++x) img.at(y, x, x < 9 ? 1 : 0) = 255;
    std::uint64_t h = dhash64(img);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) EXPECT_EQ((h >> (r * 8 + c)) & 1, (c == 3 || c == 4) ? 1u : 0u) << r << "," << c;
}

TEST(DHash, HammingBasicsAndBrightnessShift) {
    EXPECT_EQ(hamming(0x1234, 0x1234), 0);
    EXPECT_EQ(hamming(0, ~std::uint64_t{0}), 64);
    EXPECT_EQ(hamming(0b1011, 0b0001), 2);
    Rng rng(4);
    Image img = noise_image(64, 64, rng);
    Image brighter = img;
    for (auto& p : brighter.pixels) p = static_cast<std::uint8_t>(std::min(255, p + 1));
    EXPECT_LE(hamming(dhash64(img), dhash64(brighter)), 8);
}

TEST(DHash, HexRoundTrip) {
    EXPECT_EQ(hash_to_hex(0x00ff00000000abcdULL), "00ff00000000abcd");
    EXPECT_EQ(hash_from_hex("00ff00000000abcd"), 0x00ff00000000abcdULL);
    EXPECT_THROW(hash_from_hex("xyz"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Manifest

TEST(Manifest, Sha256KnownVectors) {
    auto bytes = [](std::string_view s) {
        return std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
    };
    EXPECT_EQ(sha256_hex(bytes("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(bytes("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Manifest, BuildsOneSortedEntryPerImage) {
    auto dir = testutil::scratch_dir("manifest_build");
    fs::create_directories(dir / "b_class");
    fs::create_directories(dir / "a_class");
    Rng rng(5);
    Image shared = noise_image(12, 12, rng);
    for (const char* f : {"z.png", "m.png", "a.png"}) write_png(dir / "a_class" / f, noise_image(12, 12, rng));
    write_png(dir / "b_class" / "x.png", shared);
    write_png(dir / "b_class" / "y.png", shared);
    write_png(dir / "b_class" / "c.png", noise_image(12, 12, rng));

    DatasetManifest m = build_manifest(dir);
    ASSERT_EQ(m.entries.size(), 6u);
    EXPECT_EQ(m.class_names, (std::vector<std::string>{"a_class", "b_class"}));
    std::vector<std::string> paths;
    for (const auto& e : m.entries) paths.push_back(e.path);
    EXPECT_EQ(paths, (std::vector<std::string>{"a_class/a.png", "a_class/m.png", "a_class/z.png", "b_class/c.png",
                                               "b_class/x.png", "b_class/y.png"}));
    for (int i = 0; i < 6; ++i) {
        EXPECT_EQ(m.entries[i].label, i < 3 ? 0 : 1);
        EXPECT_EQ(m.entries[i].split, Split::none);
        EXPECT_EQ(m.entries[i].content_hash, sha256_file(dir / m.entries[i].path));
        EXPECT_EQ(m.entries[i].phash, dhash64(dir / m.entries[i].path));
    }
    EXPECT_EQ(m.entries[4].content_hash, m.entries[5].content_hash);
    EXPECT_NE(m.entries[3].content_hash, m.entries[4].content_hash);
}

TEST(Manifest, IndependentOfThreadCount) {
    auto dir = testutil::scratch_dir("manifest_threads");
    Rng rng(6);
    for (const char* c : {"n", "p"}) {
        fs::create_directories(dir / c);
        for (int i = 0; i < 10; ++i) write_png(dir / c / (std::to_string(i) + ".png"), noise_image(10, 10, rng));
    }
    set_num_threads(1);
    auto a = build_manifest(dir);
    set_num_threads(4);
    auto b = build_manifest(dir);
    set_num_threads(1);
    EXPECT_EQ(a.entries, b.entries);
}

TEST(Manifest, RejectsBadDirectories) {
    auto dir = testutil::scratch_dir("manifest_bad");
    EXPECT_THROW(build_manifest(dir / "missing"), DatasetError);
    fs::create_directories(dir / "a");
    write_png(dir / "a" / "x.png", Image(4, 4));
    EXPECT_THROW(build_manifest(dir), DatasetError);  // one class
    fs::create_directories(dir / "b");
    try {
        build_manifest(dir);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("empty"), std::string::npos) << e.what();
    }
}

TEST(Manifest, TextRoundTripWithFixedHeaderAndLf) {
    DatasetManifest m;
    m.entries = {entry("neg/a.png", 0, Split::train, "a", 0x1), entry("neg/b.png", 0, Split::none, "b", 0xff),
                 entry("pos/c.png", 1, Split::test, "c", 0xfedcba9876543210ULL)};
    m.class_names = {"neg", "pos"};
    std::ostringstream out;
    write_manifest(out, m);
    const std::string text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "path,label,split,content_hash,phash");
    EXPECT_EQ(text.find('\r'), std::string::npos);
    EXPECT_NE(text.find("neg/b.png,0,," + m.entries[1].content_hash + ",00000000000000ff\n"), std::string::npos);
    std::istringstream in(text);
    DatasetManifest back = read_manifest(in);
    EXPECT_EQ(back.entries, m.entries);
    EXPECT_EQ(back.class_names, m.class_names);
}

TEST(Manifest, MalformedRowNamesTheLine) {
    const std::string good = "neg/a.png,0,train," + std::string(64, 'a') + ",0000000000000001\n";
    for (const std::string& bad : {std::string("neg/x.png,0,train\n"), "neg/x.png,2,train," + std::string(64, 'a') + ",0000000000000001\n",
                                   "neg/x.png,0,holdout," + std::string(64, 'a') + ",0000000000000001\n",
                                   good}) {
        std::istringstream in(std::string(kManifestHeader) + "\n" + good + bad);
        try {
            read_manifest(in);
            FAIL() << bad;
        } catch (const DatasetError& e) {
            EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
        }
    }
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

DatasetManifest synthetic_manifest(int per_class) {
    DatasetManifest m;
    m.class_names = {"neg", "pos"};
    for (int label = 0; label < 2; ++label)
        for (int i = 0; i < per_class; ++i) {
            std::string p = m.class_names[label] + "/" + std::to_string(i) + ".png";
            m.entries.push_back(entry(p, label, Split::none, p, static_cast<std::uint64_t>(i)));
        }
    return m;
}

}  // namespace

TEST(Split, DefaultFractionsOnTableSizedManifest) {
    DatasetManifest s = split_dataset(synthetic_manifest(1507), SplitSpec{}, 7);
    for (int label = 0; label < 2; ++label) {
        EXPECT_EQ(s.count(label, Split::train), 1327);
        EXPECT_EQ(s.count(label, Split::val), 40);
        EXPECT_EQ(s.count(label, Split::test), 140);
        EXPECT_EQ(s.count(label, Split::none), 0);
    }
}

TEST(Split, ExplicitCountsAreExactAndOverdrawIsRejected) {
    auto m = synthetic_manifest(100);
    auto s = split_dataset(m, SplitSpec::from_counts(5, 7, 60), 1);
    for (int label = 0; label < 2; ++label) {
        EXPECT_EQ(s.count(label, Split::val), 5);
        EXPECT_EQ(s.count(label, Split::test), 7);
        EXPECT_EQ(s.count(label, Split::train), 60);
        EXPECT_EQ(s.count(label, Split::none), 28);
    }
    EXPECT_THROW(split_dataset(m, SplitSpec::from_counts(50, 50, 1), 1), DatasetError);
    EXPECT_THROW(split_dataset(synthetic_manifest(1507), SplitSpec::from_counts(80, 140, 1327), 1), DatasetError);
}

TEST(Split, DeterministicDisjointAndOrderIndependent) {
    auto m = synthetic_manifest(200);
    auto a = split_dataset(m, SplitSpec{}, 11);
    auto b = split_dataset(m, SplitSpec{}, 11);
    EXPECT_EQ(a.entries, b.entries);
    auto c = split_dataset(m, SplitSpec{}, 12);
    EXPECT_NE(a.entries, c.entries);

    EXPECT_EQ(a.entries.size(), m.entries.size());
    std::set<std::string> all;
    for (Split s : {Split::train, Split::val, Split::test})
        for (const auto* e : a.in_split(s)) EXPECT_TRUE(all.insert(e->path).second);
    EXPECT_EQ(all.size(), m.entries.size());

    auto shuffled = m;
    Rng rng(3);
    rng.shuffle(shuffled.entries.begin(), shuffled.entries.end());
    auto d = split_dataset(shuffled, SplitSpec{}, 11);
    std::map<std::string, Split> by_path;
    for (const auto& e : a.entries) by_path[e.path] = e.split;
    for (const auto& e : d.entries) EXPECT_EQ(by_path[e.path], e.split);
}

// ---------------------------------------------------------------------------
// Dedup

TEST(Dedup, IdenticalFilesAcrossSplitsAreOneLeakingCluster) {
    DatasetManifest m;
    m.entries = {entry("neg/a.png", 0, Split::train, "same", 0x0f0f), entry("neg/b.png", 0, Split::test, "same", 0x0f0f),
                 entry("neg/c.png", 0, Split::train, "other", 0xffff000000000000ULL)};
    auto r = dedup_scan(m);
    ASSERT_EQ(r.exact.size(), 1u);
    EXPECT_EQ(r.exact[0], (Cluster{"neg/a.png", "neg/b.png"}));
    ASSERT_EQ(r.leaks.size(), 1u);
    EXPECT_EQ(r.leaks[0], r.exact[0]);
}

TEST(Dedup, SameSplitDuplicatesAreNotLeaks) {
    DatasetManifest m;
    m.entries = {entry("neg/a.png", 0, Split::train, "same", 1), entry("neg/b.png", 0, Split::train, "same", 1),
                 entry("neg/c.png", 0, Split::none, "x", 1)};
    auto r = dedup_scan(m);
    EXPECT_EQ(r.near.size(), 1u);
    EXPECT_TRUE(r.leaks.empty());
}

TEST(Dedup, NearDuplicatesChainThroughThreshold) {
    DatasetManifest m;
    const std::uint64_t base = 0x0123456789abcdefULL;
    const std::uint64_t step1 = base ^ 0xffULL;                  // 8 bits from base
    const std::uint64_t step2 = step1 ^ (0xffULL << 8);          // 8 from step1, 16 from base
    const std::uint64_t far = base ^ 0x0000ffff0000ffffULL;      // 32 from base
    m.entries = {entry("a", 0, Split::train, "1", base), entry("b", 0, Split::val, "2", step1),
                 entry("c", 0, Split::test, "3", step2), entry("d", 0, Split::test, "4", far)};
    auto r = dedup_scan(m, 8);
    EXPECT_TRUE(r.exact.empty());
    ASSERT_EQ(r.near.size(), 1u);
    EXPECT_EQ(r.near[0], (Cluster{"a", "b", "c"}));
    EXPECT_EQ(r.leaks.size(), 1u);
    EXPECT_TRUE(dedup_scan(m, 7).near.empty());
}

TEST(Dedup, MatchesBruteForceOnRandomHashes) {
    for (int t : {0, 3, 8, 12}) {
        Rng rng(100 + t);
        DatasetManifest m;
        std::vector<std::uint64_t> hashes;
        for (int i = 0; i < 300; ++i) {
            std::uint64_t h;
            if (!hashes.empty() && rng.uniform() < 0.4) {
                h = hashes[rng.below(hashes.size())];
                for (int f = static_cast<int>(rng.below(12)); f > 0; --f) h ^= std::uint64_t{1} << rng.below(64);
            } else {
                h = rng.next_u64();
            }
            hashes.push_back(h);
            std::string content = rng.uniform() < 0.1 ? "dup" + std::to_string(rng.below(5)) : "u" + std::to_string(i);
            m.entries.push_back(entry("img" + std::to_string(i), i % 2, static_cast<Split>(1 + rng.below(3)), content, h));
        }
        auto r = dedup_scan(m, t);
        EXPECT_EQ(r.near, brute_force_near(m, t)) << "threshold " << t;

        auto shuffled = m;
        rng.shuffle(shuffled.entries.begin(), shuffled.entries.end());
        EXPECT_EQ(dedup_scan(shuffled, t), r);
    }
}

TEST(Dedup, RealImagesWithPlantedDuplicates) {
    auto dir = testutil::scratch_dir("dedup_images");
    fs::create_directories(dir / "neg");
    fs::create_directories(dir / "pos");
    Rng rng(9);
    std::vector<Image> imgs;
    for (int i = 0; i < 30; ++i) {
        imgs.push_back(noise_image(32, 32, rng));
        write_png(dir / (i % 2 ? "pos" : "neg") / ("img" + std::to_string(i) + ".png"), imgs.back());
    }
    write_png(dir / "neg" / "copy_of_0.png", imgs[0]);
    Image bright = imgs[1];
    for (auto& p : bright.pixels) p = static_cast<std::uint8_t>(std::min(255, p + 1));
    write_png(dir / "pos" / "bright_1.png", bright);

    auto m = build_manifest(dir);
    auto r = dedup_scan(m);
    EXPECT_EQ(r.exact, (std::vector<Cluster>{{"neg/copy_of_0.png", "neg/img0.png"}}));
    EXPECT_EQ(r.near, brute_force_near(m, 8));
    bool bright_clustered = false;
    for (const auto& c : r.near) bright_clustered |= c == Cluster{"pos/bright_1.png", "pos/img1.png"};
    EXPECT_TRUE(bright_clustered);
}

// ---------------------------------------------------------------------------
// Batches

namespace {

fs::path tiny_dataset(const std::string& name, int count, DatasetManifest& m) {
    auto dir = testutil::scratch_dir(name);
    fs::create_directories(dir / "neg");
    fs::create_directories(dir / "pos");
    for (int i = 0; i < count; ++i) {
        const int label = i % 2;
        Image img(4, 4, static_cast<std::uint8_t>(i % 256));
        std::string p = std::string(label ? "pos" : "neg") + "/" + std::to_string(i) + ".png";
        write_png(dir / p, img);
        m.entries.push_back({p, label, Split::train, "", 0});
    }
    m.class_names = {"neg", "pos"};
    return dir;
}

}  // namespace

TEST(Batches, SizesAndCoverage) {
    DatasetManifest m;
    auto dir = tiny_dataset("batches_300", 300, m);
    auto loader = make_loader(dir, m, Split::train, 80, 4, 21);
    EXPECT_EQ(loader.batch_count(), 4);
    std::vector<Index> sizes;
    std::multiset<int> seen_values;
    loader.for_each(loader.epoch_order(0), [&](const Batch& b) {
        sizes.push_back(b.images.dim(0));
        EXPECT_EQ(static_cast<Index>(b.labels.size()), b.images.dim(0));
        for (Index n = 0; n < b.images.dim(0); ++n) {
            for (float v : std::span(b.images.data() + n * 48, 48)) {
                EXPECT_GE(v, -1.0f);
                EXPECT_LE(v, 1.0f);
            }
            seen_values.insert(static_cast<int>(std::lround(Normalization{}.denormalize(b.images.at(n, 0, 0, 0)))) +
                               1000 * b.labels[static_cast<std::size_t>(n)]);
        }
    });
    EXPECT_EQ(sizes, (std::vector<Index>{80, 80, 80, 60}));
    std::multiset<int> expect;
    for (int i = 0; i < 300; ++i) expect.insert(i % 256 + 1000 * (i % 2));
    EXPECT_EQ(seen_values, expect);
}

TEST(Batches, OrderIsSeededPerEpoch) {
    DatasetManifest m;
    auto dir = tiny_dataset("batches_order", 50, m);
    auto a = make_loader(dir, m, Split::train, 8, 4, 5);
    auto b = make_loader(dir, m, Split::train, 8, 4, 5);
    EXPECT_EQ(a.epoch_order(3), b.epoch_order(3));
    EXPECT_NE(a.epoch_order(3), a.epoch_order(4));
    auto order = a.epoch_order(0);
    std::sort(order.begin(), order.end());
    EXPECT_EQ(order, a.sequential_order());
    EXPECT_NE(make_loader(dir, m, Split::train, 8, 4, 6).epoch_order(3), a.epoch_order(3));
}

TEST(Batches, PreloadAndThreadsDoNotChangeContent) {
    DatasetManifest m;
    auto dir = tiny_dataset("batches_preload", 20, m);
    auto plain = make_loader(dir, m, Split::train, 7, 8, 1);
    auto cached = make_loader(dir, m, Split::train, 7, 8, 1, true);
    set_num_threads(3);
    auto order = plain.epoch_order(2);
    std::vector<Tensor> x, y;
    plain.for_each(order, [&](const Batch& b) { x.push_back(b.images); });
    set_num_threads(1);
    cached.for_each(order, [&](const Batch& b) { y.push_back(b.images); });
    EXPECT_EQ(x, y);
}

TEST(Batches, EmptySplitAndDecodeErrors) {
    DatasetManifest m;
    auto dir = tiny_dataset("batches_err", 4, m);
    EXPECT_THROW(make_loader(dir, m, Split::val, 2, 4, 0), DatasetError);
    fs::remove(dir / m.entries[1].path);
    auto loader = make_loader(dir, m, Split::train, 2, 4, 0);
    EXPECT_THROW(loader.for_each(loader.sequential_order(), [](const Batch&) {}), DatasetError);
}
