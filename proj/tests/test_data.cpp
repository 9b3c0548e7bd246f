#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lic/data.hpp"
#include "lic/rng.hpp"

using namespace lic;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

ImageRecord gradient_record(int64_t h, int64_t w) {
    std::vector<double> v(static_cast<size_t>(3 * h * w));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                v[static_cast<size_t>((c * h + y) * w + x)] =
                    static_cast<double>(c * h * w + y * w + x) /
                    static_cast<double>(3 * h * w);
    ImageRecord rec;
    rec.id = "gradient";
    rec.pixels = Tensor::from_data({3, h, w}, std::move(v));
    rec.source = "unit-test";
    return rec;
}

}  // namespace

// ---------------------------------------------------------------------------
// PPM
// ---------------------------------------------------------------------------

TEST_CASE("ppm: save then load recovers byte-quantized pixels", "[ppm]") {
    const fs::path dir = fresh_dir("lic_test_ppm_roundtrip");
    const fs::path path = dir / "grad.ppm";
    ImageRecord rec = gradient_record(16, 20);
    save_ppm(rec, path.string());

    ImageRecord back = load_ppm(path.string());
    CHECK(back.id == "grad");
    CHECK(back.height() == 16);
    CHECK(back.width() == 20);
    const auto& a = rec.pixels.data();
    const auto& b = back.pixels.data();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        const double stored = std::lround(std::clamp(a[i], 0.0, 1.0) * 255.0) / 255.0;
        CHECK(b[i] == Approx(stored).margin(1e-15));
    }

    // A canonical-header file is a byte-level fixed point of save(load(.)).
    const std::string first = read_bytes(path);
    save_ppm(back, (dir / "again.ppm").string());
    CHECK(read_bytes(dir / "again.ppm") == first);
    CHECK(first.substr(0, 13) == "P6\n20 16\n255\n");
    fs::remove_all(dir);
}

TEST_CASE("ppm: header comments and loose whitespace parse", "[ppm]") {
    const fs::path dir = fresh_dir("lic_test_ppm_loose");
    const fs::path path = dir / "loose.ppm";
    std::string bytes = "P6 # magic\n# a comment line\n  2\t3 # dims\n255\n";
    for (int i = 0; i < 18; ++i) bytes.push_back(static_cast<char>(7 * i));
    write_bytes(path, bytes);
    ImageRecord rec = load_ppm(path.string());
    CHECK(rec.width() == 2);
    CHECK(rec.height() == 3);
    // First raw byte is pixel (0,0) red: planar index (0*3+0)*2+0.
    CHECK(rec.pixels.data()[0] == Approx(0.0));
    // Second raw byte is its green value -> plane 1.
    CHECK(rec.pixels.data()[static_cast<size_t>(1 * 3 * 2)] == Approx(7.0 / 255.0));
    fs::remove_all(dir);
}

TEST_CASE("ppm: tiny images load but are rejected at the pipeline entry", "[ppm]") {
    const fs::path dir = fresh_dir("lic_test_ppm_tiny");
    const fs::path path = dir / "white.ppm";
    std::string bytes = "P6\n2 2\n255\n";
    bytes.append(12, static_cast<char>(0xFF));
    write_bytes(path, bytes);

    ImageRecord rec = load_ppm(path.string());
    CHECK(rec.width() == 2);
    CHECK(rec.height() == 2);
    for (double v : rec.pixels.data()) CHECK(v == 1.0);

    CHECK_THROWS_WITH(load_dataset_dir(dir.string()),
                      ContainsSubstring("at least 16x16"));
    fs::remove_all(dir);
}

TEST_CASE("ppm: malformed files are rejected with clear messages", "[ppm]") {
    const fs::path dir = fresh_dir("lic_test_ppm_bad");
    auto path = [&](const char* name) { return (dir / name).string(); };

    SECTION("missing file") {
        CHECK_THROWS_WITH(load_ppm(path("nope.ppm")), ContainsSubstring("cannot open"));
    }
    SECTION("wrong magic") {
        write_bytes(dir / "p5.ppm", "P5\n2 2\n255\n----");
        CHECK_THROWS_WITH(load_ppm(path("p5.ppm")), ContainsSubstring("bad magic"));
    }
    SECTION("malformed width") {
        write_bytes(dir / "w.ppm", "P6\nab 2\n255\n");
        CHECK_THROWS_WITH(load_ppm(path("w.ppm")), ContainsSubstring("malformed width"));
    }
    SECTION("zero dimension") {
        write_bytes(dir / "z.ppm", "P6\n0 2\n255\n");
        CHECK_THROWS_WITH(load_ppm(path("z.ppm")), ContainsSubstring("empty dimensions"));
    }
    SECTION("16-bit maxval") {
        write_bytes(dir / "m.ppm", "P6\n2 2\n65535\n");
        CHECK_THROWS_WITH(load_ppm(path("m.ppm")),
                          ContainsSubstring("maxval 65535") &&
                              ContainsSubstring("only 255"));
    }
    SECTION("truncated pixels report byte counts") {
        std::string bytes = "P6\n2 2\n255\n";
        bytes.append(7, 'x');  // needs 12
        write_bytes(dir / "t.ppm", bytes);
        CHECK_THROWS_WITH(load_ppm(path("t.ppm")),
                          ContainsSubstring("truncated") &&
                              ContainsSubstring("12") && ContainsSubstring("7"));
    }
    fs::remove_all(dir);
}

TEST_CASE("ppm: save clamps out-of-range values", "[ppm]") {
    const fs::path dir = fresh_dir("lic_test_ppm_clamp");
    ImageRecord rec;
    rec.id = "clamp";
    std::vector<double> v(static_cast<size_t>(3 * 1 * 2), 0.0);
    v[0] = -0.5;
    v[1] = 1.5;
    rec.pixels = Tensor::from_data({3, 1, 2}, std::move(v));
    save_ppm(rec, (dir / "clamp.ppm").string());
    const std::string bytes = read_bytes(dir / "clamp.ppm");
    const std::string body = bytes.substr(bytes.size() - 6);
    CHECK(static_cast<unsigned char>(body[0]) == 0);    // clamped low
    CHECK(static_cast<unsigned char>(body[3]) == 255);  // clamped high
    CHECK_THROWS_AS(save_ppm(ImageRecord{}, (dir / "x.ppm").string()), ContractError);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

TEST_CASE("synth_dataset: deterministic and per-image stable", "[synth]") {
    Dataset a = synth_dataset(3, 32, 5);
    Dataset b = synth_dataset(3, 32, 5);
    REQUIRE(a.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(a[i].id == "synth_" + std::to_string(i));
        CHECK(a[i].pixels.shape() == std::vector<int64_t>{3, 32, 32});
        CHECK(a[i].pixels.data() == b[i].pixels.data());
    }

    // Image i depends only on (seed, i): growing the set never reshuffles it.
    Dataset longer = synth_dataset(5, 32, 5);
    CHECK(longer[2].pixels.data() == a[2].pixels.data());

    Dataset other = synth_dataset(3, 32, 6);
    CHECK(other[0].pixels.data() != a[0].pixels.data());
}

TEST_CASE("synth_dataset: values in range with real structure", "[synth]") {
    Dataset ds = synth_dataset(16, 64, 123);
    for (const ImageRecord& rec : ds) {
        double lo = 1e9, hi = -1e9, sum = 0.0, sum2 = 0.0;
        for (double v : rec.pixels.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
            sum2 += v * v;
        }
        const double n = static_cast<double>(rec.pixels.numel());
        const double mean = sum / n;
        const double stdev = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
        CHECK(lo >= 0.0);
        CHECK(hi <= 1.0);
        CHECK(stdev > 0.05);  // not a flat card
    }
}

TEST_CASE("synth_dataset: contract errors", "[synth]") {
    CHECK_THROWS_AS(synth_dataset(0, 32, 1), ContractError);
    CHECK_THROWS_AS(synth_dataset(2, 8, 1), ContractError);
    CHECK_THROWS_AS(synth_dataset(2, 20, 1), ContractError);
}

// ---------------------------------------------------------------------------
// Crops and batches
// ---------------------------------------------------------------------------

TEST_CASE("random_crop: replicates the documented two-draw stream", "[crop]") {
    ImageRecord rec = gradient_record(24, 30);
    Rng rng(77);
    Tensor crop = random_crop(rec, 8, rng);
    CHECK(crop.shape() == std::vector<int64_t>{3, 8, 8});

    Rng replay(77);
    const int64_t y0 = static_cast<int64_t>(replay.next_below(24 - 8 + 1));
    const int64_t x0 = static_cast<int64_t>(replay.next_below(30 - 8 + 1));
    const auto& src = rec.pixels.data();
    const auto& dst = crop.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x)
                CHECK(dst[static_cast<size_t>((c * 8 + y) * 8 + x)] ==
                      src[static_cast<size_t>((c * 24 + y0 + y) * 30 + x0 + x)]);
}

TEST_CASE("random_crop: full-extent crop is the identity", "[crop]") {
    ImageRecord rec = gradient_record(16, 16);
    Rng rng(1);
    Tensor crop = random_crop(rec, 16, rng);
    CHECK(crop.data() == rec.pixels.data());
}

TEST_CASE("random_crop: bounds", "[crop]") {
    ImageRecord rec = gradient_record(16, 20);
    Rng rng(1);
    CHECK_THROWS_AS(random_crop(rec, 17, rng), ContractError);
    CHECK_THROWS_AS(random_crop(rec, 0, rng), ContractError);
    // patch == min extent is legal even for non-square images
    CHECK(random_crop(rec, 16, rng).shape() == std::vector<int64_t>{3, 16, 16});
}

TEST_CASE("stack_batch: order, shape, and errors", "[batch]") {
    Tensor a = Tensor::full({3, 2, 2}, 0.25);
    Tensor b = Tensor::full({3, 2, 2}, 0.75);
    Tensor batch = stack_batch({a, b});
    CHECK(batch.shape() == std::vector<int64_t>{2, 3, 2, 2});
    CHECK(batch.data()[0] == 0.25);
    CHECK(batch.data()[12] == 0.75);

    CHECK_THROWS_AS(stack_batch({}), ContractError);
    CHECK_THROWS_AS(stack_batch({a, Tensor::full({3, 2, 3}, 0.0)}), DimensionError);
}

// ---------------------------------------------------------------------------
// Directory loading
// ---------------------------------------------------------------------------

TEST_CASE("load_dataset_dir: sorted order, ppm filter, errors", "[dir]") {
    const fs::path dir = fresh_dir("lic_test_dataset_dir");
    ImageRecord rec = gradient_record(16, 16);
    save_ppm(rec, (dir / "b_second.ppm").string());
    save_ppm(rec, (dir / "a_first.ppm").string());
    write_bytes(dir / "notes.txt", "not an image");

    Dataset ds = load_dataset_dir(dir.string());
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].id == "a_first");
    CHECK(ds[1].id == "b_second");
    CHECK(ds[0].source == (dir / "a_first.ppm").string());

    SECTION("not a directory") {
        CHECK_THROWS_AS(load_dataset_dir((dir / "a_first.ppm").string()), DataError);
    }
    SECTION("no ppm files") {
        const fs::path empty = fresh_dir("lic_test_dataset_empty");
        write_bytes(empty / "readme.txt", "x");
        CHECK_THROWS_WITH(load_dataset_dir(empty.string()),
                          ContainsSubstring("no .ppm files"));
        fs::remove_all(empty);
    }
    fs::remove_all(dir);
}
