#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lic/error.hpp"
#include "lic/rng.hpp"
#include "lic/tensor.hpp"

namespace lic {

// One image in the pipeline's working form: planar RGB, values in [0,1].
struct ImageRecord {
    std::string id;      // filename stem or synthetic tag
    Tensor pixels;       // [3, H, W]
    std::string source;  // file path or synthesis descriptor

    int64_t height() const { return pixels.dim(1); }
    int64_t width() const { return pixels.dim(2); }
};

using Dataset = std::vector<ImageRecord>;

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------------

namespace detail {

// Reads one whitespace-delimited token, skipping '#' comments.
inline std::string ppm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace detail

inline ImageRecord load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_ppm: cannot open '" + path + "'");
    if (detail::ppm_token(f) != "P6")
        throw FormatError("load_ppm: '" + path + "' is not a P6 PPM (bad magic)");
    auto parse_dim = [&](const char* what) {
        const std::string tok = detail::ppm_token(f);
        if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
            throw FormatError("load_ppm: '" + path + "' has a malformed " +
                              std::string(what));
        return std::stoll(tok);
    };
    const int64_t w = parse_dim("width");
    const int64_t h = parse_dim("height");
    const int64_t maxval = parse_dim("maxval");
    if (w < 1 || h < 1)
        throw FormatError("load_ppm: '" + path + "' has empty dimensions");
    if (maxval != 255)
        throw FormatError("load_ppm: '" + path + "' has maxval " +
                          std::to_string(maxval) + "; only 255 is supported");
    // The header ends with exactly one whitespace byte (already consumed by
    // the tokenizer); raw interleaved RGB follows.
    std::vector<char> raw(static_cast<size_t>(3 * w * h));
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw FormatError("load_ppm: '" + path + "' is truncated (expected " +
                          std::to_string(raw.size()) + " pixel bytes, got " +
                          std::to_string(f.gcount()) + ")");

    std::vector<double> planar(static_cast<size_t>(3 * w * h));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                planar[static_cast<size_t>((c * h + y) * w + x)] =
                    static_cast<double>(static_cast<unsigned char>(
                        raw[static_cast<size_t>((y * w + x) * 3 + c)])) /
                    255.0;
    ImageRecord rec;
    rec.id = std::filesystem::path(path).stem().string();
    rec.pixels = Tensor::from_data({3, h, w}, std::move(planar));
    rec.source = path;
    return rec;
}

// Writes the canonical header "P6\n<w> <h>\n255\n" + raw bytes. Values are
// clamped to [0,1] and rounded to the nearest byte, so save(load(p)) is
// byte-identical for canonical-header files (and pixel-identical always).
inline void save_ppm(const ImageRecord& rec, const std::string& path) {
    if (!rec.pixels.defined() || rec.pixels.ndim() != 3 || rec.pixels.dim(0) != 3)
        throw ContractError("save_ppm: record pixels must be [3,H,W]");
    const int64_t h = rec.height(), w = rec.width();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("save_ppm: cannot open '" + path + "' for writing");
    f << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<char> raw(static_cast<size_t>(3 * w * h));
    const auto& v = rec.pixels.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const double p =
                    std::clamp(v[static_cast<size_t>((c * h + y) * w + x)], 0.0, 1.0);
                raw[static_cast<size_t>((y * w + x) * 3 + c)] =
                    static_cast<char>(static_cast<unsigned char>(std::lround(p * 255.0)));
            }
    f.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!f) throw FormatError("save_ppm: short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

// Deterministic compressible images built as a hierarchy of scales: a bimodal
// dark/bright base with a per-channel tint, large soft-edged discs at the
// opposite pole, low-frequency sinusoids, and a faint texture floor. Most of
// the cross-image variance sits in the few coarse factors, so the corpus has
// useful structure at every bit budget from "one bit per image" up. Image i
// depends only on (seed, i).
inline Dataset synth_dataset(int64_t n, int64_t size, uint64_t seed) {
    if (n < 1) throw ContractError("synth_dataset: n must be >= 1");
    if (size < 16 || size % 16 != 0)
        throw ContractError("synth_dataset: size must be a positive multiple of 16");
    Dataset out;
    out.reserve(static_cast<size_t>(n));
    const double inv = 1.0 / static_cast<double>(size);
    for (int64_t i = 0; i < n; ++i) {
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(i)));
        std::vector<double> img(static_cast<size_t>(3 * size * size));

        const bool bright = rng.next_below(2) == 1;
        const double base = bright ? rng.uniform(0.82, 0.94) : rng.uniform(0.06, 0.18);
        double tint[3];
        for (int c = 0; c < 3; ++c) tint[c] = rng.uniform(-0.10, 0.10);
        for (int64_t c = 0; c < 3; ++c)
            std::fill_n(img.begin() + c * size * size, size * size, base + tint[c]);

        // Discs at the opposite pole. The first one is large and central so
        // every card keeps real within-image contrast.
        const int64_t discs = 2 + static_cast<int64_t>(rng.next_below(2));
        for (int64_t kd = 0; kd < discs; ++kd) {
            const bool first = kd == 0;
            const double cx = first ? rng.uniform(0.3, 0.7) : rng.uniform(0.0, 1.0);
            const double cy = first ? rng.uniform(0.3, 0.7) : rng.uniform(0.0, 1.0);
            const double rad = first ? rng.uniform(0.25, 0.35) : rng.uniform(0.12, 0.30);
            const double feather = rng.uniform(0.02, 0.08);
            double col[3];
            for (int c = 0; c < 3; ++c)
                col[c] = (bright ? rng.uniform(0.05, 0.25) : rng.uniform(0.75, 0.95));
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x) {
                    const double dx = x * inv - cx, dy = y * inv - cy;
                    const double d = std::sqrt(dx * dx + dy * dy);
                    if (d >= rad) continue;
                    const double a = std::min(1.0, (rad - d) / feather);
                    for (int64_t c = 0; c < 3; ++c) {
                        double& p = img[static_cast<size_t>((c * size + y) * size + x)];
                        p = (1.0 - a) * p + a * col[c];
                    }
                }
        }

        const int64_t waves = 1 + static_cast<int64_t>(rng.next_below(2));
        for (int64_t kw = 0; kw < waves; ++kw) {
            const double phi = rng.uniform(0.0, 2.0 * M_PI);
            const double freq = rng.uniform(0.5, 3.0);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double amp = rng.uniform(0.04, 0.10);
            double wc[3];
            for (int c = 0; c < 3; ++c) wc[c] = rng.next_double();
            const double wx = std::cos(phi), wy = std::sin(phi);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x) {
                    const double u = (x * wx + y * wy) * inv;
                    const double s = amp * std::sin(2.0 * M_PI * freq * u + phase);
                    for (int64_t c = 0; c < 3; ++c)
                        img[static_cast<size_t>((c * size + y) * size + x)] += wc[c] * s;
                }
        }

        for (double& p : img) p += rng.uniform(-0.015, 0.015);

        for (double& p : img) p = std::clamp(p, 0.0, 1.0);
        ImageRecord rec;
        rec.id = "synth_" + std::to_string(i);
        rec.pixels = Tensor::from_data({3, size, size}, std::move(img));
        rec.source = "synthetic(seed=" + std::to_string(seed) +
                     ", index=" + std::to_string(i) + ")";
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Crops, batches, directory loading
// ---------------------------------------------------------------------------

// Uniformly positioned patch; consumes exactly two draws from the stream
// (row offset, then column offset).
inline Tensor random_crop(const ImageRecord& rec, int64_t patch, Rng& rng) {
    const int64_t h = rec.height(), w = rec.width();
    if (patch < 1 || patch > std::min(h, w))
        throw ContractError("random_crop: patch " + std::to_string(patch) +
                            " exceeds image extent " + std::to_string(h) + "x" +
                            std::to_string(w));
    const int64_t y0 = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(h - patch + 1)));
    const int64_t x0 = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(w - patch + 1)));
    std::vector<double> out(static_cast<size_t>(3 * patch * patch));
    const auto& v = rec.pixels.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < patch; ++y)
            for (int64_t x = 0; x < patch; ++x)
                out[static_cast<size_t>((c * patch + y) * patch + x)] =
                    v[static_cast<size_t>((c * h + y0 + y) * w + x0 + x)];
    return Tensor::from_data({3, patch, patch}, std::move(out));
}

// Stacks [3,H,W] tensors into one [B,3,H,W] batch.
inline Tensor stack_batch(const std::vector<Tensor>& images) {
    if (images.empty()) throw ContractError("stack_batch: empty batch");
    const auto& s = images.front().shape();
    std::vector<double> out;
    out.reserve(static_cast<size_t>(images.size()) * images.front().numel());
    for (const Tensor& t : images) {
        if (t.shape() != s) throw DimensionError("stack_batch: mixed shapes");
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor::from_data({static_cast<int64_t>(images.size()), s[0], s[1], s[2]},
                             std::move(out));
}

// Loads every .ppm in the directory in sorted filename order. This is the
// pipeline entry point, so the ImageRecord size invariant (H, W >= 16) is
// enforced here.
inline Dataset load_dataset_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("dataset path '" + dir + "' is not a directory");
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".ppm")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError("dataset directory '" + dir + "' has no .ppm files");
    Dataset out;
    out.reserve(paths.size());
    for (const std::string& p : paths) {
        ImageRecord rec = load_ppm(p);
        if (rec.height() < 16 || rec.width() < 16)
            throw DataError("image '" + p + "' is " + std::to_string(rec.width()) + "x" +
                            std::to_string(rec.height()) +
                            "; the pipeline needs at least 16x16");
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace lic
