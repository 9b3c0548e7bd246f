#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lic/data.hpp"
#include "lic/entropy.hpp"
#include "lic/error.hpp"
#include "lic/model.hpp"
#include "lic/tensor.hpp"

namespace lic {

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

// 10*log10(1/mse) on the [0,1] scale; the reconstruction is clamped into
// [0,1] first. Zero error reports the infinity sentinel.
inline double psnr(const Tensor& x, const Tensor& x_hat) {
    detail::check_same_shape(x, x_hat, "psnr");
    const auto& a = x.data();
    const auto& b = x_hat.data();
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - std::clamp(b[i], 0.0, 1.0);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------------------
// RD points and curves
// ---------------------------------------------------------------------------

struct RDPoint {
    std::string model_id;
    double lambda = 0.0;
    double bpp = 0.0;
    double psnr_db = 0.0;
};

struct RDCurve {
    std::string id;
    std::vector<RDPoint> points;  // kept sorted by bpp

    void sort_points() {
        std::sort(points.begin(), points.end(),
                  [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    }
};

namespace detail {

// Reflect-fold of index t into [0, n): 0 1 .. n-1 n-2 n-3 .. repeating.
inline int64_t reflect_index(int64_t t, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * n - 2;
    int64_t m = t % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

// Pads [3,H,W] on the bottom/right to [3,Hp,Wp] by reflection.
inline Tensor reflect_pad(const Tensor& img, int64_t hp, int64_t wp) {
    const int64_t h = img.dim(1), w = img.dim(2);
    std::vector<double> out(static_cast<size_t>(3 * hp * wp));
    const auto& v = img.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < hp; ++y) {
            const int64_t sy = reflect_index(y, h);
            for (int64_t x = 0; x < wp; ++x)
                out[static_cast<size_t>((c * hp + y) * wp + x)] =
                    v[static_cast<size_t>((c * h + sy) * w + reflect_index(x, w))];
        }
    return Tensor::from_data({3, hp, wp}, std::move(out));
}

}  // namespace detail

// Total downsampling between the image and the innermost latent: the padding
// granularity evaluation must respect.
inline int64_t downsampling_block(const ModelState& m) {
    return m.arch == Arch::hyper ? 64 : 16;
}

// Evaluates a model over a dataset with hard-rounding quantization. Per
// image: reflect-pad to the downsampling block, encode, measure bits against
// the ORIGINAL pixel count, reconstruct, crop back, and take PSNR. The
// dataset means use dataset order (deterministic).
inline RDPoint eval_model(const ModelState& m, const Dataset& images,
                          const std::string& model_id) {
    if (images.empty()) throw DataError("eval_model: empty dataset");
    const int64_t block = downsampling_block(m);
    double bpp_sum = 0.0, psnr_sum = 0.0;
    for (const ImageRecord& rec : images) {
        const int64_t h = rec.height(), w = rec.width();
        if (h < block || w < block)
            throw DataError("eval_model: image '" + rec.id + "' (" + std::to_string(w) +
                            "x" + std::to_string(h) +
                            ") is smaller than one downsampling block (" +
                            std::to_string(block) + ")");
        const int64_t hp = (h + block - 1) / block * block;
        const int64_t wp = (w + block - 1) / block * block;
        Tensor padded =
            (hp == h && wp == w) ? rec.pixels : detail::reflect_pad(rec.pixels, hp, wp);
        Tensor x = Tensor::from_data({1, 3, hp, wp}, padded.data());
        ForwardResult fr = forward_eval(m, x);

        double bits = bits_estimate(fr.p_y, h * w);
        if (m.arch == Arch::hyper) bits += bits_estimate(fr.p_z, h * w);
        bpp_sum += bits;

        std::vector<double> crop(static_cast<size_t>(3 * h * w));
        const auto& xh = fr.x_hat.data();
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx)
                    crop[static_cast<size_t>((c * h + y) * w + xx)] =
                        xh[static_cast<size_t>((c * hp + y) * wp + xx)];
        psnr_sum += psnr(rec.pixels, Tensor::from_data({3, h, w}, std::move(crop)));
    }
    RDPoint pt;
    pt.model_id = model_id;
    pt.lambda = m.lambda;
    pt.bpp = bpp_sum / static_cast<double>(images.size());
    pt.psnr_db = psnr_sum / static_cast<double>(images.size());
    return pt;
}

// ---------------------------------------------------------------------------
// Bjontegaard deltas
// ---------------------------------------------------------------------------

struct BDResult {
    double bd_rate_percent = 0.0;
    double bd_psnr_db = 0.0;
    double overlap_lo = 0.0;  // rate overlap used for BD-PSNR, in bpp
    double overlap_hi = 0.0;
};

namespace detail {

// Least-squares polynomial fit with a shifted/scaled abscissa for
// conditioning. Returns coefficients of p(u) = sum c_k u^k together with the
// transform u = (x - shift) / scale.
struct PolyFit {
    std::array<double, 4> coeff{};  // c0..c3 (c3 = 0 for quadratics)
    int degree = 0;
    double shift = 0.0, scale = 1.0;

    double eval(double x) const {
        const double u = (x - shift) / scale;
        return ((coeff[3] * u + coeff[2]) * u + coeff[1]) * u + coeff[0];
    }

    // Exact mean value over [lo, hi] via the antiderivative.
    double mean_over(double lo, double hi) const {
        auto anti = [&](double x) {
            const double u = (x - shift) / scale;
            return scale * (coeff[0] * u + coeff[1] * u * u / 2.0 +
                            coeff[2] * u * u * u / 3.0 + coeff[3] * u * u * u * u / 4.0);
        };
        return (anti(hi) - anti(lo)) / (hi - lo);
    }
};

inline PolyFit polyfit(const std::vector<double>& xs, const std::vector<double>& ys,
                       int degree) {
    const size_t n = xs.size();
    PolyFit fit;
    fit.degree = degree;
    double lo = xs[0], hi = xs[0];
    for (double x : xs) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    fit.shift = 0.5 * (lo + hi);
    fit.scale = hi > lo ? 0.5 * (hi - lo) : 1.0;

    // Normal equations A c = b for the scaled Vandermonde system.
    const int m = degree + 1;
    double A[4][4] = {};
    double b[4] = {};
    for (size_t i = 0; i < n; ++i) {
        double pw[4] = {1.0, 0.0, 0.0, 0.0};
        const double u = (xs[i] - fit.shift) / fit.scale;
        for (int k = 1; k < m; ++k) pw[k] = pw[k - 1] * u;
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < m; ++c) A[r][c] += pw[r] * pw[c];
            b[r] += pw[r] * ys[i];
        }
    }
    // Gaussian elimination with partial pivoting (m <= 4).
    int piv[4] = {0, 1, 2, 3};
    for (int col = 0; col < m; ++col) {
        int best = col;
        for (int r = col + 1; r < m; ++r)
            if (std::abs(A[piv[r]][col]) > std::abs(A[piv[best]][col])) best = r;
        std::swap(piv[col], piv[best]);
        const double d = A[piv[col]][col];
        if (d == 0.0) throw NumericError("polyfit: singular normal equations");
        for (int r = col + 1; r < m; ++r) {
            const double f = A[piv[r]][col] / d;
            for (int c = col; c < m; ++c) A[piv[r]][c] -= f * A[piv[col]][c];
            b[piv[r]] -= f * b[piv[col]];
        }
    }
    for (int col = m - 1; col >= 0; --col) {
        double acc = b[piv[col]];
        for (int c = col + 1; c < m; ++c) acc -= A[piv[col]][c] * fit.coeff[c];
        fit.coeff[col] = acc / A[piv[col]][col];
    }
    return fit;
}

inline void check_curve(const RDCurve& curve) {
    if (curve.points.size() < 3)
        throw ContractError("bd_metrics: curve '" + curve.id + "' has " +
                            std::to_string(curve.points.size()) +
                            " points; at least 3 are required");
    for (const RDPoint& p : curve.points) {
        if (!(p.bpp > 0.0) || !std::isfinite(p.bpp))
            throw ContractError("bd_metrics: curve '" + curve.id +
                                "' has a non-positive or non-finite rate");
        if (!std::isfinite(p.psnr_db))
            throw ContractError("bd_metrics: curve '" + curve.id +
                                "' has a non-finite PSNR");
    }
}

}  // namespace detail

// Classic polynomial Bjontegaard deltas between two RD curves: PSNR is fit
// as a polynomial in log10(rate) (cubic for >= 4 points, quadratic for 3);
// BD-PSNR is the mean vertical gap over the shared rate interval, BD-rate
// comes from the inverse fit over the shared PSNR interval as
// (10^mean_gap - 1) * 100. Empty overlap is an error, never a NaN.
inline BDResult bd_metrics(const RDCurve& anchor, const RDCurve& test) {
    detail::check_curve(anchor);
    detail::check_curve(test);
    auto log_rates = [](const RDCurve& c) {
        std::vector<double> xs;
        for (const RDPoint& p : c.points) xs.push_back(std::log10(p.bpp));
        return xs;
    };
    auto psnrs = [](const RDCurve& c) {
        std::vector<double> ys;
        for (const RDPoint& p : c.points) ys.push_back(p.psnr_db);
        return ys;
    };
    const std::vector<double> xa = log_rates(anchor), ya = psnrs(anchor);
    const std::vector<double> xt = log_rates(test), yt = psnrs(test);
    const int deg_a = anchor.points.size() >= 4 ? 3 : 2;
    const int deg_t = test.points.size() >= 4 ? 3 : 2;

    BDResult out;
    {
        // Vertical (PSNR) gap over the shared log-rate interval.
        const double lo = std::max(*std::min_element(xa.begin(), xa.end()),
                                   *std::min_element(xt.begin(), xt.end()));
        const double hi = std::min(*std::max_element(xa.begin(), xa.end()),
                                   *std::max_element(xt.begin(), xt.end()));
        if (!(hi > lo))
            throw DataError("bd_metrics: rate ranges of '" + anchor.id + "' and '" +
                            test.id + "' do not overlap");
        detail::PolyFit fa = detail::polyfit(xa, ya, deg_a);
        detail::PolyFit ft = detail::polyfit(xt, yt, deg_t);
        out.bd_psnr_db = ft.mean_over(lo, hi) - fa.mean_over(lo, hi);
        out.overlap_lo = std::pow(10.0, lo);
        out.overlap_hi = std::pow(10.0, hi);
    }
    {
        // Horizontal (log-rate) gap over the shared PSNR interval.
        const double lo = std::max(*std::min_element(ya.begin(), ya.end()),
                                   *std::min_element(yt.begin(), yt.end()));
        const double hi = std::min(*std::max_element(ya.begin(), ya.end()),
                                   *std::max_element(yt.begin(), yt.end()));
        if (!(hi > lo))
            throw DataError("bd_metrics: PSNR ranges of '" + anchor.id + "' and '" +
                            test.id + "' do not overlap");
        detail::PolyFit fa = detail::polyfit(ya, xa, deg_a);
        detail::PolyFit ft = detail::polyfit(yt, xt, deg_t);
        const double delta = ft.mean_over(lo, hi) - fa.mean_over(lo, hi);
        out.bd_rate_percent = (std::pow(10.0, delta) - 1.0) * 100.0;
    }
    return out;
}

struct BDRow {
    std::string anchor_id;
    std::string test_id;
    BDResult bd;
};

// Anchor-vs-each-reduced-model comparison table.
inline std::vector<BDRow> compare_to_anchor(const RDCurve& anchor,
                                            const std::vector<RDCurve>& tests) {
    std::vector<BDRow> rows;
    for (const RDCurve& t : tests) rows.push_back({anchor.id, t.id, bd_metrics(anchor, t)});
    return rows;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline std::string rd_csv(const std::vector<RDPoint>& points) {
    std::string out = "model_id,lambda,bpp,psnr_db\n";
    char buf[256];
    for (const RDPoint& p : points) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", p.model_id.c_str(),
                      p.lambda, p.bpp, p.psnr_db);
        out += buf;
    }
    return out;
}

// Parses the rd_csv format back into points. Rejects a wrong header and any
// row that does not hold exactly model_id plus three numbers.
inline std::vector<RDPoint> parse_rd_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "model_id,lambda,bpp,psnr_db")
        throw FormatError("rd csv: missing or wrong header (expected "
                          "'model_id,lambda,bpp,psnr_db')");
    std::vector<RDPoint> points;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        for (size_t pos = 0; pos <= line.size(); ++pos) {
            if (pos == line.size() || line[pos] == ',') {
                fields.push_back(line.substr(start, pos - start));
                start = pos + 1;
            }
        }
        if (fields.size() != 4)
            throw FormatError("rd csv: line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected 4");
        RDPoint p;
        p.model_id = fields[0];
        auto num = [&](const std::string& s, const char* what) {
            size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != s.size())
                throw FormatError("rd csv: line " + std::to_string(line_no) +
                                  ": bad " + std::string(what) + " value '" + s + "'");
            return v;
        };
        p.lambda = num(fields[1], "lambda");
        p.bpp = num(fields[2], "bpp");
        p.psnr_db = num(fields[3], "psnr_db");
        points.push_back(p);
    }
    return points;
}

inline std::string bd_csv(const std::vector<BDRow>& rows) {
    std::string out = "anchor_id,test_id,bd_rate_percent,bd_psnr_db,overlap_lo,overlap_hi\n";
    char buf[320];
    for (const BDRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g\n",
                      r.anchor_id.c_str(), r.test_id.c_str(), r.bd.bd_rate_percent,
                      r.bd.bd_psnr_db, r.bd.overlap_lo, r.bd.overlap_hi);
        out += buf;
    }
    return out;
}

}  // namespace lic
