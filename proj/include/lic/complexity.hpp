#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "lic/error.hpp"
#include "lic/layers.hpp"

namespace lic {

// Counting conventions (chosen to reproduce published relative-MACs and
// weight-size tables for this family of models):
//   - conv/deconv: k^2 * Cin * Cout MACs per spatial site of the layer's
//     OUTPUT, normalized per pixel of the network's input image, i.e.
//     divided by the cumulative downsampling factor squared at the output
//     (upsampling layers therefore divide by a factor < 1);
//   - gdn/igdn: Cin^2 per output site (one MAC per channel pair), same
//     normalization;
//   - relu and bias additions: 0 MACs;
//   - params: conv k^2*Cin*Cout + Cout, gdn C^2 + C; bytes at f32.

struct LayerComplexity {
    std::string description;
    double macs_per_pixel = 0.0;
    int64_t params = 0;
};

struct ComplexityReport {
    std::vector<LayerComplexity> layers;
    double total_macs_per_pixel = 0.0;
    int64_t total_params = 0;
    double megabytes = 0.0;
    double relative_macs = 1.0;  // vs the r=1 member of the same family
};

inline int64_t count_params(const NetworkSpec& spec) {
    validate_spec(spec);
    int64_t total = 0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::deconv:
                total += l.kernel * l.kernel * l.in_channels * l.out_channels +
                         l.out_channels;
                break;
            case LayerKind::gdn:
            case LayerKind::igdn:
                total += l.in_channels * l.in_channels + l.in_channels;
                break;
            case LayerKind::relu:
                break;
        }
    }
    return total;
}

inline double params_megabytes(int64_t params) {
    return static_cast<double>(params) * 4.0 / 1e6;
}

inline ComplexityReport count_macs_per_pixel(const NetworkSpec& spec,
                                             int64_t input_channels) {
    validate_spec(spec);
    if (input_channels != spec.layers.front().in_channels)
        throw ContractError("count_macs_per_pixel: spec expects " +
                            std::to_string(spec.layers.front().in_channels) +
                            " input channels, caller declared " +
                            std::to_string(input_channels));
    ComplexityReport report;
    double s_cum = 1.0;  // cumulative downsampling factor (input pixels per site)
    for (const LayerSpec& l : spec.layers) {
        LayerComplexity row;
        switch (l.kind) {
            case LayerKind::conv: {
                s_cum *= static_cast<double>(l.stride);
                row.macs_per_pixel = static_cast<double>(l.kernel * l.kernel *
                                                         l.in_channels * l.out_channels) /
                                     (s_cum * s_cum);
                row.params = l.kernel * l.kernel * l.in_channels * l.out_channels +
                             l.out_channels;
                row.description = "conv " + std::to_string(l.in_channels) + "->" +
                                  std::to_string(l.out_channels) + " k" +
                                  std::to_string(l.kernel) + " s" +
                                  std::to_string(l.stride);
                break;
            }
            case LayerKind::deconv: {
                s_cum /= static_cast<double>(l.stride);  // output resolution
                row.macs_per_pixel = static_cast<double>(l.kernel * l.kernel *
                                                         l.in_channels * l.out_channels) /
                                     (s_cum * s_cum);
                row.params = l.kernel * l.kernel * l.in_channels * l.out_channels +
                             l.out_channels;
                row.description = "deconv " + std::to_string(l.in_channels) + "->" +
                                  std::to_string(l.out_channels) + " k" +
                                  std::to_string(l.kernel) + " s" +
                                  std::to_string(l.stride);
                break;
            }
            case LayerKind::gdn:
            case LayerKind::igdn: {
                row.macs_per_pixel =
                    static_cast<double>(l.in_channels * l.in_channels) / (s_cum * s_cum);
                row.params = l.in_channels * l.in_channels + l.in_channels;
                row.description = std::string(l.kind == LayerKind::gdn ? "gdn" : "igdn") +
                                  " " + std::to_string(l.in_channels);
                break;
            }
            case LayerKind::relu:
                row.description = "relu " + std::to_string(l.in_channels);
                break;
        }
        report.total_macs_per_pixel += row.macs_per_pixel;
        report.total_params += row.params;
        report.layers.push_back(std::move(row));
    }
    report.megabytes = params_megabytes(report.total_params);
    return report;
}

// Independent oracle for the analytic count: run the spec's geometry on a
// concrete input_size x input_size image, materialize every output element,
// and charge each one its full dense tap count (k^2 * Cin for conv/deconv,
// Cin for gdn channel mixing). Returns MACs per input pixel. Exact equality
// with count_macs_per_pixel holds when every layer's geometry divides
// cleanly at this input size.
inline double count_macs_brute_force(const NetworkSpec& spec, int64_t input_size = 32) {
    validate_spec(spec);
    if (input_size < 1) throw ContractError("count_macs_brute_force: bad input size");
    int64_t h = input_size, w = input_size;
    double total = 0.0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                const int64_t oh = (h + 2 * l.padding - l.kernel) / l.stride + 1;
                const int64_t ow = (w + 2 * l.padding - l.kernel) / l.stride + 1;
                if (oh < 1 || ow < 1)
                    throw ContractError("count_macs_brute_force: layer collapses output");
                for (int64_t c = 0; c < l.out_channels; ++c)
                    for (int64_t y = 0; y < oh; ++y)
                        for (int64_t x = 0; x < ow; ++x)
                            total += static_cast<double>(l.kernel * l.kernel *
                                                         l.in_channels);
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::deconv: {
                const int64_t oh =
                    (h - 1) * l.stride - 2 * l.padding + l.kernel + l.output_padding;
                const int64_t ow =
                    (w - 1) * l.stride - 2 * l.padding + l.kernel + l.output_padding;
                for (int64_t c = 0; c < l.out_channels; ++c)
                    for (int64_t y = 0; y < oh; ++y)
                        for (int64_t x = 0; x < ow; ++x)
                            total += static_cast<double>(l.kernel * l.kernel *
                                                         l.in_channels);
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::gdn:
            case LayerKind::igdn:
                for (int64_t c = 0; c < l.in_channels; ++c)
                    for (int64_t y = 0; y < h; ++y)
                        for (int64_t x = 0; x < w; ++x)
                            total += static_cast<double>(l.in_channels);
                break;
            case LayerKind::relu:
                break;
        }
    }
    return total / static_cast<double>(input_size * input_size);
}

struct FamilyRow {
    int64_t r = 1;
    double macs_per_pixel = 0.0;
    double relative_macs = 1.0;
    int64_t params = 0;
    double megabytes = 0.0;
};

// One row per reduction factor, normalized against the family's r=1 member.
inline std::vector<FamilyRow> relative_report(const NetworkSpec& base,
                                              const std::vector<int64_t>& r_list) {
    bool has_one = false;
    for (int64_t r : r_list) has_one = has_one || r == 1;
    if (!has_one) throw ContractError("relative_report: r list must contain 1");
    const ComplexityReport full =
        count_macs_per_pixel(base, base.layers.front().in_channels);
    std::vector<FamilyRow> rows;
    for (int64_t r : r_list) {
        const NetworkSpec reduced = reduce_width(base, {r, {base.role}});
        const ComplexityReport rep =
            count_macs_per_pixel(reduced, reduced.layers.front().in_channels);
        FamilyRow row;
        row.r = r;
        row.macs_per_pixel = rep.total_macs_per_pixel;
        row.relative_macs = rep.total_macs_per_pixel / full.total_macs_per_pixel;
        row.params = rep.total_params;
        row.megabytes = rep.megabytes;
        rows.push_back(row);
    }
    return rows;
}

inline std::string family_csv(const std::string& family,
                              const std::vector<FamilyRow>& rows) {
    std::string out = "family,r,macs_per_pixel,relative_macs,params,megabytes\n";
    char buf[256];
    for (const FamilyRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.6f,%.6f,%lld,%.6f\n", family.c_str(),
                      static_cast<long long>(row.r), row.macs_per_pixel,
                      row.relative_macs, static_cast<long long>(row.params),
                      row.megabytes);
        out += buf;
    }
    return out;
}

inline std::string family_text(const std::string& family,
                               const std::vector<FamilyRow>& rows) {
    std::string out = family + "\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  %4s  %16s  %9s  %10s  %9s\n", "r", "MACs/pixel",
                  "relative", "params", "MB");
    out += buf;
    for (const FamilyRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "  %4lld  %16.2f  %9.4f  %10lld  %9.4f\n",
                      static_cast<long long>(row.r), row.macs_per_pixel,
                      row.relative_macs, static_cast<long long>(row.params),
                      row.megabytes);
        out += buf;
    }
    return out;
}

}  // namespace lic
