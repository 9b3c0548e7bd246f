#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lic/error.hpp"
#include "lic/model.hpp"

namespace lic {

// Checkpoint layout:
//   bytes 0..3   magic "LICD"
//   bytes 4..7   format version, uint32 little-endian
//   bytes 8..15  header length in bytes, uint64 little-endian
//   then         JSON header (arch, role, r, lambda, provenance, widths,
//                tensor table with name/shape/dtype/frozen)
//   then         raw float32 little-endian payloads, in tensor-table order
inline constexpr char kCkptMagic[4] = {'L', 'I', 'C', 'D'};
inline constexpr uint32_t kCkptVersion = 1;

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::string& buf, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

inline uint64_t get_u64(const std::string& buf, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

inline void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

inline float get_f32(const std::string& buf, size_t off) {
    const uint32_t bits = get_u32(buf, off);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace detail

// Serializes the model to the in-memory checkpoint encoding.
inline std::string encode_checkpoint(const ModelState& m) {
    nlohmann::json header;
    header["arch"] = to_string(m.arch);
    header["role"] = m.role;
    header["r"] = m.r;
    header["lambda"] = m.lambda;
    header["provenance"] = m.provenance;
    header["N"] = m.N;
    header["M"] = m.M;
    header["Nh"] = m.Nh;
    header["Mh"] = m.Mh;
    nlohmann::json table = nlohmann::json::array();
    auto named = m.named_params();
    for (auto& [name, t] : named) {
        nlohmann::json row;
        row["name"] = name;
        row["shape"] = t.shape();
        row["dtype"] = "f32";
        row["frozen"] = m.is_frozen_module(name);
        table.push_back(std::move(row));
    }
    header["tensors"] = std::move(table);
    const std::string header_text = header.dump();

    std::string out;
    out.append(kCkptMagic, 4);
    detail::put_u32(out, kCkptVersion);
    detail::put_u64(out, header_text.size());
    out += header_text;
    for (auto& [name, t] : named)
        for (double v : t.data()) detail::put_f32(out, static_cast<float>(v));
    return out;
}

inline void save_checkpoint(const ModelState& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("save_checkpoint: cannot open '" + path + "' for writing");
    const std::string blob = encode_checkpoint(m);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw FormatError("save_checkpoint: short write to '" + path + "'");
}

// Rebuilds a ModelState from the checkpoint encoding. Validation failures
// throw FormatError carrying the byte offset of the problem; no partially
// filled state escapes (the result is only assembled after all checks).
inline ModelState decode_checkpoint(const std::string& buf) {
    auto fail = [](const std::string& what, size_t offset) {
        throw FormatError("checkpoint: " + what + " at byte offset " +
                          std::to_string(offset));
    };
    if (buf.size() < 16) fail("truncated preamble (need 16 bytes)", buf.size());
    if (std::memcmp(buf.data(), kCkptMagic, 4) != 0) fail("bad magic", 0);
    const uint32_t version = detail::get_u32(buf, 4);
    if (version != kCkptVersion)
        fail("unsupported format version " + std::to_string(version), 4);
    const uint64_t header_len = detail::get_u64(buf, 8);
    if (16 + header_len > buf.size()) fail("truncated header", buf.size());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("malformed header JSON (") + e.what() + ")", 16);
    }

    ModelState m;
    try {
        m.arch = arch_from_string(header.at("arch").get<std::string>());
        m.role = header.at("role").get<std::string>();
        m.r = header.at("r").get<int64_t>();
        m.lambda = header.at("lambda").get<double>();
        m.provenance = header.at("provenance").get<std::string>();
        m.N = header.at("N").get<int64_t>();
        m.M = header.at("M").get<int64_t>();
        m.Nh = header.at("Nh").get<int64_t>();
        m.Mh = header.at("Mh").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("header field missing or mistyped (") + e.what() + ")", 16);
    }

    // Rebuild the module skeletons (zero weights), then fill from payload.
    const ReductionSpec reduction{m.r, {NetRole::g_a, NetRole::h_a}};
    auto [ga_spec, gs_spec] = build_factorized_codec(m.N, m.M);
    if (m.r != 1) ga_spec = reduce_width(ga_spec, reduction);
    m.g_a = Network(ga_spec);
    m.g_s = Network(gs_spec);
    if (m.arch == Arch::hyper) {
        auto [ha_spec, hs_spec] = build_hyper_codec(m.M, m.Nh, m.Mh);
        if (m.r != 1) ha_spec = reduce_width(ha_spec, reduction);
        m.h_a = Network(ha_spec);
        m.h_s = Network(hs_spec);
        Rng dummy(0);
        m.eb = EntropyBottleneck(m.Mh, dummy);
    } else {
        Rng dummy(0);
        m.eb = EntropyBottleneck(m.M, dummy);
    }

    auto named = m.named_params();
    const auto& table = header.at("tensors");
    if (!table.is_array() || table.size() != named.size())
        fail("tensor table size mismatch (expected " + std::to_string(named.size()) +
                 " entries, found " +
                 std::to_string(table.is_array() ? table.size() : 0) + ")",
             16);

    size_t offset = 16 + header_len;
    for (size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        const auto& row = table[i];
        std::string row_name;
        std::vector<int64_t> row_shape;
        bool frozen = false;
        try {
            row_name = row.at("name").get<std::string>();
            row_shape = row.at("shape").get<std::vector<int64_t>>();
            frozen = row.at("frozen").get<bool>();
            if (row.at("dtype").get<std::string>() != "f32")
                fail("unsupported dtype for tensor '" + row_name + "'", 16);
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("tensor table row malformed (") + e.what() + ")", 16);
        }
        if (row_name != name)
            fail("tensor " + std::to_string(i) + " is named '" + row_name +
                     "', expected '" + name + "'",
                 16);
        if (row_shape != t.shape())
            fail("tensor '" + name + "' has shape " + detail::shape_str(row_shape) +
                     ", expected " + detail::shape_str(t.shape()),
                 16);
        const size_t bytes = static_cast<size_t>(t.numel()) * 4;
        if (offset + bytes > buf.size()) fail("truncated payload", buf.size());
        for (int64_t k = 0; k < t.numel(); ++k)
            t.data()[static_cast<size_t>(k)] =
                static_cast<double>(detail::get_f32(buf, offset + 4 * k));
        if (frozen) {
            if (name.rfind("g_s", 0) == 0) m.frozen_g_s = true;
            if (name.rfind("h_s", 0) == 0) m.frozen_h_s = true;
            if (name.rfind("eb", 0) == 0) m.frozen_eb = true;
        }
        offset += bytes;
    }
    if (offset != buf.size()) fail("trailing bytes after payload", offset);
    m.apply_freeze();
    return m;
}

inline ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf);
}

}  // namespace lic
