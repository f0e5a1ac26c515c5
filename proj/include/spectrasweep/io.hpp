#pragma once

// Single-file container: one UTF-8 JSON header line terminated by '\n', followed by raw
// little-endian IEEE-754 float32 payload in (plane, row, column) order.
//
//   cube:   {"magic":"MSCUBE1","L":..,"H":..,"W":..,"bands_nm":[..],"dtype":"f32le"}
//   stack:  {"magic":"GSTACK1","L":..,"H":..,"W":..,"positions_mm":[..],"dtype":"f32le"}

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spectrasweep/error.hpp"
#include "spectrasweep/spectral.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

inline constexpr const char* kCubeMagic = "MSCUBE1";
inline constexpr const char* kStackMagic = "GSTACK1";
inline constexpr const char* kDtypeF32 = "f32le";

inline std::size_t payload_bytes(std::size_t planes, std::size_t height, std::size_t width) {
    return planes * height * width * sizeof(float);
}

namespace detail {

inline void append_f32le(std::string& out, double value) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float load_f32le(const unsigned char* p) {
    std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                         (static_cast<std::uint32_t>(p[2]) << 16) |
                         (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

inline std::string encode_payload(std::span<const double> values) {
    std::string out;
    out.reserve(values.size() * 4);
    for (double v : values) append_f32le(out, v);
    return out;
}

inline std::vector<double> decode_payload(std::span<const unsigned char> bytes) {
    std::vector<double> values(bytes.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = load_f32le(bytes.data() + 4 * i);
    return values;
}

inline void write_file(const std::string& path, const std::string& header, const std::string& payload) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path, "cannot open for writing");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.put('\n');
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError(path, "write failed");
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(path, "read failed");
    return bytes;
}

/// Parsed container: header object plus payload decoded to doubles.
struct Container {
    nlohmann::ordered_json header;
    int planes = 0;
    int height = 0;
    int width = 0;
    std::vector<double> labels;
    std::vector<double> values;
};

inline int header_int(const nlohmann::ordered_json& h, const char* key, std::size_t offset) {
    if (!h.contains(key) || !h[key].is_number_integer() || h[key].get<long long>() < 0)
        throw ParseError(std::string("header field \"") + key + "\" missing or not a non-negative integer",
                         offset);
    long long v = h[key].get<long long>();
    if (v > (1LL << 30)) throw ParseError(std::string("header field \"") + key + "\" too large", offset);
    return static_cast<int>(v);
}

inline Container parse_container(const std::string& path, const std::string& magic, const char* label_key) {
    auto bytes = read_file(path);
    auto newline = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
    if (newline == bytes.end())
        throw ParseError(path + ": missing header line terminator", bytes.size());
    std::string header_text(bytes.begin(), newline);
    std::size_t header_end = header_text.size();

    Container c;
    try {
        c.header = nlohmann::ordered_json::parse(header_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": malformed header: " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
    }
    if (!c.header.is_object()) throw ParseError(path + ": header is not a JSON object", 0);
    if (!c.header.contains("magic") || c.header["magic"] != magic)
        throw ParseError(path + ": expected magic \"" + magic + "\"", 0);
    if (!c.header.contains("dtype") || c.header["dtype"] != kDtypeF32)
        throw ParseError(path + ": unsupported dtype (expected \"f32le\")", header_end);
    c.planes = header_int(c.header, "L", header_end);
    c.height = header_int(c.header, "H", header_end);
    c.width = header_int(c.header, "W", header_end);
    if (!c.header.contains(label_key) || !c.header[label_key].is_array())
        throw ParseError(path + ": header field \"" + label_key + "\" missing", header_end);
    for (const auto& v : c.header[label_key]) {
        if (!v.is_number()) throw ParseError(path + ": non-numeric entry in \"" + label_key + "\"", header_end);
        c.labels.push_back(v.get<double>());
    }
    if (c.labels.size() != static_cast<std::size_t>(c.planes))
        throw ParseError(path + ": \"" + label_key + "\" has " + std::to_string(c.labels.size()) +
                             " entries but L = " + std::to_string(c.planes),
                         header_end);

    std::size_t expected = payload_bytes(c.planes, c.height, c.width);
    std::size_t actual = bytes.size() - (header_end + 1);
    if (expected != actual) throw TruncationError(path, expected, actual);
    c.values = decode_payload(std::span<const unsigned char>(bytes.data() + header_end + 1, actual));
    return c;
}

inline std::string make_header(const std::string& magic, int planes, int height, int width,
                               const char* label_key, const std::vector<double>& labels) {
    nlohmann::ordered_json h;
    h["magic"] = magic;
    h["L"] = planes;
    h["H"] = height;
    h["W"] = width;
    h[label_key] = labels;
    h["dtype"] = kDtypeF32;
    return h.dump();
}

}  // namespace detail

inline void write_cube(const SpectralCube& cube, const std::string& path) {
    detail::write_file(path,
                       detail::make_header(kCubeMagic, cube.bands_count(), cube.height(), cube.width(),
                                           "bands_nm", cube.bands().wavelengths_nm()),
                       detail::encode_payload(cube.data().span()));
}

inline SpectralCube read_cube(const std::string& path) {
    auto c = detail::parse_container(path, kCubeMagic, "bands_nm");
    try {
        return SpectralCube(BandGrid(c.labels), Volume(c.planes, c.height, c.width, std::move(c.values)));
    } catch (const InvariantError& e) {
        throw InvariantError(path + ": " + e.what());
    }
}

/// Writes an arbitrary real tensor (e.g. model input) in the cube container; `labels` take the
/// place of band wavelengths and may be any reals (frame indices for preprocessed stacks).
inline void write_tensor(const Volume& tensor, const std::vector<double>& labels, const std::string& path) {
    if (labels.size() != static_cast<std::size_t>(tensor.channels()))
        throw ShapeError("tensor label count does not match channel count");
    detail::write_file(path,
                       detail::make_header(kCubeMagic, tensor.channels(), tensor.height(), tensor.width(),
                                           "bands_nm", labels),
                       detail::encode_payload(tensor.span()));
}

struct LabeledTensor {
    Volume tensor;
    std::vector<double> labels;
};

inline LabeledTensor read_tensor(const std::string& path) {
    auto c = detail::parse_container(path, kCubeMagic, "bands_nm");
    return {Volume(c.planes, c.height, c.width, std::move(c.values)), std::move(c.labels)};
}

inline void write_stack(const GrayscaleStack& stack, const std::string& path) {
    std::string payload;
    payload.reserve(payload_bytes(stack.size(), stack.height(), stack.width()));
    for (const auto& f : stack.frames()) payload += detail::encode_payload(f.span());
    detail::write_file(path,
                       detail::make_header(kStackMagic, stack.size(), stack.height(), stack.width(),
                                           "positions_mm", stack.lens_positions_mm()),
                       payload);
}

struct StackReadStats {
    /// Number of samples clamped into [0, 1] on load.
    std::size_t clamped = 0;
};

inline GrayscaleStack read_stack(const std::string& path, StackReadStats* stats = nullptr) {
    auto c = detail::parse_container(path, kStackMagic, "positions_mm");
    std::size_t clamped = 0;
    std::vector<Image> frames;
    frames.reserve(static_cast<std::size_t>(c.planes));
    const std::size_t plane = static_cast<std::size_t>(c.height) * c.width;
    for (int k = 0; k < c.planes; ++k) {
        std::vector<double> px(c.values.begin() + static_cast<long>(k * plane),
                               c.values.begin() + static_cast<long>((k + 1) * plane));
        for (double& v : px) {
            if (!std::isfinite(v)) throw InvariantError(path + ": non-finite sample in frame " + std::to_string(k));
            if (v < 0.0 || v > 1.0) {
                v = std::clamp(v, 0.0, 1.0);
                ++clamped;
            }
        }
        frames.emplace_back(c.height, c.width, std::move(px));
    }
    if (stats) stats->clamped = clamped;
    try {
        return GrayscaleStack(std::move(frames), std::move(c.labels));
    } catch (const InvariantError& e) {
        throw InvariantError(path + ": " + e.what());
    }
}

}  // namespace spectrasweep
