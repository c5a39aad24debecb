#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "../imgio.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace bdrseg::nn {

inline constexpr std::string_view kCheckpointMagic = "BSEG";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
    std::string name;
    Shape4 shape;
    std::vector<float> values;

    friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

/// "BSEG", u32 version, then per parameter: u32 name length, name bytes,
/// four u32 extents (n, c, h, w), little-endian float32 values. Records run
/// to end of file.
inline std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointRecord> records)
{
    using io::detail::put_f32;
    using io::detail::put_u32;
    std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    put_u32(out, kCheckpointVersion);
    for (const auto& r : records) {
        if (r.values.size() != r.shape.count())
            fail(ErrorKind::ShapeMismatch, "checkpoint record '" + r.name + "' size does not match its shape");
        put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        put_u32(out, static_cast<std::uint32_t>(r.shape.n));
        put_u32(out, static_cast<std::uint32_t>(r.shape.c));
        put_u32(out, static_cast<std::uint32_t>(r.shape.h));
        put_u32(out, static_cast<std::uint32_t>(r.shape.w));
        for (float v : r.values)
            put_f32(out, v);
    }
    return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes)
{
    using io::detail::get_f32;
    using io::detail::get_u32;
    if (bytes.size() < 4 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
        fail(ErrorKind::BadMagic, "missing BSEG magic");
    if (bytes.size() < 8)
        fail(ErrorKind::TruncatedData, "checkpoint header truncated");
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kCheckpointVersion)
        fail(ErrorKind::MalformedHeader, "unsupported checkpoint version " + std::to_string(version));

    std::vector<CheckpointRecord> records;
    std::size_t pos = 8;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n)
            fail(ErrorKind::TruncatedData, "checkpoint record truncated at byte " + std::to_string(pos));
    };
    while (pos < bytes.size()) {
        CheckpointRecord r;
        need(4);
        const std::uint32_t name_len = get_u32(bytes.data() + pos);
        pos += 4;
        need(name_len);
        r.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        need(16);
        std::uint32_t dims[4];
        for (auto& d : dims) {
            d = get_u32(bytes.data() + pos);
            pos += 4;
            if (d > (1u << 24))
                fail(ErrorKind::MalformedHeader, "checkpoint extent implausibly large");
        }
        r.shape = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                   static_cast<int>(dims[3])};
        const std::size_t count = r.shape.count();
        if (count > (bytes.size() - pos) / 4)
            fail(ErrorKind::TruncatedData, "checkpoint payload for '" + r.name + "' truncated");
        r.values.resize(count);
        for (auto& v : r.values) {
            v = get_f32(bytes.data() + pos);
            pos += 4;
        }
        records.push_back(std::move(r));
    }
    return records;
}

inline void save_checkpoint(const std::filesystem::path& path, std::span<const CheckpointRecord> records)
{
    io::detail::write_file(path, encode_checkpoint(records));
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(io::detail::read_file(path));
}

template <typename Real>
std::vector<CheckpointRecord> to_records(std::span<const NamedParam<Real>> params)
{
    std::vector<CheckpointRecord> out;
    for (const auto& p : params) {
        CheckpointRecord r{p.name, p.tensor->shape(), {}};
        r.values.reserve(p.tensor->size());
        for (Real v : p.tensor->data())
            r.values.push_back(static_cast<float>(v));
        out.push_back(std::move(r));
    }
    return out;
}

/// Copies record values into parameters; names, order and shapes must match exactly.
template <typename Real>
void apply_records(std::span<const NamedParam<Real>> params, std::span<const CheckpointRecord> records)
{
    if (params.size() != records.size())
        fail(ErrorKind::ShapeMismatch, "checkpoint has " + std::to_string(records.size()) +
                                           " parameters, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& r = records[i];
        auto& t = *params[i].tensor;
        if (r.name != params[i].name || r.shape != t.shape())
            fail(ErrorKind::ShapeMismatch, "checkpoint parameter '" + r.name + "' " + to_string(r.shape) +
                                               " does not match model parameter '" + params[i].name + "' " +
                                               to_string(t.shape()));
        std::transform(r.values.begin(), r.values.end(), t.data().begin(),
                       [](float v) { return static_cast<Real>(v); });
    }
}

} // namespace bdrseg::nn
