#ifndef ELF_CHECKPOINT_HPP
#define ELF_CHECKPOINT_HPP

// Binary checkpoint format (all integers little-endian):
//
//   "ELFCKPT1"
//   u32 tensor count
//   per tensor, ordered by name:
//     u16 name length, UTF-8 name, u8 rank, rank x u32 extents,
//     f32 payload
//   u32 CRC32 over the concatenated f32 payloads

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "params.hpp"

namespace elf {

inline constexpr char kCheckpointMagic[8] = {'E', 'L', 'F', 'C', 'K', 'P', 'T', '1'};

struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

using Checkpoint = std::vector<CheckpointRecord>;

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t& at, const std::string& path) {
    if (at + sizeof(U) > in.size()) throw Error("checkpoint " + path + ": truncated file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        v |= static_cast<U>(static_cast<std::uint8_t>(in[at + i])) << (8 * i);
    at += sizeof(U);
    return v;
}

}  // namespace detail

inline std::string encode_checkpoint(Checkpoint records) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    uLong crc = crc32(0L, Z_NULL, 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (i > 0 && records[i - 1].name == r.name) throw Error("checkpoint: duplicate tensor name " + r.name);
        if (r.name.size() > 0xFFFF) throw Error("checkpoint: name too long");
        if (r.shape.size() > 0xFF) throw Error("checkpoint: rank too large");
        if (numel(r.shape) != r.values.size()) throw Error("checkpoint: shape/value mismatch for " + r.name);
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
        out += r.name;
        out.push_back(static_cast<char>(r.shape.size()));
        for (auto e : r.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
        const std::size_t start = out.size();
        for (float f : r.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(out.data() + start), static_cast<uInt>(out.size() - start));
    }
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& in, const std::string& path = "<memory>") {
    if (in.size() < sizeof(kCheckpointMagic) || std::memcmp(in.data(), kCheckpointMagic, sizeof(kCheckpointMagic)))
        throw Error("checkpoint " + path + ": bad magic");
    std::size_t at = sizeof(kCheckpointMagic);
    const auto count = detail::get_le<std::uint32_t>(in, at, path);
    Checkpoint out;
    uLong crc = crc32(0L, Z_NULL, 0);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointRecord r;
        const auto len = detail::get_le<std::uint16_t>(in, at, path);
        if (at + len > in.size()) throw Error("checkpoint " + path + ": truncated name");
        r.name.assign(in, at, len);
        at += len;
        const auto rank = detail::get_le<std::uint8_t>(in, at, path);
        for (std::uint8_t k = 0; k < rank; ++k) r.shape.push_back(detail::get_le<std::uint32_t>(in, at, path));
        const std::size_t n = numel(r.shape);
        if (at + 4 * n > in.size()) throw Error("checkpoint " + path + ": truncated payload for " + r.name);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(in.data() + at), static_cast<uInt>(4 * n));
        r.values.resize(n);
        for (auto& v : r.values) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, at, path));
        out.push_back(std::move(r));
    }
    const auto stored = detail::get_le<std::uint32_t>(in, at, path);
    if (stored != static_cast<std::uint32_t>(crc)) throw Error("checkpoint " + path + ": CRC mismatch");
    if (at != in.size()) throw Error("checkpoint " + path + ": trailing bytes");
    return out;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& records) {
    const std::string bytes = encode_checkpoint(records);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("error writing checkpoint " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path);
}

template <class T>
Checkpoint to_checkpoint(const ParamStore<T>& ps) {
    Checkpoint out;
    for (const auto& e : ps.entries()) {
        CheckpointRecord r{e.name, e.tensor.shape(), {}};
        r.values.reserve(e.tensor.size());
        for (T v : e.tensor.data()) r.values.push_back(static_cast<float>(v));
        out.push_back(std::move(r));
    }
    return out;
}

// Every parameter of `ps` must be present with a matching shape.
template <class T>
void load_into(ParamStore<T>& ps, const Checkpoint& ck) {
    if (ck.size() != ps.size())
        throw Error("checkpoint holds " + std::to_string(ck.size()) + " tensors, model expects " +
                    std::to_string(ps.size()));
    for (const auto& r : ck) {
        if (!ps.contains(r.name)) throw Error("checkpoint tensor not in model: " + r.name);
        auto t = ps.get(r.name);
        if (t.shape() != r.shape)
            throw Error("checkpoint tensor " + r.name + " has shape " + to_string(r.shape) + ", model expects " +
                        to_string(t.shape()));
        auto& d = t.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(r.values[i]);
    }
}

}  // namespace elf

#endif  // ELF_CHECKPOINT_HPP
