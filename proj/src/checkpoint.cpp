// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace nucleo {

static_assert(std::endian::native == std::endian::little,
              "NSCK I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error(std::string("NSCK: truncated payload reading ") + what);
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("NSCK: cannot open for write: " + path);

    os.write(kMagic, 4);
    put<uint32_t>(os, kVersion);
    put<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, field] : ckpt.tensors) {
        if (name.size() > std::numeric_limits<uint16_t>::max())
            throw std::runtime_error("NSCK: tensor name too long: " + name);
        put<uint16_t>(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint8_t>(os, 0);  // dtype f32
        put<uint8_t>(os, static_cast<uint8_t>(field.rank()));
        for (int64_t e : field.shape) put<uint64_t>(os, static_cast<uint64_t>(e));
        os.write(reinterpret_cast<const char*>(field.data.data()),
                 static_cast<std::streamsize>(field.data.size() * sizeof(float)));
    }
    std::string meta = ckpt.metadata.dump();
    put<uint32_t>(os, static_cast<uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!os) throw std::runtime_error("NSCK: write failure: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("NSCK: cannot open for read: " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("NSCK: bad magic in " + path);
    uint32_t version = get<uint32_t>(is, "version");
    if (version != kVersion)
        throw std::runtime_error("NSCK: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    uint32_t count = get<uint32_t>(is, "tensor count");
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = get<uint16_t>(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("NSCK: truncated payload reading name");
        uint8_t dtype = get<uint8_t>(is, "dtype");
        if (dtype != 0) throw std::runtime_error("NSCK: unsupported dtype for " + name);
        uint8_t rank = get<uint8_t>(is, "rank");
        std::vector<int64_t> shape(rank);
        for (auto& e : shape) e = static_cast<int64_t>(get<uint64_t>(is, "extent"));
        Field f(shape);
        is.read(reinterpret_cast<char*>(f.data.data()),
                static_cast<std::streamsize>(f.data.size() * sizeof(float)));
        if (!is) throw std::runtime_error("NSCK: truncated payload for tensor " + name);
        if (ckpt.tensors.count(name))
            throw std::runtime_error("NSCK: duplicate tensor name " + name);
        ckpt.tensors.emplace(name, std::move(f));
    }
    uint32_t meta_len = get<uint32_t>(is, "metadata length");
    std::string meta(meta_len, '\0');
    is.read(meta.data(), meta_len);
    if (!is) throw std::runtime_error("NSCK: truncated metadata");
    ckpt.metadata = meta.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta);
    return ckpt;
}

}  // namespace nucleo
