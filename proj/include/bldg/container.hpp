#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"

namespace bldg {

static_assert(std::endian::native == std::endian::little,
              "container formats are little-endian; big-endian hosts are unsupported");

// Layout: 4-byte magic, u16 format version, u64 JSON byte length, UTF-8
// JSON header, contiguous little-endian float32 payload.
inline void write_container(const std::string& path, const char magic[4], std::uint16_t version,
                            const nlohmann::json& header, const float* payload,
                            std::size_t payload_count) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open for writing: ", path);
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::string js = header.dump();
    const std::uint64_t jlen = js.size();
    out.write(reinterpret_cast<const char*>(&jlen), sizeof(jlen));
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    out.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(payload_count * sizeof(float)));
    require(out.good(), "write failed: ", path);
}

struct ContainerData {
    std::uint16_t version = 0;
    nlohmann::json header;
    std::vector<float> payload;
};

inline ContainerData read_container(const std::string& path, const char magic[4]) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open: ", path);
    char m[4];
    in.read(m, 4);
    require(in.good() && std::memcmp(m, magic, 4) == 0, path, ": bad magic (expected ",
            std::string(magic, 4), ")");
    ContainerData out;
    in.read(reinterpret_cast<char*>(&out.version), sizeof(out.version));
    std::uint64_t jlen = 0;
    in.read(reinterpret_cast<char*>(&jlen), sizeof(jlen));
    require(in.good(), path, ": truncated header");
    std::string js(jlen, '\0');
    in.read(js.data(), static_cast<std::streamsize>(jlen));
    require(in.good(), path, ": truncated JSON header");
    try {
        out.header = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        fail(path, ": malformed JSON header: ", e.what());
    }
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    const std::streamoff payload_off = 4 + sizeof(std::uint16_t) + sizeof(std::uint64_t) +
                                       static_cast<std::streamoff>(jlen);
    const std::streamoff bytes = static_cast<std::streamoff>(end) - payload_off;
    require(bytes >= 0 && bytes % sizeof(float) == 0, path, ": payload is not whole float32s");
    out.payload.resize(static_cast<std::size_t>(bytes) / sizeof(float));
    in.seekg(payload_off);
    in.read(reinterpret_cast<char*>(out.payload.data()), bytes);
    require(in.good() || bytes == 0, path, ": truncated payload");
    return out;
}

}  // namespace bldg
