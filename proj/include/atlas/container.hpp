#pragma once

// Named-tensor weight container.
//
// Layout: 8-byte little-endian unsigned header length N, then N bytes of
// UTF-8 JSON mapping tensor name -> {dtype, shape, data_offsets}, then one
// contiguous raw little-endian f32 buffer. data_offsets are byte offsets
// relative to the start of the data section.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/common.hpp"

namespace atlas {

struct TensorEntry {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }
};

// std::map keeps the name order stable so containers round-trip
// byte-identically.
using TensorMap = std::map<std::string, TensorEntry>;

namespace detail {

inline std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

} // namespace detail

inline TensorMap read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "container: cannot open '" + path + "'");

    unsigned char lenbuf[8];
    in.read(reinterpret_cast<char*>(lenbuf), 8);
    require(in.gcount() == 8, "container: truncated header length in '" + path + "'");
    const std::uint64_t header_len = detail::read_u64_le(lenbuf);
    require(header_len > 0 && header_len < (1ull << 31),
            "container: implausible header length in '" + path + "'");

    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    require(static_cast<std::uint64_t>(in.gcount()) == header_len,
            "container: truncated header in '" + path + "'");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        fail("container: bad header JSON in '" + path + "': " + e.what());
    }
    require(j.is_object(), "container: header is not a JSON object");

    std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    TensorMap tensors;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& name = it.key();
        const auto& meta = it.value();
        require(meta.contains("dtype") && meta.contains("shape") && meta.contains("data_offsets"),
                "container: tensor '" + name + "' missing dtype/shape/data_offsets");
        const std::string dtype = meta["dtype"].get<std::string>();
        require(dtype == "f32" || dtype == "F32",
                "container: tensor '" + name + "' has unsupported dtype '" + dtype + "'");

        TensorEntry t;
        for (const auto& s : meta["shape"]) t.shape.push_back(s.get<std::size_t>());
        const std::uint64_t begin = meta["data_offsets"][0].get<std::uint64_t>();
        const std::uint64_t end = meta["data_offsets"][1].get<std::uint64_t>();
        require(end >= begin && end <= blob.size(),
                "container: tensor '" + name + "' offsets out of range");
        const std::size_t nbytes = static_cast<std::size_t>(end - begin);
        require(nbytes == t.numel() * sizeof(float),
                "container: tensor '" + name + "' byte size does not match shape");
        t.data.resize(t.numel());
        std::memcpy(t.data.data(), blob.data() + begin, nbytes);
        tensors.emplace(name, std::move(t));
    }
    return tensors;
}

inline void write_container(const std::string& path, const TensorMap& tensors) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::uint64_t nbytes = t.numel() * sizeof(float);
        header[name] = {{"dtype", "f32"},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "container: cannot write '" + path + "'");
    detail::write_u64_le(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    require(out.good(), "container: write failed for '" + path + "'");
}

} // namespace atlas
