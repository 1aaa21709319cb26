#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dubengine/common.hpp"
#include "dubengine/mat.hpp"

namespace dubengine {

using json = nlohmann::json;

// Container layout shared by datasets, checkpoints and dub outputs:
//   [u64 little-endian header length][UTF-8 JSON header][float32 LE payload]
// Block offsets in the header are element offsets into the payload.

struct BlockWriter {
    std::vector<float> payload;

    // returns element offset of the block
    uint64_t add(const float* src, size_t n) {
        uint64_t off = payload.size();
        payload.insert(payload.end(), src, src + n);
        return off;
    }

    template <typename T>
    uint64_t add_mat(const Mat<T>& m) {
        uint64_t off = payload.size();
        payload.reserve(payload.size() + m.size());
        for (T v : m.data) payload.push_back(static_cast<float>(v));
        return off;
    }

    template <typename T>
    uint64_t add_vec(const std::vector<T>& v) {
        uint64_t off = payload.size();
        for (T x : v) payload.push_back(static_cast<float>(x));
        return off;
    }

    json block_meta(uint64_t off, int rows, int cols) const {
        return json{{"offset", off}, {"rows", rows}, {"cols", cols}};
    }
};

inline void write_container(const std::filesystem::path& path, const json& header,
                            const std::vector<float>& payload) {
    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    uint64_t len = hs.size();
    uint8_t len_le[8];
    for (int i = 0; i < 8; ++i) len_le[i] = static_cast<uint8_t>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(len_le), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    static_assert(sizeof(float) == 4);
    if (!payload.empty())
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + path.string());
}

struct Container {
    json header;
    std::vector<float> payload;

    Mat<float> read_mat(const json& meta) const {
        int rows = meta.at("rows").get<int>();
        int cols = meta.at("cols").get<int>();
        uint64_t off = meta.at("offset").get<uint64_t>();
        if (off + static_cast<uint64_t>(rows) * cols > payload.size())
            throw DataError("block out of range in container");
        Mat<float> m(rows, cols);
        std::memcpy(m.data.data(), payload.data() + off,
                    static_cast<size_t>(rows) * cols * sizeof(float));
        return m;
    }

    std::vector<float> read_vec(const json& meta) const {
        Mat<float> m = read_mat(meta);
        return m.data;
    }
};

inline Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open container: " + path.string());
    uint8_t len_le[8];
    in.read(reinterpret_cast<char*>(len_le), 8);
    if (in.gcount() != 8) throw DataError("truncated container header: " + path.string());
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(len_le[i]) << (8 * i);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (static_cast<uint64_t>(in.gcount()) != len)
        throw DataError("truncated container header: " + path.string());
    Container c;
    try {
        c.header = json::parse(hs);
    } catch (const json::exception& e) {
        throw DataError("bad container header in " + path.string() + ": " + e.what());
    }
    std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(float) != 0) throw DataError("payload not float32-aligned: " + path.string());
    c.payload.resize(rest.size() / sizeof(float));
    if (!rest.empty()) std::memcpy(c.payload.data(), rest.data(), rest.size());
    return c;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace dubengine
