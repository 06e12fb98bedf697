#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfuse/core/tensor.hpp"

namespace ivfuse {

// Named-array archive with a JSON header, shared by every module that
// persists parameters. Layout: 8-byte magic, u64 header length, JSON header
// describing arrays (name, dtype, shape, byte offset) plus free-form "meta",
// then the raw little-endian payload.
class Archive {
  public:
    struct Entry {
        std::string dtype;             // "f32" | "f64"
        Shape shape;
        std::vector<unsigned char> bytes;
    };

    nlohmann::json meta = nlohmann::json::object();

    template <typename S>
    void put(const std::string& name, const Tensor<S>& t) {
        Entry e;
        e.dtype = dtype_name<S>();
        e.shape = t.shape();
        e.bytes.resize(static_cast<std::size_t>(t.size()) * sizeof(S));
        std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
        entries_[name] = std::move(e);
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    template <typename S>
    Tensor<S> get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw IoError("archive: missing array '" + name + "'");
        const Entry& e = it->second;
        Tensor<S> out(e.shape);
        if (e.dtype == dtype_name<S>()) {
            std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
        } else if (e.dtype == "f32") {
            const float* src = reinterpret_cast<const float*>(e.bytes.data());
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(src[i]);
        } else if (e.dtype == "f64") {
            const double* src = reinterpret_cast<const double*>(e.bytes.data());
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(src[i]);
        } else {
            throw FormatError("archive: unknown dtype '" + e.dtype + "'");
        }
        return out;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

    void save(const std::string& path) const {
        nlohmann::json header;
        header["arrays"] = nlohmann::json::array();
        std::uint64_t offset = 0;
        for (const auto& [name, e] : entries_) {
            nlohmann::json a;
            a["name"] = name;
            a["dtype"] = e.dtype;
            a["shape"] = nlohmann::json::array();
            for (int i = 0; i < e.shape.ndim; ++i) a["shape"].push_back(e.shape[i]);
            a["offset"] = offset;
            offset += e.bytes.size();
            header["arrays"].push_back(a);
        }
        header["meta"] = meta;
        std::string hs = header.dump();

        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("archive: cannot open for writing: " + path);
        f.write(kMagic, 8);
        std::uint64_t hl = hs.size();
        f.write(reinterpret_cast<const char*>(&hl), 8);
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, e] : entries_)
            f.write(reinterpret_cast<const char*>(e.bytes.data()),
                    static_cast<std::streamsize>(e.bytes.size()));
        if (!f) throw IoError("archive: write failed: " + path);
    }

    static Archive load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("archive: cannot open: " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kMagic, 8) != 0)
            throw FormatError("archive: bad magic in " + path);
        std::uint64_t hl = 0;
        f.read(reinterpret_cast<char*>(&hl), 8);
        std::string hs(hl, '\0');
        f.read(hs.data(), static_cast<std::streamsize>(hl));
        if (!f) throw FormatError("archive: truncated header in " + path);
        nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
        if (header.is_discarded()) throw FormatError("archive: malformed header in " + path);

        Archive ar;
        ar.meta = header.value("meta", nlohmann::json::object());
        for (const auto& a : header.at("arrays")) {
            Entry e;
            e.dtype = a.at("dtype").get<std::string>();
            std::size_t bytes_per = e.dtype == "f32" ? 4 : 8;
            std::vector<std::int64_t> dims = a.at("shape").get<std::vector<std::int64_t>>();
            e.shape.ndim = static_cast<int>(dims.size());
            for (std::size_t i = 0; i < dims.size(); ++i) e.shape.d[i] = dims[i];
            e.bytes.resize(static_cast<std::size_t>(e.shape.count()) * bytes_per);
            f.read(reinterpret_cast<char*>(e.bytes.data()),
                   static_cast<std::streamsize>(e.bytes.size()));
            if (!f) throw FormatError("archive: truncated payload in " + path);
            ar.entries_[a.at("name").get<std::string>()] = std::move(e);
        }
        return ar;
    }

  private:
    template <typename S>
    static const char* dtype_name() {
        if constexpr (sizeof(S) == 4)
            return "f32";
        else
            return "f64";
    }

    static constexpr const char kMagic[9] = "IVFARCH1";
    std::map<std::string, Entry> entries_;
};

}  // namespace ivfuse
