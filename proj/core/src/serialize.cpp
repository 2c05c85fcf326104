#include "insidebias/serialize.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "insidebias/errors.hpp"
#include "insidebias/model_zoo.hpp"

namespace insidebias::serialize {

namespace {

constexpr char kMagic[4] = {'I', 'B', 'W', 'F'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : is_(path, std::ios::binary) {
        if (!is_) throw IoError("cannot open '" + path.string() + "'");
    }

    void raw(void* dst, std::size_t n) {
        is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (is_.gcount() != static_cast<std::streamsize>(n)) {
            throw TruncatedFileError("weight file truncated");
        }
    }

    std::uint32_t u32() {
        unsigned char b[4];
        raw(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }

    std::string str() {
        const std::uint32_t n = u32();
        if (n > (1u << 20)) throw TruncatedFileError("implausible string length in weight file");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    void seek(std::uint64_t off) {
        is_.clear();
        is_.seekg(static_cast<std::streamoff>(off));
        if (!is_) throw TruncatedFileError("weight file truncated (bad payload offset)");
    }

private:
    std::ifstream is_;
};

std::uint32_t crc_of(const float* data, std::size_t n) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n * sizeof(float))));
}

}  // namespace

void save_weights(Model& model, const std::filesystem::path& path) {
    const auto params = model.params();

    // Header is laid out twice: first with zero offsets to learn its size,
    // then with real payload offsets.
    auto write_all = [&](std::ostream& os, std::uint64_t payload_base, bool final_pass) {
        os.write(kMagic, 4);
        put_u32(os, kWeightFormatVersion);
        put_string(os, model.arch_id());
        const auto [h, w, c] = model.input_shape();
        put_u32(os, static_cast<std::uint32_t>(h));
        put_u32(os, static_cast<std::uint32_t>(w));
        put_u32(os, static_cast<std::uint32_t>(c));
        put_u32(os, static_cast<std::uint32_t>(model.num_classes()));
        put_u64(os, model.seed());
        put_u32(os, static_cast<std::uint32_t>(params.size()));
        std::uint64_t off = payload_base;
        for (const Param* p : params) {
            put_string(os, p->name);
            put_u32(os, static_cast<std::uint32_t>(p->value.rank()));
            for (std::size_t d = 0; d < p->value.rank(); ++d) {
                put_u32(os, static_cast<std::uint32_t>(p->value.dim(d)));
            }
            put_u64(os, off);
            put_u32(os, final_pass ? crc_of(p->value.data(), p->value.size()) : 0);
            off += p->value.size() * sizeof(float);
        }
    };

    std::ostringstream probe;
    write_all(probe, 0, false);
    const std::uint64_t header_size = static_cast<std::uint64_t>(probe.str().size());

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write '" + tmp.string() + "'");
        write_all(os, header_size, true);
        for (const Param* p : params) {
            os.write(reinterpret_cast<const char*>(p->value.data()),
                     static_cast<std::streamsize>(p->value.size() * sizeof(float)));
        }
        if (!os) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

Model load_weights(const std::filesystem::path& path, const std::string& expected_arch) {
    Reader r(path);

    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw BadMagicError("'" + path.string() + "' is not a weight file (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kWeightFormatVersion) {
        throw VersionMismatchError("weight format version " + std::to_string(version) +
                                   ", expected " + std::to_string(kWeightFormatVersion));
    }
    const std::string arch = r.str();
    if (!expected_arch.empty() && arch != expected_arch) {
        throw ArchMismatchError("weight file holds '" + arch + "', expected '" + expected_arch + "'");
    }
    const std::size_t h = r.u32(), w = r.u32(), c = r.u32();
    const std::size_t num_classes = r.u32();
    const std::uint64_t seed = r.u64();

    Model model = zoo::build(arch, {h, w, c}, num_classes, seed);
    auto params = model.params();

    const std::uint32_t count = r.u32();
    if (count != params.size()) {
        throw ArchMismatchError("weight file lists " + std::to_string(count) + " tensors, arch '" +
                                arch + "' has " + std::to_string(params.size()));
    }

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
        std::uint32_t crc;
    };
    std::vector<Entry> entries(count);
    for (auto& e : entries) {
        e.name = r.str();
        const std::uint32_t ndim = r.u32();
        e.shape.resize(ndim);
        for (auto& d : e.shape) d = r.u32();
        e.offset = r.u64();
        e.crc = r.u32();
    }

    for (std::size_t i = 0; i < count; ++i) {
        Param* p = params[i];
        const Entry& e = entries[i];
        if (e.name != p->name || e.shape != p->value.shape()) {
            throw ArchMismatchError("tensor " + std::to_string(i) + " is '" + e.name +
                                    "', arch expects '" + p->name + "'");
        }
        r.seek(e.offset);
        r.raw(p->value.data(), p->value.size() * sizeof(float));
        if (crc_of(p->value.data(), p->value.size()) != e.crc) {
            throw ChecksumError(e.name, "checksum mismatch in tensor '" + e.name + "'");
        }
    }
    return model;
}

std::string file_crc32_hex(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::vector<char> buf(1 << 16);
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (is) {
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(is.gcount()));
    }
    char out[9];
    std::snprintf(out, sizeof(out), "%08lx", static_cast<unsigned long>(crc));
    return out;
}

}  // namespace insidebias::serialize
