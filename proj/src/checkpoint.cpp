#include "mvc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "mvc/errors.hpp"

namespace mvc {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'K', 'E'};

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

struct Reader {
    const unsigned char* p;
    size_t n;
    size_t pos = 0;
    std::string path;

    void need(size_t k, const char* what) const {
        if (pos + k > n)
            throw IoError("truncated checkpoint " + path + " while reading " + what);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        const uint16_t v = static_cast<uint16_t>(p[pos]) |
                           static_cast<uint16_t>(p[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        const uint32_t v = static_cast<uint32_t>(p[pos]) |
                           (static_cast<uint32_t>(p[pos + 1]) << 8) |
                           (static_cast<uint32_t>(p[pos + 2]) << 16) |
                           (static_cast<uint32_t>(p[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
    std::string bytes(size_t k, const char* what) {
        need(k, what);
        std::string s(reinterpret_cast<const char*>(p + pos), k);
        pos += k;
        return s;
    }
};

} // namespace

int64_t CheckpointRecord::size() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
    for (const CheckpointRecord& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string out(kMagic, 4);
    put_u32(out, Checkpoint::kFormatVersion);
    if (ck.metadata.size() > 0xffffffffu)
        throw DomainError("checkpoint metadata too large");
    put_u32(out, static_cast<uint32_t>(ck.metadata.size()));
    out += ck.metadata;
    for (const CheckpointRecord& r : ck.records) {
        if (r.name.size() > 0xffff)
            throw DomainError("record name too long: " + r.name);
        if (r.dims.size() > 0xff)
            throw DomainError("record rank too large: " + r.name);
        if (r.size() != static_cast<int64_t>(r.data.size()))
            throw DimensionError("record " + r.name + " payload does not match its dims");
        put_u16(out, static_cast<uint16_t>(r.name.size()));
        out += r.name;
        out.push_back(static_cast<char>(r.dims.size()));
        for (int64_t d : r.dims) {
            if (d <= 0 || d > 0xffffffffll)
                throw DimensionError("record " + r.name + " has an invalid dimension");
            put_u32(out, static_cast<uint32_t>(d));
        }
        for (float v : r.data) put_u32(out, std::bit_cast<uint32_t>(v));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();

    Reader rd{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0, path};
    if (rd.bytes(4, "magic") != std::string(kMagic, 4))
        throw IoError("not a checkpoint file: " + path);
    const uint32_t version = rd.u32("version");
    if (version != Checkpoint::kFormatVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                      path + " (expected " + std::to_string(Checkpoint::kFormatVersion) + ")");

    Checkpoint ck;
    ck.metadata = rd.bytes(rd.u32("metadata length"), "metadata");
    while (rd.pos < rd.n) {
        CheckpointRecord r;
        r.name = rd.bytes(rd.u16("name length"), "record name");
        const uint8_t rank = rd.u8("rank");
        int64_t total = 1;
        for (uint8_t i = 0; i < rank; ++i) {
            const uint32_t d = rd.u32("dimension");
            if (d == 0) throw IoError("zero dimension in record " + r.name + " of " + path);
            r.dims.push_back(d);
            total *= d;
        }
        r.data.resize(static_cast<size_t>(total));
        rd.need(static_cast<size_t>(total) * 4, "payload");
        for (int64_t i = 0; i < total; ++i) {
            const uint32_t u = static_cast<uint32_t>(rd.p[rd.pos]) |
                               (static_cast<uint32_t>(rd.p[rd.pos + 1]) << 8) |
                               (static_cast<uint32_t>(rd.p[rd.pos + 2]) << 16) |
                               (static_cast<uint32_t>(rd.p[rd.pos + 3]) << 24);
            rd.pos += 4;
            r.data[static_cast<size_t>(i)] = std::bit_cast<float>(u);
        }
        ck.records.push_back(std::move(r));
    }
    return ck;
}

Checkpoint checkpoint_from_params(const ParamSet& params, const std::string& metadata_json) {
    Checkpoint ck;
    ck.metadata = metadata_json;
    for (const auto& [name, tensor] : params.items) {
        CheckpointRecord r;
        r.name = name;
        const Shape& s = tensor.shape();
        r.dims.assign(s.begin(), s.end());
        if (r.dims.empty()) r.dims.push_back(1); // rank-0 stored as a single scalar
        const std::vector<double>& v = tensor.data();
        r.data.reserve(v.size());
        for (double x : v) r.data.push_back(static_cast<float>(x));
        ck.records.push_back(std::move(r));
    }
    return ck;
}

void restore_params(const Checkpoint& ck, ParamSet& params) {
    std::set<std::string> known;
    for (auto& [name, tensor] : params.items) {
        known.insert(name);
        const CheckpointRecord* r = ck.find(name);
        if (!r) throw StateError("checkpoint is missing parameter " + name);
        std::vector<int64_t> want(tensor.shape().begin(), tensor.shape().end());
        if (want.empty()) want.push_back(1);
        if (want != r->dims)
            throw DimensionError("checkpoint shape mismatch for " + name);
        std::vector<double>& dst = tensor.data_mut();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(r->data[i]);
    }
    for (const CheckpointRecord& r : ck.records)
        if (!known.count(r.name))
            throw StateError("checkpoint record " + r.name + " has no matching parameter");
}

} // namespace mvc
