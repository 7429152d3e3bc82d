#include "pam/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace pam {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kFloat64 = 1;

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

private:
    void le(std::uint64_t v, int width)
    {
        char buf[8];
        for (int i = 0; i < width; ++i)
            buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
        bytes(buf, static_cast<std::size_t>(width));
    }
    std::ostream& os_;
};

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void bytes(void* p, std::size_t n)
    {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw CheckpointError("checkpoint truncated");
    }
    std::uint8_t u8()
    {
        std::uint8_t v = 0;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t limit)
    {
        const std::uint32_t n = u32();
        if (n > limit)
            throw CheckpointError("checkpoint string length " + std::to_string(n) + " exceeds limit");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::uint64_t le(int width)
    {
        unsigned char buf[8];
        bytes(buf, static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }
    std::istream& is_;
};

} // namespace

Checkpoint snapshot(Model& model, std::string config_text)
{
    Checkpoint ckpt;
    ckpt.config_text = std::move(config_text);
    for (const auto& p : model.parameters()) {
        CheckpointArray a;
        a.name = p.name;
        a.trainable = true;
        for (std::size_t d : p.tensor.shape())
            a.dims.push_back(d);
        a.values.assign(p.tensor.data().begin(), p.tensor.data().end());
        ckpt.arrays.push_back(std::move(a));
    }
    for (const auto& b : model.buffers())
        ckpt.arrays.push_back({b.name, false, {b.values->size()}, *b.values});
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw CheckpointError("cannot open '" + path.string() + "' for writing");
    Writer w(os);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(ckpt.version);
    w.str(ckpt.config_text);
    w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
        w.str(a.name);
        w.u8(kFloat64);
        w.u8(a.trainable ? 0 : 1);
        w.u32(static_cast<std::uint32_t>(a.dims.size()));
        for (std::uint64_t d : a.dims)
            w.u64(d);
        for (double v : a.values)
            w.f64(v);
    }
    if (!os)
        throw CheckpointError("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    Reader r(is);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw CheckpointError("'" + path.string() + "' is not a checkpoint");
    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != checkpoint_format_version)
        throw CheckpointVersionError("checkpoint format version " + std::to_string(ckpt.version) +
                                     " is not supported (expected " + std::to_string(checkpoint_format_version) + ")");
    ckpt.config_text = r.str(1u << 24);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointArray a;
        a.name = r.str(4096);
        if (r.u8() != kFloat64)
            throw CheckpointError("array '" + a.name + "' has an unsupported dtype");
        a.trainable = r.u8() == 0;
        const std::uint32_t rank = r.u32();
        if (rank > 4)
            throw CheckpointError("array '" + a.name + "' has rank " + std::to_string(rank));
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            a.dims.push_back(r.u64());
            n *= a.dims.back();
        }
        if (n > (1ull << 32))
            throw CheckpointError("array '" + a.name + "' is implausibly large");
        a.values.resize(n);
        for (double& v : a.values)
            v = r.f64();
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

void restore(Model& model, const Checkpoint& ckpt)
{
    std::map<std::string, const CheckpointArray*> by_name;
    for (const auto& a : ckpt.arrays)
        by_name[a.name] = &a;
    auto find = [&](const std::string& name, bool trainable) -> const CheckpointArray& {
        auto it = by_name.find(name);
        if (it == by_name.end() || it->second->trainable != trainable)
            throw CheckpointError("checkpoint has no " + std::string(trainable ? "parameter" : "buffer") + " '" +
                                  name + "'");
        return *it->second;
    };

    std::size_t expected = 0;
    for (auto& p : model.parameters()) {
        const CheckpointArray& a = find(p.name, true);
        const std::vector<std::uint64_t> dims(p.tensor.shape().begin(), p.tensor.shape().end());
        if (a.dims != dims)
            throw CheckpointError("shape mismatch for '" + p.name + "'");
        std::copy(a.values.begin(), a.values.end(), p.tensor.mutable_data().begin());
        ++expected;
    }
    for (auto& b : model.buffers()) {
        const CheckpointArray& a = find(b.name, false);
        if (a.values.size() != b.values->size())
            throw CheckpointError("length mismatch for buffer '" + b.name + "'");
        *b.values = a.values;
        ++expected;
    }
    if (expected != ckpt.arrays.size())
        throw CheckpointError("checkpoint carries arrays the model does not have");
}

} // namespace pam
