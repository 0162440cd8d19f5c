#include "living/snapshot.hpp"

#include "living/error.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace living
{

namespace
{

constexpr std::array<unsigned char, 8> kMagic{'L', 'V', 'S', 'N', 'A', 'P', 0, 1};

class Writer
{
public:
    explicit Writer(Bytes& out)
        : out_(out)
    {
    }

    void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
    void u32(std::uint32_t v)
    {
        for (int k = 0; k < 4; ++k)
        {
            u8(static_cast<std::uint8_t>(v >> (8 * k)));
        }
    }
    void u64(std::uint64_t v)
    {
        for (int k = 0; k < 8; ++k)
        {
            u8(static_cast<std::uint8_t>(v >> (8 * k)));
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

private:
    Bytes& out_;
};

class Reader
{
public:
    explicit Reader(std::span<const std::byte> in)
        : in_(in)
    {
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(in_[pos_++]); }
    std::uint32_t u32()
    {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k)
        {
            v |= static_cast<std::uint32_t>(u8()) << (8 * k);
        }
        return v;
    }
    std::uint64_t u64()
    {
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k)
        {
            v |= static_cast<std::uint64_t>(u8()) << (8 * k);
        }
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }

private:
    std::span<const std::byte> in_;
    std::size_t pos_ = 0;
};

} // namespace

std::uint32_t crc32_of(std::span<const std::byte> data)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large inputs.
    const auto* ptr = reinterpret_cast<const Bytef*>(data.data());
    std::size_t left = data.size();
    while (left > 0)
    {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = crc32(crc, ptr, chunk);
        ptr += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

Bytes encode_snapshot(const ParticleSet& ps)
{
    Bytes out;
    out.reserve(kSnapshotHeaderSize + kSnapshotRecordSize * ps.size() + 4);
    Writer w(out);
    for (unsigned char c : kMagic)
    {
        w.u8(c);
    }
    w.u32(kSnapshotVersion);
    w.u32(0);
    w.u64(ps.size());
    w.u64(ps.n_smbh());
    w.f64(ps.time);
    for (const Particle& p : ps.particles)
    {
        w.u64(p.id);
        w.f64(p.mass);
        w.f64(p.position.x);
        w.f64(p.position.y);
        w.f64(p.position.z);
        w.f64(p.velocity.x);
        w.f64(p.velocity.y);
        w.f64(p.velocity.z);
        w.u8(p.is_smbh ? 1 : 0);
    }
    w.u32(crc32_of(out));
    return out;
}

ParticleSet decode_snapshot(std::span<const std::byte> data)
{
    if (data.size() < kSnapshotHeaderSize)
    {
        throw Error(ErrorCode::HeaderParse, "snapshot: header needs 40 bytes, got " + std::to_string(data.size()));
    }
    if (std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0)
    {
        throw Error(ErrorCode::HeaderParse, "snapshot: bad magic");
    }
    Reader r(data.subspan(kMagic.size()));
    const std::uint32_t version = r.u32();
    if (version != kSnapshotVersion)
    {
        throw Error(ErrorCode::HeaderParse, "snapshot: unsupported version " + std::to_string(version));
    }
    r.u32();
    const std::uint64_t n = r.u64();
    const std::uint64_t n_smbh = r.u64();
    const double time = r.f64();

    if (n > (data.size() - kSnapshotHeaderSize) / kSnapshotRecordSize)
    {
        throw Error(ErrorCode::Truncated, "snapshot: body shorter than " + std::to_string(n) + " records");
    }
    const std::size_t body_end = kSnapshotHeaderSize + kSnapshotRecordSize * n;
    if (data.size() < body_end + 4)
    {
        throw Error(ErrorCode::Truncated, "snapshot: missing checksum trailer");
    }
    if (data.size() != body_end + 4)
    {
        throw Error(ErrorCode::HeaderParse, "snapshot: trailing bytes after checksum");
    }
    Reader trailer(data.subspan(body_end));
    if (trailer.u32() != crc32_of(data.first(body_end)))
    {
        throw Error(ErrorCode::Checksum, "snapshot: checksum mismatch");
    }

    ParticleSet ps;
    ps.time = time;
    ps.particles.resize(n);
    Reader body(data.subspan(kSnapshotHeaderSize, body_end - kSnapshotHeaderSize));
    for (Particle& p : ps.particles)
    {
        p.id = body.u64();
        p.mass = body.f64();
        p.position = {body.f64(), body.f64(), body.f64()};
        p.velocity = {body.f64(), body.f64(), body.f64()};
        const std::uint8_t flag = body.u8();
        if (flag > 1)
        {
            throw Error(ErrorCode::HeaderParse, "snapshot: bad SMBH flag");
        }
        p.is_smbh = flag == 1;
    }
    if (ps.n_smbh() != n_smbh)
    {
        throw Error(ErrorCode::HeaderParse, "snapshot: SMBH count does not match records");
    }
    return ps;
}

void write_snapshot(const ParticleSet& ps, std::ostream& out)
{
    const Bytes bytes = encode_snapshot(ps);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
    {
        throw Error(ErrorCode::Io, "snapshot: write failed");
    }
}

void write_snapshot(const ParticleSet& ps, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
    {
        throw Error(ErrorCode::Io, "snapshot: cannot open " + path.string());
    }
    write_snapshot(ps, out);
}

ParticleSet read_snapshot(std::istream& in)
{
    std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_snapshot(std::as_bytes(std::span(raw)));
}

ParticleSet read_snapshot(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw Error(ErrorCode::Io, "snapshot: cannot open " + path.string());
    }
    return read_snapshot(in);
}

} // namespace living
