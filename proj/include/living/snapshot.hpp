#pragma once

#include "living/nbody.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

// Binary snapshot format used to move a ParticleSet between nodes.
// Layout (all little-endian), see docs/snapshot-format.md:
//
//   offset  size  field
//   0       8     magic "LVSNAP\0\1"
//   8       4     u32 format version (1)
//   12      4     u32 reserved, 0
//   16      8     u64 particle count n
//   24      8     u64 SMBH count
//   32      8     f64 time
//   40      65*n  records: u64 id, f64 mass, f64 x,y,z, f64 vx,vy,vz, u8 is_smbh
//   40+65n  4     u32 CRC-32 of every preceding byte

namespace living
{

using Bytes = std::vector<std::byte>;

inline constexpr std::size_t kSnapshotHeaderSize = 40;
inline constexpr std::size_t kSnapshotRecordSize = 65;
inline constexpr std::uint32_t kSnapshotVersion = 1;

Bytes encode_snapshot(const ParticleSet& ps);
ParticleSet decode_snapshot(std::span<const std::byte> data);

void write_snapshot(const ParticleSet& ps, std::ostream& out);
void write_snapshot(const ParticleSet& ps, const std::filesystem::path& path);
ParticleSet read_snapshot(std::istream& in);
ParticleSet read_snapshot(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::byte> data);

} // namespace living
