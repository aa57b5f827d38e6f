#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "mem_model.hpp"
#include "result.hpp"
#include "util.hpp"

namespace fk {

// Golden-state snapshot: header (magic "FKMM", version, frame_size,
// frame_count), then one 16-byte metadata entry per frame, then the raw
// store. Everything little-endian, so dumps compare bit-exactly across
// hosts.

inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::size_t kSnapshotHeaderBytes = 4 + 4 + 8 + 8;

inline std::vector<std::uint8_t> snapshot_dump(const MemoryMap& map) {
  const std::uint64_t frames = map.frame_count();
  std::vector<std::uint8_t> out(kSnapshotHeaderBytes + frames * kMetaEntryBytes +
                                map.total_bytes());
  std::span<std::uint8_t> w(out);
  w[0] = 'F';
  w[1] = 'K';
  w[2] = 'M';
  w[3] = 'M';
  store_le(w.subspan(4), kSnapshotVersion, 4);
  store_le(w.subspan(8), map.frame_size(), 8);
  store_le(w.subspan(16), frames, 8);
  std::size_t pos = kSnapshotHeaderBytes;
  for (std::uint64_t f = 0; f < frames; ++f) {
    FrameMeta m = map.peek_meta(f);
    store_le(w.subspan(pos), m.ref_count, 4);
    w[pos + 4] = static_cast<std::uint8_t>(m.state.kind);
    w[pos + 5] = 0;
    store_le(w.subspan(pos + 6), m.state.tag, 2);
    store_le(w.subspan(pos + 8), m.payload, 8);
    pos += kMetaEntryBytes;
  }
  auto store = map.raw_store_view();
  std::copy(store.begin(), store.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
  return out;
}

struct SnapshotHeader {
  std::uint32_t version = 0;
  std::uint64_t frame_size = 0;
  std::uint64_t frame_count = 0;
};

inline Result<SnapshotHeader> snapshot_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kSnapshotHeaderBytes) return Error{Errc::parse_error, "truncated header"};
  if (bytes[0] != 'F' || bytes[1] != 'K' || bytes[2] != 'M' || bytes[3] != 'M') {
    return Error{Errc::parse_error, "bad magic"};
  }
  SnapshotHeader h;
  h.version = static_cast<std::uint32_t>(load_le(bytes.subspan(4), 4));
  if (h.version != kSnapshotVersion) return Error{Errc::parse_error, "unsupported version"};
  h.frame_size = load_le(bytes.subspan(8), 8);
  h.frame_count = load_le(bytes.subspan(16), 8);
  const std::uint64_t want =
      kSnapshotHeaderBytes + h.frame_count * (kMetaEntryBytes + h.frame_size);
  if (!is_pow2(h.frame_size) || h.frame_size < 256 || h.frame_count == 0 ||
      bytes.size() != want) {
    return Error{Errc::parse_error, "inconsistent geometry"};
  }
  return h;
}

inline Result<FrameMeta> snapshot_meta_entry(std::span<const std::uint8_t> bytes,
                                             std::uint64_t frame) {
  std::size_t pos = kSnapshotHeaderBytes + frame * kMetaEntryBytes;
  FrameMeta m;
  m.ref_count = static_cast<std::uint32_t>(load_le(bytes.subspan(pos), 4));
  auto kind = bytes[pos + 4];
  if (kind > 2) return Error{Errc::parse_error, "bad state"};
  m.state.kind = static_cast<StateKind>(kind);
  m.state.tag = static_cast<std::uint16_t>(load_le(bytes.subspan(pos + 6), 2));
  m.payload = load_le(bytes.subspan(pos + 8), 8);
  return m;
}

// Reconstructs a map from a snapshot for inspection, diffing and re-dumping.
// The usable-region list is not part of the state and comes back empty.
inline Result<std::unique_ptr<MemoryMap>> snapshot_load(std::span<const std::uint8_t> bytes) {
  auto header = snapshot_header(bytes);
  if (!header.ok()) return header.error();
  MemConfig cfg;
  cfg.frame_size = header.value().frame_size;
  cfg.frame_count = header.value().frame_count;
  auto map = mem_init(std::move(cfg));
  if (!map.ok()) return map.error();
  for (std::uint64_t f = 0; f < header.value().frame_count; ++f) {
    auto m = snapshot_meta_entry(bytes, f);
    if (!m.ok()) return m.error();
    map.value()->restore_meta(f, m.value());
  }
  map.value()->raw_store_restore(
      bytes.subspan(kSnapshotHeaderBytes + header.value().frame_count * kMetaEntryBytes));
  return map.take();
}

struct FrameDelta {
  std::uint64_t frame = 0;
  bool meta_differs = false;
  bool bytes_differ = false;
};

inline Result<std::vector<FrameDelta>> snapshot_diff(std::span<const std::uint8_t> a,
                                                     std::span<const std::uint8_t> b) {
  auto ha = snapshot_header(a);
  if (!ha.ok()) return ha.error();
  auto hb = snapshot_header(b);
  if (!hb.ok()) return hb.error();
  if (ha.value().frame_size != hb.value().frame_size ||
      ha.value().frame_count != hb.value().frame_count) {
    return Error{Errc::parse_error, "geometry mismatch"};
  }
  const std::uint64_t frames = ha.value().frame_count;
  const std::uint64_t fs = ha.value().frame_size;
  const std::size_t store_base = kSnapshotHeaderBytes + frames * kMetaEntryBytes;
  std::vector<FrameDelta> deltas;
  for (std::uint64_t f = 0; f < frames; ++f) {
    FrameDelta d{f, false, false};
    std::size_t mpos = kSnapshotHeaderBytes + f * kMetaEntryBytes;
    d.meta_differs = !std::equal(a.begin() + mpos, a.begin() + mpos + kMetaEntryBytes,
                                 b.begin() + mpos);
    std::size_t spos = store_base + f * fs;
    d.bytes_differ = !std::equal(a.begin() + spos, a.begin() + spos + fs, b.begin() + spos);
    if (d.meta_differs || d.bytes_differ) deltas.push_back(d);
  }
  return deltas;
}

}  // namespace fk
