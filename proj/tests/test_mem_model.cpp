#include <catch2/catch_amalgamated.hpp>

#include <fk/mem_model.hpp>
#include <fk/oracle.hpp>

#include "support/oracles.hpp"

using namespace fk;

namespace {

std::unique_ptr<MemoryMap> small_map(std::uint64_t frames = 4) {
  auto r = mem_init(4096, frames, {Region{PhysAddr{0}, frames * 4096}});
  REQUIRE(r.ok());
  return r.take();
}

}  // namespace

TEST_CASE("mem_init produces a fresh zeroed map", "[mem]") {
  auto map = small_map();
  REQUIRE(map->frame_count() == 4);
  for (std::uint64_t f = 0; f < 4; ++f) {
    FrameMeta m = map->peek_meta(f);
    CHECK(m.ref_count == 0);
    CHECK(m.state.is_unused());
  }
  for (std::uint8_t b : map->raw_store_view()) REQUIRE(b == 0);
}

TEST_CASE("mem_init rejects malformed region lists", "[mem]") {
  auto overlap = mem_init(4096, 4, {Region{PhysAddr{0}, 8192}, Region{PhysAddr{4096}, 8192}});
  REQUIRE(overlap.errc() == Errc::overlapping_regions);

  auto unaligned = mem_init(4096, 4, {Region{PhysAddr{100}, 4096}});
  REQUIRE(unaligned.errc() == Errc::unaligned_region);

  auto oob = mem_init(4096, 4, {Region{PhysAddr{0}, 32768}});
  REQUIRE(oob.errc() == Errc::out_of_bounds);

  auto bad_fs = mem_init(100, 4, {});
  REQUIRE(bad_fs.errc() == Errc::bad_geometry);
}

TEST_CASE("large map starts with a zero census", "[mem]") {
  auto r = mem_init(4096, 4096, {Region{PhysAddr{0}, 16ull * 1024 * 1024}});
  REQUIRE(r.ok());
  CHECK(r.value()->frame_count() == 4096);
  CHECK(r.value()->census_total_refs() == 0);
}

TEST_CASE("meta_read bounds and snapshots", "[mem]") {
  auto map = small_map();
  auto fresh = map->meta_read(0);
  REQUIRE(fresh.ok());
  CHECK(fresh.value().ref_count == 0);
  CHECK(fresh.value().state.is_unused());

  REQUIRE(map->meta_read(4).errc() == Errc::out_of_bounds);

  auto kind = map->register_meta_kind("anon", 0, true);
  REQUIRE(kind.ok());
  REQUIRE(map->claim_frame(2, kind.value(), 0).ok());
  auto after = map->meta_read(2);
  REQUIRE(after.ok());
  CHECK(after.value().ref_count == 1);
  CHECK(after.value().state.is_untyped());
  CHECK(after.value().state.tag == kind.value());
}

TEST_CASE("meta_transition is a compare-and-exchange", "[mem]") {
  auto map = small_map();
  auto kind = map->register_meta_kind("anon", 0, true);
  REQUIRE(kind.ok());

  FrameMeta unused;
  FrameMeta claimed{1, FrameState{StateKind::untyped, kind.value()}, 7};
  REQUIRE(map->meta_transition(0, unused, claimed).ok());
  CHECK(map->peek_meta(0).payload == 7);

  // Expected no longer matches.
  auto again = map->meta_transition(0, unused, claimed);
  REQUIRE(again.errc() == Errc::conflict);
  CHECK(map->peek_meta(0).ref_count == 1);

  REQUIRE(map->meta_transition(9, unused, claimed).errc() == Errc::out_of_bounds);
}

TEST_CASE("racing transitions with equal expectations: exactly one wins", "[mem]") {
  // Decrement-to-zero racing a competing transition from the same observed
  // state. Under every interleaving of the two threads the CAS contract
  // lets exactly one of them through.
  auto run_order = [](const std::vector<std::uint32_t>& order) {
    auto map = small_map();
    auto kind = map->register_meta_kind("anon", 0, true);
    REQUIRE(kind.ok());
    FrameState untyped{StateKind::untyped, kind.value()};
    REQUIRE(map->meta_transition(0, FrameMeta{}, FrameMeta{1, untyped, 0}).ok());

    int successes = 0;
    auto drop_to_zero = [&] {
      if (map->meta_transition(0, FrameMeta{1, untyped, 0}, FrameMeta{}).ok()) ++successes;
    };
    auto reclaim = [&] {
      if (map->meta_transition(0, FrameMeta{1, untyped, 0}, FrameMeta{2, untyped, 0}).ok())
        ++successes;
    };
    for (std::uint32_t t : order) {
      if (t == 0) drop_to_zero();
      else reclaim();
    }
    REQUIRE(successes == 1);
  };

  auto st = for_each_order({1, 1}, 6, run_order);
  REQUIRE(st.ok());
}

TEST_CASE("transition outcomes are linearizable across interleavings", "[mem]") {
  // Three threads, one transition each. Executing them in any merge order
  // must leave the frame in the state predicted by replaying the successful
  // transitions sequentially -- which is what the shadow replay does.
  struct Step {
    FrameMeta expected, desired;
  };
  auto untyped = [](std::uint16_t k, std::uint32_t c) {
    return FrameMeta{c, FrameState{StateKind::untyped, k}, 0};
  };

  auto st = for_each_order({1, 1, 1}, 8, [&](const std::vector<std::uint32_t>& order) {
    auto map = small_map();
    auto kind = map->register_meta_kind("anon", 0, true);
    REQUIRE(kind.ok());
    std::uint16_t k = kind.value();
    std::vector<Step> steps = {
        {FrameMeta{}, untyped(k, 1)},          // claim
        {untyped(k, 1), untyped(k, 2)},        // duplicate
        {untyped(k, 1), FrameMeta{}},          // drop to zero
    };

    FrameMeta shadow;  // sequential replay
    for (std::uint32_t t : order) {
      bool ok = map->meta_transition(0, steps[t].expected, steps[t].desired).ok();
      bool shadow_ok = shadow.ref_count == steps[t].expected.ref_count &&
                       shadow.state == steps[t].expected.state;
      REQUIRE(ok == shadow_ok);
      if (shadow_ok) shadow = steps[t].desired;
    }
    FrameMeta final = map->peek_meta(0);
    REQUIRE(final.ref_count == shadow.ref_count);
    REQUIRE(final.state == shadow.state);
  });
  REQUIRE(st.ok());
}

TEST_CASE("kind registration closes at the first claim", "[mem]") {
  auto map = small_map();
  auto k1 = map->register_meta_kind("anon", 0, true);
  REQUIRE(k1.ok());
  REQUIRE(k1.value() == 4);  // after the four builtin typed kinds

  REQUIRE(map->register_meta_kind("fat", 9, true).errc() == Errc::out_of_range);

  REQUIRE(map->claim_frame(0, k1.value(), 0).ok());
  REQUIRE(map->register_meta_kind("late", 0, true).errc() == Errc::too_late);
}

TEST_CASE("ref_count saturates with a fault", "[mem]") {
  auto map = small_map();
  auto kind = map->register_meta_kind("anon", 0, true);
  REQUIRE(kind.ok());
  FrameState untyped{StateKind::untyped, kind.value()};
  REQUIRE(map->claim_frame(0, kind.value(), 0).ok());
  REQUIRE(map->meta_transition(0, FrameMeta{1, untyped, 0},
                               FrameMeta{0xffffffffu, untyped, 0})
              .ok());
  REQUIRE(map->dup_frame(0).errc() == Errc::saturation);
  // Restore a sane count so teardown stays quiet.
  REQUIRE(map->meta_transition(0, FrameMeta{0xffffffffu, untyped, 0}, FrameMeta{}).ok());
}

TEST_CASE("census tracks a shadow multiset over mixed operations", "[mem]") {
  auto map = small_map(16);
  auto kind = map->register_meta_kind("anon", 0, true);
  REQUIRE(kind.ok());
  fkt::ShadowFrames shadow(4096, 16, {Region{PhysAddr{0}, 16 * 4096}});

  SplitMix64 rng(99);
  for (int i = 0; i < 500; ++i) {
    std::uint64_t f = rng.bounded(16);
    switch (rng.bounded(3)) {
      case 0: {
        bool ok = map->claim_frame(f, kind.value(), 0).ok();
        REQUIRE(ok == shadow.claim_would_succeed(f * 4096, 1));
        if (ok) shadow.claim(f * 4096, 1, kind.value());
        break;
      }
      case 1: {
        bool ok = map->dup_frame(f).ok();
        REQUIRE(ok == (shadow.count(f) > 0));
        if (ok) shadow.dup(f, 1);
        break;
      }
      default: {
        bool ok = map->release_frame(f).ok();
        REQUIRE(ok == (shadow.count(f) > 0));
        if (ok) shadow.drop(f, 1);
        break;
      }
    }
  }
  REQUIRE(shadow.matches(*map));
  REQUIRE(map->census_total_refs() == shadow.census());
}

TEST_CASE("usable range queries span touching regions", "[mem]") {
  auto r = mem_init(4096, 8, {Region{PhysAddr{0}, 8192}, Region{PhysAddr{8192}, 8192}});
  REQUIRE(r.ok());
  auto& map = *r.value();
  CHECK(map.range_usable(PhysAddr{0}, 16384));
  CHECK(map.range_usable(PhysAddr{4096}, 8192));
  CHECK_FALSE(map.range_usable(PhysAddr{0}, 16385));
  CHECK_FALSE(map.range_usable(PhysAddr{16384}, 1));
  CHECK_FALSE(map.range_usable(PhysAddr{0}, 0));
}

TEST_CASE("metadata residency reservation claims low frames", "[mem]") {
  MemConfig cfg;
  cfg.frame_size = 4096;
  cfg.frame_count = 4096;
  cfg.usable = {Region{PhysAddr{0}, 16ull * 1024 * 1024}};
  cfg.reserve_metadata_frames = true;
  auto r = mem_init(std::move(cfg));
  REQUIRE(r.ok());
  auto& map = *r.value();

  // 4096 frames x 16-byte entries = 16 frames of metadata residency.
  REQUIRE(map.reserved_metadata_frames() == 16);
  for (std::uint64_t f = 0; f < 16; ++f) {
    FrameMeta m = map.peek_meta(f);
    CHECK(m.state.is_typed());
    CHECK(m.state.tag == kKindMetadata);
    CHECK(m.ref_count == 1);
  }
  CHECK(map.usable_regions().front().addr.value == 16 * 4096);
  CHECK_FALSE(map.range_usable(PhysAddr{0}, 4096));
  // Reservation is bootstrap state, not a client claim.
  CHECK_FALSE(map.any_claims());
  auto kind = map.register_meta_kind("anon", 0, true);
  REQUIRE(kind.ok());
  REQUIRE(map.claim_frame(0, kind.value(), 0).errc() == Errc::in_use);
}
