#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "../frame_alloc.hpp"
#include "../privsep.hpp"

namespace fk::services {

// Driver for the echo device, written purely against the safe API: frames
// come from the injected allocator, device registers go through an acquired
// IoHandle, and the data path crosses a DMA window over untyped memory.
class EchoDriver {
 public:
  // Register offsets of the device protocol.
  static constexpr std::uint64_t kRegDoorbell = 0x00;
  static constexpr std::uint64_t kRegStatus = 0x04;
  static constexpr std::uint64_t kRegLen = 0x08;
  static constexpr std::uint64_t kRegDva = 0x10;
  static constexpr std::uint32_t kStatusDone = 2;

  EchoDriver(FrameAllocSlot& frames, DmaEngine& dma, IoSpace& io, std::uint16_t buffer_kind)
      : frames_(&frames), dma_(&dma), io_(&io), buffer_kind_(buffer_kind) {}

  // Acquires the command window and a two-frame bounce buffer mapped for
  // both directions.
  Status init(std::uint64_t window_start, std::uint64_t window_len) {
    auto window = io_->acquire_mem(window_start, window_len);
    if (!window.ok()) return window.error();
    window_ = window.take();

    auto buf = frames_->alloc_frames(AllocLayout{2 * frame_size(), frame_size()}, buffer_kind_);
    if (!buf.ok()) return buf.error();
    buffer_ = buf.take();

    auto mapping = dma_->map(buffer_, DmaMode::stream, DmaDir::bidirectional);
    if (!mapping.ok()) return mapping.error();
    mapping_ = mapping.take();
    dva_ = mapping_.dva();
    return ok_status();
  }

  bool ready() const { return window_.live() && buffer_.live(); }
  std::uint64_t buffer_dva() const { return dva_; }

  // Sends one request and polls for the response. `pump` advances the
  // simulated device; the step budget models hardware latency tolerance.
  Result<std::vector<std::uint8_t>> request(std::span<const std::uint8_t> payload,
                                            const std::function<void()>& pump,
                                            std::uint32_t step_budget = 1000) {
    if (!ready()) return Error{Errc::not_registered, "driver not initialized"};
    if (payload.empty() || payload.size() > frame_size()) {
      return Error{Errc::out_of_range, "payload size"};
    }
    if (Status st = buffer_.write_bytes(0, payload); !st.ok()) return st.error();

    if (Status st = io_->write_once(window_, kRegLen, 4, payload.size()); !st.ok()) {
      return st.error();
    }
    if (Status st = io_->write_once(window_, kRegDva, 8, dva_); !st.ok()) {
      return st.error();
    }
    if (Status st = io_->write_once(window_, kRegDoorbell, 4, 1); !st.ok()) return st.error();

    for (std::uint32_t i = 0; i < step_budget; ++i) {
      pump();
      auto status = io_->read_once(window_, kRegStatus, 4);
      if (!status.ok()) return status.error();
      if (status.value() == kStatusDone) {
        return buffer_.read_bytes(payload.size(), payload.size());
      }
    }
    return Error{Errc::device_timeout,
                 "no completion within " + std::to_string(step_budget) + " steps"};
  }

  // Tears down the DMA window (the buffer stays claimed by the driver).
  void unmap_buffer() { mapping_.unmap(); }

 private:
  std::uint64_t frame_size() const { return frames_->map().frame_size(); }

  FrameAllocSlot* frames_;
  DmaEngine* dma_;
  IoSpace* io_;
  std::uint16_t buffer_kind_;
  IoHandle window_;
  SegmentHandle buffer_;
  DmaMapping mapping_;
  std::uint64_t dva_ = 0;
};

}  // namespace fk::services
