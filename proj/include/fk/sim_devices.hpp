#pragma once

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "privsep.hpp"

namespace fk {

// In-process model of a simple echo device, standing in for hardware. It is
// untrusted by construction: every byte it moves goes through the DMA
// engine and every register update through its own wired window.
//
// Register window layout (u32 unless noted):
//   +0x00 DOORBELL  write 1 to start processing
//   +0x04 STATUS    0 idle, 1 busy, 2 done, 3 error
//   +0x08 LEN       request length in bytes
//   +0x10 DVA (u64) device-visible address of the request buffer
//
// Protocol: the driver places `LEN` request bytes at DVA, the device echoes
// them to DVA+LEN in chunks of at most 64 bytes per step, then sets STATUS
// to done and raises its interrupt vector when configured.
class EchoDevice final : public IoDevice {
 public:
  static constexpr std::uint64_t kRegDoorbell = 0x00;
  static constexpr std::uint64_t kRegStatus = 0x04;
  static constexpr std::uint64_t kRegLen = 0x08;
  static constexpr std::uint64_t kRegDva = 0x10;
  static constexpr std::uint64_t kWindowBytes = 0x20;

  static constexpr std::uint32_t kIdle = 0;
  static constexpr std::uint32_t kBusy = 1;
  static constexpr std::uint32_t kDone = 2;
  static constexpr std::uint32_t kError = 3;

  static constexpr std::uint64_t kChunk = 64;

  EchoDevice(std::string name, DmaEngine& dma, IoSpace& io, std::uint64_t window_base,
             IrqTable* irq = nullptr, std::uint32_t vector = 0)
      : name_(std::move(name)),
        dma_(&dma),
        io_(&io),
        base_(window_base),
        irq_(irq),
        vector_(vector) {}

  const std::string& name() const { return name_; }
  std::uint64_t window_base() const { return base_; }

  void on_io_write(std::uint64_t addr, std::uint32_t width, std::uint64_t value) override {
    std::lock_guard lock(mutex_);
    (void)width;
    switch (addr - base_) {
      case kRegLen:
        len_ = static_cast<std::uint32_t>(value);
        break;
      case kRegDva:
        dva_ = value;
        break;
      case kRegDoorbell:
        if (value != 0 && status_ != kBusy) {
          status_ = kBusy;
          progress_ = 0;
          publish_status();
        }
        break;
      default:
        break;
    }
  }

  // One unit of device time: move up to kChunk bytes of the echo. Returns
  // true while the device is making progress.
  bool step() {
    std::lock_guard lock(mutex_);
    if (status_ != kBusy) return false;
    if (progress_ >= len_) {
      finish(kDone);
      return true;
    }
    std::uint64_t n = std::min<std::uint64_t>(kChunk, len_ - progress_);
    auto chunk = dma_->device_read(name_, dva_ + progress_, n);
    if (!chunk.ok()) {
      finish(kError);
      return true;
    }
    if (!dma_->device_write(name_, dva_ + len_ + progress_, chunk.value()).ok()) {
      finish(kError);
      return true;
    }
    progress_ += n;
    if (progress_ >= len_) finish(kDone);
    return true;
  }

  std::uint32_t status() const {
    std::lock_guard lock(mutex_);
    return status_;
  }

  // Device-initiated hostile traffic, for the containment suites.
  Status rogue_dma_write(std::uint64_t dva, std::span<const std::uint8_t> bytes) {
    return dma_->device_write(name_, dva, bytes);
  }
  bool rogue_raise(std::uint32_t vector) { return irq_ != nullptr && irq_->raise(name_, vector); }

 private:
  void finish(std::uint32_t status) {
    status_ = status;
    publish_status();
    if (status == kDone && irq_ != nullptr) irq_->raise(name_, vector_);
  }

  void publish_status() {
    Status st = io_->device_poke(this, base_ + kRegStatus, status_, 4);
    (void)st;
  }

  std::string name_;
  DmaEngine* dma_;
  IoSpace* io_;
  std::uint64_t base_;
  IrqTable* irq_;
  std::uint32_t vector_;

  mutable std::recursive_mutex mutex_;
  std::uint32_t status_ = kIdle;
  std::uint32_t len_ = 0;
  std::uint64_t dva_ = 0;
  std::uint64_t progress_ = 0;
};

}  // namespace fk
