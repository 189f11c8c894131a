/*******************************************************************************
#  Copyright (C) 2026 The cclo-sim authors
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
#
# *******************************************************************************/

#pragma once

#include <cstring>
#include <map>
#include <memory>
#include <span>

#include "cclo/clock.hpp"
#include "cclo/common.hpp"

// Memory model layer. Two flavors: a shared-virtual model where the engine
// reaches host and device buffers through a software page table (with fault
// penalties for unregistered pages), and a partitioned model where host data
// must be staged to device memory before the engine can touch it.

namespace cclo {

enum class MemLocation { Host, Device };
enum class MemModel { SharedVirtual, Partitioned };

struct StagingCost {
  double pcie_bandwidth_bps = 128e9;
  double pcie_base_latency_us = 5.0;
  double invocation_latency_us = 3.0; // per-call engine invocation cost

  double stage_cost_us(std::uint64_t len) const {
    return pcie_base_latency_us +
           static_cast<double>(len) * 8.0 / pcie_bandwidth_bps * 1e6;
  }
};

struct PlatformConfig {
  MemModel model = MemModel::SharedVirtual;
  std::uint64_t page_size = 4096;
  double fault_penalty_us = 50.0;
  StagingCost staging;
};

struct Buffer {
  std::uint32_t key = 0;
  MemLocation location = MemLocation::Device;
  std::uint64_t base_vaddr = 0; // key << 32
  Bytes bytes;

  std::uint64_t len() const { return bytes.size(); }
  std::uint8_t *data() { return bytes.data(); }
  const std::uint8_t *data() const { return bytes.data(); }
};

enum class Access { Read, Write };

class Platform {
public:
  explicit Platform(PlatformConfig cfg, Clock *clock)
      : cfg_(cfg), clock_(clock) {}

  const PlatformConfig &config() const { return cfg_; }

  Buffer &alloc(MemLocation location, std::uint64_t len) {
    if (len == 0)
      throw ConfigError("alloc: len must be > 0");
    if (next_key_ == 0)
      throw ConfigError("alloc: virtual address space exhausted");
    auto buf = std::make_unique<Buffer>();
    buf->key = next_key_++;
    buf->location = location;
    buf->base_vaddr = static_cast<std::uint64_t>(buf->key) << 32;
    buf->bytes.resize(len);
    bool eager_register = cfg_.model == MemModel::SharedVirtual ||
                          location == MemLocation::Device;
    if (eager_register)
      register_pages(buf->base_vaddr, len);
    Buffer &ref = *buf;
    buffers_.emplace(buf->key, std::move(buf));
    return ref;
  }

  void free(Buffer &buf) {
    for (std::uint64_t p = page_of(buf.base_vaddr);
         p < buf.base_vaddr + buf.len(); p += cfg_.page_size)
      pages_.erase(p);
    buffers_.erase(buf.key);
  }

  /// Engine-side access path. Charges fault penalties for unregistered pages
  /// (which then become registered); on the partitioned flavor, host memory
  /// is not reachable from the engine at all.
  std::span<std::uint8_t> resolve(std::uint64_t vaddr, std::uint64_t len,
                                  Access /*intent*/) {
    Buffer &buf = buffer_for(vaddr, len);
    if (cfg_.model == MemModel::Partitioned &&
        buf.location == MemLocation::Host)
      throw StagingRequiredError(
          "partitioned model: host buffer must be staged to device memory");
    touch_pages(vaddr, len);
    return {buf.data() + (vaddr - buf.base_vaddr), len};
  }

  /// Explicit host<->device copy under the partitioned model, charged at the
  /// PCIe cost.
  void stage(const Buffer &src, Buffer &dst) {
    if (src.len() != dst.len())
      throw ConfigError("stage: length mismatch");
    if (src.location == dst.location)
      throw ConfigError("stage: src and dst are in the same location");
    std::memcpy(dst.data(), src.data(), src.len());
    clock_->advance_us(cfg_.staging.stage_cost_us(src.len()));
  }

  Buffer &buffer_for(std::uint64_t vaddr, std::uint64_t len) {
    std::uint32_t key = static_cast<std::uint32_t>(vaddr >> 32);
    auto it = buffers_.find(key);
    if (it == buffers_.end())
      throw RemoteAccessError("no buffer registered at vaddr");
    Buffer &buf = *it->second;
    if (vaddr < buf.base_vaddr || vaddr + len > buf.base_vaddr + buf.len())
      throw RemoteAccessError("vaddr range out of buffer bounds");
    return buf;
  }

  bool is_registered_range(std::uint64_t vaddr, std::uint64_t len) const {
    for (std::uint64_t p = page_of(vaddr); p < vaddr + len;
         p += cfg_.page_size) {
      auto it = pages_.find(p);
      if (it == pages_.end() || !it->second)
        return false;
    }
    return true;
  }

  /// Drops a page mapping so the next engine access takes the fault path
  /// (models TLB eviction).
  void deregister_page(std::uint64_t vaddr) { pages_[page_of(vaddr)] = false; }

  std::uint64_t fault_count() const { return fault_count_; }
  std::size_t registered_page_count() const {
    std::size_t n = 0;
    for (const auto &[p, reg] : pages_)
      n += reg ? 1 : 0;
    return n;
  }

private:
  std::uint64_t page_of(std::uint64_t vaddr) const {
    return vaddr - vaddr % cfg_.page_size;
  }

  void register_pages(std::uint64_t vaddr, std::uint64_t len) {
    for (std::uint64_t p = page_of(vaddr); p < vaddr + len;
         p += cfg_.page_size)
      pages_[p] = true;
  }

  void touch_pages(std::uint64_t vaddr, std::uint64_t len) {
    for (std::uint64_t p = page_of(vaddr); p < vaddr + len;
         p += cfg_.page_size) {
      auto it = pages_.find(p);
      if (it == pages_.end() || !it->second) {
        // fault-and-fill: pay the penalty once, then the page is mapped
        clock_->advance_us(cfg_.fault_penalty_us);
        ++fault_count_;
        pages_[p] = true;
      }
    }
  }

  PlatformConfig cfg_;
  Clock *clock_;
  std::uint32_t next_key_ = 1;
  std::map<std::uint32_t, std::unique_ptr<Buffer>> buffers_;
  std::map<std::uint64_t, bool> pages_;
  std::uint64_t fault_count_ = 0;
};

} // namespace cclo
