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
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <vector>

#include "cclo/clock.hpp"
#include "cclo/common.hpp"
#include "cclo/platform.hpp"
#include "cclo/wire.hpp"

// Protocol offload engine (POE) abstraction and the deterministic in-process
// fabric. The fabric models per-link latency/bandwidth in virtual time and
// optionally emulates RDMA verbs (one-sided WRITE, two-sided SEND).

namespace cclo {

struct SessionId {
  std::uint32_t value = 0;
  bool operator==(const SessionId &) const = default;
};

struct CostModel {
  double base_latency_us = 1.0;
  double bandwidth_bps = 100e9;
  double per_hop_us = 0.0;

  void validate() const {
    if (base_latency_us <= 0 || bandwidth_bps <= 0 || per_hop_us < 0)
      throw ConfigError("cost model constants must be positive");
  }
};

/// Modeled one-link transfer time: base latency plus serialization of the
/// payload and its framing overhead.
inline double fabric_cost_us(std::uint64_t size_bytes, const CostModel &model,
                             std::uint64_t overhead_bytes = wire::kHeaderSize) {
  return model.base_latency_us +
         static_cast<double>(size_bytes + overhead_bytes) * 8.0 /
             model.bandwidth_bps * 1e6;
}

enum class FrameKind { HeaderedMessage, RdmaWrite, RdmaSend };

struct Frame {
  FrameKind kind = FrameKind::HeaderedMessage;
  Bytes header_bytes; // encoded 48-byte signature; empty for RdmaWrite
  std::uint64_t remote_addr = 0;
  Bytes payload;                       // RdmaWrite only
  std::vector<wire::Segment> segments; // headered frames carry MTU segments

  std::uint64_t payload_bytes() const {
    if (kind == FrameKind::RdmaWrite)
      return payload.size();
    std::uint64_t n = 0;
    for (const auto &s : segments)
      n += s.seg_len;
    return n;
  }
};

enum class RxEventKind { MessageArrived, WriteLanded };

struct RxEvent {
  SessionId session;
  NodeId src_node = 0;
  RxEventKind kind = RxEventKind::MessageArrived;
  Bytes header_bytes; // raw bytes; receiver decodes
  Bytes payload;      // WriteLanded only (consumed by the fabric)
  std::vector<wire::Segment> segments;
  std::uint64_t remote_addr = 0;
  std::uint64_t len = 0;
  double arrival_time_us = 0.0;
};

/// One wire transfer, as seen by the fabric event log. Used by protocol
/// sequence checks and byte accounting.
struct WireRecord {
  double time_us = 0.0;
  NodeId src = 0;
  NodeId dst = 0;
  FrameKind frame_kind = FrameKind::HeaderedMessage;
  std::uint8_t msg_type = 0; // wire::MsgType for headered frames
  std::uint64_t payload_bytes = 0;
  std::uint64_t wire_bytes = 0; // payload + framing overhead
  std::uint32_t n_segments = 0;
};

/// Per-node transport handle.
class Poe {
public:
  virtual ~Poe() = default;
  virtual SessionId open_session(NodeId peer) = 0;
  virtual void transmit(SessionId session, Frame frame) = 0;
  virtual std::optional<RxEvent> poll_rx() = 0;
  virtual bool rdma_capable() const = 0;
  virtual bool lossy() const = 0;
  virtual NodeId peer_of(SessionId session) const = 0;
  virtual std::uint64_t bytes_on_wire() const = 0;
};

class SimFabric {
public:
  class Endpoint;

  SimFabric(CostModel model, bool rdma_enabled)
      : model_(model), rdma_enabled_(rdma_enabled) {
    model_.validate();
  }

  /// Each node keeps its own virtual timeline; event delivery catches the
  /// receiver's clock up to the arrival timestamp.
  Endpoint &attach(NodeId node, Platform *platform, Clock *clock) {
    auto ep = std::make_unique<Endpoint>(this, node, platform, clock);
    Endpoint &ref = *ep;
    endpoints_.emplace(node, std::move(ep));
    return ref;
  }

  /// Delivers the earliest pending event, advancing the receiver's clock to
  /// its arrival time. Returns false when no events are pending.
  bool step() {
    if (events_.empty())
      return false;
    Event ev = events_.top();
    events_.pop();
    Endpoint &dst = *endpoints_.at(ev.dst);
    dst.clock_->advance_to(ev.time_us);
    if (ev.rx.kind == RxEventKind::WriteLanded)
      land_write(dst, ev);
    dst.inbox_.push_back(std::move(ev.rx));
    return true;
  }

  bool has_pending() const { return !events_.empty(); }
  const std::vector<WireRecord> &log() const { return log_; }
  std::uint64_t total_wire_bytes() const { return total_wire_bytes_; }
  bool rdma_enabled() const { return rdma_enabled_; }

  class Endpoint : public Poe {
  public:
    Endpoint(SimFabric *fabric, NodeId node, Platform *platform, Clock *clock)
        : fabric_(fabric), node_(node), platform_(platform), clock_(clock) {}

    SessionId open_session(NodeId peer) override {
      auto it = sessions_.find(peer);
      if (it != sessions_.end())
        return it->second;
      if (fabric_->endpoints_.find(peer) == fabric_->endpoints_.end())
        throw ConnectionError("open_session: unknown peer node " +
                              std::to_string(peer));
      SessionId id{next_session_++};
      sessions_.emplace(peer, id);
      peers_.emplace(id.value, peer);
      return id;
    }

    void transmit(SessionId session, Frame frame) override {
      NodeId dst = peer_of(session);
      fabric_->enqueue(node_, dst, session, std::move(frame));
    }

    std::optional<RxEvent> poll_rx() override {
      if (inbox_.empty())
        return std::nullopt;
      RxEvent ev = std::move(inbox_.front());
      inbox_.pop_front();
      return ev;
    }

    bool rdma_capable() const override { return fabric_->rdma_enabled_; }
    bool lossy() const override { return false; }

    NodeId peer_of(SessionId session) const override {
      auto it = peers_.find(session.value);
      if (it == peers_.end())
        throw ConnectionError("transmit on unknown session");
      return it->second;
    }

    std::uint64_t bytes_on_wire() const override {
      return fabric_->total_wire_bytes_;
    }

    std::size_t session_count() const { return sessions_.size(); }
    NodeId node() const { return node_; }
    Platform *platform() { return platform_; }
    bool inbox_empty() const { return inbox_.empty(); }

  private:
    friend class SimFabric;
    SimFabric *fabric_;
    NodeId node_;
    Platform *platform_;
    Clock *clock_;
    std::uint32_t next_session_ = 1;
    std::map<NodeId, SessionId> sessions_;
    std::map<std::uint32_t, NodeId> peers_;
    std::deque<RxEvent> inbox_;
  };

private:
  struct Event {
    double time_us;
    std::uint64_t order; // global tie-break, assigned at transmit
    NodeId dst;
    RxEvent rx;
    bool operator>(const Event &o) const {
      if (time_us != o.time_us)
        return time_us > o.time_us;
      return order > o.order;
    }
  };

  void enqueue(NodeId src, NodeId dst, SessionId /*src_session*/, Frame frame) {
    if (frame.kind != FrameKind::HeaderedMessage && !rdma_enabled_)
      throw ConfigError("RDMA verbs are not enabled on this fabric");

    Endpoint &dst_ep = *endpoints_.at(dst);
    std::uint64_t payload_bytes = frame.payload_bytes();
    std::uint64_t overhead = wire::kHeaderSize;
    if (frame.kind == FrameKind::RdmaWrite) {
      // validate the target before any bytes move
      if (!dst_ep.platform_->is_registered_range(frame.remote_addr,
                                                 payload_bytes))
        throw RemoteAccessError("RDMA WRITE to unregistered remote address");
    }

    double ser_us = static_cast<double>(payload_bytes + overhead) * 8.0 /
                    model_.bandwidth_bps * 1e6;
    double &busy = link_busy_until_[{src, dst}];
    double start = std::max(endpoints_.at(src)->clock_->now_us(), busy);
    busy = start + ser_us;
    double arrival =
        start + ser_us + model_.base_latency_us + model_.per_hop_us;

    Event ev;
    ev.time_us = arrival;
    ev.order = next_order_++;
    ev.dst = dst;
    ev.rx.src_node = src;
    ev.rx.arrival_time_us = arrival;
    // the receiver-side session for this peer (opened lazily on first rx)
    ev.rx.session = dst_ep.open_session(src);
    if (frame.kind == FrameKind::RdmaWrite) {
      ev.rx.kind = RxEventKind::WriteLanded;
      ev.rx.remote_addr = frame.remote_addr;
      ev.rx.len = payload_bytes;
      ev.rx.payload = std::move(frame.payload);
    } else {
      ev.rx.kind = RxEventKind::MessageArrived;
      ev.rx.header_bytes = std::move(frame.header_bytes);
      ev.rx.segments = std::move(frame.segments);
      ev.rx.len = payload_bytes;
    }

    WireRecord rec;
    rec.time_us = arrival;
    rec.src = src;
    rec.dst = dst;
    rec.frame_kind = frame.kind;
    rec.msg_type =
        ev.rx.header_bytes.size() >= 6 ? ev.rx.header_bytes[5] : 0xff;
    rec.payload_bytes = payload_bytes;
    rec.wire_bytes = payload_bytes + overhead;
    rec.n_segments = static_cast<std::uint32_t>(ev.rx.segments.size());
    log_.push_back(rec);
    total_wire_bytes_ += rec.wire_bytes;

    events_.push(std::move(ev));
  }

  void land_write(Endpoint &dst, Event &ev) {
    auto span = dst.platform_->resolve(ev.rx.remote_addr, ev.rx.len,
                                       Access::Write);
    std::memcpy(span.data(), ev.rx.payload.data(), ev.rx.len);
    ev.rx.payload.clear();
  }

  CostModel model_;
  bool rdma_enabled_;
  std::map<NodeId, std::unique_ptr<Endpoint>> endpoints_;
  std::map<std::pair<NodeId, NodeId>, double> link_busy_until_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::uint64_t next_order_ = 0;
  std::vector<WireRecord> log_;
  std::uint64_t total_wire_bytes_ = 0;
};

} // namespace cclo
