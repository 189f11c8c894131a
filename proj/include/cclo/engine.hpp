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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cclo/collectives.hpp"
#include "cclo/common.hpp"
#include "cclo/platform.hpp"
#include "cclo/plugins.hpp"
#include "cclo/task.hpp"
#include "cclo/transport.hpp"
#include "cclo/wire.hpp"

// The CCLO node. Control plane: command queue and uC firmware loop issuing
// microcode. Data plane: DMP executing three-slot instructions, Rx buffer
// manager, Tx/Rx framing, streaming plugins, kernel-facing stream ports.
// The uC never touches payload bytes; only DMP paths move data.

namespace cclo {

enum class EndpointKind : std::uint8_t { None, Memory, Stream };

struct DataEndpoint {
  EndpointKind kind = EndpointKind::None;
  std::uint64_t addr = 0; // Memory
  std::uint8_t port = 0;  // Stream

  static DataEndpoint none() { return {}; }
  static DataEndpoint memory(std::uint64_t addr) {
    return DataEndpoint{EndpointKind::Memory, addr, 0};
  }
  static DataEndpoint stream(std::uint8_t port) {
    return DataEndpoint{EndpointKind::Stream, 0, port};
  }
};

// Request flags.
constexpr std::uint32_t kReqHostBuffer = 0x1;
constexpr std::uint32_t kReqDeviceBuffer = 0x2;
constexpr std::uint32_t kReqStreaming = 0x4;
constexpr std::uint32_t kReqSynchronous = 0x8;

struct CcloRequest {
  CollOp op = CollOp::NOP;
  DType dtype = DType::I32;
  std::uint64_t count = 0;
  std::uint32_t root = 0;
  ReduceFn reduce_fn = ReduceFn::SUM;
  std::uint32_t comm_id = 0;
  std::uint32_t peer = 0; // SEND destination / RECV source rank
  std::uint32_t tag = 0;
  DataEndpoint src;
  DataEndpoint dst;
  std::uint32_t flags = 0;

  std::uint64_t payload_bytes() const { return count * dtype_size(dtype); }
};

enum class RequestStatus : std::uint8_t { Pending, Running, Complete, Error };

struct RequestState {
  RequestStatus status = RequestStatus::Pending;
  std::string error;
  std::uint64_t bytes_moved = 0;
  double start_time_us = 0.0;
  double end_time_us = 0.0;

  bool done() const {
    return status == RequestStatus::Complete || status == RequestStatus::Error;
  }
  void check() const {
    if (status == RequestStatus::Error)
      throw CcloError("request failed: " + error);
  }
};

using RequestHandle = std::shared_ptr<RequestState>;

enum class SlotKind : std::uint8_t {
  Empty,
  Memory,
  RxMatch,
  StreamPort,
  Network
};

struct SlotDescriptor {
  SlotKind kind = SlotKind::Empty;
  std::uint64_t addr = 0; // Memory
  std::uint64_t len = 0;  // Memory and StreamPort (expected byte count)
  std::uint32_t src_rank = 0, tag = 0; // RxMatch
  std::uint8_t port = 0;               // StreamPort
  std::uint32_t dst_rank = 0;          // Network
  std::uint32_t seq = 0;               // Network
  std::uint64_t remote_addr = 0;       // Network (RNDZ_MSG target)
  std::uint16_t wire_flags = 0;        // Network (signature flags)

  static SlotDescriptor empty() { return {}; }
  static SlotDescriptor memory(std::uint64_t addr, std::uint64_t len) {
    SlotDescriptor d;
    d.kind = SlotKind::Memory;
    d.addr = addr;
    d.len = len;
    return d;
  }
  static SlotDescriptor rx_match(std::uint32_t src_rank, std::uint32_t tag) {
    SlotDescriptor d;
    d.kind = SlotKind::RxMatch;
    d.src_rank = src_rank;
    d.tag = tag;
    return d;
  }
  static SlotDescriptor stream_port(std::uint8_t port, std::uint64_t len) {
    SlotDescriptor d;
    d.kind = SlotKind::StreamPort;
    d.port = port;
    d.len = len;
    return d;
  }
  static SlotDescriptor network(std::uint32_t dst_rank, std::uint32_t tag,
                                std::uint32_t seq,
                                std::uint64_t remote_addr = 0,
                                std::uint16_t wire_flags = 0) {
    SlotDescriptor d;
    d.kind = SlotKind::Network;
    d.dst_rank = dst_rank;
    d.tag = tag;
    d.seq = seq;
    d.remote_addr = remote_addr;
    d.wire_flags = wire_flags;
    return d;
  }
};

enum class DmpFunc : std::uint8_t { NONE, COPY, REDUCE };

struct DmpInstruction {
  SlotDescriptor operand0;
  SlotDescriptor operand1;
  SlotDescriptor result;
  DmpFunc func = DmpFunc::NONE;
  ReduceFn reduce_fn = ReduceFn::SUM;
  DType dtype = DType::I32;
  // NONE for local movement; EAGER_MSG / RNDZ_MSG select the Tx path.
  std::optional<wire::MsgType> msg_kind;
  std::uint32_t comm_id = 0;

  void validate() const {
    auto operand_ok = [](const SlotDescriptor &s) {
      return s.kind != SlotKind::Network;
    };
    if (!operand_ok(operand0) || !operand_ok(operand1))
      throw InvariantError("Network slot is legal only as a result");
    if (result.kind == SlotKind::RxMatch)
      throw InvariantError("RxMatch slot is legal only as an operand");
    int ops = (operand0.kind != SlotKind::Empty) +
              (operand1.kind != SlotKind::Empty);
    switch (func) {
    case DmpFunc::NONE:
      if (ops != 0 || result.kind != SlotKind::Empty)
        throw InvariantError("NONE instruction must have empty slots");
      break;
    case DmpFunc::COPY:
      if (ops != 1)
        throw InvariantError("COPY requires exactly one operand");
      break;
    case DmpFunc::REDUCE:
      if (ops != 2)
        throw InvariantError("REDUCE requires both operand slots");
      if (result.kind == SlotKind::Empty)
        throw InvariantError("REDUCE needs a result slot");
      break;
    }
    // COPY with an Empty result is a discard sink (zero-byte receives)
  }
};

enum class RxSlotState : std::uint8_t { IDLE, IN_PROGRESS, READY, CLAIMED };

struct RxSlotMeta {
  std::uint32_t comm_id = 0;
  std::uint32_t src_rank = 0;
  std::uint32_t tag = 0;
  std::uint32_t seq = 0;
  std::uint64_t len = 0;
};

struct RxBufferSlot {
  std::uint16_t index = 0;
  std::uint64_t capacity = 0;
  RxSlotState state = RxSlotState::IDLE;
  std::optional<wire::ReassemblyState> reassembly;
  RxSlotMeta meta;
  Bytes payload; // valid in READY/CLAIMED
  // in-progress reassembly key: (src node, msg_id)
  NodeId src_node = 0;
  std::uint64_t msg_id = 0;
};

struct EngineConfig {
  std::uint32_t rx_buffer_count = 16;
  std::uint64_t rx_buffer_size = 1u << 20;
  std::uint32_t mtu_payload = 4096;
  bool eager_enabled = true;
  // fallback RBM poll interval; matching is normally event-driven
  double dmp_poll_interval_us = 10.0;
  double stall_timeout_us = 1e6;  // result-slot / stream-port backpressure
  double recv_timeout_us = 10e3; // applied on lossy transports only
  std::uint8_t stream_port_count = 4;
  std::uint64_t stream_port_capacity = 1u << 20;

  void validate() const {
    if (eager_enabled && rx_buffer_count == 0)
      throw ConfigError("eager protocol requires at least one Rx buffer");
    if (mtu_payload < 1)
      throw ConfigError("mtu_payload must be >= 1");
    if (stream_port_count == 0 || stream_port_capacity == 0)
      throw ConfigError("stream ports must have nonzero count and capacity");
  }
};

class CcloNode;

/// Collective procedures are firmware: pluggable coroutines driving the node
/// through its microcode interface. Installed at configuration time.
using Firmware =
    std::function<Task(CcloNode &, const CcloRequest &, RequestHandle)>;

class CcloNode {
public:
  CcloNode(EngineConfig cfg, NodeId node, Platform *platform, Poe *poe,
           Clock *clock, Scheduler *sched)
      : cfg_(cfg), node_(node), platform_(platform), poe_(poe), clock_(clock),
        sched_(sched) {
    cfg_.validate();
    slots_.resize(cfg_.rx_buffer_count);
    for (std::uint32_t i = 0; i < cfg_.rx_buffer_count; ++i) {
      slots_[i].index = static_cast<std::uint16_t>(i);
      slots_[i].capacity = cfg_.rx_buffer_size;
    }
    ports_.resize(cfg_.stream_port_count);
    counters_["msgs_sent"] = 0;
    counters_["msgs_received"] = 0;
    counters_["eager_drops"] = 0;
    counters_["header_errors"] = 0;
    counters_["writes_landed"] = 0;
    counters_["uc_payload_bytes"] = 0;
    counters_["dmp_bytes_moved"] = 0;
  }

  const EngineConfig &config() const { return cfg_; }
  NodeId node() const { return node_; }
  Platform &platform() { return *platform_; }
  Poe &poe() { return *poe_; }
  Clock &clock() { return *clock_; }
  Scheduler &scheduler() { return *sched_; }

  void install_firmware(Firmware fw) { firmware_ = std::move(fw); }

  void add_communicator(Communicator comm) {
    comm.validate();
    if (comm.peers[comm.local_rank].node != node_)
      throw ConfigError("communicator local rank does not map to this node");
    comms_.emplace(comm.comm_id, std::move(comm));
  }

  Communicator &communicator(std::uint32_t comm_id) {
    auto it = comms_.find(comm_id);
    if (it == comms_.end())
      throw ConfigError("unknown communicator " + std::to_string(comm_id));
    return it->second;
  }

  /// Fires up the control-plane loop; must be called once, after the
  /// scheduler is in place.
  void start() { uc_task_ = sched_->spawn(uc_loop()); }

  void stop() { stopping_ = true; }
  bool stopped() const { return !uc_task_ || uc_task_->done(); }

  /// Enqueues one collective command. Validation failures throw before
  /// anything is transmitted.
  RequestHandle call(const CcloRequest &req) {
    validate_request(req);
    auto handle = std::make_shared<RequestState>();
    cmd_queue_.emplace_back(req, handle);
    return handle;
  }

  std::size_t queued_commands() const { return cmd_queue_.size(); }
  std::size_t inflight_requests() const { return inflight_; }

  // --- Rx path (driven by the cluster/driver loop) ---

  /// Drains the transport inbox into the engine.
  void pump_rx() {
    while (auto ev = poe_->poll_rx())
      rx_dispatch(*ev);
  }

  void rx_dispatch(const RxEvent &ev) {
    if (ev.kind == RxEventKind::WriteLanded) {
      ++counters_["writes_landed"];
      return;
    }
    wire::MessageSignature sig;
    try {
      sig = wire::decode_header(ev.header_bytes);
    } catch (const DecodeError &) {
      ++counters_["header_errors"];
      return;
    }
    ++counters_["msgs_received"];
    switch (sig.msg_type) {
    case wire::MsgType::EAGER_MSG:
      deliver_eager(sig, ev.segments, ev.src_node);
      break;
    case wire::MsgType::RNDZ_INIT:
    case wire::MsgType::RNDZ_DONE:
      notifications_.push_back(sig);
      break;
    case wire::MsgType::RNDZ_MSG:
      // payload travels as an RDMA WRITE; a headered RNDZ_MSG is a
      // protocol violation
      ++counters_["header_errors"];
      break;
    }
  }

  // --- RBM ---

  /// Accepts an eager message (or one datagram's worth of it) into the Rx
  /// pool. Messages under reassembly are keyed by (source node, msg_id).
  void rbm_on_message(const wire::MessageSignature &sig,
                      const std::vector<wire::Segment> &segments,
                      NodeId src_node) {
    if (!deliver_eager_try(sig, segments, src_node))
      throw InvariantError("rbm_on_message: no Rx slot available");
  }

  /// Claims the READY slot matching (src, tag) with the smallest (seq, src);
  /// kAnyMatch is a wildcard. Returns the slot index or nothing.
  std::optional<std::uint16_t> rbm_match(std::uint32_t src, std::uint32_t tag,
                                         std::uint32_t comm_id) {
    const RxBufferSlot *best = nullptr;
    for (const auto &s : slots_) {
      if (s.state != RxSlotState::READY || s.meta.comm_id != comm_id)
        continue;
      if (src != kAnyMatch && s.meta.src_rank != src)
        continue;
      if (tag != kAnyMatch && s.meta.tag != tag)
        continue;
      if (!best || s.meta.seq < best->meta.seq ||
          (s.meta.seq == best->meta.seq && s.meta.src_rank < best->meta.src_rank))
        best = &s;
    }
    if (!best)
      return std::nullopt;
    auto idx = best->index;
    slots_[idx].state = RxSlotState::CLAIMED;
    return idx;
  }

  RxBufferSlot &slot(std::uint16_t index) { return slots_.at(index); }

  /// Returns a CLAIMED slot to IDLE and retries any deferred eager messages.
  void rbm_release(std::uint16_t index) {
    RxBufferSlot &s = slots_.at(index);
    if (s.state != RxSlotState::CLAIMED)
      throw InvariantError("release of a slot that is not claimed");
    s.state = RxSlotState::IDLE;
    s.reassembly.reset();
    s.payload.clear();
    retry_pending_eager();
  }

  std::map<RxSlotState, std::size_t> rx_pool_census() const {
    std::map<RxSlotState, std::size_t> c;
    c[RxSlotState::IDLE] = 0;
    c[RxSlotState::IN_PROGRESS] = 0;
    c[RxSlotState::READY] = 0;
    c[RxSlotState::CLAIMED] = 0;
    for (const auto &s : slots_)
      ++c[s.state];
    return c;
  }

  // --- DMP ---

  /// Executes one microcode instruction: open operand streams, push through
  /// COPY or the reduction plugin, emit to the result slot.
  Task dmp_execute(DmpInstruction instr) {
    instr.validate();
    if (instr.func == DmpFunc::NONE)
      co_return;

    Bytes a, b;
    if (instr.operand0.kind != SlotKind::Empty)
      co_await fetch_operand(instr.operand0, instr.comm_id, &a);
    if (instr.operand1.kind != SlotKind::Empty)
      co_await fetch_operand(instr.operand1, instr.comm_id, &b);

    Bytes out;
    if (instr.func == DmpFunc::COPY) {
      out = std::move(instr.operand0.kind != SlotKind::Empty ? a : b);
    } else {
      if (a.size() != b.size())
        throw InvariantError("REDUCE operand length mismatch");
      // function selection travels as the routing tag on the plugin stream
      BinaryPlugin plugin(route_for(instr.reduce_fn), instr.dtype,
                          [&out](const std::uint8_t *d, std::size_t n) {
                            out.insert(out.end(), d, d + n);
                          });
      // feed in MTU-sized chunks so the plugin pipeline is exercised
      std::size_t chunk = cfg_.mtu_payload;
      for (std::size_t off = 0; off < a.size(); off += chunk) {
        std::size_t n = std::min(chunk, a.size() - off);
        plugin.feed_a(a.data() + off, n);
        plugin.feed_b(b.data() + off, n);
      }
      plugin.finish();
    }

    co_await emit_result(instr, std::move(out));
  }

  // --- Tx ---

  /// Emits one message toward a peer rank. EAGER_MSG goes out headered (or
  /// two-sided SEND on RDMA transports); RNDZ_MSG goes out as a one-sided
  /// WRITE followed by RNDZ_DONE; RNDZ_INIT is header-only, advertising the
  /// receiver's result address.
  void tx_emit(std::uint32_t comm_id, std::uint32_t dst_rank,
               wire::MsgType type, std::uint32_t tag, std::uint32_t seq,
               const Bytes &payload, std::uint64_t remote_addr = 0,
               std::uint16_t wire_flags = 0) {
    Communicator &comm = communicator(comm_id);
    if (dst_rank >= comm.size)
      throw ConfigError("tx_emit: destination rank out of range");

    wire::MessageSignature sig;
    sig.msg_type = type;
    sig.flags = wire_flags;
    sig.comm_id = comm_id;
    sig.src_rank = comm.local_rank;
    sig.dst_rank = dst_rank;
    sig.tag = tag;
    sig.seq = seq;
    sig.payload_len =
        type == wire::MsgType::EAGER_MSG || type == wire::MsgType::RNDZ_MSG
            ? payload.size()
            : 0;
    sig.remote_addr =
        type == wire::MsgType::RNDZ_INIT || type == wire::MsgType::RNDZ_MSG
            ? remote_addr
            : 0;

    NodeId dst_node = comm.peers[dst_rank].node;
    if (dst_node == node_) {
      loopback(sig, payload);
      return;
    }
    SessionId session = comm.peers[dst_rank].session;

    switch (type) {
    case wire::MsgType::EAGER_MSG: {
      if (!cfg_.eager_enabled)
        throw ConfigError("eager protocol disabled");
      if (payload.size() > cfg_.rx_buffer_size)
        throw ConfigError("eager message exceeds Rx buffer capacity");
      Frame f;
      f.kind = poe_->rdma_capable() ? FrameKind::RdmaSend
                                    : FrameKind::HeaderedMessage;
      f.header_bytes = wire::encode_header(sig);
      f.segments =
          wire::segment_message(sig, payload, cfg_.mtu_payload, next_msg_id_++);
      poe_->transmit(session, std::move(f));
      ++counters_["msgs_sent"];
      break;
    }
    case wire::MsgType::RNDZ_INIT:
    case wire::MsgType::RNDZ_DONE: {
      if (!poe_->rdma_capable())
        throw ConfigError("rendezvous requires an RDMA-capable transport");
      Frame f;
      f.kind = FrameKind::RdmaSend;
      f.header_bytes = wire::encode_header(sig);
      poe_->transmit(session, std::move(f));
      ++counters_["msgs_sent"];
      break;
    }
    case wire::MsgType::RNDZ_MSG: {
      if (!poe_->rdma_capable())
        throw ConfigError("rendezvous requires an RDMA-capable transport");
      Frame w;
      w.kind = FrameKind::RdmaWrite;
      w.remote_addr = remote_addr;
      w.payload = payload;
      poe_->transmit(session, std::move(w));
      ++counters_["msgs_sent"];
      // WRITE complete (ordered behind it on the link): signal the receiver
      tx_emit(comm_id, dst_rank, wire::MsgType::RNDZ_DONE, tag, seq, {});
      break;
    }
    }
  }

  // --- uC notifications (rendezvous control messages) ---

  std::optional<wire::MessageSignature>
  take_notification(wire::MsgType type, std::uint32_t comm_id,
                    std::uint32_t src_rank, std::uint32_t tag,
                    std::uint32_t seq = kAnyMatch) {
    auto best = notifications_.end();
    for (auto it = notifications_.begin(); it != notifications_.end(); ++it) {
      if (it->msg_type != type || it->comm_id != comm_id)
        continue;
      if (src_rank != kAnyMatch && it->src_rank != src_rank)
        continue;
      if (tag != kAnyMatch && it->tag != tag)
        continue;
      if (seq != kAnyMatch && it->seq != seq)
        continue;
      if (best == notifications_.end() || it->seq < best->seq)
        best = it;
    }
    if (best == notifications_.end())
      return std::nullopt;
    wire::MessageSignature sig = *best;
    notifications_.erase(best);
    return sig;
  }

  /// Claims the matching notification, suspending until one arrives. The
  /// claim happens inside the wake predicate, so concurrent waiters never
  /// observe the same notification.
  Task await_notification(wire::MsgType type, std::uint32_t comm_id,
                          std::uint32_t src_rank, std::uint32_t tag,
                          wire::MessageSignature *out,
                          std::uint32_t seq = kAnyMatch) {
    std::optional<wire::MessageSignature> got =
        take_notification(type, comm_id, src_rank, tag, seq);
    if (!got) {
      bool ok = co_await recv_wait([&] {
        got = take_notification(type, comm_id, src_rank, tag, seq);
        return got.has_value();
      });
      if (!ok)
        throw TimeoutError("timed out waiting for " +
                           std::string(wire::msg_type_name(type)));
    }
    *out = *got;
  }

  std::size_t notification_count() const { return notifications_.size(); }

  // --- point-to-point procedures (used directly and by firmware) ---

  Task send_msg(std::uint32_t comm_id, std::uint32_t peer, std::uint32_t tag,
                SlotDescriptor src, std::uint64_t len, Protocol protocol,
                std::uint16_t wire_flags = 0) {
    Communicator &comm = communicator(comm_id);
    if (len == 0)
      protocol = Protocol::Eager; // nothing to write; header-only message
    std::uint32_t seq = comm.next_send_seq(peer);
    DmpInstruction instr;
    instr.func = DmpFunc::COPY;
    instr.comm_id = comm_id;
    instr.operand0 = src;
    bool self = comm.peers.at(peer).node == node_;
    if (len == 0) {
      tx_emit(comm_id, peer, wire::MsgType::EAGER_MSG, tag, seq, {}, 0,
              wire_flags);
      co_return;
    }
    if (protocol == Protocol::Eager || self) {
      instr.msg_kind = wire::MsgType::EAGER_MSG;
      if (!self && len > cfg_.rx_buffer_size)
        throw ConfigError("eager message exceeds Rx buffer capacity");
      instr.result = SlotDescriptor::network(peer, tag, seq, 0, wire_flags);
      co_await dmp_execute(instr);
    } else {
      // receiver-initiated: wait for the advertised result address
      wire::MessageSignature init;
      co_await await_notification(wire::MsgType::RNDZ_INIT, comm_id, peer, tag,
                                  &init);
      instr.msg_kind = wire::MsgType::RNDZ_MSG;
      instr.result = SlotDescriptor::network(peer, tag, init.seq,
                                             init.remote_addr, wire_flags);
      co_await dmp_execute(instr);
    }
  }

  Task recv_msg(std::uint32_t comm_id, std::uint32_t peer, std::uint32_t tag,
                SlotDescriptor dst, std::uint64_t len, Protocol protocol) {
    Communicator &comm = communicator(comm_id);
    std::uint32_t seq = comm.next_recv_seq(peer);
    // wildcard receives and zero-byte messages always take the eager path
    bool self = peer != kAnyMatch && comm.peers.at(peer).node == node_;
    if (protocol == Protocol::Eager || self || len == 0 || peer == kAnyMatch) {
      DmpInstruction instr;
      instr.func = DmpFunc::COPY;
      instr.comm_id = comm_id;
      instr.operand0 = SlotDescriptor::rx_match(peer, tag);
      instr.operand0.len = len;
      instr.result = dst;
      co_await dmp_execute(instr);
    } else {
      if (dst.kind == SlotKind::Memory) {
        tx_emit(comm_id, peer, wire::MsgType::RNDZ_INIT, tag, seq, {},
                dst.addr);
        wire::MessageSignature done;
        co_await await_notification(wire::MsgType::RNDZ_DONE, comm_id, peer,
                                    tag, &done, seq);
        // payload already landed in destination memory, bypassing the CCLO
      } else {
        // stream destination: land in a scratch buffer, then move on-node
        Buffer &scratch = scratch_buffer(len);
        tx_emit(comm_id, peer, wire::MsgType::RNDZ_INIT, tag, seq, {},
                scratch.base_vaddr);
        wire::MessageSignature done;
        co_await await_notification(wire::MsgType::RNDZ_DONE, comm_id, peer,
                                    tag, &done, seq);
        DmpInstruction mv;
        mv.func = DmpFunc::COPY;
        mv.comm_id = comm_id;
        mv.operand0 = SlotDescriptor::memory(scratch.base_vaddr, len);
        mv.result = dst;
        co_await dmp_execute(mv);
      }
    }
  }

  // --- stream ports ---

  Task port_push(std::uint8_t port, Bytes data) {
    auto &p = port_ref(port);
    std::size_t off = 0;
    while (off < data.size()) {
      bool ok = co_await sched_->until_deadline(
          [this, port] {
            return port_ref(port).size() < cfg_.stream_port_capacity;
          },
          clock_->now_us() + cfg_.stall_timeout_us, clock_);
      if (!ok)
        throw TimeoutError("stream port push stalled");
      std::size_t room = cfg_.stream_port_capacity - p.size();
      std::size_t n = std::min(room, data.size() - off);
      p.insert(p.end(), data.begin() + static_cast<std::ptrdiff_t>(off),
               data.begin() + static_cast<std::ptrdiff_t>(off + n));
      off += n;
    }
  }

  Task port_pull(std::uint8_t port, std::uint64_t len, Bytes *out) {
    bool ok = co_await sched_->until_deadline(
        [this, port, len] { return port_ref(port).size() >= len; },
        clock_->now_us() + cfg_.stall_timeout_us, clock_);
    if (!ok)
      throw TimeoutError("stream port pull timed out");
    auto &p = port_ref(port);
    out->assign(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(len));
    p.erase(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(len));
  }

  std::size_t port_depth(std::uint8_t port) { return port_ref(port).size(); }

  // --- configuration/inspection (the MMIO-style window) ---

  std::uint64_t counter(const std::string &name) const {
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second;
  }

  std::map<std::string, std::string> inspect() const {
    std::map<std::string, std::string> kv;
    kv["node"] = std::to_string(node_);
    kv["communicators"] = std::to_string(comms_.size());
    kv["rx_buffer_count"] = std::to_string(cfg_.rx_buffer_count);
    kv["rx_buffer_size"] = std::to_string(cfg_.rx_buffer_size);
    kv["mtu_payload"] = std::to_string(cfg_.mtu_payload);
    auto census = rx_pool_census();
    kv["rx_idle"] = std::to_string(census.at(RxSlotState::IDLE));
    kv["rx_in_progress"] = std::to_string(census.at(RxSlotState::IN_PROGRESS));
    kv["rx_ready"] = std::to_string(census.at(RxSlotState::READY));
    kv["rx_claimed"] = std::to_string(census.at(RxSlotState::CLAIMED));
    kv["page_faults"] = std::to_string(platform_->fault_count());
    for (const auto &[k, v] : counters_)
      kv[k] = std::to_string(v);
    return kv;
  }

  Buffer &scratch_buffer(std::uint64_t len) {
    return platform_->alloc(MemLocation::Device, len);
  }

private:
  using PortFifo = std::deque<std::uint8_t>;

  PortFifo &port_ref(std::uint8_t port) {
    if (port >= ports_.size())
      throw ConfigError("stream port out of range");
    return ports_[port];
  }

  void validate_request(const CcloRequest &req) {
    Communicator &comm = communicator(req.comm_id);
    switch (req.op) {
    case CollOp::SEND:
    case CollOp::RECV:
      if (req.peer >= comm.size)
        throw ConfigError("peer rank out of range");
      break;
    case CollOp::BCAST:
    case CollOp::REDUCE:
    case CollOp::GATHER:
      if (req.root >= comm.size)
        throw ConfigError("root rank out of range");
      break;
    default:
      break;
    }
    bool wants_stream = (req.flags & kReqStreaming) != 0;
    bool has_stream = req.src.kind == EndpointKind::Stream ||
                      req.dst.kind == EndpointKind::Stream;
    if (wants_stream != has_stream)
      throw ConfigError("streaming flag does not match endpoints");
    // bounds-check memory endpoints before anything hits the wire
    std::uint64_t len = req.payload_bytes();
    if (len > 0) {
      if (req.src.kind == EndpointKind::Memory)
        platform_->buffer_for(req.src.addr, endpoint_src_len(req));
      if (req.dst.kind == EndpointKind::Memory)
        platform_->buffer_for(req.dst.addr, endpoint_dst_len(req));
    }
  }

  // ALLTOALL and root GATHER touch count bytes per rank
  std::uint64_t endpoint_src_len(const CcloRequest &req) const {
    std::uint64_t len = req.payload_bytes();
    if (req.op == CollOp::ALLTOALL)
      return len * comms_.at(req.comm_id).size;
    return len;
  }
  std::uint64_t endpoint_dst_len(const CcloRequest &req) const {
    std::uint64_t len = req.payload_bytes();
    const Communicator &comm = comms_.at(req.comm_id);
    if (req.op == CollOp::ALLTOALL)
      return len * comm.size;
    if (req.op == CollOp::GATHER && req.root == comm.local_rank)
      return len * comm.size;
    return len;
  }

  Task uc_loop() {
    for (;;) {
      co_await sched_->until(
          [this] { return !cmd_queue_.empty() || stopping_; });
      if (stopping_ && cmd_queue_.empty())
        co_return;
      auto [req, handle] = std::move(cmd_queue_.front());
      cmd_queue_.pop_front();
      // modeled invocation cost of the command path
      clock_->advance_us(platform_->config().staging.invocation_latency_us);
      handle->status = RequestStatus::Running;
      handle->start_time_us = clock_->now_us();
      ++inflight_;
      sched_->spawn(run_request(req, handle));
    }
  }

  Task run_request(CcloRequest req, RequestHandle handle) {
    try {
      co_await dispatch_request(req, handle);
      handle->status = RequestStatus::Complete;
    } catch (const std::exception &e) {
      handle->status = RequestStatus::Error;
      handle->error = e.what();
    }
    handle->end_time_us = clock_->now_us();
    --inflight_;
  }

  Task dispatch_request(CcloRequest req, RequestHandle handle) {
    Communicator &comm = communicator(req.comm_id);
    std::uint64_t len = req.payload_bytes();
    Protocol proto = comm.algo.protocol;
    switch (req.op) {
    case CollOp::NOP: {
      DmpInstruction nop;
      co_await dmp_execute(nop);
      break;
    }
    case CollOp::SEND:
      co_await send_msg(req.comm_id, req.peer, req.tag,
                        endpoint_slot(req.src, len), len, proto,
                        stream_wire_flags(req));
      handle->bytes_moved += len;
      break;
    case CollOp::RECV:
      co_await recv_msg(req.comm_id, req.peer, req.tag,
                        endpoint_slot(req.dst, len), len, proto);
      handle->bytes_moved += len;
      break;
    default:
      if (!firmware_)
        throw ConfigError("no collective firmware installed");
      co_await firmware_(*this, req, handle);
      break;
    }
  }

  static std::uint16_t stream_wire_flags(const CcloRequest &req) {
    return req.dst.kind == EndpointKind::Stream ? wire::kFlagStreamTarget : 0;
  }

public:
  static SlotDescriptor endpoint_slot(const DataEndpoint &ep,
                                      std::uint64_t len) {
    switch (ep.kind) {
    case EndpointKind::Memory:
      return SlotDescriptor::memory(ep.addr, len);
    case EndpointKind::Stream:
      return SlotDescriptor::stream_port(ep.port, len);
    case EndpointKind::None:
      return SlotDescriptor::empty();
    }
    return SlotDescriptor::empty();
  }

private:
  // Wait for pred; on lossy transports the wait is bounded by the configured
  // receive timeout. Returns false on timeout.
  Scheduler::UntilAwaiter recv_wait(std::function<bool()> pred) {
    if (poe_->lossy() && cfg_.recv_timeout_us > 0)
      return sched_->until_deadline(std::move(pred),
                                    clock_->now_us() + cfg_.recv_timeout_us,
                                    clock_);
    return sched_->until(std::move(pred));
  }

  Task fetch_operand(SlotDescriptor slot, std::uint32_t comm_id, Bytes *out) {
    switch (slot.kind) {
    case SlotKind::Memory: {
      auto span = platform_->resolve(slot.addr, slot.len, Access::Read);
      out->assign(span.begin(), span.end());
      counters_["dmp_bytes_moved"] += slot.len;
      break;
    }
    case SlotKind::RxMatch: {
      std::optional<std::uint16_t> idx;
      bool ok = co_await recv_wait([this, &idx, slot, comm_id] {
        idx = rbm_match(slot.src_rank, slot.tag, comm_id);
        return idx.has_value();
      });
      if (!ok)
        throw TimeoutError("receive timed out waiting for an eager message");
      RxBufferSlot &s = slots_.at(*idx);
      *out = std::move(s.payload);
      s.payload.clear();
      if (out->size() != slot.len)
        throw InvariantError("matched message length does not match receive");
      counters_["dmp_bytes_moved"] += out->size();
      rbm_release(*idx);
      break;
    }
    case SlotKind::StreamPort: {
      co_await port_pull(slot.port, slot.len, out);
      counters_["dmp_bytes_moved"] += slot.len;
      break;
    }
    case SlotKind::Empty:
      out->clear();
      break;
    case SlotKind::Network:
      throw InvariantError("Network slot cannot be an operand");
    }
  }

  Task emit_result(const DmpInstruction &instr, Bytes out) {
    const SlotDescriptor &res = instr.result;
    switch (res.kind) {
    case SlotKind::Memory: {
      if (out.size() != res.len)
        throw InvariantError("result length does not match memory slot");
      auto span = platform_->resolve(res.addr, res.len, Access::Write);
      std::memcpy(span.data(), out.data(), out.size());
      counters_["dmp_bytes_moved"] += out.size();
      break;
    }
    case SlotKind::Network: {
      wire::MsgType kind = instr.msg_kind.value_or(wire::MsgType::EAGER_MSG);
      tx_emit(instr.comm_id, res.dst_rank, kind, res.tag, res.seq, out,
              res.remote_addr, res.wire_flags);
      counters_["dmp_bytes_moved"] += out.size();
      break;
    }
    case SlotKind::StreamPort: {
      if (out.size() != res.len)
        throw InvariantError("result length does not match stream slot");
      co_await port_push(res.port, std::move(out));
      counters_["dmp_bytes_moved"] += res.len;
      break;
    }
    case SlotKind::Empty:
      break;
    case SlotKind::RxMatch:
      throw InvariantError("RxMatch slot cannot be a result");
    }
  }

  void loopback(const wire::MessageSignature &sig, const Bytes &payload) {
    ++counters_["msgs_sent"];
    ++counters_["msgs_received"];
    switch (sig.msg_type) {
    case wire::MsgType::EAGER_MSG: {
      auto segments =
          wire::segment_message(sig, payload, cfg_.mtu_payload, next_msg_id_++);
      deliver_eager(sig, segments, node_);
      break;
    }
    case wire::MsgType::RNDZ_INIT:
    case wire::MsgType::RNDZ_DONE:
      notifications_.push_back(sig);
      break;
    case wire::MsgType::RNDZ_MSG: {
      auto span =
          platform_->resolve(sig.remote_addr, payload.size(), Access::Write);
      std::memcpy(span.data(), payload.data(), payload.size());
      wire::MessageSignature done = sig;
      done.msg_type = wire::MsgType::RNDZ_DONE;
      done.payload_len = 0;
      done.remote_addr = 0;
      notifications_.push_back(done);
      break;
    }
    }
  }

  void deliver_eager(const wire::MessageSignature &sig,
                     const std::vector<wire::Segment> &segments,
                     NodeId src_node) {
    if (deliver_eager_try(sig, segments, src_node))
      return;
    if (poe_->lossy()) {
      ++counters_["eager_drops"];
    } else {
      // reliable transport: defer until a slot frees (backpressure)
      pending_eager_.push_back(PendingEager{sig, segments, src_node});
    }
  }

  bool deliver_eager_try(const wire::MessageSignature &sig,
                         const std::vector<wire::Segment> &segments,
                         NodeId src_node) {
    std::uint64_t msg_id = segments.empty() ? 0 : segments.front().msg_id;
    RxBufferSlot *slot = nullptr;
    for (auto &s : slots_)
      if (s.state == RxSlotState::IN_PROGRESS && s.src_node == src_node &&
          s.msg_id == msg_id && s.meta.comm_id == sig.comm_id &&
          s.meta.seq == sig.seq) {
        slot = &s;
        break;
      }
    if (!slot) {
      for (auto &s : slots_)
        if (s.state == RxSlotState::IDLE && s.capacity >= sig.payload_len) {
          slot = &s;
          break;
        }
      if (!slot)
        return false;
      slot->state = RxSlotState::IN_PROGRESS;
      slot->reassembly.emplace(sig);
      slot->meta = RxSlotMeta{sig.comm_id, sig.src_rank, sig.tag, sig.seq,
                              sig.payload_len};
      slot->src_node = src_node;
      slot->msg_id = msg_id;
    }
    for (const auto &seg : segments)
      slot->reassembly->feed(seg);
    if (slot->reassembly->complete()) {
      slot->payload = slot->reassembly->take_buffer();
      slot->reassembly.reset();
      slot->state = RxSlotState::READY;
    }
    return true;
  }

  void retry_pending_eager() {
    while (!pending_eager_.empty()) {
      PendingEager &p = pending_eager_.front();
      if (!deliver_eager_try(p.sig, p.segments, p.src_node))
        return;
      pending_eager_.pop_front();
    }
  }

  struct PendingEager {
    wire::MessageSignature sig;
    std::vector<wire::Segment> segments;
    NodeId src_node;
  };

  EngineConfig cfg_;
  NodeId node_;
  Platform *platform_;
  Poe *poe_;
  Clock *clock_;
  Scheduler *sched_;
  Firmware firmware_;

  std::map<std::uint32_t, Communicator> comms_;
  std::deque<std::pair<CcloRequest, RequestHandle>> cmd_queue_;
  std::shared_ptr<Task> uc_task_;
  bool stopping_ = false;
  std::size_t inflight_ = 0;

  std::vector<RxBufferSlot> slots_;
  std::deque<PendingEager> pending_eager_;
  std::deque<wire::MessageSignature> notifications_;
  std::vector<PortFifo> ports_;
  std::uint64_t next_msg_id_ = 1;
  std::map<std::string, std::uint64_t> counters_;
};

} // namespace cclo
