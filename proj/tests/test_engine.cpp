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

#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "cclo/cluster.hpp"

using namespace cclo;

namespace {

ClusterConfig small_cluster(std::uint32_t ranks, bool rdma = false) {
  ClusterConfig cfg;
  cfg.nranks = ranks;
  cfg.rdma = rdma;
  return cfg;
}

Bytes pattern(std::size_t n, std::uint8_t seed = 1) {
  Bytes b(n);
  for (std::size_t i = 0; i < n; ++i)
    b[i] = static_cast<std::uint8_t>(seed + i * 7);
  return b;
}

Buffer &fill_buffer(Platform &p, const Bytes &data) {
  Buffer &buf = p.alloc(MemLocation::Device, data.size());
  std::memcpy(buf.data(), data.data(), data.size());
  return buf;
}

/// Transport stub for RBM policy tests: frames pile into `sent`, events are
/// injected by hand.
struct StubPoe : Poe {
  bool lossy_flag = false;
  bool rdma_flag = false;
  std::vector<Frame> sent;
  std::deque<RxEvent> inbox;

  SessionId open_session(NodeId) override { return SessionId{1}; }
  void transmit(SessionId, Frame f) override { sent.push_back(std::move(f)); }
  std::optional<RxEvent> poll_rx() override {
    if (inbox.empty())
      return std::nullopt;
    RxEvent ev = std::move(inbox.front());
    inbox.pop_front();
    return ev;
  }
  bool rdma_capable() const override { return rdma_flag; }
  bool lossy() const override { return lossy_flag; }
  NodeId peer_of(SessionId) const override { return 1; }
  std::uint64_t bytes_on_wire() const override { return 0; }
};

RxEvent eager_event(std::uint32_t src_rank, std::uint32_t tag,
                    std::uint32_t seq, const Bytes &payload,
                    std::uint64_t msg_id, std::uint32_t mtu = 4096) {
  wire::MessageSignature sig;
  sig.msg_type = wire::MsgType::EAGER_MSG;
  sig.src_rank = src_rank;
  sig.tag = tag;
  sig.seq = seq;
  sig.payload_len = payload.size();
  RxEvent ev;
  ev.kind = RxEventKind::MessageArrived;
  ev.src_node = src_rank;
  ev.header_bytes = wire::encode_header(sig);
  ev.segments = wire::segment_message(sig, payload, mtu, msg_id);
  ev.len = payload.size();
  return ev;
}

struct StubFixture {
  VirtualClock clock;
  PlatformConfig pcfg;
  Platform platform{pcfg, &clock};
  StubPoe poe;
  Scheduler sched;
  EngineConfig cfg;

  std::unique_ptr<CcloNode> make(std::uint32_t rx_count = 16) {
    cfg.rx_buffer_count = rx_count;
    auto node = std::make_unique<CcloNode>(cfg, 0, &platform, &poe, &clock,
                                           &sched);
    return node;
  }
};

} // namespace

TEST_CASE("default engine config: 16 idle Rx buffers of 1 MiB") {
  StubFixture fx;
  auto node = fx.make();
  auto census = node->rx_pool_census();
  CHECK(census.at(RxSlotState::IDLE) == 16);
  CHECK(node->config().rx_buffer_size == (1u << 20));
  auto kv = node->inspect();
  CHECK(kv.at("rx_idle") == "16");
  CHECK(kv.at("rx_ready") == "0");
}

TEST_CASE("zero Rx buffers with eager enabled is a config error") {
  EngineConfig cfg;
  cfg.rx_buffer_count = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.eager_enabled = false;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("NOP completes with zero bytes moved") {
  Cluster cl(small_cluster(1));
  CcloRequest req;
  req.op = CollOp::NOP;
  auto h = cl.node(0).call(req);
  cl.await(h);
  CHECK(h->status == RequestStatus::Complete);
  CHECK(h->bytes_moved == 0);
  CHECK(cl.node(0).counter("dmp_bytes_moved") == 0);
}

TEST_CASE("call rejects unknown communicators") {
  Cluster cl(small_cluster(1));
  CcloRequest req;
  req.comm_id = 42;
  CHECK_THROWS_AS(cl.node(0).call(req), ConfigError);
}

TEST_CASE("SEND overflowing the source buffer fails before transmission") {
  Cluster cl(small_cluster(2));
  Buffer &src = cl.platform(0).alloc(MemLocation::Device, 64);
  CcloRequest req;
  req.op = CollOp::SEND;
  req.peer = 1;
  req.dtype = DType::I32;
  req.count = 1024; // 4096 bytes > 64
  req.src = DataEndpoint::memory(src.base_vaddr);
  CHECK_THROWS_AS(cl.node(0).call(req), RemoteAccessError);
  CHECK(cl.fabric().log().empty());
}

TEST_CASE("eager send/recv end to end") {
  Cluster cl(small_cluster(2));
  Bytes data = pattern(4096);
  Buffer &src = fill_buffer(cl.platform(0), data);
  Buffer &dst = cl.platform(1).alloc(MemLocation::Device, 4096);

  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.tag = 7;
  s.dtype = DType::I32;
  s.count = 1024;
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.tag = 7;
  r.dtype = DType::I32;
  r.count = 1024;
  r.dst = DataEndpoint::memory(dst.base_vaddr);

  auto hs = cl.node(0).call(s);
  auto hr = cl.node(1).call(r);
  cl.await_all({hs, hr});
  CHECK(dst.bytes == data);
  // eager: exactly one headered message on the wire
  REQUIRE(cl.fabric().log().size() == 1);
  CHECK(cl.fabric().log()[0].msg_type ==
        static_cast<std::uint8_t>(wire::MsgType::EAGER_MSG));
  CHECK(cl.fabric().log()[0].payload_bytes == 4096);
}

TEST_CASE("two same-peer same-tag sends are matched in seq order") {
  Cluster cl(small_cluster(2));
  Bytes a = pattern(256, 10), b = pattern(256, 99);
  Buffer &ba = fill_buffer(cl.platform(0), a);
  Buffer &bb = fill_buffer(cl.platform(0), b);
  Buffer &d1 = cl.platform(1).alloc(MemLocation::Device, 256);
  Buffer &d2 = cl.platform(1).alloc(MemLocation::Device, 256);

  auto mk_send = [&](Buffer &buf) {
    CcloRequest s;
    s.op = CollOp::SEND;
    s.peer = 1;
    s.tag = 3;
    s.dtype = DType::I32;
    s.count = 64;
    s.src = DataEndpoint::memory(buf.base_vaddr);
    return cl.node(0).call(s);
  };
  auto mk_recv = [&](Buffer &buf) {
    CcloRequest r;
    r.op = CollOp::RECV;
    r.peer = 0;
    r.tag = 3;
    r.dtype = DType::I32;
    r.count = 64;
    r.dst = DataEndpoint::memory(buf.base_vaddr);
    return cl.node(1).call(r);
  };
  auto h1 = mk_send(ba);
  auto h2 = mk_send(bb);
  auto h3 = mk_recv(d1);
  auto h4 = mk_recv(d2);
  cl.await_all({h1, h2, h3, h4});
  CHECK(d1.bytes == a);
  CHECK(d2.bytes == b);
}

TEST_CASE("send to self is a local copy with no wire traffic") {
  Cluster cl(small_cluster(2));
  Bytes data = pattern(512);
  Buffer &src = fill_buffer(cl.platform(0), data);
  Buffer &dst = cl.platform(0).alloc(MemLocation::Device, 512);
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 0;
  s.tag = 1;
  s.dtype = DType::I32;
  s.count = 128;
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.tag = 1;
  r.dtype = DType::I32;
  r.count = 128;
  r.dst = DataEndpoint::memory(dst.base_vaddr);
  auto hs = cl.node(0).call(s);
  auto hr = cl.node(0).call(r);
  cl.await_all({hs, hr});
  CHECK(dst.bytes == data);
  CHECK(cl.fabric().log().empty());
}

TEST_CASE("dmp COPY memory to memory") {
  Cluster cl(small_cluster(1));
  Bytes data = pattern(1024);
  Buffer &a = fill_buffer(cl.platform(0), data);
  Buffer &b = cl.platform(0).alloc(MemLocation::Device, 1024);
  DmpInstruction i;
  i.func = DmpFunc::COPY;
  i.operand0 = SlotDescriptor::memory(a.base_vaddr, 1024);
  i.result = SlotDescriptor::memory(b.base_vaddr, 1024);
  cl.run_task(cl.node(0).dmp_execute(i));
  CHECK(b.bytes == data);
}

TEST_CASE("dmp REDUCE SUM F32") {
  Cluster cl(small_cluster(1));
  auto to_bytes = [](const std::vector<float> &v) {
    Bytes b(v.size() * 4);
    std::memcpy(b.data(), v.data(), b.size());
    return b;
  };
  Buffer &a = fill_buffer(cl.platform(0), to_bytes({1, 2, 3, 4}));
  Buffer &b = fill_buffer(cl.platform(0), to_bytes({10, 20, 30, 40}));
  Buffer &out = cl.platform(0).alloc(MemLocation::Device, 16);
  DmpInstruction i;
  i.func = DmpFunc::REDUCE;
  i.reduce_fn = ReduceFn::SUM;
  i.dtype = DType::F32;
  i.operand0 = SlotDescriptor::memory(a.base_vaddr, 16);
  i.operand1 = SlotDescriptor::memory(b.base_vaddr, 16);
  i.result = SlotDescriptor::memory(out.base_vaddr, 16);
  cl.run_task(cl.node(0).dmp_execute(i));
  std::vector<float> got(4);
  std::memcpy(got.data(), out.data(), 16);
  CHECK(got == std::vector<float>{11, 22, 33, 44});
}

TEST_CASE("dmp slot invariants") {
  DmpInstruction i;
  SECTION("Network operand is rejected") {
    i.func = DmpFunc::COPY;
    i.operand0 = SlotDescriptor::network(1, 0, 0);
    CHECK_THROWS_AS(i.validate(), InvariantError);
  }
  SECTION("RxMatch result is rejected") {
    i.func = DmpFunc::COPY;
    i.operand0 = SlotDescriptor::memory(0, 8);
    i.result = SlotDescriptor::rx_match(0, 0);
    CHECK_THROWS_AS(i.validate(), InvariantError);
  }
  SECTION("REDUCE with one operand is rejected") {
    i.func = DmpFunc::REDUCE;
    i.operand0 = SlotDescriptor::memory(0, 8);
    i.result = SlotDescriptor::memory(0, 8);
    CHECK_THROWS_AS(i.validate(), InvariantError);
  }
  SECTION("COPY with two operands is rejected") {
    i.func = DmpFunc::COPY;
    i.operand0 = SlotDescriptor::memory(0, 8);
    i.operand1 = SlotDescriptor::memory(0, 8);
    i.result = SlotDescriptor::memory(0, 8);
    CHECK_THROWS_AS(i.validate(), InvariantError);
  }
}

TEST_CASE("SEND microcode emits one headered message with MTU segments") {
  Cluster cl(small_cluster(2));
  Bytes data = pattern(10000);
  Buffer &src = fill_buffer(cl.platform(0), data);
  DmpInstruction i;
  i.func = DmpFunc::COPY;
  i.comm_id = 0;
  i.msg_kind = wire::MsgType::EAGER_MSG;
  i.operand0 = SlotDescriptor::memory(src.base_vaddr, 10000);
  i.result = SlotDescriptor::network(1, 5, 0);
  cl.run_task(cl.node(0).dmp_execute(i));
  cl.run_until([&] { return !cl.fabric().has_pending(); });
  REQUIRE(cl.fabric().log().size() == 1);
  CHECK(cl.fabric().log()[0].n_segments == 3); // 10000 B at MTU 4096
  CHECK(cl.fabric().log()[0].payload_bytes == 10000);
}

TEST_CASE("RBM: one eager message yields one READY slot") {
  StubFixture fx;
  auto node = fx.make();
  node->rx_dispatch(eager_event(0, 9, 0, pattern(4096), 1));
  auto census = node->rx_pool_census();
  CHECK(census.at(RxSlotState::READY) == 1);
  CHECK(census.at(RxSlotState::IDLE) == 15);
  auto idx = node->rbm_match(0, 9, 0);
  REQUIRE(idx.has_value());
  CHECK(node->slot(*idx).meta.len == 4096);
}

TEST_CASE("RBM: interleaved messages reassemble into distinct slots") {
  StubFixture fx;
  auto node = fx.make();
  Bytes pa = pattern(8192, 1), pb = pattern(8192, 2);
  auto eva = eager_event(1, 4, 0, pa, 11);
  auto evb = eager_event(2, 4, 0, pb, 22);
  // deliver segment-by-segment, interleaved (datagram style)
  for (std::size_t k = 0; k < eva.segments.size(); ++k) {
    RxEvent a;
    a.kind = RxEventKind::MessageArrived;
    a.src_node = 1;
    a.header_bytes = eva.header_bytes;
    a.segments = {eva.segments[k]};
    node->rx_dispatch(a);
    RxEvent b;
    b.kind = RxEventKind::MessageArrived;
    b.src_node = 2;
    b.header_bytes = evb.header_bytes;
    b.segments = {evb.segments[k]};
    node->rx_dispatch(b);
  }
  auto census = node->rx_pool_census();
  CHECK(census.at(RxSlotState::READY) == 2);
  auto ia = node->rbm_match(1, 4, 0);
  auto ib = node->rbm_match(2, 4, 0);
  REQUIRE(ia.has_value());
  REQUIRE(ib.has_value());
  CHECK(node->slot(*ia).payload == pa);
  CHECK(node->slot(*ib).payload == pb);
}

TEST_CASE("RBM matching picks the smallest seq, then src") {
  StubFixture fx;
  auto node = fx.make();
  node->rx_dispatch(eager_event(3, 9, 5, pattern(64, 5), 1));
  node->rx_dispatch(eager_event(3, 9, 4, pattern(64, 4), 2));
  auto idx = node->rbm_match(3, 9, 0);
  REQUIRE(idx.has_value());
  CHECK(node->slot(*idx).meta.seq == 4);

  node->rx_dispatch(eager_event(1, 10, 7, pattern(64, 1), 3));
  node->rx_dispatch(eager_event(2, 10, 7, pattern(64, 2), 4));
  auto any = node->rbm_match(kAnyMatch, 10, 0);
  REQUIRE(any.has_value());
  CHECK(node->slot(*any).meta.src_rank == 1);
  CHECK_FALSE(node->rbm_match(5, 5, 0).has_value());
}

TEST_CASE("RBM pool exhaustion: drop on lossy, defer on reliable") {
  StubFixture fx;
  fx.poe.lossy_flag = true;
  auto node = fx.make(2);
  node->rx_dispatch(eager_event(0, 1, 0, pattern(64), 1));
  node->rx_dispatch(eager_event(0, 1, 1, pattern(64), 2));
  node->rx_dispatch(eager_event(0, 1, 2, pattern(64), 3));
  CHECK(node->counter("eager_drops") == 1);
  auto census = node->rx_pool_census();
  CHECK(census.at(RxSlotState::READY) == 2);

  StubFixture fx2;
  auto node2 = fx2.make(2);
  node2->rx_dispatch(eager_event(0, 1, 0, pattern(64, 1), 1));
  node2->rx_dispatch(eager_event(0, 1, 1, pattern(64, 2), 2));
  node2->rx_dispatch(eager_event(0, 1, 2, pattern(64, 3), 3));
  CHECK(node2->counter("eager_drops") == 0);
  // claiming and releasing a slot lets the deferred message in
  auto idx = node2->rbm_match(0, 1, 0);
  REQUIRE(idx.has_value());
  node2->rbm_release(*idx);
  CHECK(node2->rx_pool_census().at(RxSlotState::READY) == 2);
}

TEST_CASE("Rx pool conservation holds through traffic") {
  StubFixture fx;
  auto node = fx.make(4);
  auto total = [&] {
    auto c = node->rx_pool_census();
    return c.at(RxSlotState::IDLE) + c.at(RxSlotState::IN_PROGRESS) +
           c.at(RxSlotState::READY) + c.at(RxSlotState::CLAIMED);
  };
  CHECK(total() == 4);
  for (std::uint32_t k = 0; k < 8; ++k) {
    node->rx_dispatch(eager_event(0, 1, k, pattern(64, k), k + 1));
    CHECK(total() == 4);
    if (k % 2 == 1) {
      auto idx = node->rbm_match(0, 1, 0);
      REQUIRE(idx.has_value());
      CHECK(total() == 4);
      node->rbm_release(*idx);
      CHECK(total() == 4);
    }
  }
}

TEST_CASE("rx_dispatch routes by message type") {
  StubFixture fx;
  auto node = fx.make();
  SECTION("RNDZ_INIT lands in the uC notification queue") {
    wire::MessageSignature sig;
    sig.msg_type = wire::MsgType::RNDZ_INIT;
    sig.src_rank = 2;
    sig.tag = 8;
    sig.remote_addr = 0xabc0000000ull;
    RxEvent ev;
    ev.header_bytes = wire::encode_header(sig);
    node->rx_dispatch(ev);
    CHECK(node->notification_count() == 1);
    auto n = node->take_notification(wire::MsgType::RNDZ_INIT, 0, 2, 8);
    REQUIRE(n.has_value());
    CHECK(n->remote_addr == 0xabc0000000ull);
  }
  SECTION("EAGER_MSG goes to the RBM, notifications untouched") {
    node->rx_dispatch(eager_event(0, 1, 0, pattern(64), 1));
    CHECK(node->notification_count() == 0);
    CHECK(node->rx_pool_census().at(RxSlotState::READY) == 1);
  }
  SECTION("malformed header is dropped and counted") {
    RxEvent ev;
    ev.header_bytes = Bytes(48, 0);
    node->rx_dispatch(ev);
    CHECK(node->counter("header_errors") == 1);
    CHECK(node->rx_pool_census().at(RxSlotState::READY) == 0);
  }
}

TEST_CASE("rendezvous send/recv over the rdma fabric") {
  ClusterConfig cfg = small_cluster(2, /*rdma=*/true);
  cfg.algo.protocol = Protocol::Rendezvous;
  Cluster cl(cfg);
  Bytes data = pattern(1 << 20);
  Buffer &src = fill_buffer(cl.platform(0), data);
  Buffer &dst = cl.platform(1).alloc(MemLocation::Device, 1 << 20);
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.tag = 2;
  s.dtype = DType::I64;
  s.count = (1 << 20) / 8;
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.tag = 2;
  r.dtype = DType::I64;
  r.count = (1 << 20) / 8;
  r.dst = DataEndpoint::memory(dst.base_vaddr);
  auto hs = cl.node(0).call(s);
  auto hr = cl.node(1).call(r);
  cl.await_all({hs, hr});
  CHECK(dst.bytes == data);

  // exactly RNDZ_INIT -> WRITE -> RNDZ_DONE on the wire
  const auto &log = cl.fabric().log();
  REQUIRE(log.size() == 3);
  CHECK(log[0].msg_type == static_cast<std::uint8_t>(wire::MsgType::RNDZ_INIT));
  CHECK(log[0].payload_bytes == 0);
  CHECK(log[1].frame_kind == FrameKind::RdmaWrite);
  CHECK(log[1].payload_bytes == (1u << 20));
  CHECK(log[2].msg_type == static_cast<std::uint8_t>(wire::MsgType::RNDZ_DONE));
}

TEST_CASE("rendezvous on a non-RDMA transport fails the request") {
  ClusterConfig cfg = small_cluster(2, /*rdma=*/false);
  cfg.algo.protocol = Protocol::Rendezvous;
  CHECK_THROWS_AS(Cluster(cfg), ConfigError);
}

TEST_CASE("streaming SEND equals memory SEND") {
  Cluster cl(small_cluster(2));
  Bytes data = pattern(64 * 4);
  Buffer &dst = cl.platform(1).alloc(MemLocation::Device, data.size());

  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.tag = 6;
  s.dtype = DType::I32;
  s.count = 64;
  s.src = DataEndpoint::stream(0);
  s.flags = kReqStreaming;
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.tag = 6;
  r.dtype = DType::I32;
  r.count = 64;
  r.dst = DataEndpoint::memory(dst.base_vaddr);

  auto hs = cl.node(0).call(s);
  auto hr = cl.node(1).call(r);
  // kernel pushes the operand in 4 chunks
  for (int k = 0; k < 4; ++k)
    cl.scheduler().spawn(cl.node(0).port_push(
        0, Bytes(data.begin() + k * 64, data.begin() + (k + 1) * 64)));
  cl.await_all({hs, hr});
  CHECK(dst.bytes == data);
}

TEST_CASE("streaming RECV delivers bytes to the port in order") {
  Cluster cl(small_cluster(2));
  Bytes data = pattern(256);
  Buffer &src = fill_buffer(cl.platform(0), data);
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.tag = 1;
  s.dtype = DType::I32;
  s.count = 64;
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.tag = 1;
  r.dtype = DType::I32;
  r.count = 64;
  r.dst = DataEndpoint::stream(2);
  r.flags = kReqStreaming;
  auto hs = cl.node(0).call(s);
  auto hr = cl.node(1).call(r);
  cl.await_all({hs, hr});
  Bytes got;
  cl.run_task(cl.node(1).port_pull(2, 256, &got));
  CHECK(got == data);
}

TEST_CASE("pull on a port with no request times out") {
  Cluster cl(small_cluster(1));
  Bytes out;
  auto t = cl.scheduler().spawn(cl.node(0).port_pull(0, 16, &out));
  cl.run_until([&] { return t->done(); });
  CHECK_THROWS_AS(t->rethrow_if_failed(), TimeoutError);
}

TEST_CASE("streaming flag must match the endpoints") {
  Cluster cl(small_cluster(2));
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.dtype = DType::I32;
  s.count = 4;
  s.src = DataEndpoint::stream(0);
  // flags say memory, endpoint says stream
  CHECK_THROWS_AS(cl.node(0).call(s), ConfigError);
}

TEST_CASE("the uC never touches payload bytes") {
  Cluster cl(small_cluster(2));
  Bytes data = pattern(4096);
  Buffer &src = fill_buffer(cl.platform(0), data);
  Buffer &dst = cl.platform(1).alloc(MemLocation::Device, 4096);
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.dtype = DType::I32;
  s.count = 1024;
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.dtype = DType::I32;
  r.count = 1024;
  r.dst = DataEndpoint::memory(dst.base_vaddr);
  auto hs = cl.node(0).call(s);
  auto hr = cl.node(1).call(r);
  cl.await_all({hs, hr});
  CHECK(cl.node(0).counter("uc_payload_bytes") == 0);
  CHECK(cl.node(1).counter("uc_payload_bytes") == 0);
  CHECK(cl.node(0).counter("dmp_bytes_moved") >= 4096);
}

TEST_CASE("in-flight sends pipeline on the fabric") {
  Cluster cl(small_cluster(2));
  const int k = 4;
  const std::uint64_t size = 1 << 20;
  std::vector<RequestHandle> hs;
  std::vector<Buffer *> dsts;
  for (int i = 0; i < k; ++i) {
    Buffer &src = fill_buffer(cl.platform(0), pattern(size, i));
    CcloRequest s;
    s.op = CollOp::SEND;
    s.peer = 1;
    s.tag = 1;
    s.dtype = DType::I32;
    s.count = size / 4;
    s.src = DataEndpoint::memory(src.base_vaddr);
    hs.push_back(cl.node(0).call(s));
  }
  for (int i = 0; i < k; ++i) {
    Buffer &dst = cl.platform(1).alloc(MemLocation::Device, size);
    dsts.push_back(&dst);
    CcloRequest r;
    r.op = CollOp::RECV;
    r.peer = 0;
    r.tag = 1;
    r.dtype = DType::I32;
    r.count = size / 4;
    r.dst = DataEndpoint::memory(dst.base_vaddr);
    hs.push_back(cl.node(1).call(r));
  }
  cl.await_all(hs);
  for (int i = 0; i < k; ++i)
    CHECK(dsts[i]->bytes == pattern(size, i));

  double total = cl.time_us();
  // one message: invocation + serialization + base latency
  Cluster single(small_cluster(2));
  Buffer &src = fill_buffer(single.platform(0), pattern(size));
  Buffer &dst = single.platform(1).alloc(MemLocation::Device, size);
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.dtype = DType::I32;
  s.count = size / 4;
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.dtype = DType::I32;
  r.count = size / 4;
  r.dst = DataEndpoint::memory(dst.base_vaddr);
  auto a = single.node(0).call(s);
  auto b = single.node(1).call(r);
  single.await_all({a, b});
  double one = single.time_us();
  CHECK(total < k * one);
}

TEST_CASE("engine inspection exposes the configuration window") {
  Cluster cl(small_cluster(2));
  auto kv = cl.node(0).inspect();
  CHECK(kv.at("communicators") == "1");
  CHECK(kv.at("node") == "0");
  CHECK(kv.at("mtu_payload") == "4096");
  CHECK(kv.count("msgs_sent") == 1);
  CHECK(kv.count("page_faults") == 1);
}
