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
#include <random>

#include "cclo/cluster.hpp"

using namespace cclo;

namespace {

// ---- brute-force oracles ----

template <typename T> T fold_one(ReduceFn fn, T a, T b) {
  return fn == ReduceFn::SUM ? static_cast<T>(a + b) : std::max(a, b);
}

template <typename T>
void fold_bytes(ReduceFn fn, const Bytes &in, Bytes &acc) {
  std::size_t n = in.size() / sizeof(T);
  for (std::size_t i = 0; i < n; ++i) {
    T a, b;
    std::memcpy(&a, acc.data() + i * sizeof(T), sizeof(T));
    std::memcpy(&b, in.data() + i * sizeof(T), sizeof(T));
    T r = fold_one(fn, a, b);
    std::memcpy(acc.data() + i * sizeof(T), &r, sizeof(T));
  }
}

/// Gather-then-fold in rank order 0..P-1.
Bytes oracle_reduce(const std::vector<Bytes> &inputs, DType dt, ReduceFn fn) {
  Bytes acc = inputs.at(0);
  for (std::size_t r = 1; r < inputs.size(); ++r) {
    switch (dt) {
    case DType::I32:
      fold_bytes<std::int32_t>(fn, inputs[r], acc);
      break;
    case DType::I64:
      fold_bytes<std::int64_t>(fn, inputs[r], acc);
      break;
    case DType::F32:
      fold_bytes<float>(fn, inputs[r], acc);
      break;
    case DType::F64:
      fold_bytes<double>(fn, inputs[r], acc);
      break;
    }
  }
  return acc;
}

Bytes oracle_gather(const std::vector<Bytes> &inputs) {
  Bytes out;
  for (const auto &b : inputs)
    out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// rank j's result: block j of every rank, in rank order.
std::vector<Bytes> oracle_alltoall(const std::vector<Bytes> &inputs,
                                   std::uint64_t block) {
  std::size_t P = inputs.size();
  std::vector<Bytes> out(P);
  for (std::size_t j = 0; j < P; ++j)
    for (std::size_t i = 0; i < P; ++i)
      out[j].insert(out[j].end(), inputs[i].begin() + j * block,
                    inputs[i].begin() + (j + 1) * block);
  return out;
}

template <typename T>
bool approx_eq_typed(const Bytes &a, const Bytes &b, double tol) {
  std::size_t n = a.size() / sizeof(T);
  for (std::size_t i = 0; i < n; ++i) {
    T x, y;
    std::memcpy(&x, a.data() + i * sizeof(T), sizeof(T));
    std::memcpy(&y, b.data() + i * sizeof(T), sizeof(T));
    double dx = static_cast<double>(x), dy = static_cast<double>(y);
    double denom = std::max(std::abs(dx), std::abs(dy));
    if (denom > 0 && std::abs(dx - dy) / denom > tol)
      return false;
  }
  return true;
}

// Tolerances pinned: exact for integers, 1e-6 (F32) / 1e-12 (F64) relative
// for fold-order differences.
bool results_match(const Bytes &got, const Bytes &want, DType dt) {
  if (got.size() != want.size())
    return false;
  switch (dt) {
  case DType::I32:
  case DType::I64:
    return got == want;
  case DType::F32:
    return approx_eq_typed<float>(got, want, 1e-6);
  case DType::F64:
    return approx_eq_typed<double>(got, want, 1e-12);
  }
  return false;
}

Bytes random_payload(std::mt19937_64 &rng, std::size_t n, DType dt) {
  Bytes b(n);
  // positive floats keep sums well conditioned so fold order only costs ulps
  if (dt == DType::F32) {
    std::uniform_real_distribution<float> d(0.0f, 100.0f);
    for (std::size_t i = 0; i + 4 <= n; i += 4) {
      float v = d(rng);
      std::memcpy(b.data() + i, &v, 4);
    }
  } else if (dt == DType::F64) {
    std::uniform_real_distribution<double> d(0.0, 100.0);
    for (std::size_t i = 0; i + 8 <= n; i += 8) {
      double v = d(rng);
      std::memcpy(b.data() + i, &v, 8);
    }
  } else {
    for (auto &x : b)
      x = static_cast<std::uint8_t>(rng());
  }
  return b;
}

// ---- cluster-side runner ----

struct CollResult {
  std::vector<Bytes> outputs; // semantics depend on op
};

CollResult run_case(Cluster &cl, CollOp op, std::uint32_t root, DType dt,
                    ReduceFn fn, const std::vector<Bytes> &inputs,
                    std::uint64_t len) {
  std::uint32_t P = cl.nranks();
  std::vector<RequestHandle> handles;
  std::vector<Buffer *> dsts(P, nullptr);
  for (std::uint32_t r = 0; r < P; ++r) {
    CcloRequest req;
    req.op = op;
    req.root = root;
    req.dtype = dt;
    req.reduce_fn = fn;
    req.count = len / dtype_size(dt);
    Buffer *src = nullptr;
    if (!inputs.empty() && !inputs[r].empty()) {
      src = &cl.platform(r).alloc(MemLocation::Device, inputs[r].size());
      std::memcpy(src->data(), inputs[r].data(), inputs[r].size());
    }
    std::uint64_t dst_len = 0;
    switch (op) {
    case CollOp::BCAST:
      if (r == root)
        req.src = DataEndpoint::memory(src->base_vaddr);
      else
        dst_len = len;
      break;
    case CollOp::REDUCE:
      req.src = DataEndpoint::memory(src->base_vaddr);
      if (r == root)
        dst_len = len;
      break;
    case CollOp::GATHER:
      req.src = DataEndpoint::memory(src->base_vaddr);
      if (r == root)
        dst_len = len * P;
      break;
    case CollOp::ALLTOALL:
      req.src = DataEndpoint::memory(src->base_vaddr);
      dst_len = len * P;
      break;
    default:
      break;
    }
    if (dst_len > 0) {
      dsts[r] = &cl.platform(r).alloc(MemLocation::Device, dst_len);
      req.dst = DataEndpoint::memory(dsts[r]->base_vaddr);
    }
    handles.push_back(cl.node(r).call(req));
  }
  cl.await_all(handles);
  CollResult res;
  for (std::uint32_t r = 0; r < P; ++r)
    res.outputs.push_back(dsts[r] ? dsts[r]->bytes : Bytes{});
  return res;
}

ClusterConfig config_for(std::uint32_t P, Protocol proto, Algorithm force) {
  ClusterConfig cfg;
  cfg.nranks = P;
  cfg.rdma = proto == Protocol::Rendezvous;
  cfg.algo.protocol = proto;
  // thresholds pushed to the extremes force a specific Table-1 algorithm
  switch (force) {
  case Algorithm::OneToAll:
  case Algorithm::AllToOne:
    cfg.algo.size_threshold_bytes = ~0ull;
    cfg.algo.rank_threshold = 64;
    break;
  case Algorithm::RecursiveDoubling:
  case Algorithm::BinaryTree:
    cfg.algo.size_threshold_bytes = 1;
    cfg.algo.rank_threshold = 1;
    break;
  default:
    break;
  }
  return cfg;
}

} // namespace

TEST_CASE("select_algorithm reproduces the documented choices") {
  AlgorithmConfig cfg; // 64 KiB / 4 ranks defaults
  // small rendezvous reduce is all-to-one, large switches to the tree
  CHECK(select_algorithm(CollOp::REDUCE, 8 << 10, 8, Protocol::Rendezvous,
                         cfg) == Algorithm::AllToOne);
  CHECK(select_algorithm(CollOp::REDUCE, 128 << 10, 8, Protocol::Rendezvous,
                         cfg) == Algorithm::BinaryTree);
  CHECK(select_algorithm(CollOp::GATHER, 8 << 10, 8, Protocol::Rendezvous,
                         cfg) == Algorithm::AllToOne);
  CHECK(select_algorithm(CollOp::GATHER, 128 << 10, 8, Protocol::Rendezvous,
                         cfg) == Algorithm::BinaryTree);
  // eager reduce/gather ride the ring; eager bcast is one-to-all
  CHECK(select_algorithm(CollOp::REDUCE, 1 << 20, 8, Protocol::Eager, cfg) ==
        Algorithm::Ring);
  CHECK(select_algorithm(CollOp::GATHER, 64, 2, Protocol::Eager, cfg) ==
        Algorithm::Ring);
  CHECK(select_algorithm(CollOp::BCAST, 1 << 20, 8, Protocol::Eager, cfg) ==
        Algorithm::OneToAll);
  // rendezvous bcast: one-to-all only when both small and few ranks
  CHECK(select_algorithm(CollOp::BCAST, 1 << 10, 4, Protocol::Rendezvous,
                         cfg) == Algorithm::OneToAll);
  CHECK(select_algorithm(CollOp::BCAST, 1 << 10, 8, Protocol::Rendezvous,
                         cfg) == Algorithm::RecursiveDoubling);
  CHECK(select_algorithm(CollOp::BCAST, 1 << 20, 2, Protocol::Rendezvous,
                         cfg) == Algorithm::RecursiveDoubling);
  // alltoall is always linear; p2p is direct
  CHECK(select_algorithm(CollOp::ALLTOALL, 1, 2, Protocol::Eager, cfg) ==
        Algorithm::Linear);
  CHECK(select_algorithm(CollOp::ALLTOALL, 1 << 20, 8, Protocol::Rendezvous,
                         cfg) == Algorithm::Linear);
  CHECK(select_algorithm(CollOp::SEND, 64, 2, Protocol::Eager, cfg) ==
        Algorithm::Direct);
  AlgorithmConfig bad;
  bad.size_threshold_bytes = 0;
  CHECK_THROWS_AS(
      select_algorithm(CollOp::BCAST, 1, 2, Protocol::Eager, bad),
      ConfigError);
}

TEST_CASE("reduction tree keeps the chain depth at ceil(log2 P)") {
  for (std::uint32_t P = 2; P <= 16; ++P) {
    ReductionTree t = ReductionTree::build(P);
    INFO("P=" << P);
    CHECK(t.longest_path() == ceil_log2(P));
    // exactly P-1 edges, every non-root has one parent
    std::uint32_t edges = 0;
    for (std::uint32_t v = 0; v < P; ++v)
      edges += static_cast<std::uint32_t>(t.children[v].size());
    CHECK(edges == P - 1);
    CHECK_FALSE(t.parent[0].has_value());
    for (std::uint32_t v = 1; v < P; ++v) {
      REQUIRE(t.parent[v].has_value());
      CHECK(*t.parent[v] < v);
    }
  }
  CHECK(ReductionTree::build(5).longest_path() == 3);
}

TEST_CASE("bcast delivers the root payload everywhere") {
  std::mt19937_64 rng(101);
  for (Protocol proto : {Protocol::Eager, Protocol::Rendezvous}) {
    std::vector<Algorithm> algs =
        proto == Protocol::Eager
            ? std::vector<Algorithm>{Algorithm::OneToAll}
            : std::vector<Algorithm>{Algorithm::OneToAll,
                                     Algorithm::RecursiveDoubling};
    for (Algorithm alg : algs)
      for (std::uint32_t P : {2u, 3u, 5u, 8u}) {
        Cluster cl(config_for(P, proto, alg));
        Bytes data = random_payload(rng, 2048, DType::I32);
        std::vector<Bytes> inputs(P);
        std::uint32_t root = P / 2;
        inputs[root] = data;
        auto res = run_case(cl, CollOp::BCAST, root, DType::I32,
                            ReduceFn::SUM, inputs, data.size());
        for (std::uint32_t r = 0; r < P; ++r)
          if (r != root) {
            INFO("proto=" << protocol_name(proto)
                          << " alg=" << algorithm_name(alg) << " P=" << P
                          << " r=" << r);
            CHECK(res.outputs[r] == data);
          }
      }
  }
}

TEST_CASE("reduce matches the gather-then-fold oracle") {
  std::mt19937_64 rng(202);
  struct Case {
    DType dt;
    ReduceFn fn;
  };
  for (Case c : {Case{DType::I32, ReduceFn::SUM}, Case{DType::I64, ReduceFn::MAX},
                 Case{DType::F32, ReduceFn::SUM}, Case{DType::F64, ReduceFn::SUM}})
    for (Protocol proto : {Protocol::Eager, Protocol::Rendezvous}) {
      std::vector<Algorithm> algs =
          proto == Protocol::Eager
              ? std::vector<Algorithm>{Algorithm::Ring}
              : std::vector<Algorithm>{Algorithm::AllToOne,
                                       Algorithm::BinaryTree};
      for (Algorithm alg : algs)
        for (std::uint32_t P : {2u, 3u, 5u, 8u}) {
          Cluster cl(config_for(P, proto, alg));
          std::vector<Bytes> inputs;
          for (std::uint32_t r = 0; r < P; ++r)
            inputs.push_back(random_payload(rng, 1024, c.dt));
          std::uint32_t root = P - 1;
          auto res = run_case(cl, CollOp::REDUCE, root, c.dt, c.fn, inputs,
                              1024);
          INFO("dtype=" << dtype_name(c.dt) << " proto="
                        << protocol_name(proto) << " alg="
                        << algorithm_name(alg) << " P=" << P);
          CHECK(results_match(res.outputs[root],
                              oracle_reduce(inputs, c.dt, c.fn), c.dt));
        }
    }
}

TEST_CASE("rank-value reduce example: sum of 0..7 is 28 on every algorithm") {
  for (Algorithm alg :
       {Algorithm::Ring, Algorithm::AllToOne, Algorithm::BinaryTree}) {
    Protocol proto =
        alg == Algorithm::Ring ? Protocol::Eager : Protocol::Rendezvous;
    Cluster cl(config_for(8, proto, alg));
    std::vector<Bytes> inputs;
    for (std::int64_t r = 0; r < 8; ++r) {
      Bytes b(8);
      std::memcpy(b.data(), &r, 8);
      inputs.push_back(b);
    }
    auto res = run_case(cl, CollOp::REDUCE, 0, DType::I64, ReduceFn::SUM,
                        inputs, 8);
    std::int64_t got;
    std::memcpy(&got, res.outputs[0].data(), 8);
    INFO("alg=" << algorithm_name(alg));
    CHECK(got == 28);
  }
}

TEST_CASE("gather concatenates in rank order") {
  std::mt19937_64 rng(303);
  for (Protocol proto : {Protocol::Eager, Protocol::Rendezvous}) {
    std::vector<Algorithm> algs =
        proto == Protocol::Eager
            ? std::vector<Algorithm>{Algorithm::Ring}
            : std::vector<Algorithm>{Algorithm::AllToOne,
                                     Algorithm::BinaryTree};
    for (Algorithm alg : algs)
      for (std::uint32_t P : {2u, 3u, 5u, 8u}) {
        Cluster cl(config_for(P, proto, alg));
        std::vector<Bytes> inputs;
        for (std::uint32_t r = 0; r < P; ++r)
          inputs.push_back(random_payload(rng, 512, DType::I32));
        std::uint32_t root = P > 2 ? 1 : 0;
        auto res = run_case(cl, CollOp::GATHER, root, DType::I32,
                            ReduceFn::SUM, inputs, 512);
        INFO("proto=" << protocol_name(proto) << " alg="
                      << algorithm_name(alg) << " P=" << P);
        CHECK(res.outputs[root] == oracle_gather(inputs));
      }
  }
}

TEST_CASE("alltoall equals the block-transpose oracle") {
  std::mt19937_64 rng(404);
  for (Protocol proto : {Protocol::Eager, Protocol::Rendezvous})
    for (std::uint32_t P : {2u, 3u, 4u, 8u}) {
      Cluster cl(config_for(P, proto, Algorithm::Linear));
      const std::uint64_t block = 256;
      std::vector<Bytes> inputs;
      for (std::uint32_t r = 0; r < P; ++r)
        inputs.push_back(random_payload(rng, block * P, DType::I32));
      auto res = run_case(cl, CollOp::ALLTOALL, 0, DType::I32, ReduceFn::SUM,
                          inputs, block);
      auto want = oracle_alltoall(inputs, block);
      for (std::uint32_t r = 0; r < P; ++r) {
        INFO("proto=" << protocol_name(proto) << " P=" << P << " r=" << r);
        CHECK(res.outputs[r] == want[r]);
      }
    }
}

TEST_CASE("alltoall small-case example") {
  // rank i's block j = i*10 + j
  Cluster cl(config_for(3, Protocol::Eager, Algorithm::Linear));
  std::vector<Bytes> inputs;
  for (std::uint32_t i = 0; i < 3; ++i) {
    Bytes b;
    for (std::uint32_t j = 0; j < 3; ++j) {
      std::int32_t v = static_cast<std::int32_t>(i * 10 + j);
      b.resize(b.size() + 4);
      std::memcpy(b.data() + j * 4, &v, 4);
    }
    inputs.push_back(b);
  }
  auto res = run_case(cl, CollOp::ALLTOALL, 0, DType::I32, ReduceFn::SUM,
                      inputs, 4);
  for (std::uint32_t j = 0; j < 3; ++j)
    for (std::uint32_t i = 0; i < 3; ++i) {
      std::int32_t v;
      std::memcpy(&v, res.outputs[j].data() + i * 4, 4);
      CHECK(v == static_cast<std::int32_t>(i * 10 + j));
    }
}

TEST_CASE("wire message counts follow the schedules") {
  SECTION("eager one-to-all bcast, P=4: 3 messages") {
    Cluster cl(config_for(4, Protocol::Eager, Algorithm::OneToAll));
    std::vector<Bytes> inputs(4);
    inputs[0] = Bytes(64, 7);
    run_case(cl, CollOp::BCAST, 0, DType::I32, ReduceFn::SUM, inputs, 64);
    CHECK(cl.fabric().log().size() == 3);
  }
  SECTION("recursive doubling bcast, P=8: 7 data transfers in 3 rounds") {
    Cluster cl(config_for(8, Protocol::Rendezvous,
                          Algorithm::RecursiveDoubling));
    std::vector<Bytes> inputs(8);
    inputs[0] = Bytes(64, 7);
    run_case(cl, CollOp::BCAST, 0, DType::I32, ReduceFn::SUM, inputs, 64);
    std::size_t writes = 0;
    for (const auto &rec : cl.fabric().log())
      writes += rec.frame_kind == FrameKind::RdmaWrite ? 1 : 0;
    CHECK(writes == 7);
    // each transfer is INIT + WRITE + DONE
    CHECK(cl.fabric().log().size() == 21);
  }
  SECTION("eager alltoall, P=2: exactly 2 messages") {
    Cluster cl(config_for(2, Protocol::Eager, Algorithm::Linear));
    std::vector<Bytes> inputs{Bytes(128, 1), Bytes(128, 2)};
    run_case(cl, CollOp::ALLTOALL, 0, DType::I32, ReduceFn::SUM, inputs, 64);
    CHECK(cl.fabric().log().size() == 2);
  }
  SECTION("all-to-one gather, P=8: 7 messages, all terminating at root") {
    Cluster cl(config_for(8, Protocol::Rendezvous, Algorithm::AllToOne));
    std::vector<Bytes> inputs;
    for (int r = 0; r < 8; ++r)
      inputs.push_back(Bytes(64, static_cast<std::uint8_t>(r)));
    run_case(cl, CollOp::GATHER, 0, DType::I32, ReduceFn::SUM, inputs, 64);
    std::size_t writes = 0;
    for (const auto &rec : cl.fabric().log()) {
      if (rec.frame_kind == FrameKind::RdmaWrite) {
        ++writes;
        CHECK(rec.dst == 0);
      }
    }
    CHECK(writes == 7);
  }
  SECTION("binary-tree gather bytes equal the subtree edge weights") {
    const std::uint32_t P = 8;
    const std::uint64_t block = 256;
    Cluster cl(config_for(P, Protocol::Rendezvous, Algorithm::BinaryTree));
    std::vector<Bytes> inputs;
    for (std::uint32_t r = 0; r < P; ++r)
      inputs.push_back(Bytes(block, static_cast<std::uint8_t>(r)));
    run_case(cl, CollOp::GATHER, 0, DType::I32, ReduceFn::SUM, inputs, block);
    // oracle: sum over tree edges of subtree size x block
    ReductionTree t = ReductionTree::build(P);
    std::vector<std::uint64_t> sub(P, 1);
    for (std::uint32_t v = P; v-- > 1;)
      sub[*t.parent[v]] += sub[v];
    std::uint64_t want = 0;
    for (std::uint32_t v = 1; v < P; ++v)
      want += sub[v] * block;
    std::uint64_t got = 0;
    for (const auto &rec : cl.fabric().log())
      if (rec.frame_kind == FrameKind::RdmaWrite)
        got += rec.payload_bytes;
    CHECK(got == want);
  }
}

TEST_CASE("barrier moves nothing but headers") {
  Cluster cl(config_for(8, Protocol::Eager, Algorithm::Direct));
  std::vector<RequestHandle> hs;
  for (std::uint32_t r = 0; r < 8; ++r) {
    CcloRequest req;
    req.op = CollOp::BARRIER;
    hs.push_back(cl.node(r).call(req));
  }
  cl.await_all(hs);
  for (const auto &rec : cl.fabric().log())
    CHECK(rec.payload_bytes == 0);
  CHECK(cl.fabric().total_wire_bytes() ==
        cl.fabric().log().size() * wire::kHeaderSize);
  // gather-to-0 plus bcast-from-0
  CHECK(cl.fabric().log().size() == 14);
}

TEST_CASE("degenerate single-rank collectives complete without traffic") {
  Cluster cl(config_for(1, Protocol::Eager, Algorithm::Direct));
  Bytes data(64, 9);
  for (CollOp op : {CollOp::BCAST, CollOp::REDUCE, CollOp::GATHER,
                    CollOp::ALLTOALL, CollOp::BARRIER}) {
    std::vector<Bytes> inputs{data};
    auto res = run_case(cl, op, 0, DType::I32, ReduceFn::SUM, inputs, 64);
    if (op == CollOp::REDUCE || op == CollOp::GATHER || op == CollOp::ALLTOALL)
      CHECK(res.outputs[0] == data);
  }
  CHECK(cl.fabric().log().empty());
}

TEST_CASE("mismatched length across ranks errors on the offending rank") {
  Cluster cl(config_for(2, Protocol::Eager, Algorithm::OneToAll));
  Buffer &src = cl.platform(0).alloc(MemLocation::Device, 128);
  Buffer &dst = cl.platform(1).alloc(MemLocation::Device, 64);
  CcloRequest s;
  s.op = CollOp::SEND;
  s.peer = 1;
  s.dtype = DType::I32;
  s.count = 32; // 128 B
  s.src = DataEndpoint::memory(src.base_vaddr);
  CcloRequest r;
  r.op = CollOp::RECV;
  r.peer = 0;
  r.dtype = DType::I32;
  r.count = 16; // 64 B expected
  r.dst = DataEndpoint::memory(dst.base_vaddr);
  auto hs = cl.node(0).call(s);
  auto hr = cl.node(1).call(r);
  cl.run_until([&] { return hs->done() && hr->done(); });
  CHECK(hs->status == RequestStatus::Complete);
  CHECK(hr->status == RequestStatus::Error);
}

TEST_CASE("queued collectives on one communicator run in submission order") {
  Cluster cl(config_for(4, Protocol::Eager, Algorithm::OneToAll));
  std::vector<RequestHandle> hs;
  std::vector<Buffer *> outs;
  Bytes d1(64, 1), d2(64, 2);
  for (std::uint32_t r = 0; r < 4; ++r) {
    Buffer &b1 = cl.platform(r).alloc(MemLocation::Device, 64);
    Buffer &b2 = cl.platform(r).alloc(MemLocation::Device, 64);
    if (r == 0) {
      std::memcpy(b1.data(), d1.data(), 64);
      std::memcpy(b2.data(), d2.data(), 64);
    }
    outs.push_back(&b1);
    outs.push_back(&b2);
    for (int j = 0; j < 2; ++j) {
      CcloRequest req;
      req.op = CollOp::BCAST;
      req.root = 0;
      req.dtype = DType::I32;
      req.count = 16;
      Buffer &buf = j == 0 ? b1 : b2;
      if (r == 0)
        req.src = DataEndpoint::memory(buf.base_vaddr);
      else
        req.dst = DataEndpoint::memory(buf.base_vaddr);
      hs.push_back(cl.node(r).call(req));
    }
  }
  cl.await_all(hs);
  for (std::uint32_t r = 1; r < 4; ++r) {
    CHECK(outs[r * 2]->bytes == d1);
    CHECK(outs[r * 2 + 1]->bytes == d2);
  }
}

TEST_CASE("protocol choice changes wire kinds but not integer results") {
  std::mt19937_64 rng(505);
  std::vector<Bytes> inputs;
  for (int r = 0; r < 4; ++r)
    inputs.push_back(random_payload(rng, 4096, DType::I32));
  Bytes want = oracle_reduce(inputs, DType::I32, ReduceFn::SUM);

  Cluster eager(config_for(4, Protocol::Eager, Algorithm::Ring));
  auto re = run_case(eager, CollOp::REDUCE, 0, DType::I32, ReduceFn::SUM,
                     inputs, 4096);
  CHECK(re.outputs[0] == want);

  Cluster rndz(config_for(4, Protocol::Rendezvous, Algorithm::BinaryTree));
  auto rr = run_case(rndz, CollOp::REDUCE, 0, DType::I32, ReduceFn::SUM,
                     inputs, 4096);
  CHECK(rr.outputs[0] == want);
}
