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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cclo/cluster.hpp"
#include "cclo/socket_cluster.hpp"

// Benchmark harness: cluster launching across the four transports, send/recv
// and collective microbenchmarks with CSV output, and the distributed
// matrix-vector product demo. Every measurement validates the data against a
// brute-force oracle before its timing is reported.

namespace cclo::bench {

enum class Transport { Sim, Stream, Datagram, RdmaSim };

inline const char *transport_name(Transport t) {
  switch (t) {
  case Transport::Sim:
    return "sim";
  case Transport::Stream:
    return "stream";
  case Transport::Datagram:
    return "datagram";
  case Transport::RdmaSim:
    return "rdma-sim";
  }
  return "?";
}

inline Transport parse_transport(const std::string &s) {
  if (s == "sim")
    return Transport::Sim;
  if (s == "stream")
    return Transport::Stream;
  if (s == "datagram")
    return Transport::Datagram;
  if (s == "rdma-sim")
    return Transport::RdmaSim;
  throw ConfigError("unknown transport: " + s);
}

inline Protocol parse_protocol(const std::string &s) {
  if (s == "eager")
    return Protocol::Eager;
  if (s == "rendezvous")
    return Protocol::Rendezvous;
  throw ConfigError("unknown protocol: " + s);
}

struct BenchConfig {
  std::uint32_t ranks = 2;
  Transport transport = Transport::Sim;
  MemModel memory_model = MemModel::SharedVirtual;
  bool host_buffers = false; // H2H instead of F2F
  Protocol protocol = Protocol::Eager;
  std::vector<std::uint64_t> sizes{1024};
  std::vector<std::string> ops{"bcast", "reduce", "gather", "alltoall",
                               "barrier"};
  std::uint32_t iterations = 250;
  std::uint32_t warmup = 10;
  CostModel cost;
  AlgorithmConfig algo;
  EngineConfig engine;
  double loss_probability = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (ranks < 1)
      throw ConfigError("ranks must be >= 1");
    if (sizes.empty())
      throw ConfigError("sizes must be non-empty");
    if (iterations < 1)
      throw ConfigError("iterations must be >= 1");
    if (protocol == Protocol::Rendezvous && transport != Transport::Sim &&
        transport != Transport::RdmaSim)
      throw ConfigError("rendezvous requires the rdma-sim transport");
  }
};

/// Merges config-file values over the defaults; unknown keys are errors so
/// typos do not silently fall back.
inline void apply_json(BenchConfig &cfg, const nlohmann::json &j) {
  for (const auto &[key, val] : j.items()) {
    if (key == "ranks")
      cfg.ranks = val.get<std::uint32_t>();
    else if (key == "transport")
      cfg.transport = parse_transport(val.get<std::string>());
    else if (key == "memory_model")
      cfg.memory_model = val.get<std::string>() == "partitioned"
                             ? MemModel::Partitioned
                             : MemModel::SharedVirtual;
    else if (key == "host_buffers")
      cfg.host_buffers = val.get<bool>();
    else if (key == "protocol")
      cfg.protocol = parse_protocol(val.get<std::string>());
    else if (key == "sizes")
      cfg.sizes = val.get<std::vector<std::uint64_t>>();
    else if (key == "ops")
      cfg.ops = val.get<std::vector<std::string>>();
    else if (key == "iterations")
      cfg.iterations = val.get<std::uint32_t>();
    else if (key == "warmup")
      cfg.warmup = val.get<std::uint32_t>();
    else if (key == "base_latency_us")
      cfg.cost.base_latency_us = val.get<double>();
    else if (key == "bandwidth_bps")
      cfg.cost.bandwidth_bps = val.get<double>();
    else if (key == "size_threshold_bytes")
      cfg.algo.size_threshold_bytes = val.get<std::uint64_t>();
    else if (key == "rank_threshold")
      cfg.algo.rank_threshold = val.get<std::uint32_t>();
    else if (key == "loss_probability")
      cfg.loss_probability = val.get<double>();
    else if (key == "seed")
      cfg.seed = val.get<std::uint64_t>();
    else if (key == "rank" || key == "addresses")
      ; // multi-process launch keys, handled by the launcher
    else
      throw ConfigError("unknown config key: " + key);
  }
}

inline BenchConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  BenchConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

struct ResultRow {
  std::string op;
  std::string algorithm;
  std::string protocol;
  std::string transport;
  std::uint32_t ranks = 0;
  std::uint64_t size_bytes = 0;
  double mean_us = 0;
  double median_us = 0;
  double p99_us = 0;
  double goodput_bps = 0;
  std::uint64_t bytes_on_wire = 0;
  std::uint64_t drops = 0;
  std::uint64_t faults = 0;
};

inline std::string csv_escape(const std::string &f) {
  if (f.find_first_of(",\"\n") == std::string::npos)
    return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"')
      out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void emit_csv(const std::vector<ResultRow> &rows, std::ostream &os) {
  os << "op,algorithm,protocol,transport,ranks,size_bytes,mean_us,median_us,"
        "p99_us,goodput_bps,bytes_on_wire,drops,faults\r\n";
  for (const auto &r : rows) {
    os << csv_escape(r.op) << ',' << csv_escape(r.algorithm) << ','
       << csv_escape(r.protocol) << ',' << csv_escape(r.transport) << ','
       << r.ranks << ',' << r.size_bytes << ',' << std::fixed
       << std::setprecision(3) << r.mean_us << ',' << r.median_us << ','
       << r.p99_us << ',' << r.goodput_bps << ','
       << std::defaultfloat << r.bytes_on_wire << ',' << r.drops << ','
       << r.faults << "\r\n";
  }
}

inline void emit_csv(const std::vector<ResultRow> &rows,
                     const std::string &path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw CcloError("cannot open CSV output file: " + path);
  emit_csv(rows, os);
}

/// One handle over either cluster flavor so the measurement loops are written
/// once.
class Harness {
public:
  explicit Harness(const BenchConfig &cfg) : cfg_(cfg) {
    cfg_.validate();
    AlgorithmConfig algo = cfg_.algo;
    algo.protocol = cfg_.protocol;
    PlatformConfig plat;
    plat.model = cfg_.memory_model;
    // invocation cost defaults are flavor-specific: the partitioned runtime
    // pays a far larger per-call overhead
    plat.staging.invocation_latency_us =
        cfg_.memory_model == MemModel::Partitioned ? 80.0 : 3.0;
    if (cfg_.transport == Transport::Sim ||
        cfg_.transport == Transport::RdmaSim) {
      ClusterConfig cc;
      cc.nranks = cfg_.ranks;
      cc.cost = cfg_.cost;
      cc.platform = plat;
      cc.engine = cfg_.engine;
      cc.algo = algo;
      cc.rdma = cfg_.transport == Transport::RdmaSim;
      sim_ = std::make_unique<Cluster>(cc);
    } else {
      SocketClusterConfig sc;
      sc.nranks = cfg_.ranks;
      sc.transport = cfg_.transport == Transport::Stream
                         ? SocketTransport::Stream
                         : SocketTransport::Datagram;
      sc.platform = plat;
      sc.engine = cfg_.engine;
      sc.algo = algo;
      sc.loss_probability = cfg_.loss_probability;
      sc.seed = cfg_.seed;
      sock_ = std::make_unique<SocketCluster>(sc);
    }
  }

  const BenchConfig &config() const { return cfg_; }
  bool is_sim() const { return sim_ != nullptr; }
  Cluster *sim() { return sim_.get(); }
  std::uint32_t nranks() const { return cfg_.ranks; }
  CcloNode &node(std::uint32_t r) {
    return sim_ ? sim_->node(r) : sock_->node(r);
  }
  Platform &platform(std::uint32_t r) {
    return sim_ ? sim_->platform(r) : sock_->platform(r);
  }
  Poe *poe(std::uint32_t r) { return sim_ ? sim_->poe(r) : sock_->poe(r); }

  void await_all(const std::vector<RequestHandle> &hs) {
    if (sim_)
      sim_->await_all(hs);
    else
      sock_->await_all(hs);
  }

  /// Aligned cluster-wide timestamp. Virtual clocks are synchronized to the
  /// maximum; the wall clock reads itself.
  double now_us() {
    return sim_ ? sim_->sync_clocks() : sock_->time_us();
  }

  std::uint64_t bytes_on_wire() {
    return sim_ ? sim_->fabric().total_wire_bytes()
                : sock_->total_wire_bytes();
  }

  std::uint64_t drops() {
    std::uint64_t n = 0;
    for (std::uint32_t r = 0; r < cfg_.ranks; ++r)
      n += node(r).counter("eager_drops");
    if (sock_)
      n += sock_->tx_dropped();
    return n;
  }

  std::uint64_t faults() {
    std::uint64_t n = 0;
    for (std::uint32_t r = 0; r < cfg_.ranks; ++r)
      n += platform(r).fault_count();
    return n;
  }

private:
  BenchConfig cfg_;
  std::unique_ptr<Cluster> sim_;
  std::unique_ptr<SocketCluster> sock_;
};

namespace detail {

inline void fill_pattern(std::uint8_t *dst, std::size_t n,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i)
    dst[i] = static_cast<std::uint8_t>(rng());
}

/// I32 values bounded to 20 bits so sums over any desk-scale rank count stay
/// far from overflow.
inline void fill_i32(std::uint8_t *dst, std::size_t n_bytes,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 4 <= n_bytes; i += 4) {
    std::int32_t v = static_cast<std::int32_t>(rng() & 0xFFFFF);
    std::memcpy(dst + i, &v, 4);
  }
}

struct LatencyStats {
  double mean_us = 0, median_us = 0, p99_us = 0;
};

inline LatencyStats stats_of(std::vector<double> lat) {
  LatencyStats s;
  if (lat.empty())
    return s;
  double sum = 0;
  for (double v : lat)
    sum += v;
  s.mean_us = sum / static_cast<double>(lat.size());
  std::sort(lat.begin(), lat.end());
  s.median_us = lat[lat.size() / 2];
  std::size_t p99 = static_cast<std::size_t>(
      std::ceil(0.99 * static_cast<double>(lat.size())));
  s.p99_us = lat[std::min(lat.size() - 1, p99 == 0 ? 0 : p99 - 1)];
  return s;
}

inline CollOp parse_op(const std::string &s) {
  if (s == "sendrecv" || s == "send")
    return CollOp::SEND;
  if (s == "bcast")
    return CollOp::BCAST;
  if (s == "reduce")
    return CollOp::REDUCE;
  if (s == "gather")
    return CollOp::GATHER;
  if (s == "alltoall")
    return CollOp::ALLTOALL;
  if (s == "barrier")
    return CollOp::BARRIER;
  throw ConfigError("unknown op: " + s);
}

[[noreturn]] inline void oracle_mismatch(const std::string &what,
                                         const std::uint8_t *got,
                                         const std::uint8_t *want,
                                         std::size_t n) {
  std::size_t i = 0;
  while (i < n && got[i] == want[i])
    ++i;
  std::ostringstream os;
  os << "oracle mismatch in " << what << ": first differing byte at offset "
     << i << " (got 0x" << std::hex
     << static_cast<int>(i < n ? got[i] : 0) << ", want 0x"
     << static_cast<int>(i < n ? want[i] : 0) << ") of " << std::dec << n
     << " bytes";
  throw CcloError(os.str());
}

inline void check_bytes(const std::string &what, const std::uint8_t *got,
                        const std::uint8_t *want, std::size_t n) {
  if (std::memcmp(got, want, n) != 0)
    oracle_mismatch(what, got, want, n);
}

} // namespace detail

/// Unidirectional rank0 -> rank1 throughput probe. Every iteration's payload
/// is verified at the receiver before its latency is recorded.
inline std::vector<ResultRow> run_sendrecv(Harness &h) {
  const BenchConfig &cfg = h.config();
  if (cfg.ranks < 2)
    throw ConfigError("sendrecv needs at least 2 ranks");
  std::vector<ResultRow> rows;
  for (std::uint64_t size : cfg.sizes) {
    std::uint64_t len = std::max<std::uint64_t>(4, size / 4 * 4);
    Buffer &src = h.platform(0).alloc(MemLocation::Device, len);
    Buffer &dst = h.platform(1).alloc(MemLocation::Device, len);
    std::uint64_t wire0 = h.bytes_on_wire();
    std::uint64_t drops0 = h.drops();
    std::uint64_t faults0 = h.faults();
    std::vector<double> lat;
    for (std::uint32_t it = 0; it < cfg.warmup + cfg.iterations; ++it) {
      detail::fill_pattern(src.data(), len, cfg.seed * 1000003 + it);
      double t0 = h.now_us();
      CcloRequest s;
      s.op = CollOp::SEND;
      s.peer = 1;
      s.dtype = DType::I32;
      s.count = len / 4;
      s.src = DataEndpoint::memory(src.base_vaddr);
      CcloRequest r;
      r.op = CollOp::RECV;
      r.peer = 0;
      r.dtype = DType::I32;
      r.count = len / 4;
      r.dst = DataEndpoint::memory(dst.base_vaddr);
      auto hs = h.node(0).call(s);
      auto hr = h.node(1).call(r);
      h.await_all({hs, hr});
      double t1 = h.now_us();
      detail::check_bytes("sendrecv", dst.data(), src.data(), len);
      if (it >= cfg.warmup)
        lat.push_back(t1 - t0);
    }
    auto st = detail::stats_of(lat);
    ResultRow row;
    row.op = "sendrecv";
    row.algorithm = algorithm_name(Algorithm::Direct);
    row.protocol = protocol_name(cfg.protocol);
    row.transport = transport_name(cfg.transport);
    row.ranks = cfg.ranks;
    row.size_bytes = len;
    row.mean_us = st.mean_us;
    row.median_us = st.median_us;
    row.p99_us = st.p99_us;
    row.goodput_bps =
        st.mean_us > 0 ? static_cast<double>(len) * 8.0 / st.mean_us * 1e6
                       : 0.0;
    row.bytes_on_wire = h.bytes_on_wire() - wire0;
    row.drops = h.drops() - drops0;
    row.faults = h.faults() - faults0;
    rows.push_back(row);
    h.platform(0).free(src);
    h.platform(1).free(dst);
  }
  return rows;
}

namespace detail {

/// Per-rank buffer set for one collective benchmark size. Under the
/// partitioned H2H flavor user data lives in Host buffers and is staged
/// through Device mirrors inside the timed region.
struct CollBuffers {
  std::vector<Buffer *> src;      // engine-visible
  std::vector<Buffer *> dst;      // engine-visible
  std::vector<Buffer *> host_src; // partitioned H2H only
  std::vector<Buffer *> host_dst;
  std::uint64_t src_len = 0, dst_len = 0;
  bool staged = false;
};

inline CollBuffers make_coll_buffers(Harness &h, CollOp op,
                                     std::uint64_t len, std::uint32_t root) {
  const BenchConfig &cfg = h.config();
  std::uint32_t P = cfg.ranks;
  CollBuffers b;
  b.staged =
      cfg.host_buffers && cfg.memory_model == MemModel::Partitioned;
  MemLocation user_loc =
      cfg.host_buffers ? MemLocation::Host : MemLocation::Device;
  for (std::uint32_t r = 0; r < P; ++r) {
    std::uint64_t src_len = 0, dst_len = 0;
    switch (op) {
    case CollOp::BCAST:
      src_len = r == root ? len : 0;
      dst_len = r == root ? 0 : len;
      break;
    case CollOp::REDUCE:
      src_len = len;
      dst_len = r == root ? len : 0;
      break;
    case CollOp::GATHER:
      src_len = len;
      dst_len = r == root ? len * P : 0;
      break;
    case CollOp::ALLTOALL:
      src_len = len * P;
      dst_len = len * P;
      break;
    default:
      break;
    }
    b.src.push_back(src_len ? &h.platform(r).alloc(user_loc, src_len)
                            : nullptr);
    b.dst.push_back(dst_len ? &h.platform(r).alloc(user_loc, dst_len)
                            : nullptr);
    b.host_src.push_back(nullptr);
    b.host_dst.push_back(nullptr);
    if (b.staged) {
      // the engine can only reach device memory; keep mirrors around
      b.host_src.back() = b.src.back();
      b.host_dst.back() = b.dst.back();
      b.src.back() = src_len
                         ? &h.platform(r).alloc(MemLocation::Device, src_len)
                         : nullptr;
      b.dst.back() = dst_len
                         ? &h.platform(r).alloc(MemLocation::Device, dst_len)
                         : nullptr;
    }
    if (r == root) {
      b.src_len = src_len;
      b.dst_len = dst_len;
    }
  }
  return b;
}

inline void free_coll_buffers(Harness &h, CollBuffers &b) {
  for (std::uint32_t r = 0; r < h.nranks(); ++r) {
    for (Buffer *buf : {b.src[r], b.dst[r], b.host_src[r], b.host_dst[r]})
      if (buf)
        h.platform(r).free(*buf);
  }
}

/// Expected result bytes per the brute-force oracle, from the current user
/// source buffers.
inline void validate_collective(Harness &h, CollOp op, std::uint32_t root,
                                std::uint64_t len, const CollBuffers &b) {
  std::uint32_t P = h.nranks();
  auto user_src = [&](std::uint32_t r) {
    return b.staged ? b.host_src[r] : b.src[r];
  };
  auto user_dst = [&](std::uint32_t r) {
    return b.staged ? b.host_dst[r] : b.dst[r];
  };
  switch (op) {
  case CollOp::BCAST:
    for (std::uint32_t r = 0; r < P; ++r)
      if (r != root)
        check_bytes("bcast", user_dst(r)->data(), user_src(root)->data(),
                    len);
    break;
  case CollOp::REDUCE: {
    Bytes want(len);
    for (std::size_t i = 0; i + 4 <= len; i += 4) {
      std::int32_t acc = 0;
      for (std::uint32_t r = 0; r < P; ++r) {
        std::int32_t v;
        std::memcpy(&v, user_src(r)->data() + i, 4);
        acc += v;
      }
      std::memcpy(want.data() + i, &acc, 4);
    }
    check_bytes("reduce", user_dst(root)->data(), want.data(), len);
    break;
  }
  case CollOp::GATHER: {
    for (std::uint32_t r = 0; r < P; ++r)
      check_bytes("gather", user_dst(root)->data() + r * len,
                  user_src(r)->data(), len);
    break;
  }
  case CollOp::ALLTOALL:
    for (std::uint32_t j = 0; j < P; ++j)
      for (std::uint32_t i = 0; i < P; ++i)
        check_bytes("alltoall", user_dst(j)->data() + i * len,
                    user_src(i)->data() + j * len, len);
    break;
  default:
    break;
  }
}

} // namespace detail

/// Collective latency sweep: each iteration refills the inputs, runs the
/// collective (staging through device mirrors under the partitioned H2H
/// flavor), checks the result against the oracle and only then records the
/// latency.
inline std::vector<ResultRow> run_collective(Harness &h) {
  const BenchConfig &cfg = h.config();
  std::uint32_t P = cfg.ranks;
  std::uint32_t root = 0;
  std::vector<ResultRow> rows;
  for (const std::string &op_name : cfg.ops) {
    CollOp op = detail::parse_op(op_name);
    if (op == CollOp::SEND)
      throw ConfigError("use `bench sendrecv` for point-to-point");
    for (std::uint64_t size : cfg.sizes) {
      // barriers carry no payload; one row regardless of the size list
      if (op == CollOp::BARRIER && size != cfg.sizes.front())
        continue;
      std::uint64_t len =
          op == CollOp::BARRIER ? 0 : std::max<std::uint64_t>(4, size / 4 * 4);
      auto bufs = detail::make_coll_buffers(h, op, len, root);
      std::uint64_t wire0 = h.bytes_on_wire();
      std::uint64_t drops0 = h.drops();
      std::uint64_t faults0 = h.faults();
      std::vector<double> lat;
      for (std::uint32_t it = 0; it < cfg.warmup + cfg.iterations; ++it) {
        for (std::uint32_t r = 0; r < P; ++r) {
          Buffer *user = bufs.staged ? bufs.host_src[r] : bufs.src[r];
          if (user)
            detail::fill_i32(user->data(), user->len(),
                             cfg.seed * 7919 + it * P + r);
        }
        double t0 = h.now_us();
        if (bufs.staged)
          for (std::uint32_t r = 0; r < P; ++r)
            if (bufs.src[r])
              h.platform(r).stage(*bufs.host_src[r], *bufs.src[r]);
        std::vector<RequestHandle> hs;
        for (std::uint32_t r = 0; r < P; ++r) {
          CcloRequest req;
          req.op = op;
          req.root = root;
          req.dtype = DType::I32;
          req.count = len / 4;
          req.reduce_fn = ReduceFn::SUM;
          if (bufs.src[r])
            req.src = DataEndpoint::memory(bufs.src[r]->base_vaddr);
          if (bufs.dst[r])
            req.dst = DataEndpoint::memory(bufs.dst[r]->base_vaddr);
          hs.push_back(h.node(r).call(req));
        }
        h.await_all(hs);
        if (bufs.staged)
          for (std::uint32_t r = 0; r < P; ++r)
            if (bufs.dst[r])
              h.platform(r).stage(*bufs.dst[r], *bufs.host_dst[r]);
        double t1 = h.now_us();
        detail::validate_collective(h, op, root, len, bufs);
        if (it >= cfg.warmup)
          lat.push_back(t1 - t0);
      }
      auto st = detail::stats_of(lat);
      ResultRow row;
      row.op = op_name;
      row.algorithm = algorithm_name(
          select_algorithm(op, len, P, cfg.protocol, h.config().algo));
      row.protocol = protocol_name(cfg.protocol);
      row.transport = transport_name(cfg.transport);
      row.ranks = P;
      row.size_bytes = len;
      row.mean_us = st.mean_us;
      row.median_us = st.median_us;
      row.p99_us = st.p99_us;
      row.goodput_bps =
          st.mean_us > 0
              ? static_cast<double>(len) * 8.0 / st.mean_us * 1e6
              : 0.0;
      row.bytes_on_wire = h.bytes_on_wire() - wire0;
      row.drops = h.drops() - drops0;
      row.faults = h.faults() - faults0;
      rows.push_back(row);
      detail::free_coll_buffers(h, bufs);
    }
  }
  return rows;
}

// ---- matvec demo ----

enum class MatvecPartition { Column, Checkerboard };

struct MatvecResult {
  std::vector<float> y;
  double residual = 0.0; // relative, vs the single-node product
  double elapsed_us = 0.0;
};

namespace detail {

inline std::vector<float> random_matrix(std::uint32_t rows,
                                        std::uint32_t cols,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> m(static_cast<std::size_t>(rows) * cols);
  for (auto &v : m)
    v = d(rng);
  return m;
}

inline std::vector<float> single_node_matvec(const std::vector<float> &a,
                                             const std::vector<float> &x,
                                             std::uint32_t rows,
                                             std::uint32_t cols) {
  std::vector<float> y(rows, 0.0f);
  for (std::uint32_t i = 0; i < rows; ++i) {
    float acc = 0.0f;
    for (std::uint32_t j = 0; j < cols; ++j)
      acc += a[static_cast<std::size_t>(i) * cols + j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline double rel_residual(const std::vector<float> &got,
                           const std::vector<float> &want) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    double d = static_cast<double>(got[i]) - want[i];
    num += d * d;
    den += static_cast<double>(want[i]) * want[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Communicator over a subset of cluster nodes, sharing the transport
/// sessions already opened for communicator 0.
inline void add_sub_communicator(Harness &h, std::uint32_t comm_id,
                                 const std::vector<NodeId> &members) {
  for (std::uint32_t lr = 0; lr < members.size(); ++lr) {
    Communicator comm;
    comm.comm_id = comm_id;
    comm.size = static_cast<std::uint32_t>(members.size());
    comm.local_rank = lr;
    comm.algo.protocol = h.config().protocol;
    for (NodeId peer : members) {
      PeerEntry p;
      p.node = peer;
      if (peer != members[lr])
        p.session = h.poe(members[lr])->open_session(peer);
      comm.peers.push_back(p);
    }
    h.node(members[lr]).add_communicator(std::move(comm));
  }
}

} // namespace detail

/// Distributed y = A x with the matrix split across ranks. Column mode: each
/// rank owns a block of columns and the partial products are summed with a
/// reduce to rank 0. Checkerboard mode: the grid-row partials are gathered
/// at each row leader, summed there, and the leaders' padded vectors are
/// reduced across row groups to rank 0.
inline MatvecResult run_matvec(Harness &h, const std::vector<float> &a,
                               const std::vector<float> &x,
                               std::uint32_t rows, std::uint32_t cols,
                               MatvecPartition part, std::uint32_t grid_r = 0,
                               std::uint32_t grid_c = 0) {
  std::uint32_t P = h.nranks();
  if (a.size() != static_cast<std::size_t>(rows) * cols ||
      x.size() != cols)
    throw ConfigError("matvec: matrix/vector shape mismatch");
  std::vector<float> want = detail::single_node_matvec(a, x, rows, cols);
  MatvecResult res;
  double t0 = h.now_us();

  if (part == MatvecPartition::Column) {
    if (cols % P != 0)
      throw ConfigError("matvec: ranks must divide the column count");
    std::uint32_t block = cols / P;
    // each rank's partial product over its column block
    std::vector<Buffer *> parts(P, nullptr);
    Buffer *out = nullptr;
    std::vector<RequestHandle> hs;
    for (std::uint32_t r = 0; r < P; ++r) {
      std::vector<float> part_y(rows, 0.0f);
      for (std::uint32_t i = 0; i < rows; ++i) {
        float acc = 0.0f;
        for (std::uint32_t j = r * block; j < (r + 1) * block; ++j)
          acc += a[static_cast<std::size_t>(i) * cols + j] * x[j];
        part_y[i] = acc;
      }
      parts[r] = &h.platform(r).alloc(MemLocation::Device, rows * 4ull);
      std::memcpy(parts[r]->data(), part_y.data(), rows * 4ull);
      CcloRequest req;
      req.op = CollOp::REDUCE;
      req.root = 0;
      req.dtype = DType::F32;
      req.count = rows;
      req.reduce_fn = ReduceFn::SUM;
      req.src = DataEndpoint::memory(parts[r]->base_vaddr);
      if (r == 0) {
        out = &h.platform(0).alloc(MemLocation::Device, rows * 4ull);
        req.dst = DataEndpoint::memory(out->base_vaddr);
      }
      hs.push_back(h.node(r).call(req));
    }
    h.await_all(hs);
    res.y.resize(rows);
    std::memcpy(res.y.data(), out->data(), rows * 4ull);
    for (std::uint32_t r = 0; r < P; ++r)
      h.platform(r).free(*parts[r]);
    h.platform(0).free(*out);
  } else {
    if (grid_r * grid_c != P)
      throw ConfigError("matvec: grid does not match the rank count");
    if (rows % grid_r != 0 || cols % grid_c != 0)
      throw ConfigError("matvec: grid must divide the matrix dims");
    std::uint32_t rb = rows / grid_r, cb = cols / grid_c;
    // row communicators 1..grid_r, leader communicator grid_r+1
    for (std::uint32_t i = 0; i < grid_r; ++i) {
      std::vector<NodeId> members;
      for (std::uint32_t j = 0; j < grid_c; ++j)
        members.push_back(i * grid_c + j);
      detail::add_sub_communicator(h, 1 + i, members);
    }
    std::vector<NodeId> leaders;
    for (std::uint32_t i = 0; i < grid_r; ++i)
      leaders.push_back(i * grid_c);
    detail::add_sub_communicator(h, 1 + grid_r, leaders);

    // phase 1: gather the row partials at each row leader
    std::vector<Buffer *> scratch;
    std::vector<RequestHandle> hs;
    std::vector<Buffer *> row_gather(grid_r, nullptr);
    for (std::uint32_t i = 0; i < grid_r; ++i)
      for (std::uint32_t j = 0; j < grid_c; ++j) {
        std::uint32_t rank = i * grid_c + j;
        std::vector<float> part_y(rb, 0.0f);
        for (std::uint32_t bi = 0; bi < rb; ++bi) {
          float acc = 0.0f;
          for (std::uint32_t bj = 0; bj < cb; ++bj)
            acc += a[static_cast<std::size_t>(i * rb + bi) * cols +
                     (j * cb + bj)] *
                   x[j * cb + bj];
          part_y[bi] = acc;
        }
        Buffer &src = h.platform(rank).alloc(MemLocation::Device, rb * 4ull);
        std::memcpy(src.data(), part_y.data(), rb * 4ull);
        scratch.push_back(&src);
        CcloRequest req;
        req.op = CollOp::GATHER;
        req.root = 0;
        req.comm_id = 1 + i;
        req.dtype = DType::F32;
        req.count = rb;
        req.src = DataEndpoint::memory(src.base_vaddr);
        if (j == 0) {
          row_gather[i] = &h.platform(rank).alloc(MemLocation::Device,
                                                  grid_c * rb * 4ull);
          req.dst = DataEndpoint::memory(row_gather[i]->base_vaddr);
        }
        hs.push_back(h.node(rank).call(req));
      }
    h.await_all(hs);
    hs.clear();

    // phase 2: each leader folds its gathered blocks, pads to full length,
    // and the leaders reduce to global rank 0
    std::vector<Buffer *> padded(grid_r, nullptr);
    Buffer *out = nullptr;
    for (std::uint32_t i = 0; i < grid_r; ++i) {
      std::uint32_t leader = i * grid_c;
      std::vector<float> gathered(grid_c * rb);
      std::memcpy(gathered.data(), row_gather[i]->data(),
                  grid_c * rb * 4ull);
      std::vector<float> full(rows, 0.0f);
      for (std::uint32_t j = 0; j < grid_c; ++j)
        for (std::uint32_t bi = 0; bi < rb; ++bi)
          full[i * rb + bi] += gathered[j * rb + bi];
      padded[i] = &h.platform(leader).alloc(MemLocation::Device, rows * 4ull);
      std::memcpy(padded[i]->data(), full.data(), rows * 4ull);
      CcloRequest req;
      req.op = CollOp::REDUCE;
      req.root = 0;
      req.comm_id = 1 + grid_r;
      req.dtype = DType::F32;
      req.count = rows;
      req.reduce_fn = ReduceFn::SUM;
      req.src = DataEndpoint::memory(padded[i]->base_vaddr);
      if (i == 0) {
        out = &h.platform(0).alloc(MemLocation::Device, rows * 4ull);
        req.dst = DataEndpoint::memory(out->base_vaddr);
      }
      hs.push_back(h.node(leader).call(req));
    }
    h.await_all(hs);
    res.y.resize(rows);
    std::memcpy(res.y.data(), out->data(), rows * 4ull);
    for (std::uint32_t i = 0; i < grid_r; ++i) {
      h.platform(i * grid_c).free(*row_gather[i]);
      h.platform(i * grid_c).free(*padded[i]);
    }
    for (std::uint32_t i = 0, k = 0; i < grid_r; ++i)
      for (std::uint32_t j = 0; j < grid_c; ++j, ++k)
        h.platform(i * grid_c + j).free(*scratch[k]);
    h.platform(0).free(*out);
  }

  res.elapsed_us = h.now_us() - t0;
  res.residual = detail::rel_residual(res.y, want);
  return res;
}

} // namespace cclo::bench
