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

#include <map>
#include <optional>
#include <vector>

#include "cclo/common.hpp"
#include "cclo/transport.hpp"

// Communicator state and per-collective algorithm selection.

namespace cclo {

enum class CollOp : std::uint8_t {
  NOP,
  SEND,
  RECV,
  BCAST,
  REDUCE,
  GATHER,
  ALLTOALL,
  BARRIER
};

inline const char *coll_op_name(CollOp op) {
  switch (op) {
  case CollOp::NOP:
    return "nop";
  case CollOp::SEND:
    return "send";
  case CollOp::RECV:
    return "recv";
  case CollOp::BCAST:
    return "bcast";
  case CollOp::REDUCE:
    return "reduce";
  case CollOp::GATHER:
    return "gather";
  case CollOp::ALLTOALL:
    return "alltoall";
  case CollOp::BARRIER:
    return "barrier";
  }
  return "?";
}

enum class Protocol : std::uint8_t { Eager, Rendezvous };

inline const char *protocol_name(Protocol p) {
  return p == Protocol::Eager ? "eager" : "rendezvous";
}

enum class Algorithm : std::uint8_t {
  Direct, // point-to-point, no schedule
  OneToAll,
  RecursiveDoubling,
  Ring,
  AllToOne,
  BinaryTree,
  Linear
};

inline const char *algorithm_name(Algorithm a) {
  switch (a) {
  case Algorithm::Direct:
    return "direct";
  case Algorithm::OneToAll:
    return "one_to_all";
  case Algorithm::RecursiveDoubling:
    return "recursive_doubling";
  case Algorithm::Ring:
    return "ring";
  case Algorithm::AllToOne:
    return "all_to_one";
  case Algorithm::BinaryTree:
    return "binary_tree";
  case Algorithm::Linear:
    return "linear";
  }
  return "?";
}

struct AlgorithmConfig {
  std::uint64_t size_threshold_bytes = 65536;
  std::uint32_t rank_threshold = 4;
  Protocol protocol = Protocol::Eager;

  void validate() const {
    if (size_threshold_bytes == 0 || rank_threshold == 0)
      throw ConfigError("algorithm thresholds must be > 0");
  }
};

/// Deterministic per-collective algorithm choice. Eager collectives use the
/// simple schedules (one-to-all, ring); rendezvous collectives switch between
/// the small-message and tree algorithms at the configured thresholds.
inline Algorithm select_algorithm(CollOp op, std::uint64_t msg_bytes,
                                  std::uint32_t nranks, Protocol protocol,
                                  const AlgorithmConfig &cfg) {
  cfg.validate();
  switch (op) {
  case CollOp::SEND:
  case CollOp::RECV:
  case CollOp::NOP:
  case CollOp::BARRIER:
    return Algorithm::Direct;
  case CollOp::ALLTOALL:
    return Algorithm::Linear;
  case CollOp::BCAST:
    if (protocol == Protocol::Eager)
      return Algorithm::OneToAll;
    return (msg_bytes < cfg.size_threshold_bytes &&
            nranks <= cfg.rank_threshold)
               ? Algorithm::OneToAll
               : Algorithm::RecursiveDoubling;
  case CollOp::REDUCE:
  case CollOp::GATHER:
    if (protocol == Protocol::Eager)
      return Algorithm::Ring;
    return msg_bytes < cfg.size_threshold_bytes ? Algorithm::AllToOne
                                                : Algorithm::BinaryTree;
  }
  throw ConfigError("unsupported collective");
}

struct PeerEntry {
  NodeId node = 0;
  SessionId session;
};

/// Rank group sharing sessions, per-peer sequence counters and algorithm
/// configuration. Ranks are communicator-local; peers maps rank -> node.
struct Communicator {
  std::uint32_t comm_id = 0;
  std::uint32_t size = 0;
  std::uint32_t local_rank = 0;
  std::vector<PeerEntry> peers; // indexed by rank
  AlgorithmConfig algo;

  // per-(peer, direction) sequence counters, monotone modulo 2^32
  std::map<std::uint32_t, std::uint32_t> send_seq;
  std::map<std::uint32_t, std::uint32_t> recv_seq;
  // collective schedule counter: identical on every rank because collectives
  // execute in submission order per communicator
  std::uint32_t coll_seq = 0;
  // one collective at a time per communicator; later requests queue
  bool coll_busy = false;

  std::uint32_t next_send_seq(std::uint32_t peer) { return send_seq[peer]++; }
  std::uint32_t next_recv_seq(std::uint32_t peer) { return recv_seq[peer]++; }

  void validate() const {
    if (local_rank >= size || peers.size() != size)
      throw ConfigError("communicator rank table inconsistent");
    algo.validate();
  }
};

// Reserved wildcard for tag and source matching.
constexpr std::uint32_t kAnyMatch = 0xFFFFFFFFu;
// Tag space reserved for collective-internal messages.
constexpr std::uint32_t kCollTagBase = 0xC0000000u;

inline std::uint32_t ceil_log2(std::uint32_t n) {
  std::uint32_t d = 0;
  while ((1u << d) < n)
    ++d;
  return d;
}

/// Reduction/gather tree: a binomial tree over 2^D slots (D = ceil(log2 P))
/// with ranks packed so that the full-depth chain stays occupied. The longest
/// dependency chain is therefore exactly D messages for every P, which is
/// what makes tree latency flat between successive powers of two.
struct ReductionTree {
  std::uint32_t nranks = 0;
  std::vector<std::optional<std::uint32_t>> parent; // by vrank
  std::vector<std::vector<std::uint32_t>> children; // ordered, by vrank

  static ReductionTree build(std::uint32_t nranks) {
    ReductionTree t;
    t.nranks = nranks;
    t.parent.resize(nranks);
    t.children.resize(nranks);
    if (nranks <= 1)
      return t;

    std::uint32_t depth = ceil_log2(nranks);
    std::uint32_t total = 1u << depth;

    // slots on the full-depth chain: 0, 2^(D-1), 2^(D-1)+2^(D-2), ..., 2^D-1
    std::vector<bool> chain(total, false);
    std::uint32_t s = 0;
    chain[0] = true;
    for (std::uint32_t r = depth; r-- > 0;) {
      s += 1u << r;
      chain[s] = true;
    }
    std::vector<std::uint32_t> occupied;
    for (std::uint32_t i = 0; i < total && occupied.size() < nranks; ++i)
      if (chain[i])
        occupied.push_back(i);
    for (std::uint32_t i = 0; i < total && occupied.size() < nranks; ++i)
      if (!chain[i])
        occupied.push_back(i);
    std::sort(occupied.begin(), occupied.end());

    std::map<std::uint32_t, std::uint32_t> slot_to_vrank;
    for (std::uint32_t v = 0; v < nranks; ++v)
      slot_to_vrank[occupied[v]] = v;

    for (std::uint32_t v = 1; v < nranks; ++v) {
      std::uint32_t slot = occupied[v];
      std::uint32_t p = slot;
      do {
        p -= p & (~p + 1); // strip lowest set bit
      } while (!slot_to_vrank.count(p));
      std::uint32_t pv = slot_to_vrank[p];
      t.parent[v] = pv;
      t.children[pv].push_back(v);
    }
    for (auto &c : t.children)
      std::sort(c.begin(), c.end());
    return t;
  }

  std::uint32_t longest_path() const {
    std::vector<std::uint32_t> depth(nranks, 0);
    std::uint32_t best = 0;
    // children have larger vranks than parents, so one reverse pass works
    for (std::uint32_t v = nranks; v-- > 0;) {
      for (std::uint32_t c : children[v])
        depth[v] = std::max(depth[v], depth[c] + 1);
      best = std::max(best, depth[v]);
    }
    return best;
  }
};

} // namespace cclo
