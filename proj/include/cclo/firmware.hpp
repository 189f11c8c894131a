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

#include <vector>

#include "cclo/collectives.hpp"
#include "cclo/engine.hpp"
#include "cclo/task.hpp"

// Collective firmware: the uC procedures realizing Table-1 schedules as
// sequences of DMP microcode and Tx/Rx commands. The procedures only move
// addresses around; payload bytes flow exclusively through the DMP.

namespace cclo::fw {

struct CollCtx {
  CcloNode *node = nullptr;
  Communicator *comm = nullptr;
  std::uint32_t comm_id = 0;
  std::uint32_t P = 0, r = 0, root = 0;
  Protocol proto = Protocol::Eager;
  std::uint32_t tag = 0; // phase-0 tag; subsequent phases use tag+1, ...
  std::uint64_t len = 0; // per-rank contribution in bytes
  DType dtype = DType::I32;
  ReduceFn fn = ReduceFn::SUM;
};

inline Task copy_mem(CcloNode &n, std::uint32_t comm_id, std::uint64_t src,
                     std::uint64_t dst, std::uint64_t len) {
  if (len == 0)
    co_return;
  DmpInstruction i;
  i.func = DmpFunc::COPY;
  i.comm_id = comm_id;
  i.operand0 = SlotDescriptor::memory(src, len);
  i.result = SlotDescriptor::memory(dst, len);
  co_await n.dmp_execute(i);
}

/// out = fn(a, b), elementwise. out may alias a or b.
inline Task reduce_mem(CcloNode &n, const CollCtx &c, std::uint64_t a,
                       std::uint64_t b, std::uint64_t out) {
  DmpInstruction i;
  i.func = DmpFunc::REDUCE;
  i.reduce_fn = c.fn;
  i.dtype = c.dtype;
  i.comm_id = c.comm_id;
  i.operand0 = SlotDescriptor::memory(a, c.len);
  i.operand1 = SlotDescriptor::memory(b, c.len);
  i.result = SlotDescriptor::memory(out, c.len);
  co_await n.dmp_execute(i);
}

inline Task send_block(CollCtx &c, std::uint32_t peer, std::uint64_t addr,
                       std::uint64_t len, std::uint32_t tag) {
  co_await c.node->send_msg(c.comm_id, peer, tag,
                            SlotDescriptor::memory(addr, len), len, c.proto);
}

inline Task recv_block(CollCtx &c, std::uint32_t peer, std::uint64_t addr,
                       std::uint64_t len, std::uint32_t tag) {
  co_await c.node->recv_msg(c.comm_id, peer, tag,
                            len == 0 ? SlotDescriptor::empty()
                                     : SlotDescriptor::memory(addr, len),
                            len, c.proto);
}

// ---- broadcast ----

inline Task bcast_one_to_all(CollCtx c, std::uint64_t data) {
  if (c.r == c.root) {
    for (std::uint32_t k = 1; k < c.P; ++k)
      co_await send_block(c, (c.root + k) % c.P, data, c.len, c.tag);
  } else {
    co_await recv_block(c, c.root, data, c.len, c.tag);
  }
}

inline Task bcast_recursive_doubling(CollCtx c, std::uint64_t data) {
  // vrank 0 = root; round t: vranks < 2^t send to vrank + 2^t
  std::uint32_t v = (c.r - c.root + c.P) % c.P;
  std::uint32_t depth = ceil_log2(c.P);
  auto rank_of = [&](std::uint32_t vr) { return (vr + c.root) % c.P; };
  for (std::uint32_t t = 0; t < depth; ++t) {
    std::uint32_t bit = 1u << t;
    if (v >= bit && v < 2 * bit) {
      co_await recv_block(c, rank_of(v - bit), data, c.len, c.tag);
    } else if (v < bit && v + bit < c.P) {
      co_await send_block(c, rank_of(v + bit), data, c.len, c.tag);
    }
  }
}

// ---- reduce ----

inline Task reduce_ring(CollCtx c, std::uint64_t in, std::uint64_t out) {
  // partial accumulation passed rank -> rank+1, starting at root+1,
  // ending at root
  CcloNode &n = *c.node;
  std::uint32_t first = (c.root + 1) % c.P;
  std::uint32_t next = (c.r + 1) % c.P;
  std::uint32_t prev = (c.r + c.P - 1) % c.P;
  if (c.r == first) {
    co_await send_block(c, next, in, c.len, c.tag);
    co_return;
  }
  Buffer &acc = n.scratch_buffer(c.len);
  co_await recv_block(c, prev, acc.base_vaddr, c.len, c.tag);
  if (c.r == c.root) {
    co_await reduce_mem(n, c, acc.base_vaddr, in, out);
  } else {
    co_await reduce_mem(n, c, acc.base_vaddr, in, acc.base_vaddr);
    co_await send_block(c, next, acc.base_vaddr, c.len, c.tag);
  }
  n.platform().free(acc);
}

inline Task reduce_all_to_one(CollCtx c, std::uint64_t in, std::uint64_t out) {
  CcloNode &n = *c.node;
  if (c.r != c.root) {
    co_await send_block(c, c.root, in, c.len, c.tag);
    co_return;
  }
  Buffer &stage = n.scratch_buffer(c.len * c.P);
  std::vector<std::shared_ptr<Task>> recvs;
  for (std::uint32_t i = 0; i < c.P; ++i)
    if (i != c.root)
      recvs.push_back(n.scheduler().spawn(
          recv_block(c, i, stage.base_vaddr + i * c.len, c.len, c.tag)));
  co_await join_all(n.scheduler(), std::move(recvs));
  // deterministic fold in rank order 0..P-1, own contribution in place
  bool started = false;
  for (std::uint32_t i = 0; i < c.P; ++i) {
    std::uint64_t part = i == c.root ? in : stage.base_vaddr + i * c.len;
    if (!started) {
      co_await copy_mem(n, c.comm_id, part, out, c.len);
      started = true;
    } else {
      co_await reduce_mem(n, c, out, part, out);
    }
  }
  n.platform().free(stage);
}

inline Task reduce_binary_tree(CollCtx c, std::uint64_t in, std::uint64_t out) {
  CcloNode &n = *c.node;
  ReductionTree tree = ReductionTree::build(c.P);
  std::uint32_t v = (c.r - c.root + c.P) % c.P;
  auto rank_of = [&](std::uint32_t vr) { return (vr + c.root) % c.P; };

  const auto &kids = tree.children[v];
  std::uint64_t acc = c.r == c.root ? out : 0;
  Buffer *acc_buf = nullptr;
  if (c.r != c.root) {
    acc_buf = &n.scratch_buffer(c.len);
    acc = acc_buf->base_vaddr;
  }
  Buffer *stage = nullptr;
  if (!kids.empty()) {
    stage = &n.scratch_buffer(c.len * kids.size());
    std::vector<std::shared_ptr<Task>> recvs;
    for (std::size_t k = 0; k < kids.size(); ++k)
      recvs.push_back(n.scheduler().spawn(recv_block(
          c, rank_of(kids[k]), stage->base_vaddr + k * c.len, c.len, c.tag)));
    co_await join_all(n.scheduler(), std::move(recvs));
  }
  // own value first, then children ascending (child-before-parent fold)
  co_await copy_mem(n, c.comm_id, in, acc, c.len);
  for (std::size_t k = 0; k < kids.size(); ++k)
    co_await reduce_mem(n, c, acc, stage->base_vaddr + k * c.len, acc);
  if (tree.parent[v])
    co_await send_block(c, rank_of(*tree.parent[v]), acc, c.len, c.tag);
  if (stage)
    n.platform().free(*stage);
  if (acc_buf)
    n.platform().free(*acc_buf);
}

// ---- gather ----

/// Direct sends to root. Ring and AllToOne share this wire schedule; they
/// differ only in the order the root drains arrivals (ring-staggered vs
/// ascending), so bytes on the wire are identical.
inline Task gather_direct(CollCtx c, std::uint64_t in, std::uint64_t out,
                          bool ring_order) {
  CcloNode &n = *c.node;
  if (c.r != c.root) {
    co_await send_block(c, c.root, in, c.len, c.tag);
    co_return;
  }
  co_await copy_mem(n, c.comm_id, in, out + c.root * c.len, c.len);
  std::vector<std::shared_ptr<Task>> recvs;
  for (std::uint32_t k = 1; k < c.P; ++k) {
    std::uint32_t i = ring_order ? (c.root + k) % c.P : (k <= c.root ? k - 1 : k);
    recvs.push_back(
        n.scheduler().spawn(recv_block(c, i, out + i * c.len, c.len, c.tag)));
  }
  co_await join_all(n.scheduler(), std::move(recvs));
}

/// Subtree vranks (sorted ascending) for the reduction tree.
inline std::vector<std::uint32_t> subtree_of(const ReductionTree &tree,
                                             std::uint32_t v) {
  std::vector<std::uint32_t> out{v};
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::uint32_t ch : tree.children[out[i]])
      out.push_back(ch);
  std::sort(out.begin(), out.end());
  return out;
}

inline Task gather_binary_tree(CollCtx c, std::uint64_t in, std::uint64_t out) {
  CcloNode &n = *c.node;
  ReductionTree tree = ReductionTree::build(c.P);
  std::uint32_t v = (c.r - c.root + c.P) % c.P;
  auto rank_of = [&](std::uint32_t vr) { return (vr + c.root) % c.P; };

  auto mine = subtree_of(tree, v);
  auto index_of = [&mine](std::uint32_t vr) {
    return static_cast<std::uint64_t>(
        std::lower_bound(mine.begin(), mine.end(), vr) - mine.begin());
  };
  Buffer &buf = n.scratch_buffer(c.len * mine.size());
  co_await copy_mem(n, c.comm_id, in, buf.base_vaddr + index_of(v) * c.len,
                    c.len);

  const auto &kids = tree.children[v];
  std::vector<Buffer *> kid_bufs;
  std::vector<std::vector<std::uint32_t>> kid_subs;
  std::vector<std::shared_ptr<Task>> recvs;
  for (std::uint32_t ch : kids) {
    kid_subs.push_back(subtree_of(tree, ch));
    Buffer &kb = n.scratch_buffer(c.len * kid_subs.back().size());
    kid_bufs.push_back(&kb);
    recvs.push_back(n.scheduler().spawn(
        recv_block(c, rank_of(ch), kb.base_vaddr,
                   c.len * kid_subs.back().size(), c.tag)));
  }
  co_await join_all(n.scheduler(), std::move(recvs));
  for (std::size_t k = 0; k < kids.size(); ++k)
    for (std::size_t j = 0; j < kid_subs[k].size(); ++j)
      co_await copy_mem(n, c.comm_id, kid_bufs[k]->base_vaddr + j * c.len,
                        buf.base_vaddr + index_of(kid_subs[k][j]) * c.len,
                        c.len);
  for (Buffer *kb : kid_bufs)
    n.platform().free(*kb);

  if (tree.parent[v]) {
    co_await send_block(c, rank_of(*tree.parent[v]), buf.base_vaddr,
                        c.len * mine.size(), c.tag);
  } else {
    // root: subtree = all vranks; place block of vrank x at rank_of(x)
    for (std::uint32_t x = 0; x < c.P; ++x)
      co_await copy_mem(n, c.comm_id, buf.base_vaddr + x * c.len,
                        out + rank_of(x) * c.len, c.len);
  }
  n.platform().free(buf);
}

// ---- all-to-all ----

inline Task alltoall_linear(CollCtx c, std::uint64_t in, std::uint64_t out) {
  CcloNode &n = *c.node;
  co_await copy_mem(n, c.comm_id, in + c.r * c.len, out + c.r * c.len, c.len);
  std::vector<std::shared_ptr<Task>> tasks;
  // staggered destinations avoid a synchronized in-cast
  for (std::uint32_t k = 1; k < c.P; ++k) {
    std::uint32_t peer = (c.r + k) % c.P;
    tasks.push_back(n.scheduler().spawn(
        send_block(c, peer, in + peer * c.len, c.len, c.tag)));
    tasks.push_back(n.scheduler().spawn(
        recv_block(c, peer, out + peer * c.len, c.len, c.tag)));
  }
  co_await join_all(n.scheduler(), std::move(tasks));
}

// ---- barrier ----

inline Task barrier_proc(CollCtx c) {
  CcloNode &n = *c.node;
  if (c.P == 1)
    co_return;
  // zero-byte gather to rank 0, then zero-byte bcast
  if (c.r == 0) {
    std::vector<std::shared_ptr<Task>> recvs;
    for (std::uint32_t i = 1; i < c.P; ++i)
      recvs.push_back(n.scheduler().spawn(recv_block(c, i, 0, 0, c.tag)));
    co_await join_all(n.scheduler(), std::move(recvs));
    for (std::uint32_t i = 1; i < c.P; ++i)
      co_await send_block(c, i, 0, 0, c.tag + 1);
  } else {
    co_await send_block(c, 0, 0, 0, c.tag);
    co_await recv_block(c, 0, 0, 0, c.tag + 1);
  }
}

// ---- dispatch ----

/// Moves stream-port input into scratch memory so the schedules can work on
/// addresses; the inverse happens after the collective.
inline Task pull_to_scratch(CcloNode &n, std::uint32_t comm_id,
                            std::uint8_t port, std::uint64_t len,
                            std::uint64_t addr) {
  DmpInstruction i;
  i.func = DmpFunc::COPY;
  i.comm_id = comm_id;
  i.operand0 = SlotDescriptor::stream_port(port, len);
  i.result = SlotDescriptor::memory(addr, len);
  co_await n.dmp_execute(i);
}

inline Task push_from_scratch(CcloNode &n, std::uint32_t comm_id,
                              std::uint8_t port, std::uint64_t len,
                              std::uint64_t addr) {
  DmpInstruction i;
  i.func = DmpFunc::COPY;
  i.comm_id = comm_id;
  i.operand0 = SlotDescriptor::memory(addr, len);
  i.result = SlotDescriptor::stream_port(port, len);
  co_await n.dmp_execute(i);
}

inline Task run_collective(CcloNode &node, CcloRequest req,
                           RequestHandle handle) {
  Communicator &comm = node.communicator(req.comm_id);
  // one collective per communicator at a time; the claim happens inside the
  // wake predicate so queued collectives start in submission order
  co_await node.scheduler().until([&comm] {
    if (comm.coll_busy)
      return false;
    comm.coll_busy = true;
    return true;
  });

  CollCtx c;
  c.node = &node;
  c.comm = &comm;
  c.comm_id = req.comm_id;
  c.P = comm.size;
  c.r = comm.local_rank;
  c.root = req.root;
  c.proto = comm.algo.protocol;
  c.len = req.payload_bytes();
  c.dtype = req.dtype;
  c.fn = req.reduce_fn;
  c.tag = kCollTagBase + comm.coll_seq++ * 4;

  Algorithm alg = select_algorithm(req.op, c.len, c.P, c.proto, comm.algo);

  try {
    bool is_root = c.r == c.root;
    std::uint64_t src_addr = 0, dst_addr = 0;
    Buffer *src_scratch = nullptr, *dst_scratch = nullptr;
    std::uint64_t src_len = req.src.kind == EndpointKind::None
                                ? 0
                                : (req.op == CollOp::ALLTOALL ? c.len * c.P
                                                              : c.len);
    std::uint64_t dst_len = 0;
    switch (req.op) {
    case CollOp::BCAST:
      dst_len = is_root ? 0 : c.len;
      break;
    case CollOp::REDUCE:
      dst_len = is_root ? c.len : 0;
      break;
    case CollOp::GATHER:
      dst_len = is_root ? c.len * c.P : 0;
      break;
    case CollOp::ALLTOALL:
      dst_len = c.len * c.P;
      break;
    default:
      dst_len = 0;
      break;
    }
    if (src_len > 0) {
      if (req.src.kind == EndpointKind::Memory) {
        src_addr = req.src.addr;
      } else if (req.src.kind == EndpointKind::Stream) {
        src_scratch = &node.scratch_buffer(src_len);
        src_addr = src_scratch->base_vaddr;
        co_await pull_to_scratch(node, c.comm_id, req.src.port, src_len,
                                 src_addr);
      }
    }
    if (dst_len > 0) {
      if (req.dst.kind == EndpointKind::Memory) {
        dst_addr = req.dst.addr;
      } else if (req.dst.kind == EndpointKind::Stream) {
        dst_scratch = &node.scratch_buffer(dst_len);
        dst_addr = dst_scratch->base_vaddr;
      }
    }

    switch (req.op) {
    case CollOp::BCAST: {
      std::uint64_t data = is_root ? src_addr : dst_addr;
      if (c.P > 1) {
        if (alg == Algorithm::OneToAll)
          co_await bcast_one_to_all(c, data);
        else
          co_await bcast_recursive_doubling(c, data);
      }
      handle->bytes_moved += c.len;
      break;
    }
    case CollOp::REDUCE: {
      if (c.P == 1) {
        co_await copy_mem(node, c.comm_id, src_addr, dst_addr, c.len);
      } else if (alg == Algorithm::Ring) {
        co_await reduce_ring(c, src_addr, dst_addr);
      } else if (alg == Algorithm::AllToOne) {
        co_await reduce_all_to_one(c, src_addr, dst_addr);
      } else {
        co_await reduce_binary_tree(c, src_addr, dst_addr);
      }
      handle->bytes_moved += c.len;
      break;
    }
    case CollOp::GATHER: {
      if (c.P == 1) {
        co_await copy_mem(node, c.comm_id, src_addr, dst_addr, c.len);
      } else if (alg == Algorithm::BinaryTree) {
        co_await gather_binary_tree(c, src_addr, dst_addr);
      } else {
        co_await gather_direct(c, src_addr, dst_addr,
                               alg == Algorithm::Ring);
      }
      handle->bytes_moved += c.len;
      break;
    }
    case CollOp::ALLTOALL:
      co_await alltoall_linear(c, src_addr, dst_addr);
      handle->bytes_moved += c.len * c.P;
      break;
    case CollOp::BARRIER:
      co_await barrier_proc(c);
      break;
    default:
      throw ConfigError("unsupported collective op in firmware");
    }

    if (dst_scratch) {
      co_await push_from_scratch(node, c.comm_id, req.dst.port, dst_len,
                                 dst_addr);
      node.platform().free(*dst_scratch);
    }
    if (src_scratch)
      node.platform().free(*src_scratch);
  } catch (...) {
    comm.coll_busy = false;
    throw;
  }
  comm.coll_busy = false;
}

inline Firmware collective_firmware() {
  return [](CcloNode &node, const CcloRequest &req,
            RequestHandle handle) -> Task {
    return run_collective(node, req, handle);
  };
}

} // namespace cclo::fw
