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

#include <memory>
#include <vector>

#include "cclo/engine.hpp"
#include "cclo/firmware.hpp"
#include "cclo/task.hpp"
#include "cclo/transport.hpp"

// In-process cluster: N engines on the virtual-time fabric, driven by one
// deterministic scheduler. The driver loop interleaves coroutine execution,
// Rx pumping and fabric event delivery; when nothing is runnable it jumps
// the owning clock to the earliest armed deadline.

namespace cclo {

struct ClusterConfig {
  std::uint32_t nranks = 2;
  CostModel cost;
  PlatformConfig platform;
  EngineConfig engine;
  AlgorithmConfig algo;
  bool rdma = false; // false = plain fabric, true = RDMA-verbs emulation

  void validate() const {
    if (nranks < 1)
      throw ConfigError("cluster needs at least one rank");
    if (algo.protocol == Protocol::Rendezvous && !rdma)
      throw ConfigError("rendezvous requires an RDMA-capable transport");
  }
};

class Cluster {
public:
  explicit Cluster(ClusterConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    fabric_ = std::make_unique<SimFabric>(cfg_.cost, cfg_.rdma);
    for (NodeId i = 0; i < cfg_.nranks; ++i) {
      clocks_.push_back(std::make_unique<VirtualClock>());
      platforms_.push_back(
          std::make_unique<Platform>(cfg_.platform, clocks_.back().get()));
      eps_.push_back(
          &fabric_->attach(i, platforms_.back().get(), clocks_.back().get()));
    }
    for (NodeId i = 0; i < cfg_.nranks; ++i)
      nodes_.push_back(std::make_unique<CcloNode>(
          cfg_.engine, i, platforms_[i].get(), eps_[i], clocks_[i].get(),
          &sched_));
    for (NodeId i = 0; i < cfg_.nranks; ++i) {
      Communicator comm;
      comm.comm_id = 0;
      comm.size = cfg_.nranks;
      comm.local_rank = i;
      comm.algo = cfg_.algo;
      for (NodeId j = 0; j < cfg_.nranks; ++j) {
        PeerEntry p;
        p.node = j;
        if (j != i)
          p.session = eps_[i]->open_session(j);
        comm.peers.push_back(p);
      }
      nodes_[i]->add_communicator(std::move(comm));
      nodes_[i]->install_firmware(fw::collective_firmware());
      nodes_[i]->start();
    }
  }

  std::uint32_t nranks() const { return cfg_.nranks; }
  const ClusterConfig &config() const { return cfg_; }
  CcloNode &node(std::uint32_t rank) { return *nodes_.at(rank); }
  Scheduler &scheduler() { return sched_; }
  SimFabric &fabric() { return *fabric_; }
  VirtualClock &clock(std::uint32_t rank) { return *clocks_.at(rank); }
  Poe *poe(std::uint32_t rank) { return eps_.at(rank); }
  Platform &platform(std::uint32_t rank) { return *platforms_.at(rank); }

  /// Drives all engines until pred() holds. Throws DeadlockError when no
  /// coroutine is runnable, no fabric event is pending, and no deadline is
  /// armed.
  template <typename Pred> void run_until(Pred pred) {
    for (;;) {
      sched_.run_ready();
      pump_all();
      sched_.check_waiters();
      if (pred())
        return;
      if (sched_.has_ready())
        continue;
      if (fabric_->step()) {
        pump_all();
        sched_.check_waiters();
        continue;
      }
      auto [deadline, clk] = sched_.earliest_deadline();
      if (clk) {
        clk->advance_to(deadline);
        sched_.check_waiters();
        continue;
      }
      throw DeadlockError("cluster stalled: " +
                          std::to_string(sched_.waiting_count()) +
                          " waiters, no events, no deadlines");
    }
  }

  void await(const RequestHandle &h) {
    run_until([&] { return h->done(); });
    h->check();
  }

  void await_all(const std::vector<RequestHandle> &hs) {
    run_until([&] {
      for (const auto &h : hs)
        if (!h->done())
          return false;
      return true;
    });
    for (const auto &h : hs)
      h->check();
  }

  /// Spawns a task and drives the cluster until it finishes; rethrows its
  /// error if any.
  void run_task(Task &&t) {
    auto sp = sched_.spawn(std::move(t));
    run_until([&] { return sp->done(); });
    sp->rethrow_if_failed();
  }

  /// Aligns every node's virtual clock to the cluster-wide maximum; used to
  /// timestamp the start and end of measured operations.
  double sync_clocks() {
    double m = 0;
    for (auto &c : clocks_)
      m = std::max(m, c->now_us());
    for (auto &c : clocks_)
      c->advance_to(m);
    return m;
  }

  double time_us() const {
    double m = 0;
    for (const auto &c : clocks_)
      m = std::max(m, c->now_us());
    return m;
  }

private:
  void pump_all() {
    for (auto &n : nodes_)
      n->pump_rx();
  }

  ClusterConfig cfg_;
  std::vector<std::unique_ptr<VirtualClock>> clocks_;
  std::vector<std::unique_ptr<Platform>> platforms_;
  std::unique_ptr<SimFabric> fabric_;
  std::vector<SimFabric::Endpoint *> eps_;
  Scheduler sched_;
  std::vector<std::unique_ptr<CcloNode>> nodes_;
};

} // namespace cclo
