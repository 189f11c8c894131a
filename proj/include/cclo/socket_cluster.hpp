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
#include <thread>
#include <vector>

#include "cclo/engine.hpp"
#include "cclo/firmware.hpp"
#include "cclo/socket_poe.hpp"

// Wall-clock cluster: N engines in one process, each behind a real socket
// endpoint on the loopback interface. All sockets are nonblocking and every
// engine runs on the same cooperative scheduler, so the whole cluster is
// driven by a single thread. Durations are measured, not modeled.

namespace cclo {

enum class SocketTransport { Stream, Datagram };

inline const char *socket_transport_name(SocketTransport t) {
  return t == SocketTransport::Stream ? "stream" : "datagram";
}

struct SocketClusterConfig {
  std::uint32_t nranks = 2;
  SocketTransport transport = SocketTransport::Stream;
  PlatformConfig platform;
  EngineConfig engine;
  AlgorithmConfig algo;
  double loss_probability = 0.0; // datagram only
  std::uint32_t reorder_window = 0;
  std::uint64_t seed = 1;
  double run_timeout_s = 120.0; // hard stop for a wedged cluster

  void validate() const {
    if (nranks < 1)
      throw ConfigError("cluster needs at least one rank");
    if (algo.protocol == Protocol::Rendezvous)
      throw ConfigError("rendezvous requires an RDMA-capable transport");
    engine.validate();
  }
};

class SocketCluster {
public:
  explicit SocketCluster(SocketClusterConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    // lost datagrams are recovered by failing the request after a receiver
    // timeout; the wall-clock default is 100 ms
    if (cfg_.engine.recv_timeout_us == EngineConfig{}.recv_timeout_us)
      cfg_.engine.recv_timeout_us = 100e3;

    for (NodeId i = 0; i < cfg_.nranks; ++i) {
      platforms_.push_back(
          std::make_unique<Platform>(cfg_.platform, &clock_));
      if (cfg_.transport == SocketTransport::Stream)
        stream_poes_.push_back(
            std::make_unique<StreamPoe>(i, SocketAddress{}));
      else
        dgram_poes_.push_back(std::make_unique<DatagramPoe>(
            i, SocketAddress{}, cfg_.loss_probability, cfg_.reorder_window,
            cfg_.seed));
    }
    std::vector<SocketAddress> table;
    for (NodeId i = 0; i < cfg_.nranks; ++i)
      table.push_back(cfg_.transport == SocketTransport::Stream
                          ? stream_poes_[i]->local_address()
                          : dgram_poes_[i]->local_address());
    for (NodeId i = 0; i < cfg_.nranks; ++i) {
      if (cfg_.transport == SocketTransport::Stream)
        stream_poes_[i]->set_peers(table);
      else
        dgram_poes_[i]->set_peers(table);
    }
    if (cfg_.transport == SocketTransport::Datagram) {
      // co-located endpoints drain each other mid-burst so the kernel's UDP
      // queues never overflow while one engine holds the thread
      std::vector<DatagramPoe *> all;
      for (const auto &p : dgram_poes_)
        all.push_back(p.get());
      for (const auto &p : dgram_poes_)
        p->set_drain_hook([all] {
          for (DatagramPoe *q : all)
            q->pump_rx_only();
        });
    }
    for (NodeId i = 0; i < cfg_.nranks; ++i)
      nodes_.push_back(std::make_unique<CcloNode>(
          cfg_.engine, i, platforms_[i].get(), poe(i), &clock_, &sched_));
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
          p.session = poe(i)->open_session(j);
        comm.peers.push_back(p);
      }
      nodes_[i]->add_communicator(std::move(comm));
      nodes_[i]->install_firmware(fw::collective_firmware());
      nodes_[i]->start();
    }
  }

  std::uint32_t nranks() const { return cfg_.nranks; }
  const SocketClusterConfig &config() const { return cfg_; }
  CcloNode &node(std::uint32_t rank) { return *nodes_.at(rank); }
  Scheduler &scheduler() { return sched_; }
  Platform &platform(std::uint32_t rank) { return *platforms_.at(rank); }
  WallClock &clock() { return clock_; }

  Poe *poe(std::uint32_t rank) {
    return cfg_.transport == SocketTransport::Stream
               ? static_cast<Poe *>(stream_poes_.at(rank).get())
               : static_cast<Poe *>(dgram_poes_.at(rank).get());
  }

  std::uint64_t total_wire_bytes() {
    std::uint64_t n = 0;
    for (NodeId i = 0; i < cfg_.nranks; ++i)
      n += poe(i)->bytes_on_wire();
    return n;
  }

  std::uint64_t tx_dropped() {
    std::uint64_t n = 0;
    for (const auto &p : dgram_poes_)
      n += p->tx_dropped();
    return n;
  }

  template <typename Pred> void run_until(Pred pred) {
    auto give_up =
        std::chrono::steady_clock::now() +
        std::chrono::duration<double>(cfg_.run_timeout_s);
    for (;;) {
      sched_.run_ready();
      for (auto &n : nodes_)
        n->pump_rx();
      sched_.check_waiters();
      if (pred())
        return;
      if (sched_.has_ready())
        continue;
      // wall time advances by itself; back off briefly while waiting on I/O
      std::this_thread::sleep_for(std::chrono::microseconds(50));
      if (std::chrono::steady_clock::now() > give_up)
        throw DeadlockError("socket cluster made no progress within " +
                            std::to_string(cfg_.run_timeout_s) + " s");
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

  double time_us() const { return clock_.now_us(); }

private:
  SocketClusterConfig cfg_;
  WallClock clock_;
  std::vector<std::unique_ptr<Platform>> platforms_;
  std::vector<std::unique_ptr<StreamPoe>> stream_poes_;
  std::vector<std::unique_ptr<DatagramPoe>> dgram_poes_;
  Scheduler sched_;
  std::vector<std::unique_ptr<CcloNode>> nodes_;
};

} // namespace cclo
