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

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cclo/bench.hpp"

using namespace cclo;
using namespace cclo::bench;

namespace {

struct CliOpts {
  std::uint32_t ranks = 0;
  std::string transport;
  std::string protocol;
  std::vector<std::uint64_t> sizes;
  std::uint32_t iters = 0;
  std::string config_path;
  std::string csv_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common_flags(CLI::App *cmd, CliOpts &o) {
  cmd->add_option("--ranks", o.ranks, "number of ranks");
  cmd->add_option("--transport", o.transport,
                  "sim | stream | datagram | rdma-sim");
  cmd->add_option("--protocol", o.protocol, "eager | rendezvous");
  cmd->add_option("--sizes", o.sizes, "message sizes in bytes")
      ->delimiter(',');
  cmd->add_option("--iters", o.iters, "timed iterations per size");
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--csv", o.csv_path, "CSV output path");
  cmd->add_option("--seed", o.seed, "RNG seed")
      ->each([&o](const std::string &) { o.seed_set = true; });
}

/// Defaults < config file < explicit flags.
BenchConfig resolve_config(const CliOpts &o) {
  BenchConfig cfg;
  if (!o.config_path.empty())
    cfg = load_config(o.config_path);
  if (o.ranks)
    cfg.ranks = o.ranks;
  if (!o.transport.empty())
    cfg.transport = parse_transport(o.transport);
  if (!o.protocol.empty())
    cfg.protocol = parse_protocol(o.protocol);
  if (!o.sizes.empty())
    cfg.sizes = o.sizes;
  if (o.iters)
    cfg.iterations = o.iters;
  if (o.seed_set)
    cfg.seed = o.seed;
  return cfg;
}

void write_rows(const std::vector<ResultRow> &rows, const CliOpts &o) {
  if (!o.csv_path.empty()) {
    emit_csv(rows, o.csv_path);
    std::cout << "wrote " << rows.size() << " rows to " << o.csv_path
              << "\n";
  } else {
    emit_csv(rows, std::cout);
  }
}

void run_barrier_everywhere(Harness &h) {
  std::vector<RequestHandle> hs;
  for (std::uint32_t r = 0; r < h.nranks(); ++r) {
    CcloRequest req;
    req.op = CollOp::BARRIER;
    hs.push_back(h.node(r).call(req));
  }
  h.await_all(hs);
}

int cmd_launch(const CliOpts &o) {
  BenchConfig cfg = resolve_config(o);
  if (cfg.transport == Transport::Sim || cfg.transport == Transport::RdmaSim) {
    Harness h(cfg);
    run_barrier_everywhere(h);
    std::uint32_t sessions = cfg.ranks * (cfg.ranks - 1) / 2;
    std::cout << "launched " << cfg.ranks << " ranks on "
              << transport_name(cfg.transport) << ": " << sessions
              << " bidirectional sessions, barrier complete\n";
    return 0;
  }
  // socket modes: one process per rank, rendezvous over a static address
  // table from the config file
  if (o.config_path.empty())
    throw ConfigError(
        "socket launch needs --config with \"rank\" and \"addresses\"");
  std::ifstream in(o.config_path);
  nlohmann::json j;
  in >> j;
  if (!j.contains("rank") || !j.contains("addresses"))
    throw ConfigError("socket launch config needs \"rank\" and \"addresses\"");
  NodeId rank = j["rank"].get<NodeId>();
  std::vector<SocketAddress> table;
  for (const auto &e : j["addresses"])
    table.push_back(SocketAddress{e["host"].get<std::string>(),
                                  e["port"].get<std::uint16_t>()});
  std::uint32_t nranks = static_cast<std::uint32_t>(table.size());
  if (rank >= nranks)
    throw ConfigError("rank out of range for the address table");

  WallClock clock;
  PlatformConfig pc;
  Platform platform(pc, &clock);
  std::unique_ptr<Poe> poe;
  if (cfg.transport == Transport::Stream) {
    auto p = std::make_unique<StreamPoe>(rank, table[rank]);
    p->set_peers(table);
    poe = std::move(p);
  } else {
    auto p = std::make_unique<DatagramPoe>(rank, table[rank],
                                           cfg.loss_probability, 0, cfg.seed);
    p->set_peers(table);
    poe = std::move(p);
  }
  Scheduler sched;
  EngineConfig ec = cfg.engine;
  if (ec.recv_timeout_us == EngineConfig{}.recv_timeout_us)
    ec.recv_timeout_us = 100e3;
  CcloNode node(ec, rank, &platform, poe.get(), &clock, &sched);
  Communicator comm;
  comm.comm_id = 0;
  comm.size = nranks;
  comm.local_rank = rank;
  comm.algo.protocol = cfg.protocol;
  for (NodeId p = 0; p < nranks; ++p) {
    PeerEntry pe;
    pe.node = p;
    if (p != rank)
      pe.session = poe->open_session(p);
    comm.peers.push_back(pe);
  }
  node.add_communicator(std::move(comm));
  node.install_firmware(fw::collective_firmware());
  node.start();

  CcloRequest req;
  req.op = CollOp::BARRIER;
  auto h = node.call(req);
  auto give_up = std::chrono::steady_clock::now() + std::chrono::minutes(2);
  while (!h->done()) {
    sched.run_ready();
    node.pump_rx();
    sched.check_waiters();
    if (!sched.has_ready())
      std::this_thread::sleep_for(std::chrono::microseconds(50));
    if (std::chrono::steady_clock::now() > give_up)
      throw DeadlockError("launch barrier did not complete");
  }
  h->check();
  std::cout << "rank " << rank << " of " << nranks << " up on "
            << transport_name(cfg.transport) << ", barrier complete\n";
  return 0;
}

int cmd_bench_sendrecv(const CliOpts &o) {
  BenchConfig cfg = resolve_config(o);
  Harness h(cfg);
  auto rows = run_sendrecv(h);
  write_rows(rows, o);
  return 0;
}

int cmd_bench_collective(const CliOpts &o) {
  BenchConfig cfg = resolve_config(o);
  Harness h(cfg);
  auto rows = run_collective(h);
  write_rows(rows, o);
  return 0;
}

int cmd_demo_matvec(const CliOpts &o) {
  BenchConfig cfg = resolve_config(o);
  constexpr double kTol = 1e-5;
  std::vector<ResultRow> rows;
  bool ok = true;

  auto report = [&](const std::string &name, const MatvecResult &r,
                    double tol) {
    bool pass = r.residual <= tol;
    ok = ok && pass;
    std::cout << name << ": residual " << std::scientific
              << std::setprecision(3) << r.residual << " ("
              << (pass ? "ok" : "FAIL") << "), " << std::fixed
              << r.elapsed_us << " us\n"
              << std::defaultfloat << std::setprecision(6);
    ResultRow row;
    row.op = name;
    row.algorithm = "reduce";
    row.protocol = protocol_name(cfg.protocol);
    row.transport = transport_name(cfg.transport);
    row.ranks = cfg.ranks;
    row.size_bytes = 0;
    row.mean_us = r.elapsed_us;
    row.median_us = r.elapsed_us;
    row.p99_us = r.elapsed_us;
    rows.push_back(row);
  };

  {
    // identity: the distributed product must reproduce the vector exactly
    Harness h(cfg);
    std::uint32_t n = 256;
    std::vector<float> ident(static_cast<std::size_t>(n) * n, 0.0f);
    for (std::uint32_t i = 0; i < n; ++i)
      ident[static_cast<std::size_t>(i) * n + i] = 1.0f;
    std::vector<float> x(n);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto &v : x)
      v = d(rng);
    auto r = run_matvec(h, ident, x, n, n, MatvecPartition::Column);
    bool exact = r.y == x;
    ok = ok && exact;
    std::cout << "matvec-identity: " << (exact ? "exact" : "FAIL") << "\n";
  }
  {
    Harness h(cfg);
    auto a = bench::detail::random_matrix(256, 256, cfg.seed + 1);
    std::vector<float> x(256);
    std::mt19937_64 rng(cfg.seed + 2);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto &v : x)
      v = d(rng);
    auto r = run_matvec(h, a, x, 256, 256, MatvecPartition::Column);
    report("matvec-column", r, kTol);
  }
  {
    std::uint32_t g = 0;
    while ((g + 1) * (g + 1) <= cfg.ranks)
      ++g;
    if (g >= 2 && g * g == cfg.ranks) {
      Harness h(cfg);
      auto a = bench::detail::random_matrix(128, 128, cfg.seed + 3);
      std::vector<float> x(128);
      std::mt19937_64 rng(cfg.seed + 4);
      std::uniform_real_distribution<float> d(-1.0f, 1.0f);
      for (auto &v : x)
        v = d(rng);
      auto r =
          run_matvec(h, a, x, 128, 128, MatvecPartition::Checkerboard, g, g);
      report("matvec-checkerboard", r, kTol);
    } else {
      std::cout << "matvec-checkerboard: skipped (ranks is not a square)\n";
    }
  }
  if (!o.csv_path.empty())
    emit_csv(rows, o.csv_path);
  return ok ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"cclo-sim: collective offload engine and cluster simulator"};
  app.require_subcommand(1);
  CliOpts o;

  CLI::App *launch = app.add_subcommand("launch", "set up a cluster");
  add_common_flags(launch, o);

  CLI::App *bench_cmd = app.add_subcommand("bench", "microbenchmarks");
  bench_cmd->require_subcommand(1);
  CLI::App *sendrecv =
      bench_cmd->add_subcommand("sendrecv", "rank0 -> rank1 throughput");
  add_common_flags(sendrecv, o);
  CLI::App *collective =
      bench_cmd->add_subcommand("collective", "collective latency sweep");
  add_common_flags(collective, o);

  CLI::App *demo = app.add_subcommand("demo", "demo workloads");
  demo->require_subcommand(1);
  CLI::App *matvec = demo->add_subcommand(
      "matvec", "distributed matrix-vector multiplication");
  add_common_flags(matvec, o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (launch->parsed())
      return cmd_launch(o);
    if (sendrecv->parsed())
      return cmd_bench_sendrecv(o);
    if (collective->parsed())
      return cmd_bench_collective(o);
    if (matvec->parsed())
      return cmd_demo_matvec(o);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
