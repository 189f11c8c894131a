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

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "cclo/transport.hpp"

// Real-socket POE backends. The stream backend speaks length-prefixed frames
// (u32 little-endian length, then frame bytes) over TCP; the datagram backend
// sends one subheadered segment per UDP datagram, with optional seeded loss
// and reordering. Both are wall-clock transports: durations are measured,
// not modeled. All sockets are nonblocking so any number of endpoints can be
// driven from a single thread.

namespace cclo {

struct SocketAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0; // 0 = kernel-assigned, read back after bind
};

namespace detail {

inline sockaddr_in to_sockaddr(const SocketAddress &a) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(a.port);
  if (::inet_pton(AF_INET, a.host.c_str(), &sa.sin_addr) != 1)
    throw ConnectionError("bad IPv4 address: " + a.host);
  return sa;
}

inline void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
    throw ConnectionError("fcntl(O_NONBLOCK) failed");
}

inline std::string errno_str() { return std::strerror(errno); }

/// (ip, port) packed for address -> rank lookups.
inline std::uint64_t addr_key(const sockaddr_in &sa) {
  return (static_cast<std::uint64_t>(sa.sin_addr.s_addr) << 16) |
         ntohs(sa.sin_port);
}

} // namespace detail

/// Reliable in-order byte-stream backend. Connection setup follows a fixed
/// convention: the lower node id connects to the higher id's listener and
/// announces its rank in a 4-byte hello; a second hello claiming an already
/// connected rank is an error.
class StreamPoe : public Poe {
public:
  StreamPoe(NodeId self, SocketAddress bind_addr, double connect_timeout_s = 10.0)
      : self_(self), connect_timeout_s_(connect_timeout_s) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
      throw ConnectionError("socket: " + detail::errno_str());
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa = detail::to_sockaddr(bind_addr);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr *>(&sa), sizeof sa) < 0)
      throw ConnectionError("bind " + bind_addr.host + ":" +
                            std::to_string(bind_addr.port) + ": " +
                            detail::errno_str());
    if (::listen(listen_fd_, 64) < 0)
      throw ConnectionError("listen: " + detail::errno_str());
    socklen_t slen = sizeof sa;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr *>(&sa), &slen);
    local_ = bind_addr;
    local_.port = ntohs(sa.sin_port);
    detail::set_nonblocking(listen_fd_);
  }

  ~StreamPoe() override {
    for (auto &[peer, c] : conns_)
      if (c.fd >= 0)
        ::close(c.fd);
    for (auto &p : pending_)
      ::close(p.fd);
    ::close(listen_fd_);
  }

  StreamPoe(const StreamPoe &) = delete;
  StreamPoe &operator=(const StreamPoe &) = delete;

  const SocketAddress &local_address() const { return local_; }
  void set_peers(std::vector<SocketAddress> table) { peers_ = std::move(table); }

  SessionId open_session(NodeId peer) override {
    if (peer >= peers_.size() || peer == self_)
      throw ConnectionError("unknown peer node " + std::to_string(peer));
    SessionId id{peer};
    if (conns_.count(peer))
      return id;
    Conn c;
    if (self_ < peer) {
      c.fd = connect_with_retry(peers_[peer]);
      int one = 1;
      ::setsockopt(c.fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      detail::set_nonblocking(c.fd);
      Bytes hello;
      put_u32(hello, self_);
      c.txq.push_back(std::move(hello));
    }
    conns_.emplace(peer, std::move(c));
    return id;
  }

  void transmit(SessionId session, Frame frame) override {
    if (frame.kind != FrameKind::HeaderedMessage)
      throw ConfigError("stream transport carries headered messages only");
    Conn &c = conns_.at(session.value);
    Bytes body = frame.header_bytes;
    for (const auto &seg : frame.segments)
      body.insert(body.end(), seg.body.begin(), seg.body.end());
    Bytes out;
    out.reserve(4 + body.size());
    put_u32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    bytes_on_wire_ += out.size();
    c.txq.push_back(std::move(out));
    pump();
  }

  std::optional<RxEvent> poll_rx() override {
    pump();
    if (events_.empty())
      return std::nullopt;
    RxEvent ev = std::move(events_.front());
    events_.pop_front();
    return ev;
  }

  bool rdma_capable() const override { return false; }
  bool lossy() const override { return false; }
  NodeId peer_of(SessionId session) const override { return session.value; }
  std::uint64_t bytes_on_wire() const override { return bytes_on_wire_; }

  /// Drives accepts, writes and reads; harmless to call when idle.
  void pump() {
    accept_new();
    drain_hellos();
    for (auto &[peer, c] : conns_) {
      flush(c);
      read_frames(peer, c);
    }
  }

private:
  struct Conn {
    int fd = -1; // -1 until the passive side's hello arrives
    std::deque<Bytes> txq;
    std::size_t tx_off = 0;
    Bytes rxbuf;
  };
  struct Pending {
    int fd;
    Bytes buf;
  };

  int connect_with_retry(const SocketAddress &addr) {
    sockaddr_in sa = detail::to_sockaddr(addr);
    auto give_up = std::chrono::steady_clock::now() +
                   std::chrono::duration<double>(connect_timeout_s_);
    for (;;) {
      int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0)
        throw ConnectionError("socket: " + detail::errno_str());
      if (::connect(fd, reinterpret_cast<sockaddr *>(&sa), sizeof sa) == 0)
        return fd;
      int err = errno;
      ::close(fd);
      // the peer process may still be starting up
      if ((err == ECONNREFUSED || err == ETIMEDOUT || err == EAGAIN) &&
          std::chrono::steady_clock::now() < give_up) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        continue;
      }
      throw ConnectionError("connect " + addr.host + ":" +
                            std::to_string(addr.port) + ": " +
                            std::strerror(err));
    }
  }

  void accept_new() {
    for (;;) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK)
          return;
        throw ConnectionError("accept: " + detail::errno_str());
      }
      detail::set_nonblocking(fd);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      pending_.push_back(Pending{fd, {}});
    }
  }

  void drain_hellos() {
    for (std::size_t i = 0; i < pending_.size();) {
      Pending &p = pending_[i];
      read_into(p.fd, p.buf);
      if (p.buf.size() < 4) {
        ++i;
        continue;
      }
      NodeId rank = get_u32(p.buf.data());
      if (rank >= peers_.size() || rank == self_) {
        ::close(p.fd);
        throw ConnectionError("hello from invalid rank " +
                              std::to_string(rank));
      }
      Conn &c = conns_[rank]; // passive side may see the hello first
      if (c.fd >= 0) {
        ::close(p.fd);
        throw ConnectionError("duplicate connection for rank " +
                              std::to_string(rank));
      }
      c.fd = p.fd;
      c.rxbuf.assign(p.buf.begin() + 4, p.buf.end());
      pending_.erase(pending_.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }

  void flush(Conn &c) {
    if (c.fd < 0)
      return;
    while (!c.txq.empty()) {
      const Bytes &buf = c.txq.front();
      while (c.tx_off < buf.size()) {
        ssize_t n = ::send(c.fd, buf.data() + c.tx_off, buf.size() - c.tx_off,
                           MSG_NOSIGNAL | MSG_DONTWAIT);
        if (n < 0) {
          if (errno == EAGAIN || errno == EWOULDBLOCK)
            return;
          throw ConnectionError("send: " + detail::errno_str());
        }
        c.tx_off += static_cast<std::size_t>(n);
      }
      c.txq.pop_front();
      c.tx_off = 0;
    }
  }

  /// Nonblocking read; appends whatever the kernel has.
  static void read_into(int fd, Bytes &buf) {
    if (fd < 0)
      return;
    std::uint8_t tmp[65536];
    for (;;) {
      ssize_t n = ::recv(fd, tmp, sizeof tmp, MSG_DONTWAIT);
      if (n > 0) {
        buf.insert(buf.end(), tmp, tmp + n);
        continue;
      }
      if (n == 0)
        return; // peer closed; leftover frames still parse
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        return;
      throw ConnectionError("recv: " + detail::errno_str());
    }
  }

  void read_frames(NodeId peer, Conn &c) {
    read_into(c.fd, c.rxbuf);
    std::size_t pos = 0;
    while (c.rxbuf.size() - pos >= 4) {
      std::uint32_t len = get_u32(c.rxbuf.data() + pos);
      if (c.rxbuf.size() - pos - 4 < len)
        break;
      const std::uint8_t *body = c.rxbuf.data() + pos + 4;
      RxEvent ev;
      ev.session = SessionId{peer};
      ev.src_node = peer;
      ev.kind = RxEventKind::MessageArrived;
      std::size_t hdr = std::min<std::size_t>(wire::kHeaderSize, len);
      ev.header_bytes.assign(body, body + hdr);
      // streams are contiguous per session, so the whole payload travels as
      // one synthesized segment
      wire::Segment seg;
      seg.msg_id = next_rx_msg_id_++;
      seg.offset = 0;
      seg.seg_len = static_cast<std::uint32_t>(len - hdr);
      seg.last = true;
      seg.body.assign(body + hdr, body + len);
      ev.len = seg.seg_len;
      ev.segments.push_back(std::move(seg));
      events_.push_back(std::move(ev));
      pos += 4 + len;
    }
    if (pos > 0)
      c.rxbuf.erase(c.rxbuf.begin(),
                    c.rxbuf.begin() + static_cast<std::ptrdiff_t>(pos));
  }

  NodeId self_;
  double connect_timeout_s_;
  int listen_fd_ = -1;
  SocketAddress local_;
  std::vector<SocketAddress> peers_;
  std::map<NodeId, Conn> conns_;
  std::vector<Pending> pending_;
  std::deque<RxEvent> events_;
  std::uint64_t next_rx_msg_id_ = 1;
  std::uint64_t bytes_on_wire_ = 0;
};

/// Unreliable datagram backend: one subheadered segment per datagram, seeded
/// loss injection, optional bounded reordering. No retransmission; losses
/// surface as missing segments and are handled by the engine's receive
/// timeout.
class DatagramPoe : public Poe {
public:
  DatagramPoe(NodeId self, SocketAddress bind_addr, double loss_probability = 0.0,
              std::uint32_t reorder_window = 0, std::uint64_t seed = 1)
      : self_(self), loss_(loss_probability), window_(reorder_window),
        rng_(seed * 0x9E3779B97F4A7C15ull + self + 1) {
    if (loss_ < 0.0 || loss_ > 1.0)
      throw ConfigError("loss probability must be in [0, 1]");
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0)
      throw ConnectionError("socket: " + detail::errno_str());
    // large bursts land before the single-threaded receiver gets to drain;
    // ask for generous socket buffers (best effort, the kernel may clamp)
    int bufsz = 32 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUFFORCE, &bufsz, sizeof bufsz);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &bufsz, sizeof bufsz);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &bufsz, sizeof bufsz);
    sockaddr_in sa = detail::to_sockaddr(bind_addr);
    if (::bind(fd_, reinterpret_cast<sockaddr *>(&sa), sizeof sa) < 0)
      throw ConnectionError("bind " + bind_addr.host + ":" +
                            std::to_string(bind_addr.port) + ": " +
                            detail::errno_str());
    socklen_t slen = sizeof sa;
    ::getsockname(fd_, reinterpret_cast<sockaddr *>(&sa), &slen);
    local_ = bind_addr;
    local_.port = ntohs(sa.sin_port);
    detail::set_nonblocking(fd_);
  }

  ~DatagramPoe() override { ::close(fd_); }
  DatagramPoe(const DatagramPoe &) = delete;
  DatagramPoe &operator=(const DatagramPoe &) = delete;

  const SocketAddress &local_address() const { return local_; }

  void set_peers(std::vector<SocketAddress> table) {
    peers_.clear();
    rank_by_addr_.clear();
    for (NodeId i = 0; i < table.size(); ++i) {
      sockaddr_in sa = detail::to_sockaddr(table[i]);
      peers_.push_back(sa);
      rank_by_addr_[detail::addr_key(sa)] = i;
    }
  }

  SessionId open_session(NodeId peer) override {
    if (peer >= peers_.size() || peer == self_)
      throw ConnectionError("unknown peer node " + std::to_string(peer));
    return SessionId{peer};
  }

  void transmit(SessionId session, Frame frame) override {
    if (frame.kind != FrameKind::HeaderedMessage)
      throw ConfigError("datagram transport carries headered messages only");
    NodeId peer = session.value;
    if (peer >= peers_.size())
      throw ConnectionError("transmit on unopened session");
    for (const auto &seg : frame.segments) {
      if (loss_ > 0.0 && loss_dist_(rng_) < loss_) {
        ++tx_dropped_;
        continue;
      }
      Bytes dgram = frame.header_bytes;
      Bytes sub = wire::encode_segment_subheader(seg);
      dgram.insert(dgram.end(), sub.begin(), sub.end());
      dgram.insert(dgram.end(), seg.body.begin(), seg.body.end());
      enqueue(peer, std::move(dgram));
    }
  }

  std::optional<RxEvent> poll_rx() override {
    flush_holdback();
    read_datagrams();
    if (events_.empty())
      return std::nullopt;
    RxEvent ev = std::move(events_.front());
    events_.pop_front();
    return ev;
  }

  bool rdma_capable() const override { return false; }
  bool lossy() const override { return true; }
  NodeId peer_of(SessionId session) const override { return session.value; }
  std::uint64_t bytes_on_wire() const override { return bytes_on_wire_; }
  std::uint64_t tx_dropped() const { return tx_dropped_; }

  /// Receiver-side drain without event dispatch; lets a co-located sender
  /// keep kernel queues shallow during bursts.
  void pump_rx_only() { read_datagrams(); }

  /// Called periodically mid-burst so co-located endpoints can drain.
  void set_drain_hook(std::function<void()> hook) {
    drain_hook_ = std::move(hook);
  }

private:
  void enqueue(NodeId peer, Bytes dgram) {
    if (window_ == 0) {
      send_now(peer, dgram);
      return;
    }
    holdback_.push_back({peer, std::move(dgram)});
    while (holdback_.size() > window_)
      send_random();
  }

  void send_random() {
    std::uniform_int_distribution<std::size_t> pick(0, holdback_.size() - 1);
    std::size_t i = pick(rng_);
    send_now(holdback_[i].first, holdback_[i].second);
    holdback_.erase(holdback_.begin() + static_cast<std::ptrdiff_t>(i));
  }

  void flush_holdback() {
    while (!holdback_.empty())
      send_random();
  }

  void send_now(NodeId peer, const Bytes &dgram) {
    for (;;) {
      ssize_t n = ::sendto(fd_, dgram.data(), dgram.size(), MSG_DONTWAIT,
                           reinterpret_cast<const sockaddr *>(&peers_[peer]),
                           sizeof(sockaddr_in));
      if (n >= 0)
        break;
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == ENOBUFS) {
        std::this_thread::sleep_for(std::chrono::microseconds(100));
        continue;
      }
      throw ConnectionError("sendto: " + detail::errno_str());
    }
    bytes_on_wire_ += dgram.size();
    if (drain_hook_ && ++sent_since_drain_ >= 16) {
      sent_since_drain_ = 0;
      drain_hook_();
    }
  }

  void read_datagrams() {
    std::uint8_t buf[65536];
    for (;;) {
      sockaddr_in from{};
      socklen_t flen = sizeof from;
      ssize_t n = ::recvfrom(fd_, buf, sizeof buf, MSG_DONTWAIT,
                             reinterpret_cast<sockaddr *>(&from), &flen);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK)
          return;
        throw ConnectionError("recvfrom: " + detail::errno_str());
      }
      auto it = rank_by_addr_.find(detail::addr_key(from));
      if (it == rank_by_addr_.end()) {
        ++stray_datagrams_;
        continue;
      }
      constexpr std::size_t kMin =
          wire::kHeaderSize + wire::kSegmentSubheaderSize;
      if (static_cast<std::size_t>(n) < kMin) {
        ++malformed_datagrams_;
        continue;
      }
      RxEvent ev;
      ev.session = SessionId{it->second};
      ev.src_node = it->second;
      ev.kind = RxEventKind::MessageArrived;
      ev.header_bytes.assign(buf, buf + wire::kHeaderSize);
      wire::Segment seg = wire::decode_segment_subheader(
          buf + wire::kHeaderSize, static_cast<std::size_t>(n) -
                                       wire::kHeaderSize);
      if (static_cast<std::size_t>(n) - kMin != seg.seg_len) {
        ++malformed_datagrams_;
        continue;
      }
      seg.body.assign(buf + kMin, buf + n);
      ev.len = seg.seg_len;
      ev.segments.push_back(std::move(seg));
      events_.push_back(std::move(ev));
    }
  }

  NodeId self_;
  double loss_;
  std::uint32_t window_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> loss_dist_{0.0, 1.0};
  int fd_ = -1;
  SocketAddress local_;
  std::vector<sockaddr_in> peers_;
  std::map<std::uint64_t, NodeId> rank_by_addr_;
  std::vector<std::pair<NodeId, Bytes>> holdback_;
  std::deque<RxEvent> events_;
  std::uint64_t bytes_on_wire_ = 0;
  std::uint64_t tx_dropped_ = 0;
  std::uint64_t stray_datagrams_ = 0;
  std::uint64_t malformed_datagrams_ = 0;
  std::function<void()> drain_hook_;
  std::uint32_t sent_since_drain_ = 0;
};

} // namespace cclo
