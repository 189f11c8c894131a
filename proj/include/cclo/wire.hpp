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
#include <cstring>
#include <map>

#include "cclo/common.hpp"

// Message framing: the 48-byte signature every message carries on the wire,
// MTU segmentation, and reassembly of interleaved segments.

namespace cclo::wire {

enum class MsgType : std::uint8_t {
  EAGER_MSG = 0,
  RNDZ_INIT = 1,
  RNDZ_MSG = 2,
  RNDZ_DONE = 3,
};

inline const char *msg_type_name(MsgType t) {
  switch (t) {
  case MsgType::EAGER_MSG:
    return "EAGER_MSG";
  case MsgType::RNDZ_INIT:
    return "RNDZ_INIT";
  case MsgType::RNDZ_MSG:
    return "RNDZ_MSG";
  case MsgType::RNDZ_DONE:
    return "RNDZ_DONE";
  }
  return "?";
}

constexpr std::uint32_t kMagic = 0x4143434C;
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 48;
// Flag bit 0: payload targets a kernel stream port rather than memory.
constexpr std::uint16_t kFlagStreamTarget = 0x1;

struct MessageSignature {
  std::uint8_t version = kVersion;
  MsgType msg_type = MsgType::EAGER_MSG;
  std::uint16_t flags = 0;
  std::uint32_t comm_id = 0;
  std::uint32_t src_rank = 0;
  std::uint32_t dst_rank = 0;
  std::uint32_t tag = 0;
  std::uint32_t seq = 0;
  std::uint64_t payload_len = 0;
  // Virtual address on the receiving node; meaningful only for RNDZ_INIT
  // (the advertised result buffer) and RNDZ_MSG (the write target).
  std::uint64_t remote_addr = 0;

  bool operator==(const MessageSignature &) const = default;
};

inline void check_signature(const MessageSignature &sig) {
  if (sig.msg_type == MsgType::EAGER_MSG || sig.msg_type == MsgType::RNDZ_DONE) {
    if (sig.remote_addr != 0)
      throw InvariantError("remote_addr must be 0 for " +
                           std::string(msg_type_name(sig.msg_type)));
  }
}

inline Bytes encode_header(const MessageSignature &sig) {
  check_signature(sig);
  Bytes out;
  out.reserve(kHeaderSize);
  put_u32(out, kMagic);
  put_u8(out, sig.version);
  put_u8(out, static_cast<std::uint8_t>(sig.msg_type));
  put_u16(out, sig.flags);
  put_u32(out, sig.comm_id);
  put_u32(out, sig.src_rank);
  put_u32(out, sig.dst_rank);
  put_u32(out, sig.tag);
  put_u32(out, sig.seq);
  put_u64(out, sig.payload_len);
  put_u64(out, sig.remote_addr);
  put_u32(out, 0); // pad
  return out;
}

inline MessageSignature decode_header(const std::uint8_t *p, std::size_t len) {
  if (len < kHeaderSize)
    throw DecodeError(DecodeFailure::ShortInput,
                      "header requires 48 bytes, got " + std::to_string(len));
  if (get_u32(p) != kMagic)
    throw DecodeError(DecodeFailure::BadMagic, "bad magic");
  MessageSignature sig;
  sig.version = get_u8(p + 4);
  if (sig.version != kVersion)
    throw DecodeError(DecodeFailure::BadVersion,
                      "unknown version " + std::to_string(sig.version));
  std::uint8_t mt = get_u8(p + 5);
  if (mt > static_cast<std::uint8_t>(MsgType::RNDZ_DONE))
    throw DecodeError(DecodeFailure::BadMsgType,
                      "unknown msg_type " + std::to_string(mt));
  sig.msg_type = static_cast<MsgType>(mt);
  sig.flags = get_u16(p + 6);
  sig.comm_id = get_u32(p + 8);
  sig.src_rank = get_u32(p + 12);
  sig.dst_rank = get_u32(p + 16);
  sig.tag = get_u32(p + 20);
  sig.seq = get_u32(p + 24);
  sig.payload_len = get_u64(p + 28);
  sig.remote_addr = get_u64(p + 36);
  return sig;
}

inline MessageSignature decode_header(const Bytes &b) {
  return decode_header(b.data(), b.size());
}

struct Segment {
  std::uint64_t msg_id = 0;
  std::uint64_t offset = 0;
  std::uint32_t seg_len = 0;
  bool last = false;
  Bytes body;
};

// Subheader prepended to each datagram: msg_id, offset, seg_len, last.
constexpr std::size_t kSegmentSubheaderSize = 24;

inline Bytes encode_segment_subheader(const Segment &seg) {
  Bytes out;
  out.reserve(kSegmentSubheaderSize);
  put_u64(out, seg.msg_id);
  put_u64(out, seg.offset);
  put_u32(out, seg.seg_len);
  put_u32(out, seg.last ? 1 : 0);
  return out;
}

inline Segment decode_segment_subheader(const std::uint8_t *p, std::size_t len) {
  if (len < kSegmentSubheaderSize)
    throw DecodeError(DecodeFailure::ShortInput, "segment subheader too short");
  Segment seg;
  seg.msg_id = get_u64(p);
  seg.offset = get_u64(p + 8);
  seg.seg_len = get_u32(p + 16);
  seg.last = get_u32(p + 20) != 0;
  return seg;
}

/// Splits a payload into MTU-sized segments covering [0, payload_len) in
/// order. A zero-length payload yields a single empty segment.
inline std::vector<Segment> segment_message(const MessageSignature &sig,
                                            const std::uint8_t *payload,
                                            std::uint64_t payload_len,
                                            std::uint32_t mtu_payload,
                                            std::uint64_t msg_id = 0) {
  if (payload_len != sig.payload_len)
    throw InvariantError("payload length does not match signature");
  if (mtu_payload < 1)
    throw InvariantError("mtu_payload must be >= 1");
  std::vector<Segment> out;
  std::uint64_t off = 0;
  do {
    Segment seg;
    seg.msg_id = msg_id;
    seg.offset = off;
    seg.seg_len = static_cast<std::uint32_t>(
        std::min<std::uint64_t>(mtu_payload, payload_len - off));
    seg.body.assign(payload + off, payload + off + seg.seg_len);
    off += seg.seg_len;
    seg.last = off == payload_len;
    out.push_back(std::move(seg));
  } while (off < payload_len);
  return out;
}

inline std::vector<Segment> segment_message(const MessageSignature &sig,
                                            const Bytes &payload,
                                            std::uint32_t mtu_payload,
                                            std::uint64_t msg_id = 0) {
  return segment_message(sig, payload.data(), payload.size(), mtu_payload,
                         msg_id);
}

enum class FeedResult { Incomplete, Complete };

/// Reassembles one message from its segments. Duplicates (identical ranges)
/// are idempotent; partial overlaps and out-of-bounds ranges are errors.
class ReassemblyState {
public:
  explicit ReassemblyState(MessageSignature sig)
      : sig_(std::move(sig)), buffer_(sig_.payload_len) {}

  FeedResult feed(const Segment &seg) {
    if (seg.body.size() != seg.seg_len)
      throw InvariantError("segment body/seg_len mismatch");
    if (seg.offset + seg.seg_len > sig_.payload_len)
      throw InvariantError("segment range exceeds payload_len");
    if (seg.seg_len > 0) {
      auto it = received_.find(seg.offset);
      if (it != received_.end()) {
        if (it->second != seg.seg_len)
          throw InvariantError("overlapping segment with different length");
        // exact duplicate: idempotent
        return result();
      }
      // reject partial overlap with any neighbour
      auto next = received_.upper_bound(seg.offset);
      if (next != received_.end() && seg.offset + seg.seg_len > next->first)
        throw InvariantError("segment overlaps a later range");
      if (next != received_.begin()) {
        auto prev = std::prev(next);
        if (prev->first + prev->second > seg.offset)
          throw InvariantError("segment overlaps an earlier range");
      }
      std::memcpy(buffer_.data() + seg.offset, seg.body.data(), seg.seg_len);
      received_.emplace(seg.offset, seg.seg_len);
      bytes_done_ += seg.seg_len;
    }
    return result();
  }

  bool complete() const { return bytes_done_ == sig_.payload_len; }
  std::uint64_t bytes_done() const { return bytes_done_; }
  const MessageSignature &signature() const { return sig_; }
  const Bytes &buffer() const { return buffer_; }
  Bytes take_buffer() { return std::move(buffer_); }

private:
  FeedResult result() const {
    return complete() ? FeedResult::Complete : FeedResult::Incomplete;
  }

  MessageSignature sig_;
  std::map<std::uint64_t, std::uint32_t> received_; // offset -> len
  std::uint64_t bytes_done_ = 0;
  Bytes buffer_;
};

} // namespace cclo::wire
