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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cclo {

using Bytes = std::vector<std::uint8_t>;

using NodeId = std::uint32_t;

/// Base class for all errors raised by the library.
class CcloError : public std::runtime_error {
public:
  explicit CcloError(const std::string &what) : std::runtime_error(what) {}
};

class ConfigError : public CcloError {
public:
  using CcloError::CcloError;
};

class InvariantError : public CcloError {
public:
  using CcloError::CcloError;
};

enum class DecodeFailure { ShortInput, BadMagic, BadVersion, BadMsgType };

class DecodeError : public CcloError {
public:
  DecodeError(DecodeFailure kind, const std::string &what)
      : CcloError(what), kind_(kind) {}
  DecodeFailure kind() const { return kind_; }

private:
  DecodeFailure kind_;
};

class ConnectionError : public CcloError {
public:
  using CcloError::CcloError;
};

class RemoteAccessError : public CcloError {
public:
  using CcloError::CcloError;
};

class StagingRequiredError : public CcloError {
public:
  using CcloError::CcloError;
};

class DeadlockError : public CcloError {
public:
  using CcloError::CcloError;
};

class TimeoutError : public CcloError {
public:
  using CcloError::CcloError;
};

// Little-endian scalar packing used by the wire format and the socket framing.
inline void put_u8(Bytes &b, std::uint8_t v) { b.push_back(v); }

inline void put_u16(Bytes &b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(Bytes &b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(Bytes &b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint8_t get_u8(const std::uint8_t *p) { return p[0]; }

inline std::uint16_t get_u16(const std::uint8_t *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const std::uint8_t *p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | p[i];
  return v;
}

inline std::uint64_t get_u64(const std::uint8_t *p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | p[i];
  return v;
}

} // namespace cclo
