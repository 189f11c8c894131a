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
#include <functional>

#include "cclo/common.hpp"

// Streaming arithmetic plugins: unary/binary operators applied to in-flight
// data. The function is selected by the routing tag carried on the plugin
// input stream, like any other NoC destination.

namespace cclo {

enum class DType : std::uint8_t { I32, I64, F32, F64 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
  case DType::I32:
  case DType::F32:
    return 4;
  case DType::I64:
  case DType::F64:
    return 8;
  }
  return 0;
}

inline const char *dtype_name(DType t) {
  switch (t) {
  case DType::I32:
    return "i32";
  case DType::I64:
    return "i64";
  case DType::F32:
    return "f32";
  case DType::F64:
    return "f64";
  }
  return "?";
}

enum class ReduceFn : std::uint8_t { SUM, MAX };

/// Routing tag ("dest field") on the plugin input stream; selects the
/// function applied to the data flowing through.
enum class PluginRoute : std::uint8_t { Identity = 0, Sum = 1, Max = 2 };

inline PluginRoute route_for(ReduceFn fn) {
  return fn == ReduceFn::SUM ? PluginRoute::Sum : PluginRoute::Max;
}

namespace detail {

template <typename T>
void apply_typed(PluginRoute route, const std::uint8_t *a,
                 const std::uint8_t *b, std::uint8_t *out, std::size_t bytes) {
  std::size_t n = bytes / sizeof(T);
  T va, vb;
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(&va, a + i * sizeof(T), sizeof(T));
    std::memcpy(&vb, b + i * sizeof(T), sizeof(T));
    T r = route == PluginRoute::Sum ? static_cast<T>(va + vb)
                                    : std::max(va, vb);
    std::memcpy(out + i * sizeof(T), &r, sizeof(T));
  }
}

} // namespace detail

inline void plugin_kernel(PluginRoute route, DType dtype,
                          const std::uint8_t *a, const std::uint8_t *b,
                          std::uint8_t *out, std::size_t bytes) {
  if (route == PluginRoute::Identity) {
    std::memcpy(out, a, bytes);
    return;
  }
  if (bytes % dtype_size(dtype) != 0)
    throw InvariantError("plugin input not a multiple of the element size");
  switch (dtype) {
  case DType::I32:
    detail::apply_typed<std::int32_t>(route, a, b, out, bytes);
    break;
  case DType::I64:
    detail::apply_typed<std::int64_t>(route, a, b, out, bytes);
    break;
  case DType::F32:
    detail::apply_typed<float>(route, a, b, out, bytes);
    break;
  case DType::F64:
    detail::apply_typed<double>(route, a, b, out, bytes);
    break;
  }
}

/// Pipelined binary plugin: operand chunks may arrive interleaved and in any
/// relative order; output is emitted as soon as both operands cover a prefix,
/// so results start flowing before the inputs end.
class BinaryPlugin {
public:
  using Sink = std::function<void(const std::uint8_t *, std::size_t)>;

  BinaryPlugin(PluginRoute route, DType dtype, Sink sink)
      : route_(route), dtype_(dtype), sink_(std::move(sink)) {}

  void feed_a(const std::uint8_t *data, std::size_t len) {
    a_.insert(a_.end(), data, data + len);
    pump();
  }
  void feed_b(const std::uint8_t *data, std::size_t len) {
    b_.insert(b_.end(), data, data + len);
    pump();
  }

  /// Both streams have ended; lengths must agree.
  void finish() {
    if (a_.size() != b_.size() || emitted_ != a_.size())
      throw InvariantError("plugin operand streams have mismatched lengths");
  }

  std::size_t emitted() const { return emitted_; }

private:
  void pump() {
    std::size_t elem = dtype_size(dtype_);
    std::size_t avail = std::min(a_.size(), b_.size());
    avail -= avail % elem;
    if (avail <= emitted_)
      return;
    std::size_t n = avail - emitted_;
    Bytes out(n);
    plugin_kernel(route_, dtype_, a_.data() + emitted_, b_.data() + emitted_,
                  out.data(), n);
    emitted_ = avail;
    sink_(out.data(), out.size());
  }

  PluginRoute route_;
  DType dtype_;
  Sink sink_;
  Bytes a_, b_;
  std::size_t emitted_ = 0;
};

} // namespace cclo
