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

#include <chrono>

namespace cclo {

/// Time source shared by the transport, platform cost accounting and the
/// benchmark harness. Virtual time is used by the in-process fabric; the
/// socket backends report wall-clock time instead.
class Clock {
public:
  virtual ~Clock() = default;
  virtual double now_us() const = 0;
  /// Charges a modeled cost. A no-op on wall clocks, where durations are
  /// measured rather than modeled.
  virtual void advance_us(double us) = 0;
  /// Catches up to an absolute timestamp (event arrival). No-op on wall
  /// clocks and for timestamps in the past.
  virtual void advance_to(double t_us) = 0;
  virtual bool is_virtual() const = 0;
};

class VirtualClock : public Clock {
public:
  double now_us() const override { return now_; }
  void advance_us(double us) override {
    if (us > 0)
      now_ += us;
  }
  void advance_to(double t_us) override {
    if (t_us > now_)
      now_ = t_us;
  }
  bool is_virtual() const override { return true; }

private:
  double now_ = 0.0;
};

class WallClock : public Clock {
public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double now_us() const override {
    auto d = std::chrono::steady_clock::now() - start_;
    return std::chrono::duration<double, std::micro>(d).count();
  }
  void advance_us(double) override {}
  void advance_to(double) override {}
  bool is_virtual() const override { return false; }

private:
  std::chrono::steady_clock::time_point start_;
};

} // namespace cclo
