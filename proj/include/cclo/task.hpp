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

#include <coroutine>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "cclo/clock.hpp"
#include "cclo/common.hpp"

// Cooperative single-threaded tasking. Engine stages and firmware procedures
// run as coroutines scheduled by one Scheduler per process; suspension points
// are condition waits which the driver loop re-evaluates after every
// delivered event. Execution order is fully deterministic.

namespace cclo {

class Task {
public:
  struct promise_type;
  using Handle = std::coroutine_handle<promise_type>;

  struct promise_type {
    std::coroutine_handle<> continuation;
    std::exception_ptr error;
    bool finished = false;

    Task get_return_object() { return Task{Handle::from_promise(*this)}; }
    std::suspend_always initial_suspend() noexcept { return {}; }

    struct FinalAwaiter {
      bool await_ready() noexcept { return false; }
      std::coroutine_handle<> await_suspend(Handle h) noexcept {
        h.promise().finished = true;
        if (h.promise().continuation)
          return h.promise().continuation;
        return std::noop_coroutine();
      }
      void await_resume() noexcept {}
    };
    FinalAwaiter final_suspend() noexcept { return {}; }
    void return_void() {}
    void unhandled_exception() { error = std::current_exception(); }
  };

  Task() = default;
  explicit Task(Handle h) : h_(h) {}
  Task(Task &&o) noexcept : h_(std::exchange(o.h_, {})) {}
  Task &operator=(Task &&o) noexcept {
    if (this != &o) {
      destroy();
      h_ = std::exchange(o.h_, {});
    }
    return *this;
  }
  Task(const Task &) = delete;
  Task &operator=(const Task &) = delete;
  ~Task() { destroy(); }

  bool valid() const { return static_cast<bool>(h_); }
  bool done() const { return !h_ || h_.promise().finished; }

  void rethrow_if_failed() const {
    if (h_ && h_.promise().error)
      std::rethrow_exception(h_.promise().error);
  }

  // co_await task: starts the child, resumes the parent when it finishes.
  bool await_ready() const { return done(); }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> cont) {
    h_.promise().continuation = cont;
    return h_;
  }
  void await_resume() { rethrow_if_failed(); }

  Handle handle() const { return h_; }

private:
  void destroy() {
    if (h_) {
      h_.destroy();
      h_ = {};
    }
  }
  Handle h_;
};

constexpr double kNoDeadline = std::numeric_limits<double>::infinity();

class Scheduler {
public:
  struct UntilAwaiter {
    Scheduler *sched;
    std::function<bool()> pred;
    double deadline_us;
    Clock *clock; // deadline is read against this (node-local) clock
    bool timed_out = false;

    bool await_ready() { return pred(); }
    void await_suspend(std::coroutine_handle<> h) {
      sched->waiters_.push_back(
          Waiter{std::move(pred), deadline_us, clock, h, this});
    }
    /// false if the wait ended by deadline rather than the predicate.
    bool await_resume() { return !timed_out; }
  };

  /// Suspend until pred() holds.
  UntilAwaiter until(std::function<bool()> pred) {
    return UntilAwaiter{this, std::move(pred), kNoDeadline, nullptr};
  }

  /// Suspend until pred() holds or clock reaches deadline_us.
  UntilAwaiter until_deadline(std::function<bool()> pred, double deadline_us,
                              Clock *clock) {
    return UntilAwaiter{this, std::move(pred), deadline_us, clock};
  }

  /// Launch a root task. The returned handle outlives the scheduler's own
  /// reference, so completion can be joined and errors inspected later.
  std::shared_ptr<Task> spawn(Task &&t) {
    auto sp = std::make_shared<Task>(std::move(t));
    ready_.push_back(sp->handle());
    roots_.push_back(sp);
    return sp;
  }

  void post(std::coroutine_handle<> h) { ready_.push_back(h); }

  /// Runs every ready coroutine to its next suspension. Returns whether
  /// anything ran.
  bool run_ready() {
    bool ran = false;
    while (!ready_.empty()) {
      auto h = ready_.front();
      ready_.pop_front();
      ran = true;
      h.resume();
    }
    if (ran)
      sweep_roots();
    return ran;
  }

  /// Re-evaluates waiter predicates (in registration order) against the
  /// current state; satisfied or expired waiters become ready.
  bool check_waiters() {
    bool woke = false;
    for (std::size_t i = 0; i < waiters_.size();) {
      Waiter &w = waiters_[i];
      bool fire = false;
      if (w.pred()) {
        fire = true;
      } else if (w.clock && w.clock->now_us() >= w.deadline_us) {
        w.awaiter->timed_out = true;
        fire = true;
      }
      if (fire) {
        ready_.push_back(w.handle);
        waiters_.erase(waiters_.begin() + static_cast<std::ptrdiff_t>(i));
        woke = true;
      } else {
        ++i;
      }
    }
    return woke;
  }

  /// Earliest armed deadline and the clock it is armed against; used by the
  /// virtual-time driver to jump time when no events are pending.
  std::pair<double, Clock *> earliest_deadline() const {
    double d = kNoDeadline;
    Clock *c = nullptr;
    for (const auto &w : waiters_)
      if (w.clock && w.deadline_us < d) {
        d = w.deadline_us;
        c = w.clock;
      }
    return {d, c};
  }

  bool has_ready() const { return !ready_.empty(); }
  std::size_t waiting_count() const { return waiters_.size(); }

private:
  struct Waiter {
    std::function<bool()> pred;
    double deadline_us;
    Clock *clock;
    std::coroutine_handle<> handle;
    UntilAwaiter *awaiter;
  };

  void sweep_roots() {
    for (std::size_t i = 0; i < roots_.size();) {
      if (roots_[i]->done()) {
        // Unjoined root failures are programming errors; joined tasks report
        // their exception at the join site instead.
        if (roots_[i].use_count() == 1)
          roots_[i]->rethrow_if_failed();
        roots_.erase(roots_.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        ++i;
      }
    }
  }

  std::deque<std::coroutine_handle<>> ready_;
  std::vector<Waiter> waiters_;
  std::vector<std::shared_ptr<Task>> roots_;
};

/// Joins a set of spawned root tasks; rethrows the first failure.
inline Task join_all(Scheduler &sched,
                     std::vector<std::shared_ptr<Task>> tasks) {
  co_await sched.until([&tasks] {
    for (const auto &t : tasks)
      if (!t->done())
        return false;
    return true;
  });
  for (const auto &t : tasks)
    t->rethrow_if_failed();
}

} // namespace cclo
