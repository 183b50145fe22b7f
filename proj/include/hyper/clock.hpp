#pragma once

#include <atomic>
#include <chrono>

namespace hyper {

// All scheduling time is expressed as milliseconds since an arbitrary,
// clock-specific epoch.
using Millis = std::chrono::milliseconds;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Millis now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Millis now() const override {
    return std::chrono::duration_cast<Millis>(
        std::chrono::system_clock::now().time_since_epoch());
  }
};

// Manually advanced clock for deterministic simulation and replay tests.
class SimClock final : public Clock {
 public:
  explicit SimClock(Millis start = Millis{0}) : now_(start.count()) {}
  Millis now() const override { return Millis{now_.load()}; }
  void advance(Millis by) { now_ += by.count(); }
  void set(Millis at) { now_ = at.count(); }

 private:
  std::atomic<long long> now_;
};

}  // namespace hyper
