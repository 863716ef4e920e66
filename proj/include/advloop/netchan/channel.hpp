#pragma once

#include <cstdint>
#include <queue>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/netchan/condition.hpp"
#include "advloop/netchan/wire.hpp"

namespace advloop {

/// What happened to one send.
struct SendRecord {
  std::uint32_t seq = 0;
  MessageType type = MessageType::frame;
  std::int64_t sent_us = 0;
  bool dropped = false;
  std::int64_t deliver_us = -1;  // -1 when dropped
};

/// Seeded one-way impairment channel on an integer microsecond clock.
///
/// Every send draws two uniforms from the channel stream, the loss draw and
/// then the jitter draw, whether or not the message is dropped, so the
/// schedule of message k depends only on the seed and k.
class Channel {
 public:
  explicit Channel(const NetworkCondition& c) : cond_(c), rng_(c.seed) { c.validate(); }

  const NetworkCondition& condition() const { return cond_; }

  /// Changes delay/jitter/loss from now on; the random stream continues.
  void set_condition(const NetworkCondition& c) {
    c.validate();
    cond_ = c;
  }

  SendRecord send(WireMessage msg, std::int64_t now_us) {
    if (now_us < last_now_) fail(ErrorKind::invalid_argument, "channel: clock went backwards");
    last_now_ = now_us;
    const double u_loss = rng_.uniform();
    const double u_jit = rng_.uniform();
    SendRecord rec{msg.seq, msg.type, now_us, false, -1};
    if (u_loss < cond_.loss_prob) {
      rec.dropped = true;
    } else {
      const std::int64_t j = cond_.jitter_us();
      const std::int64_t offset = j > 0 ? std::llround((2.0 * u_jit - 1.0) * static_cast<double>(j)) : 0;
      rec.deliver_us = now_us + cond_.delay_us() + offset;
      queue_.push({rec.deliver_us, msg.seq, counter_++, std::move(msg)});
    }
    history_.push_back(rec);
    return rec;
  }

  /// Removes and returns every message due at `now_us`, in delivery order
  /// (ties: lower seq, then send order).
  std::vector<WireMessage> poll(std::int64_t now_us) {
    if (now_us < last_now_) fail(ErrorKind::invalid_argument, "channel: clock went backwards");
    last_now_ = now_us;
    std::vector<WireMessage> out;
    while (!queue_.empty() && queue_.top().deliver_us <= now_us) {
      out.push_back(std::move(const_cast<Pending&>(queue_.top()).msg));
      queue_.pop();
    }
    return out;
  }

  std::size_t in_flight() const { return queue_.size(); }
  const std::vector<SendRecord>& history() const { return history_; }

 private:
  struct Pending {
    std::int64_t deliver_us;
    std::uint32_t seq;
    std::uint64_t order;
    WireMessage msg;
  };
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      if (a.deliver_us != b.deliver_us) return a.deliver_us > b.deliver_us;
      if (a.seq != b.seq) return a.seq > b.seq;
      return a.order > b.order;
    }
  };

  NetworkCondition cond_;
  Rng rng_;
  std::priority_queue<Pending, std::vector<Pending>, Later> queue_;
  std::vector<SendRecord> history_;
  std::int64_t last_now_ = INT64_MIN;
  std::uint64_t counter_ = 0;
};

}  // namespace advloop
