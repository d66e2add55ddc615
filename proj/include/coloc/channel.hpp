// Broadcast V2V channel: per-copy loss, random delay, duplication and
// (optionally) reordering, with receiver-side deduplication.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <queue>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "coloc/wire.hpp"

namespace coloc {

struct ChannelConfig {
  double loss_prob = 0.0;
  double duplicate_prob = 0.0;
  double delay_base = 0.005;    // s
  double delay_jitter = 0.035;  // s, uniform on [base, base + jitter]
  bool reorder = true;          // false: FIFO per sender/receiver link
  std::uint64_t seed = 1;

  void validate() const;
};

struct DeliveryRecord {
  double send_t = 0.0;
  double recv_t = 0.0;  // scheduled arrival; meaningless when dropped
  VehicleId sender = 0;
  VehicleId receiver = 0;
  MessageKind kind = MessageKind::MapMeasurement;
  std::uint32_t seq = 0;
  bool dropped = false;
};

struct ChannelStats {
  std::uint64_t copies = 0;      // dropped + delivered + pending
  std::uint64_t dropped = 0;
  std::uint64_t delivered = 0;   // reached the receiver, duplicates included
  std::uint64_t suppressed = 0;  // delivered copies removed by dedup
  std::uint64_t pending = 0;
};

class Channel {
 public:
  Channel(ChannelConfig config, std::vector<VehicleId> members);

  /// Schedules a copy for every member except the sender.
  void broadcast(const WireMessage& msg, double send_time);

  /// Every copy for `receiver` due at or before `now`, in arrival order,
  /// first copy of each (sender, seq) only.
  std::vector<WireMessage> poll(VehicleId receiver, double now);

  const ChannelStats& stats(VehicleId receiver) const;
  ChannelStats total_stats() const;
  const std::vector<DeliveryRecord>& trace() const { return trace_; }
  void set_tracing(bool on) { tracing_ = on; }
  /// send_t,recv_t,sender,receiver,kind,seq,dropped
  void write_trace_csv(std::ostream& out) const;
  const ChannelConfig& config() const { return config_; }

 private:
  struct InFlight {
    double recv_t;
    std::uint64_t order;
    std::shared_ptr<const std::vector<std::uint8_t>> frame;

    bool operator>(const InFlight& o) const {
      return recv_t != o.recv_t ? recv_t > o.recv_t : order > o.order;
    }
  };
  using Queue = std::priority_queue<InFlight, std::vector<InFlight>, std::greater<>>;

  void schedule(const WireMessage& msg, VehicleId receiver, double send_time,
                const std::shared_ptr<const std::vector<std::uint8_t>>& frame);

  ChannelConfig config_;
  std::vector<VehicleId> members_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::map<VehicleId, Queue> queues_;
  std::map<VehicleId, ChannelStats> stats_;
  std::map<VehicleId, std::set<std::pair<VehicleId, std::uint32_t>>> seen_;
  std::map<std::pair<VehicleId, VehicleId>, double> link_last_;
  std::uint64_t order_ = 0;
  bool tracing_ = true;
  std::vector<DeliveryRecord> trace_;
};

}  // namespace coloc
