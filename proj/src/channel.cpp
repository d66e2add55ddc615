#include "coloc/channel.hpp"

#include <algorithm>
#include <memory>
#include <ostream>
#include <stdexcept>

namespace coloc {

void ChannelConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(loss_prob)) throw std::invalid_argument("loss_prob must lie in [0, 1]");
  if (!prob(duplicate_prob)) throw std::invalid_argument("duplicate_prob must lie in [0, 1]");
  if (!(delay_base >= 0.0) || !(delay_jitter >= 0.0))
    throw std::invalid_argument("delays must be non-negative");
}

Channel::Channel(ChannelConfig config, std::vector<VehicleId> members)
    : config_(config), members_(std::move(members)), rng_(config.seed) {
  config_.validate();
  for (VehicleId id : members_) {
    queues_[id];
    stats_[id];
  }
}

void Channel::schedule(const WireMessage& msg, VehicleId receiver, double send_time,
                       const std::shared_ptr<const std::vector<std::uint8_t>>& frame) {
  auto& st = stats_[receiver];
  ++st.copies;
  DeliveryRecord rec{send_time, send_time, msg.sender, receiver, msg.kind(), msg.seq, false};
  // Draw both numbers unconditionally so the stream does not depend on outcomes.
  const double lost = unit_(rng_);
  const double delay = config_.delay_base + config_.delay_jitter * unit_(rng_);
  if (lost < config_.loss_prob) {
    ++st.dropped;
    rec.dropped = true;
  } else {
    double recv = send_time + delay;
    if (!config_.reorder) {
      double& last = link_last_[{msg.sender, receiver}];
      recv = std::max(recv, last);
      last = recv;
    }
    rec.recv_t = recv;
    queues_[receiver].push(InFlight{recv, order_++, frame});
    ++st.pending;
  }
  if (tracing_) trace_.push_back(rec);
}

void Channel::broadcast(const WireMessage& msg, double send_time) {
  auto frame = std::make_shared<const std::vector<std::uint8_t>>(encode(msg));
  for (VehicleId receiver : members_) {
    if (receiver == msg.sender) continue;
    schedule(msg, receiver, send_time, frame);
    if (unit_(rng_) < config_.duplicate_prob) schedule(msg, receiver, send_time, frame);
  }
}

std::vector<WireMessage> Channel::poll(VehicleId receiver, double now) {
  std::vector<WireMessage> out;
  auto qit = queues_.find(receiver);
  if (qit == queues_.end()) return out;
  auto& queue = qit->second;
  auto& st = stats_[receiver];
  auto& seen = seen_[receiver];
  while (!queue.empty() && queue.top().recv_t <= now) {
    WireMessage msg = decode(*queue.top().frame);
    queue.pop();
    --st.pending;
    ++st.delivered;
    if (!seen.insert({msg.sender, msg.seq}).second) {
      ++st.suppressed;
      continue;
    }
    out.push_back(std::move(msg));
  }
  return out;
}

const ChannelStats& Channel::stats(VehicleId receiver) const {
  auto it = stats_.find(receiver);
  if (it == stats_.end()) throw std::out_of_range("not a channel member");
  return it->second;
}

ChannelStats Channel::total_stats() const {
  ChannelStats total;
  for (const auto& [id, s] : stats_) {
    total.copies += s.copies;
    total.dropped += s.dropped;
    total.delivered += s.delivered;
    total.suppressed += s.suppressed;
    total.pending += s.pending;
  }
  return total;
}

void Channel::write_trace_csv(std::ostream& out) const {
  out << "send_t,recv_t,sender,receiver,kind,seq,dropped\n";
  for (const auto& r : trace_) {
    out << r.send_t << ',';
    if (!r.dropped) out << r.recv_t;
    out << ',' << r.sender << ',' << r.receiver << ',' << to_string(r.kind) << ',' << r.seq << ','
        << (r.dropped ? 1 : 0) << '\n';
  }
}

}  // namespace coloc
