#include "coloc/wire.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <string>

namespace coloc {
namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
T byteswap_if_needed(T value) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return value;
  } else {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
    std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  }
}

class Writer {
 public:
  explicit Writer(std::size_t capacity) { out_.reserve(capacity); }

  template <typename T>
  void put(T value) {
    value = byteswap_if_needed(value);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out_.insert(out_.end(), raw, raw + sizeof(T));
  }

  void put_pose(const GaussianPose& g) {
    put(g.mean.x());
    put(g.mean.y());
    put(g.mean.theta());
    for (int r = 0; r < 3; ++r)
      for (int c = r; c < 3; ++c) put(g.cov(r, c));
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get() {
    if (in_.size() - pos_ < sizeof(T))
      throw TruncatedFrame("frame truncated at byte " + std::to_string(pos_));
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_needed(value);
  }

  GaussianPose get_pose() {
    const double x = get<double>();
    const double y = get<double>();
    const double theta = get<double>();
    if (!(normalize_angle(theta) == theta)) throw CodecError("heading outside (-pi, pi]");
    GaussianPose g;
    g.mean = Pose2d(x, y, theta);
    for (int r = 0; r < 3; ++r)
      for (int c = r; c < 3; ++c) g.cov(r, c) = g.cov(c, r) = get<double>();
    return g;
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::MapMeasurement: return "MapMeasurement";
    case MessageKind::TemporalRelObs: return "TemporalRelObs";
    case MessageKind::SpatialRelObs: return "SpatialRelObs";
  }
  return "Unknown";
}

MessageKind WireMessage::kind() const {
  switch (payload.index()) {
    case 0: return MessageKind::MapMeasurement;
    case 1: return MessageKind::TemporalRelObs;
    default: return MessageKind::SpatialRelObs;
  }
}

std::size_t encoded_size(const WireMessage& msg) {
  if (const auto* spatial = std::get_if<SpatialRelObsPayload>(&msg.payload))
    return kSpatialBaseBytes + kDetectionBytes * spatial->detections.size();
  return kHeaderBytes + kPoseRecordBytes;
}

std::vector<std::uint8_t> encode(const WireMessage& msg) {
  Writer w(encoded_size(msg));
  w.put(kFrameMagic);
  w.put(static_cast<std::uint8_t>(msg.kind()));
  w.put(msg.sender);
  w.put(msg.seq);
  w.put(msg.stamp);
  std::visit(
      [&w](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, MapMeasurementPayload>) {
          w.put_pose(p.z);
        } else if constexpr (std::is_same_v<P, TemporalRelObsPayload>) {
          w.put_pose(p.from_origin);
        } else {
          if (p.detections.size() > 0xFFFF) throw CodecError("too many detections");
          w.put(static_cast<std::uint16_t>(p.detections.size()));
          for (const auto& d : p.detections) {
            w.put(d.observed);
            w.put_pose(d.z);
          }
        }
      },
      msg.payload);
  return w.take();
}

WireMessage decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get<std::uint8_t>() != kFrameMagic) throw BadMagic("bad frame magic");
  const auto kind = r.get<std::uint8_t>();
  if (kind < static_cast<std::uint8_t>(MessageKind::MapMeasurement) ||
      kind > static_cast<std::uint8_t>(MessageKind::SpatialRelObs))
    throw UnknownKind("unknown message kind " + std::to_string(kind));
  WireMessage msg;
  msg.sender = r.get<std::uint16_t>();
  msg.seq = r.get<std::uint32_t>();
  msg.stamp = r.get<double>();
  switch (kind) {
    case static_cast<std::uint8_t>(MessageKind::MapMeasurement):
      msg.payload = MapMeasurementPayload{r.get_pose()};
      break;
    case static_cast<std::uint8_t>(MessageKind::TemporalRelObs):
      msg.payload = TemporalRelObsPayload{r.get_pose()};
      break;
    case static_cast<std::uint8_t>(MessageKind::SpatialRelObs): {
      SpatialRelObsPayload p;
      const auto count = r.get<std::uint16_t>();
      if (r.remaining() < count * kDetectionBytes)
        throw TruncatedFrame("frame truncated: " + std::to_string(count) + " detections declared");
      p.detections.reserve(count);
      for (std::uint16_t i = 0; i < count; ++i) {
        Detection d;
        d.observed = r.get<std::uint16_t>();
        d.z = r.get_pose();
        p.detections.push_back(d);
      }
      msg.payload = std::move(p);
      break;
    }
  }
  if (r.remaining() != 0) throw CodecError("trailing bytes after frame");
  return msg;
}

}  // namespace coloc
