// Binary frames for the three broadcast packets.
//
// Layout (little-endian):
//   u8  magic 0xC1
//   u8  kind (1 map measurement, 2 temporal, 3 spatial)
//   u16 sender
//   u32 seq
//   f64 timestamp
//   kind 1, 2: pose record  = 3 x f64 mean, 6 x f64 covariance upper triangle
//   kind 3:    u16 count, then count x (u16 observed id, pose record)
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "coloc/gaussian.hpp"
#include "coloc/pose_graph.hpp"

namespace coloc {

enum class MessageKind : std::uint8_t {
  MapMeasurement = 1,
  TemporalRelObs = 2,
  SpatialRelObs = 3,
};

const char* to_string(MessageKind kind);

struct MapMeasurementPayload {
  GaussianPose z;
  bool operator==(const MapMeasurementPayload&) const = default;
};

/// Origin-referenced odometry: mu(0,t), Sigma(0,t).
struct TemporalRelObsPayload {
  GaussianPose from_origin;
  bool operator==(const TemporalRelObsPayload&) const = default;
};

struct Detection {
  VehicleId observed = 0;
  GaussianPose z;
  bool operator==(const Detection&) const = default;
};

struct SpatialRelObsPayload {
  std::vector<Detection> detections;
  bool operator==(const SpatialRelObsPayload&) const = default;
};

struct WireMessage {
  VehicleId sender = 0;
  std::uint32_t seq = 0;
  Stamp stamp = 0.0;
  std::variant<MapMeasurementPayload, TemporalRelObsPayload, SpatialRelObsPayload> payload;

  MessageKind kind() const;
  bool operator==(const WireMessage&) const = default;
};

inline constexpr std::uint8_t kFrameMagic = 0xC1;
inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::size_t kPoseRecordBytes = 72;
inline constexpr std::size_t kDetectionBytes = 2 + kPoseRecordBytes;
inline constexpr std::size_t kSpatialBaseBytes = kHeaderBytes + 2;

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncatedFrame : public CodecError {
 public:
  using CodecError::CodecError;
};

class UnknownKind : public CodecError {
 public:
  using CodecError::CodecError;
};

class BadMagic : public CodecError {
 public:
  using CodecError::CodecError;
};

std::size_t encoded_size(const WireMessage& msg);
std::vector<std::uint8_t> encode(const WireMessage& msg);
/// Throws TruncatedFrame, UnknownKind, BadMagic, or CodecError on trailing bytes.
WireMessage decode(std::span<const std::uint8_t> bytes);

}  // namespace coloc
