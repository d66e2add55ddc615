// Paired CL/IL experiments over a simulated scenario.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coloc/channel.hpp"
#include "coloc/scenario.hpp"
#include "coloc/wire.hpp"
#include "coloc/world.hpp"

namespace coloc {

enum class RunMode { CL, IL, Both };

std::optional<RunMode> parse_run_mode(std::string_view text);

struct SentPacket {
  double send_t = 0.0;
  WireMessage msg;
};

struct AssociationRecord {
  double t = 0.0;
  VehicleId observer = 0;
  VehicleId cluster_of = 0;  // ground-truth owner of the L-shape
  VehicleId assigned = 0;
  double cost = 0.0;
  double error = 0.0;  // distance between implied and true target position
  bool correct = false;
};

struct VehicleReport {
  VehicleId id = 0;
  ErrorSummary cl;
  ErrorSummary il;
};

struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  RunMode mode = RunMode::Both;
  std::vector<VehicleReport> vehicles;
  ErrorSummary cl_pooled;
  ErrorSummary il_pooled;

  std::size_t associations = 0;
  std::size_t associations_correct = 0;
  std::size_t clusters = 0;
  std::size_t degenerate_clusters = 0;
  std::size_t spatial_observations = 0;

  ChannelStats channel;
  // Delivery delays in 10 ms bins; the last bin collects everything longer.
  std::vector<std::size_t> delay_histogram;
  std::size_t stale_packets = 0;
  std::size_t rejected_packets = 0;

  bool chains_connected = true;
  bool covariances_psd = true;
  std::size_t optimizations = 0;
  std::size_t unconverged_optimizations = 0;
  std::size_t optimizer_iterations = 0;
  double runtime_s = 0.0;

  std::vector<SentPacket> packets;  // only with RunOptions::record_packets
  std::vector<AssociationRecord> association_log;

  double association_accuracy() const;
  /// Connectedness, PSD covariances and optimizer convergence all held.
  bool ok() const;
};

struct RunOptions {
  RunMode mode = RunMode::Both;
  std::string out_dir;  // empty: no files
  bool record_packets = false;
  bool check_connectivity = true;
};

/// One sensor stream, consumed by both pipelines when mode is Both.
RunReport run_scenario(const Scenario& scenario, std::uint64_t seed, const RunOptions& options = {});

void write_report_csv(std::ostream& out, const std::vector<RunReport>& reports);
void write_report_table(std::ostream& out, const RunReport& report);

struct ReplayResult {
  std::map<NodeKey, Pose2d> nodes;
  std::size_t delivered = 0;
  std::size_t stale = 0;
};

/// Feeds a recorded packet log through `channel` to a single listener whose
/// graph is optimized once per `dt`, until every copy has been delivered.
ReplayResult replay_packets(const std::vector<SentPacket>& packets, const ChannelConfig& channel,
                            const PoseGraphOptions& graph, double dt);

enum class SweepParam { LossProb, Delay, Upsilon, W };

std::optional<SweepParam> parse_sweep_param(std::string_view text);
const char* to_string(SweepParam param);

/// `delay` sets a uniform delay on [0, value] seconds.
Scenario with_parameter(Scenario scenario, SweepParam param, double value);

std::vector<RunReport> sweep(const Scenario& scenario, SweepParam param,
                             const std::vector<double>& values, std::uint64_t seed,
                             const RunOptions& options, unsigned jobs = 1);

}  // namespace coloc
