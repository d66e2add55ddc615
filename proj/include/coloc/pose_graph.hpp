// Cooperative-localization back-end: a windowed SE(2) pose graph holding
// map priors, odometry (temporal) links, inter-vehicle (spatial) links and
// dense linear marginals left behind by node removal.
#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "coloc/gaussian.hpp"
#include "coloc/se2.hpp"

namespace coloc {

struct WireMessage;

using VehicleId = std::uint16_t;
using Stamp = double;

struct NodeKey {
  VehicleId vehicle = 0;
  Stamp stamp = 0.0;

  auto operator<=>(const NodeKey&) const = default;
};

std::string to_string(const NodeKey& key);

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StaleMeasurement : public GraphError {
 public:
  using GraphError::GraphError;
};

class OutOfOrderOdometry : public GraphError {
 public:
  using GraphError::GraphError;
};

class InvalidObservation : public GraphError {
 public:
  using GraphError::GraphError;
};

class UnderconstrainedGraph : public GraphError {
 public:
  using GraphError::GraphError;
};

enum class FactorKind { MapPrior, TemporalBetween, SpatialBetween, DenseMarginal };

const char* to_string(FactorKind kind);

/// A constraint on one, two or k pose nodes.
///
/// Pose factors carry a Gaussian measurement; DenseMarginal carries a linear
/// Gaussian over the stacked (x, y, theta) of its keys. `sqrt_information`
/// whitens residuals for every kind.
struct Factor {
  FactorKind kind = FactorKind::MapPrior;
  std::vector<NodeKey> keys;
  GaussianPose measurement;
  Eigen::VectorXd linear_mean;
  Eigen::MatrixXd information;
  Eigen::MatrixXd sqrt_information;
};

// Covariances are PSD-repaired at 1e-9 before inversion.
Factor make_map_prior(const NodeKey& key, const GaussianPose& z);
Factor make_between(FactorKind kind, const NodeKey& from, const NodeKey& to,
                    const GaussianPose& z);
Factor make_dense_marginal(std::vector<NodeKey> keys, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& information);

/// Recovers the odometry increment base -> t from two origin-referenced
/// factors mu(0,t') and mu(0,t). The covariance solves
///   Sigma(0,t) = J1 Sigma(0,t') J1^T + J2 Sigma(t',t) J2^T.
GaussianPose decompose_odometry(const GaussianPose& base_from_origin,
                                const GaussianPose& from_origin);

struct TemporalLink {
  Stamp from = 0.0;
  Stamp to = 0.0;
  GaussianPose z;
};

/// Result of splicing one origin-referenced packet into a vehicle's chain.
/// `incoming` links the nearest earlier received stamp to this one;
/// `outgoing` is set only for late packets and replaces the link that used
/// to span over this stamp. Neither is set for the first packet of a chain.
struct OdometryDecomposition {
  VehicleId vehicle = 0;
  Stamp stamp = 0.0;
  GaussianPose origin_referenced;
  std::optional<TemporalLink> incoming;
  std::optional<TemporalLink> outgoing;

  bool is_anchor() const { return !incoming && !outgoing; }
};

struct StampedPose {
  Stamp stamp = 0.0;
  Pose2d pose;
};

using LatestEstimates = std::map<VehicleId, StampedPose>;

struct OptimizerSettings {
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double max_lambda = 1e12;
  double step_tolerance = 1e-8;
  // Stop once an accepted step lowers the cost by less than this fraction.
  double cost_tolerance = 1e-12;
  int max_iterations = 100;
};

struct OptimizeReport {
  int iterations = 0;
  bool converged = false;
  std::vector<double> accepted_costs;  // cost before the first and after each accepted step
  std::size_t optimized_nodes = 0;
  std::size_t unanchored_nodes = 0;
};

struct PoseGraphOptions {
  double window = 10.0;
  OptimizerSettings optimizer;
};

class PoseGraph {
 public:
  struct Node {
    Pose2d estimate;
    bool initialized = false;
    std::vector<std::uint64_t> factors;
  };

  explicit PoseGraph(PoseGraphOptions options = {});

  // Construction. Each throws before mutating the graph.
  void add_map_measurement(VehicleId vehicle, Stamp t, const GaussianPose& z);
  OdometryDecomposition factor_decompose(VehicleId vehicle, Stamp t,
                                         const GaussianPose& from_origin);
  void add_temporal_rel_obs(const OdometryDecomposition& decomposition);
  void add_spatial_rel_obs(VehicleId observer, VehicleId observed, Stamp t,
                           const GaussianPose& z);

  /// Levenberg-Marquardt over all anchored nodes. Throws UnderconstrainedGraph
  /// when some node has no path to a MapPrior/DenseMarginal, unless
  /// `allow_unanchored` is set, in which case those nodes are left pending.
  LatestEstimates optimize(bool allow_unanchored = false, OptimizeReport* report = nullptr);

  /// Folds every node older than (latest - window) into a DenseMarginal over
  /// its Markov blanket via a Schur complement at the current estimates.
  void marginalize_old_nodes();

  /// Adds the packet's factors without optimizing. All-or-nothing.
  void ingest(const WireMessage& msg);
  /// ingest, then optimize (anchored part), then marginalize_old_nodes.
  LatestEstimates process_packet(const WireMessage& msg, OptimizeReport* report = nullptr);

  // Queries.
  const std::map<NodeKey, Node>& nodes() const { return nodes_; }
  const std::map<std::uint64_t, Factor>& factors() const { return factors_; }
  std::size_t num_factors(FactorKind kind) const;
  bool has_node(const NodeKey& key) const { return nodes_.count(key) != 0; }
  std::optional<Pose2d> estimate(const NodeKey& key) const;
  LatestEstimates latest_estimates() const;
  std::optional<Stamp> latest_stamp() const;
  double window() const { return options_.window; }
  const PoseGraphOptions& options() const { return options_; }

  /// Joint marginal covariance of one node at the current estimates.
  Covariance3 marginal_covariance(const NodeKey& key) const;

  /// Every node of the vehicle's odometry chain lies in a single connected
  /// component. Anchoring is checked separately by all_nodes_anchored.
  bool chain_connected(VehicleId vehicle) const;
  bool all_chains_connected() const;
  bool all_nodes_anchored() const;

  /// NODE / FACTOR line records, deterministic ordering.
  void write_snapshot(std::ostream& out) const;

 private:
  std::uint64_t insert_factor(Factor factor);
  void erase_factor(std::uint64_t id);
  Node& ensure_node(const NodeKey& key);
  void check_not_stale(Stamp t) const;
  void propagate_initialization(std::vector<std::uint64_t> seeds);
  std::map<NodeKey, int> component_labels() const;

  PoseGraphOptions options_;
  std::map<NodeKey, Node> nodes_;
  std::map<std::uint64_t, Factor> factors_;
  std::uint64_t next_factor_id_ = 0;
  std::optional<Stamp> latest_;
  // Per vehicle: every received origin-referenced packet still in the window.
  std::map<VehicleId, std::map<Stamp, GaussianPose>> odometry_;
  // Newest odometry stamp per vehicle already folded into a marginal.
  std::map<VehicleId, Stamp> pruned_odometry_;
};

}  // namespace coloc
