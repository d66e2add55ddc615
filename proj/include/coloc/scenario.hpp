// Scenario description and its YAML loader.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "coloc/association.hpp"
#include "coloc/channel.hpp"
#include "coloc/lshape.hpp"
#include "coloc/pose_graph.hpp"
#include "coloc/relative_pose.hpp"
#include "coloc/world.hpp"

namespace coloc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RoadType { Straight, Curvy };

struct RoadConfig {
  RoadType type = RoadType::Straight;
  double x_min = -100.0;
  double x_max = 450.0;
  double amplitude = 6.0;     // curvy: lateral amplitude of the centreline, m
  double wavelength = 160.0;  // curvy: m
  double sample_step = 0.5;
};

struct VehicleSpec {
  VehicleId id = 0;
  double lane_offset = -1.75;  // left of the centreline in the road's +x direction
  bool reverse = false;        // drives toward -x
  double start_x = 0.0;
};

struct Scenario {
  std::string name = "straight";
  double duration = 30.0;  // s
  double dt = 0.1;         // s, odometry and broadcast period
  double speed = 10.0;     // m/s
  double lookahead = 6.0;  // m
  RoadConfig road;
  double vehicle_length = 4.0;
  double vehicle_width = 2.0;
  std::vector<VehicleSpec> vehicles;

  SensorConfig sensors;
  LShapeFitConfig lshape;
  HypothesisSelectionConfig selection;
  CovarianceSamplingConfig covariance;
  // Added to every sampled relative covariance (standard deviations).
  Eigen::Vector3d covariance_floor{0.05, 0.05, 0.01};
  AssociationConfig association;
  ChannelConfig channel;
  PoseGraphOptions graph;

  void validate() const;
  VehicleGeometry geometry() const;
};

/// Two opposing platoons of three, 15 m apart, on a straight or curvy road.
Scenario default_scenario(RoadType road);

Scenario parse_scenario(const std::string& yaml_text, const std::string& source = "<string>");
Scenario load_scenario(const std::string& path);

std::vector<Eigen::Vector2d> lane_polyline(const RoadConfig& road, double lane_offset);
std::vector<VehicleState> build_vehicles(const Scenario& scenario);

}  // namespace coloc
