#include "coloc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace coloc {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string where(const std::string& source, const YAML::Mark& mark) {
  if (mark.is_null()) return source;
  return source + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

// A mapping whose keys must all be consumed.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, const std::string& source)
      : node_(node), path_(std::move(path)), source_(source) {
    present_ = node_ && !node_.IsNull();
    if (present_ && !node_.IsMap())
      throw ConfigError(where(source_, node_.Mark()) + ": '" + path_ + "' must be a mapping");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return present_ && cnode()[key];
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const YAML::Node value = cnode()[key];
    try {
      out = value.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(source_, value.Mark()) + ": bad value for '" + path_ + key + "'");
    }
  }

  void get_vector3(const std::string& key, Eigen::Vector3d& out) {
    if (!has(key)) return;
    const YAML::Node value = cnode()[key];
    if (!value.IsSequence() || value.size() != 3)
      throw ConfigError(where(source_, value.Mark()) + ": '" + path_ + key +
                        "' must be a list of three numbers");
    for (int i = 0; i < 3; ++i) {
      try {
        out(i) = value[i].as<double>();
      } catch (const YAML::Exception&) {
        throw ConfigError(where(source_, value[i].Mark()) + ": bad number in '" + path_ + key + "'");
      }
    }
  }

  Section child(const std::string& key) {
    has(key);
    return Section(present_ ? cnode()[key] : YAML::Node(), path_ + key + ".", source_);
  }

  YAML::Node raw(const std::string& key) {
    has(key);
    return present_ ? cnode()[key] : YAML::Node();
  }

  void finish() const {
    if (!present_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key))
        throw ConfigError(where(source_, kv.first.Mark()) + ": unknown key '" + path_ + key + "'");
    }
  }

 private:
  // Const lookups never insert missing keys.
  const YAML::Node& cnode() const { return node_; }

  YAML::Node node_;
  bool present_ = false;
  std::string path_;
  const std::string& source_;
  std::set<std::string> seen_;
};

void read_scenario(const YAML::Node& root, const std::string& source, Scenario& s) {
  Section top(root, "", source);
  top.get("name", s.name);
  top.get("duration", s.duration);
  top.get("dt", s.dt);
  top.get("speed", s.speed);
  top.get("lookahead", s.lookahead);

  {
    Section road = top.child("road");
    if (road.has("type")) {
      std::string type;
      road.get("type", type);
      if (type == "straight") {
        s.road.type = RoadType::Straight;
      } else if (type == "curvy") {
        s.road.type = RoadType::Curvy;
      } else {
        throw ConfigError(where(source, root["road"]["type"].Mark()) +
                          ": road.type must be 'straight' or 'curvy'");
      }
    }
    road.get("x_min", s.road.x_min);
    road.get("x_max", s.road.x_max);
    road.get("amplitude", s.road.amplitude);
    road.get("wavelength", s.road.wavelength);
    road.get("sample_step", s.road.sample_step);
    road.finish();
  }
  {
    Section vehicle = top.child("vehicle");
    vehicle.get("length", s.vehicle_length);
    vehicle.get("width", s.vehicle_width);
    vehicle.finish();
  }
  if (const YAML::Node list = top.raw("vehicles")) {
    if (!list.IsSequence())
      throw ConfigError(where(source, list.Mark()) + ": 'vehicles' must be a list");
    s.vehicles.clear();
    for (std::size_t i = 0; i < list.size(); ++i) {
      Section v(list[i], "vehicles[" + std::to_string(i) + "].", source);
      VehicleSpec spec;
      int id = -1;
      v.get("id", id);
      if (id < 0 || id > 0xFFFF)
        throw ConfigError(where(source, list[i].Mark()) + ": vehicle needs an id in [0, 65535]");
      spec.id = static_cast<VehicleId>(id);
      v.get("lane", spec.lane_offset);
      v.get("start_x", spec.start_x);
      if (v.has("direction")) {
        std::string dir;
        v.get("direction", dir);
        if (dir != "forward" && dir != "reverse")
          throw ConfigError(where(source, list[i]["direction"].Mark()) +
                            ": direction must be 'forward' or 'reverse'");
        spec.reverse = dir == "reverse";
      }
      v.finish();
      s.vehicles.push_back(spec);
    }
  }
  {
    Section sensors = top.child("sensors");
    Section map = sensors.child("map");
    map.get("sigma_pos", s.sensors.map.sigma_pos);
    double deg = s.sensors.map.sigma_theta / kDeg;
    map.get("sigma_theta_deg", deg);
    s.sensors.map.sigma_theta = deg * kDeg;
    map.get("rate", s.sensors.map.rate);
    map.finish();
    Section odo = sensors.child("odometry");
    odo.get("sigma_per_m", s.sensors.odometry.sigma_per_m);
    odo.get("sigma_theta_per_m", s.sensors.odometry.sigma_theta_per_m);
    odo.get("sigma_theta_per_rad", s.sensors.odometry.sigma_theta_per_rad);
    odo.finish();
    Section lidar = sensors.child("lidar");
    double fov = s.sensors.lidar.fov / kDeg, res = s.sensors.lidar.resolution / kDeg;
    lidar.get("fov_deg", fov);
    lidar.get("resolution_deg", res);
    s.sensors.lidar.fov = fov * kDeg;
    s.sensors.lidar.resolution = res * kDeg;
    lidar.get("max_range", s.sensors.lidar.max_range);
    lidar.get("range_sigma", s.sensors.lidar.range_sigma);
    lidar.get("rate", s.sensors.lidar.rate);
    lidar.finish();
    sensors.finish();
  }
  {
    Section l = top.child("lshape");
    l.get("max_hypotheses", s.lshape.max_hypotheses);
    l.get("min_side_extent", s.lshape.min_side_extent);
    l.get("merge_distance", s.lshape.merge_distance);
    l.finish();
  }
  {
    Section r = top.child("relative_pose");
    r.get("w1", s.selection.w1);
    r.get("w2", s.selection.w2);
    r.get_vector3("delta", s.covariance.delta);
    r.get("samples_per_axis", s.covariance.samples_per_axis);
    r.get("likelihood_sigma", s.covariance.sigma);
    r.get_vector3("covariance_floor", s.covariance_floor);
    r.finish();
  }
  {
    Section a = top.child("association");
    a.get("W", s.association.angular_weight);
    a.get("upsilon", s.association.null_cost);
    a.finish();
  }
  {
    Section c = top.child("channel");
    c.get("loss_prob", s.channel.loss_prob);
    c.get("duplicate_prob", s.channel.duplicate_prob);
    c.get("delay_base", s.channel.delay_base);
    c.get("delay_jitter", s.channel.delay_jitter);
    c.get("reorder", s.channel.reorder);
    c.finish();
  }
  {
    Section g = top.child("graph");
    g.get("window", s.graph.window);
    g.get("max_iterations", s.graph.optimizer.max_iterations);
    g.finish();
  }
  top.finish();
}

}  // namespace

void Scenario::validate() const {
  if (!(duration > 0) || !(dt > 0)) throw ConfigError("duration and dt must be positive");
  if (!(speed >= 0)) throw ConfigError("speed must be non-negative");
  if (!(vehicle_length > 0) || !(vehicle_width > 0))
    throw ConfigError("vehicle dimensions must be positive");
  if (vehicles.empty()) throw ConfigError("scenario has no vehicles");
  std::set<VehicleId> ids;
  for (const auto& v : vehicles)
    if (!ids.insert(v.id).second) throw ConfigError("duplicate vehicle id " + std::to_string(v.id));
  if (!(road.x_max > road.x_min) || !(road.sample_step > 0))
    throw ConfigError("road needs x_max > x_min and a positive sample_step");
  if (road.type == RoadType::Curvy && !(road.wavelength > 0))
    throw ConfigError("curvy road needs a positive wavelength");
  if (!(selection.w1 > 0) || !(selection.w2 > 0)) throw ConfigError("w1 and w2 must be positive");
  if (covariance.samples_per_axis < 1 || (covariance.delta.array() <= 0).any() ||
      !(covariance.sigma > 0))
    throw ConfigError("relative_pose sampling needs delta > 0, samples >= 1, sigma > 0");
  if ((covariance_floor.array() < 0).any()) throw ConfigError("covariance_floor must be >= 0");
  if (!(association.angular_weight >= 0) || !(association.null_cost > 0))
    throw ConfigError("association needs W >= 0 and upsilon > 0");
  if (!(graph.window > 0)) throw ConfigError("graph.window must be positive");
  try {
    sensors.validate();
    channel.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

VehicleGeometry Scenario::geometry() const {
  return VehicleGeometry::Centered(vehicle_length, vehicle_width);
}

Scenario default_scenario(RoadType road) {
  Scenario s;
  s.road.type = road;
  s.name = road == RoadType::Straight ? "straight" : "curvy";
  // Platoon A drives +x in the right-hand lane; platoon B meets it halfway.
  for (int i = 0; i < 3; ++i) s.vehicles.push_back({VehicleId(1 + i), -1.75, false, -15.0 * i});
  for (int i = 0; i < 3; ++i)
    s.vehicles.push_back({VehicleId(4 + i), 1.75, true, 300.0 + 15.0 * i});
  return s;
}

Scenario parse_scenario(const std::string& yaml_text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(where(source, e.mark) + ": " + e.msg);
  }
  Scenario s = default_scenario(RoadType::Straight);
  if (root && !root.IsNull()) read_scenario(root, source, s);
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str(), path);
}

std::vector<Eigen::Vector2d> lane_polyline(const RoadConfig& road, double lane_offset) {
  std::vector<Eigen::Vector2d> pts;
  const int n = static_cast<int>(std::ceil((road.x_max - road.x_min) / road.sample_step));
  const double k = road.type == RoadType::Curvy ? 2 * std::numbers::pi / road.wavelength : 0.0;
  const double a = road.type == RoadType::Curvy ? road.amplitude : 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = road.x_min + i * road.sample_step;
    const double y = a * std::sin(k * x);
    const double slope = a * k * std::cos(k * x);
    const Eigen::Vector2d normal = Eigen::Vector2d(-slope, 1.0).normalized();
    pts.push_back(Eigen::Vector2d(x, y) + lane_offset * normal);
  }
  return pts;
}

std::vector<VehicleState> build_vehicles(const Scenario& s) {
  std::vector<VehicleState> out;
  for (const auto& spec : s.vehicles) {
    VehicleState v;
    v.id = spec.id;
    v.geometry = s.geometry();
    v.path.waypoints = lane_polyline(s.road, spec.lane_offset);
    if (spec.reverse) std::reverse(v.path.waypoints.begin(), v.path.waypoints.end());
    v.path.speed = s.speed;
    v.path.lookahead = s.lookahead;
    const auto& wp = v.path.waypoints;
    std::size_t best = 0;
    for (std::size_t i = 1; i < wp.size(); ++i)
      if (std::abs(wp[i].x() - spec.start_x) < std::abs(wp[best].x() - spec.start_x)) best = i;
    const std::size_t next = std::min(best + 1, wp.size() - 1);
    const std::size_t prev = next == best ? best - 1 : best;
    const Eigen::Vector2d dir = wp[next] - wp[prev];
    v.truth = Pose2d(wp[best].x(), wp[best].y(), std::atan2(dir.y(), dir.x()));
    v.progress = best;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace coloc
