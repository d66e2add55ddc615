#include "coloc/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "coloc/lshape.hpp"
#include "coloc/relative_pose.hpp"

namespace coloc {
namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;
constexpr std::size_t kDelayBins = 10;
constexpr double kDelayBinWidth = 0.01;

struct Agent {
  explicit Agent(const PoseGraphOptions& options) : graph(options) {}

  PoseGraph graph;
  std::vector<StampedPose> estimates;
  std::vector<StampedPose> truths;
  std::vector<double> cov_trace;
};

// Last estimate of `vehicle`, carried forward to `t` at constant velocity.
std::optional<Pose2d> predict(const PoseGraph& graph, VehicleId vehicle, Stamp t) {
  const auto& nodes = graph.nodes();
  auto it = nodes.lower_bound(NodeKey{vehicle, std::numeric_limits<double>::infinity()});
  std::optional<std::pair<Stamp, Pose2d>> last, prev;
  while (it != nodes.begin()) {
    --it;
    if (it->first.vehicle != vehicle) break;
    if (!it->second.initialized) continue;
    if (!last) {
      last.emplace(it->first.stamp, it->second.estimate);
    } else {
      prev.emplace(it->first.stamp, it->second.estimate);
      break;
    }
  }
  if (!last) return std::nullopt;
  if (!prev || last->first == t) return last->second;
  const Pose2d step = between(prev->second, last->second);
  const double r = (t - last->first) / (last->first - prev->first);
  return compose(last->second, Pose2d(step.x() * r, step.y() * r, step.theta() * r));
}

struct Ingested {
  std::size_t stale = 0;
  std::size_t rejected = 0;
};

void ingest_all(PoseGraph& graph, const std::vector<WireMessage>& msgs, Ingested& count) {
  for (const auto& msg : msgs) {
    try {
      graph.ingest(msg);
    } catch (const StaleMeasurement&) {
      ++count.stale;
    } catch (const GraphError&) {
      ++count.rejected;
    }
  }
}

void write_trace(const std::filesystem::path& file, const Agent& agent) {
  std::ofstream out(file);
  out << std::setprecision(10);
  out << "t,truth_x,truth_y,truth_th,est_x,est_y,est_th,cov_trace\n";
  for (std::size_t k = 0; k < agent.estimates.size(); ++k) {
    const auto& e = agent.estimates[k].pose;
    const auto& g = agent.truths[k].pose;
    out << agent.estimates[k].stamp << ',' << g.x() << ',' << g.y() << ',' << g.theta() << ','
        << e.x() << ',' << e.y() << ',' << e.theta() << ',' << agent.cov_trace[k] << '\n';
  }
}

ErrorSummary pooled(const std::map<VehicleId, std::vector<PoseError>>& errors) {
  std::vector<PoseError> all;
  for (const auto& [id, e] : errors) all.insert(all.end(), e.begin(), e.end());
  return summarize(all);
}

int ticks_per_sample(double rate, double dt) {
  return std::max(1, static_cast<int>(std::lround(1.0 / (rate * dt))));
}

}  // namespace

std::optional<RunMode> parse_run_mode(std::string_view text) {
  if (text == "cl") return RunMode::CL;
  if (text == "il") return RunMode::IL;
  if (text == "both") return RunMode::Both;
  return std::nullopt;
}

double RunReport::association_accuracy() const {
  return associations == 0 ? 1.0 : double(associations_correct) / double(associations);
}

bool RunReport::ok() const {
  return chains_connected && covariances_psd && unconverged_optimizations == 0;
}

RunReport run_scenario(const Scenario& s, std::uint64_t seed, const RunOptions& options) {
  const auto wall_start = std::chrono::steady_clock::now();
  s.validate();
  const bool run_cl = options.mode != RunMode::IL;
  const bool run_il = options.mode != RunMode::CL;
  const bool write_files = !options.out_dir.empty();

  auto vehicles = build_vehicles(s);
  std::vector<const VehicleState*> all;
  std::vector<VehicleId> ids;
  for (const auto& v : vehicles) {
    all.push_back(&v);
    ids.push_back(v.id);
  }
  const std::size_t n = vehicles.size();
  const VehicleGeometry geometry = s.geometry();

  Rng rng(seed);
  ChannelConfig channel_cfg = s.channel;
  channel_cfg.seed = seed * 0x9E3779B97F4A7C15ULL + 1;
  Channel channel(channel_cfg, ids);
  channel.set_tracing(true);

  std::map<VehicleId, Agent> cl, il;
  std::map<VehicleId, std::uint32_t> seq;
  for (VehicleId id : ids) {
    if (run_cl) cl.emplace(id, Agent(s.graph));
    if (run_il) il.emplace(id, Agent(s.graph));
    seq[id] = 0;
  }

  RunReport report;
  report.scenario = s.name;
  report.seed = seed;
  report.mode = options.mode;
  Ingested counts;

  const int ticks = static_cast<int>(std::lround(s.duration / s.dt));
  const int map_period = ticks_per_sample(s.sensors.map.rate, s.dt);
  const int lidar_period = ticks_per_sample(s.sensors.lidar.rate, s.dt);
  const Covariance3 floor = s.covariance_floor.cwiseAbs2().asDiagonal();
  LShapeFitConfig lshape = s.lshape;
  lshape.fov = s.sensors.lidar.fov;
  lshape.max_range = s.sensors.lidar.max_range;

  auto finish_tick = [&](Agent& agent, VehicleId id, Stamp t, const Pose2d& truth) {
    OptimizeReport rep;
    agent.graph.optimize(true, &rep);
    ++report.optimizations;
    report.optimizer_iterations += static_cast<std::size_t>(rep.iterations);
    if (!rep.converged) ++report.unconverged_optimizations;
    agent.graph.marginalize_old_nodes();
    if (options.check_connectivity && !agent.graph.all_chains_connected())
      report.chains_connected = false;
    const auto est = agent.graph.estimate({id, t});
    agent.estimates.push_back({t, est.value_or(Pose2d(std::nan(""), std::nan(""), 0.0))});
    agent.truths.push_back({t, truth});
    agent.cov_trace.push_back(write_files && est ? agent.graph.marginal_covariance({id, t}).trace()
                                                 : std::nan(""));
  };

  for (int k = 0; k <= ticks; ++k) {
    const Stamp t = static_cast<double>(k) * s.dt;
    if (k > 0)
      for (auto& v : vehicles) step_vehicle(v, s.dt);

    // Sensor stream, generated once and shared by both pipelines.
    std::vector<std::vector<WireMessage>> own(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& v = vehicles[i];
      const GaussianPose odo = sense_odometry(v, s.sensors.odometry, rng);
      own[i].push_back(WireMessage{v.id, seq[v.id]++, t, TemporalRelObsPayload{odo}});
      const int offset = static_cast<int>(i) * map_period / static_cast<int>(n);
      if (k == 0 || (k + offset) % map_period == 0) {
        const GaussianPose z = sense_map(v, s.sensors.map, rng);
        own[i].push_back(WireMessage{v.id, seq[v.id]++, t, MapMeasurementPayload{z}});
      }
    }
    std::vector<std::vector<LidarCluster>> scans(n);
    if (k % lidar_period == 0)
      for (std::size_t i = 0; i < n; ++i)
        scans[i] = sense_lidar(vehicles[i], all, s.sensors.lidar, rng);

    if (run_il) {
      for (std::size_t i = 0; i < n; ++i) {
        Agent& agent = il.at(vehicles[i].id);
        ingest_all(agent.graph, own[i], counts);
        finish_tick(agent, vehicles[i].id, t, vehicles[i].truth);
      }
    }
    if (!run_cl) continue;

    for (std::size_t i = 0; i < n; ++i)
      for (const auto& msg : own[i]) {
        channel.broadcast(msg, t);
        if (options.record_packets) report.packets.push_back({t, msg});
      }
    for (std::size_t i = 0; i < n; ++i) {
      Agent& agent = cl.at(vehicles[i].id);
      ingest_all(agent.graph, own[i], counts);
      ingest_all(agent.graph, channel.poll(vehicles[i].id, t), counts);
      finish_tick(agent, vehicles[i].id, t, vehicles[i].truth);
    }

    // Spatial relative observations from this tick's scans.
    for (std::size_t l = 0; l < n; ++l) {
      const VehicleState& observer = vehicles[l];
      Agent& agent = cl.at(observer.id);
      const auto own_est = agent.graph.estimate({observer.id, t});
      if (!own_est || scans[l].empty()) continue;

      std::vector<LShapeHypothesisSet> shapes;
      std::vector<const LidarCluster*> shape_cluster;
      for (const auto& cluster : scans[l]) {
        ++report.clusters;
        try {
          auto shape = fit_lshape(cluster.points, lshape).to_global(*own_est);
          shape.shape_id = static_cast<int>(shapes.size());
          shapes.push_back(std::move(shape));
          shape_cluster.push_back(&cluster);
        } catch (const DegenerateCluster&) {
          ++report.degenerate_clusters;
        }
      }
      std::vector<TrackedVehicle> tracked;
      std::vector<std::size_t> tracked_index;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == l) continue;
        if (auto p = predict(agent.graph, vehicles[j].id, t)) {
          tracked.push_back({geometry, *p});
          tracked_index.push_back(j);
        }
      }
      if (shapes.empty() || tracked.empty()) continue;

      const Eigen::MatrixXd cost = build_cost_matrix(shapes, tracked, s.association);
      const auto match = extract_correspondence(solve_assignment(cost));
      SpatialRelObsPayload payload;
      for (std::size_t r = 0; r < tracked.size(); ++r) {
        const int kk = match[r];
        if (kk >= static_cast<int>(shapes.size())) continue;
        const VehicleState& target = vehicles[tracked_index[r]];
        const auto choice =
            select_best_hypothesis(shapes[kk], geometry, tracked[r].estimate, s.selection);
        const Pose2d mu = relative_mean(choice.pose, *own_est);
        const auto sampled =
            relative_covariance(shape_cluster[kk]->points, geometry, mu, s.covariance);
        const Covariance3 cov = sampled.cov + floor;
        if (!is_psd(cov)) report.covariances_psd = false;
        payload.detections.push_back(Detection{target.id, GaussianPose{mu, cov}});

        AssociationRecord rec;
        rec.t = t;
        rec.observer = observer.id;
        rec.cluster_of = shape_cluster[kk]->target;
        rec.assigned = target.id;
        rec.cost = cost(static_cast<Eigen::Index>(r), kk);
        rec.error = (compose(observer.truth, mu).translation() - target.truth.translation()).norm();
        rec.correct = rec.error <= 0.5 * s.vehicle_length;
        ++report.associations;
        if (rec.correct) ++report.associations_correct;
        report.association_log.push_back(rec);
      }
      if (payload.detections.empty()) continue;
      report.spatial_observations += payload.detections.size();
      WireMessage msg{observer.id, seq[observer.id]++, t, std::move(payload)};
      ingest_all(agent.graph, {msg}, counts);
      channel.broadcast(msg, t);
      if (options.record_packets) report.packets.push_back({t, std::move(msg)});
    }
  }

  report.stale_packets = counts.stale;
  report.rejected_packets = counts.rejected;
  report.channel = channel.total_stats();
  report.delay_histogram.assign(kDelayBins, 0);
  for (const auto& rec : channel.trace()) {
    if (rec.dropped) continue;
    const auto bin = static_cast<std::size_t>(std::max(0.0, rec.recv_t - rec.send_t) / kDelayBinWidth);
    ++report.delay_histogram[std::min(bin, kDelayBins - 1)];
  }

  std::map<VehicleId, std::vector<PoseError>> cl_err, il_err;
  for (VehicleId id : ids) {
    VehicleReport vr;
    vr.id = id;
    if (run_cl) {
      cl_err[id] = ground_truth_error(cl.at(id).estimates, cl.at(id).truths);
      vr.cl = summarize(cl_err[id]);
    }
    if (run_il) {
      il_err[id] = ground_truth_error(il.at(id).estimates, il.at(id).truths);
      vr.il = summarize(il_err[id]);
    }
    report.vehicles.push_back(vr);
  }
  report.cl_pooled = pooled(cl_err);
  report.il_pooled = pooled(il_err);
  report.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  if (write_files) {
    namespace fs = std::filesystem;
    const fs::path dir(options.out_dir);
    fs::create_directories(dir);
    for (VehicleId id : ids) {
      if (run_cl) {
        write_trace(dir / ("trace_cl_v" + std::to_string(id) + ".csv"), cl.at(id));
        std::ofstream snap(dir / ("snapshot_cl_v" + std::to_string(id) + ".txt"));
        cl.at(id).graph.write_snapshot(snap);
      }
      if (run_il) write_trace(dir / ("trace_il_v" + std::to_string(id) + ".csv"), il.at(id));
    }
    {
      std::ofstream out(dir / "associations.csv");
      out << std::setprecision(10) << "t,observer,cluster_of,assigned,cost,error,correct\n";
      for (const auto& a : report.association_log)
        out << a.t << ',' << a.observer << ',' << a.cluster_of << ',' << a.assigned << ',' << a.cost
            << ',' << a.error << ',' << (a.correct ? 1 : 0) << '\n';
    }
    if (run_cl) {
      std::ofstream out(dir / "channel_trace.csv");
      out << std::setprecision(10);
      channel.write_trace_csv(out);
    }
    {
      std::ofstream out(dir / "report.csv");
      write_report_csv(out, {report});
    }
    {
      std::ofstream out(dir / "report.txt");
      write_report_table(out, report);
    }
  }
  return report;
}

void write_report_csv(std::ostream& out, const std::vector<RunReport>& reports) {
  out << std::setprecision(6);
  out << "scenario,seed,vehicle,mode,pos_ave_m,pos_std_m,ori_ave_deg,ori_std_deg\n";
  auto row = [&](const RunReport& r, const std::string& vehicle, const char* mode,
                 const ErrorSummary& e) {
    out << r.scenario << ',' << r.seed << ',' << vehicle << ',' << mode << ',' << e.position_mean
        << ',' << e.position_std << ',' << e.orientation_mean * kRadToDeg << ','
        << e.orientation_std * kRadToDeg << '\n';
  };
  for (const auto& r : reports) {
    const bool cl = r.mode != RunMode::IL, il = r.mode != RunMode::CL;
    for (const auto& v : r.vehicles) {
      if (cl) row(r, std::to_string(v.id), "CL", v.cl);
      if (il) row(r, std::to_string(v.id), "IL", v.il);
    }
    if (cl) row(r, "all", "CL", r.cl_pooled);
    if (il) row(r, "all", "IL", r.il_pooled);
  }
}

void write_report_table(std::ostream& out, const RunReport& r) {
  const bool cl = r.mode != RunMode::IL, il = r.mode != RunMode::CL;
  out << "scenario " << r.scenario << "  seed " << r.seed << '\n';
  out << std::fixed << std::setprecision(3);
  out << "vehicle  mode  pos ave (m)  pos std (m)  ori ave (deg)  ori std (deg)\n";
  auto row = [&](const std::string& vehicle, const char* mode, const ErrorSummary& e) {
    out << std::setw(7) << vehicle << "  " << std::setw(4) << mode << "  " << std::setw(11)
        << e.position_mean << "  " << std::setw(11) << e.position_std << "  " << std::setw(13)
        << e.orientation_mean * kRadToDeg << "  " << std::setw(13) << e.orientation_std * kRadToDeg
        << '\n';
  };
  for (const auto& v : r.vehicles) {
    if (cl) row(std::to_string(v.id), "CL", v.cl);
    if (il) row(std::to_string(v.id), "IL", v.il);
  }
  if (cl) row("all", "CL", r.cl_pooled);
  if (il) row("all", "IL", r.il_pooled);
  out << std::defaultfloat;
  if (cl) {
    out << "associations " << r.associations_correct << '/' << r.associations << " correct ("
        << std::setprecision(4) << 100.0 * r.association_accuracy() << "%)\n";
    out << "packets: copies " << r.channel.copies << ", dropped " << r.channel.dropped
        << ", delivered " << r.channel.delivered << ", duplicates suppressed "
        << r.channel.suppressed << ", stale " << r.stale_packets << '\n';
    out << "delay histogram (10 ms bins):";
    for (auto c : r.delay_histogram) out << ' ' << c;
    out << '\n';
  }
  out << "chains connected: " << (r.chains_connected ? "yes" : "no")
      << ", covariances PSD: " << (r.covariances_psd ? "yes" : "no")
      << ", unconverged optimizations: " << r.unconverged_optimizations << '/' << r.optimizations
      << " (" << r.optimizer_iterations << " iterations)\n";
  out << std::setprecision(3) << "runtime " << r.runtime_s << " s\n";
}

ReplayResult replay_packets(const std::vector<SentPacket>& packets, const ChannelConfig& config,
                            const PoseGraphOptions& graph_options, double dt) {
  std::vector<SentPacket> order = packets;
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.send_t < b.send_t; });
  std::vector<VehicleId> members;
  for (const auto& p : order)
    if (std::find(members.begin(), members.end(), p.msg.sender) == members.end())
      members.push_back(p.msg.sender);
  VehicleId listener = 0;
  while (std::find(members.begin(), members.end(), listener) != members.end()) ++listener;
  members.push_back(listener);

  Channel channel(config, members);
  channel.set_tracing(false);
  PoseGraph graph(graph_options);
  ReplayResult result;
  std::size_t next = 0;
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;
    while (next < order.size() && order[next].send_t <= t) {
      channel.broadcast(order[next].msg, order[next].send_t);
      ++next;
    }
    const auto inbox = channel.poll(listener, t);
    Ingested counts;
    ingest_all(graph, inbox, counts);
    result.stale += counts.stale;
    result.delivered += inbox.size();
    if (!inbox.empty()) {
      graph.optimize(true);
      graph.marginalize_old_nodes();
    }
    if (next == order.size() && channel.stats(listener).pending == 0) break;
  }
  for (const auto& [key, node] : graph.nodes())
    if (node.initialized) result.nodes.emplace(key, node.estimate);
  return result;
}

std::optional<SweepParam> parse_sweep_param(std::string_view text) {
  if (text == "loss_prob") return SweepParam::LossProb;
  if (text == "delay") return SweepParam::Delay;
  if (text == "upsilon") return SweepParam::Upsilon;
  if (text == "W") return SweepParam::W;
  return std::nullopt;
}

const char* to_string(SweepParam param) {
  switch (param) {
    case SweepParam::LossProb: return "loss_prob";
    case SweepParam::Delay: return "delay";
    case SweepParam::Upsilon: return "upsilon";
    case SweepParam::W: return "W";
  }
  return "?";
}

Scenario with_parameter(Scenario s, SweepParam param, double value) {
  switch (param) {
    case SweepParam::LossProb: s.channel.loss_prob = value; break;
    case SweepParam::Delay:
      s.channel.delay_base = 0.0;
      s.channel.delay_jitter = value;
      break;
    case SweepParam::Upsilon: s.association.null_cost = value; break;
    case SweepParam::W: s.association.angular_weight = value; break;
  }
  std::ostringstream name;
  name << s.name << '[' << to_string(param) << '=' << value << ']';
  s.name = name.str();
  s.validate();
  return s;
}

std::vector<RunReport> sweep(const Scenario& scenario, SweepParam param,
                             const std::vector<double>& values, std::uint64_t seed,
                             const RunOptions& options, unsigned jobs) {
  std::vector<Scenario> scenarios;
  for (double v : values) scenarios.push_back(with_parameter(scenario, param, v));
  std::vector<RunReport> reports(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < values.size();) {
      try {
        RunOptions o = options;
        if (!o.out_dir.empty())
          o.out_dir = (std::filesystem::path(options.out_dir) / ("value_" + std::to_string(i))).string();
        reports[i] = run_scenario(scenarios[i], seed, o);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(values.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return reports;
}

}  // namespace coloc
