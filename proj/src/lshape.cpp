#include "coloc/lshape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace coloc {
namespace {

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Heading of the edge that has the other edge 90 degrees counter-clockwise.
double base_angle(const Eigen::Vector2d& d1, const Eigen::Vector2d& d2) {
  const Eigen::Vector2d& first = cross(d1, d2) > 0 ? d1 : d2;
  return std::atan2(first.y(), first.x());
}

struct Moments {
  double n = 0, x = 0, y = 0, xx = 0, xy = 0, yy = 0;

  void add(const Eigen::Vector2d& p) {
    n += 1;
    x += p.x();
    y += p.y();
    xx += p.x() * p.x();
    xy += p.x() * p.y();
    yy += p.y() * p.y();
  }
  Moments operator-(const Moments& o) const {
    return {n - o.n, x - o.x, y - o.y, xx - o.xx, xy - o.xy, yy - o.yy};
  }
  Eigen::Vector2d mean() const { return {x / n, y / n}; }
  // Central scatter entries.
  double cxx() const { return xx - x * x / n; }
  double cxy() const { return xy - x * y / n; }
  double cyy() const { return yy - y * y / n; }
};

struct SplitFit {
  double error = std::numeric_limits<double>::infinity();
  bool valid = false;
  Eigen::Vector2d corner;
  double theta0 = 0.0;
};

// Points [0, s) on one side, [s, n) on the other; sides perpendicular.
SplitFit fit_split(const std::vector<Eigen::Vector2d>& pts, const Moments& a, const Moments& b,
                   std::size_t s, double min_extent) {
  const double ca = 0.5 * (a.cxx() - a.cyy() - b.cxx() + b.cyy());
  const double cb = a.cxy() - b.cxy();
  const double c0 = 0.5 * (a.cxx() + a.cyy() + b.cxx() + b.cyy());
  const double phi = 0.5 * std::atan2(-cb, -ca);
  const Eigen::Vector2d na(std::cos(phi), std::sin(phi));
  const Eigen::Vector2d nb(-na.y(), na.x());

  SplitFit fit;
  fit.error = std::max(0.0, c0 - std::hypot(ca, cb));
  fit.corner = na.dot(a.mean()) * na + nb.dot(b.mean()) * nb;

  Eigen::Vector2d ua = nb, ub = na;
  if ((a.mean() - fit.corner).dot(ua) < 0) ua = -ua;
  if ((b.mean() - fit.corner).dot(ub) < 0) ub = -ub;
  double extent_a = 0.0, extent_b = 0.0;
  for (std::size_t i = 0; i < s; ++i) extent_a = std::max(extent_a, (pts[i] - fit.corner).dot(ua));
  for (std::size_t i = s; i < pts.size(); ++i)
    extent_b = std::max(extent_b, (pts[i] - fit.corner).dot(ub));
  fit.valid = std::min(extent_a, extent_b) >= min_extent;
  fit.theta0 = base_angle(ua, ub);
  return fit;
}

}  // namespace

LShapeHypothesisSet fit_lshape(std::span<const Eigen::Vector2d> points,
                               const LShapeFitConfig& config) {
  if (points.size() < 4) throw DegenerateCluster("L-shape fit needs at least 4 points");
  const std::size_t n = points.size();

  // Scan order: bearing from the sensor, measured around the cluster's bearing.
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(n);
  const double ref = std::atan2(centroid.y(), centroid.x());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> bearing(n);
  for (std::size_t i = 0; i < n; ++i)
    bearing[i] = normalize_angle(std::atan2(points[i].y(), points[i].x()) - ref);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return bearing[a] < bearing[b]; });
  // Centered coordinates keep the scatter sums well conditioned.
  std::vector<Eigen::Vector2d> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = points[order[i]] - centroid;

  std::vector<Moments> prefix(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i];
    prefix[i + 1].add(pts[i]);
  }

  const Moments& all = prefix[n];
  Eigen::Matrix2d scatter;
  scatter << all.cxx(), all.cxy(), all.cxy(), all.cyy();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
  const double line_error = std::max(0.0, eig.eigenvalues()(0));

  std::vector<SplitFit> fits(n + 1);
  for (std::size_t s = 2; s + 2 <= n; ++s)
    fits[s] = fit_split(pts, prefix[s], all - prefix[s], s, config.min_side_extent);

  std::vector<std::size_t> minima;
  auto err = [&](std::size_t s) {
    return (s < fits.size() && fits[s].valid) ? fits[s].error
                                              : std::numeric_limits<double>::infinity();
  };
  for (std::size_t s = 2; s + 2 <= n; ++s) {
    if (!fits[s].valid) continue;
    if (err(s) <= err(s - 1) && err(s) <= err(s + 1)) minima.push_back(s);
  }
  std::stable_sort(minima.begin(), minima.end(),
                   [&](std::size_t a, std::size_t b) { return err(a) < err(b); });

  LShapeHypothesisSet out;
  out.frame = HypothesisFrame::Observer;
  const bool collinear = std::sqrt(line_error / static_cast<double>(n)) < config.collinear_rms;
  if (!collinear && !minima.empty() && err(minima.front()) < line_error) {
    for (std::size_t s : minima) {
      if (static_cast<int>(out.corners.size()) >= config.max_hypotheses) break;
      const Eigen::Vector2d corner = fits[s].corner + centroid;
      const bool duplicate = std::any_of(out.corners.begin(), out.corners.end(), [&](const auto& h) {
        return (h.corner - corner).norm() < config.merge_distance;
      });
      if (!duplicate) out.corners.push_back(make_corner_hypothesis(corner, fits[s].theta0, err(s)));
    }
    return out;
  }

  // One visible side: both endpoints are corner candidates.
  out.single_line = true;
  const Eigen::Vector2d u = eig.eigenvectors().col(1);
  Eigen::Vector2d normal(-u.y(), u.x());
  if (normal.dot(centroid) < 0) normal = -normal;
  double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
  for (const auto& p : pts) {
    tmin = std::min(tmin, p.dot(u));
    tmax = std::max(tmax, p.dot(u));
  }
  // Endpoint candidates, unless the extreme return sits on a sensor limit.
  auto cut = [&](double t) {
    const Eigen::Vector2d p = centroid + t * u;
    const bool at_fov = config.fov > 0 &&
                        std::abs(std::atan2(p.y(), p.x())) >= 0.5 * config.fov - config.edge_margin_angle;
    const bool at_range =
        config.max_range > 0 && p.norm() >= config.max_range - config.edge_margin_range;
    return at_fov || at_range;
  };
  const bool cut_first = cut(tmin), cut_last = cut(tmax);
  const bool keep_all = cut_first && cut_last;
  if (keep_all || !cut_first)
    out.corners.push_back(make_corner_hypothesis(centroid + tmin * u, base_angle(u, normal), line_error));
  if (keep_all || !cut_last)
    out.corners.push_back(make_corner_hypothesis(centroid + tmax * u, base_angle(-u, normal), line_error));
  return out;
}

}  // namespace coloc
