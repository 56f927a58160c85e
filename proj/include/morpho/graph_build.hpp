#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "morpho/contour.hpp"
#include "morpho/mask.hpp"

namespace morpho {

using Point2 = std::array<double, 2>;

// Joint morphology graph: F=3 node features (normalized x, normalized y,
// bone id), undirected deduplicated edge list, and the final neighborhood
// radius (pixels) after connectivity growth.
struct JointGraph {
  std::vector<std::array<double, 3>> nodes;
  std::vector<std::pair<int, int>> edges;
  double tau_final = 0.0;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
};

struct GraphBuildConfig {
  int n_per_bone = 32;
  int k = 4;
  double tau0 = 0.0;  // <= 0 selects 1.5 x median nearest-neighbor distance
  double growth = 1.5;
};

namespace detail {

inline double dist2(const Point2& a, const Point2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

inline int component_count(int n, const std::vector<std::pair<int, int>>& edges) {
  UnionFind uf(n);
  for (const auto& [a, b] : edges) uf.unite(a, b);
  std::set<int> roots;
  for (int i = 0; i < n; ++i) roots.insert(uf.find(i));
  return static_cast<int>(roots.size());
}

}  // namespace detail

// For each point: edges to every point within tau UNION its k nearest
// neighbors (distance ties to the lower index). Symmetrized, deduplicated,
// no self-loops. Coincident points are fine; only self-pairs are excluded.
inline std::vector<std::pair<int, int>> build_edges(const std::vector<Point2>& points, int k, double tau) {
  const int n = static_cast<int>(points.size());
  if (k < 1) throw std::invalid_argument("build_edges: k must be >= 1, got " + std::to_string(k));
  if (k >= n)
    throw std::invalid_argument("build_edges: k = " + std::to_string(k) + " needs more than " +
                                std::to_string(n) + " points");
  const double tau2 = tau * tau;
  std::set<std::pair<int, int>> set;
  std::vector<std::pair<double, int>> order(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = detail::dist2(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
      if (d2 <= tau2) set.insert(std::minmax(i, j));
      order[m++] = {d2, j};
    }
    std::sort(order.begin(), order.end());
    for (int t = 0; t < k; ++t) set.insert(std::minmax(i, order[static_cast<std::size_t>(t)].second));
  }
  return {set.begin(), set.end()};
}

// Grows tau geometrically until the graph is a single component. Existing
// edges only ever gain company: the kNN part is tau-independent and the
// radius part is monotone in tau.
inline std::pair<std::vector<std::pair<int, int>>, double> ensure_connected(
    const std::vector<Point2>& points, std::vector<std::pair<int, int>> edges, int k, double tau,
    double growth) {
  if (growth <= 1.0)
    throw std::invalid_argument("ensure_connected: growth must exceed 1, got " + std::to_string(growth));
  const int n = static_cast<int>(points.size());
  if (n <= 1) return {std::move(edges), tau};
  while (detail::component_count(n, edges) > 1) {
    tau *= growth;
    edges = build_edges(points, k, tau);
  }
  return {std::move(edges), tau};
}

// 1.5 x median nearest-neighbor distance; non-vacuous radius for evenly
// sampled contours.
inline double auto_tau(const std::vector<Point2>& points) {
  const int n = static_cast<int>(points.size());
  std::vector<double> nn(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (j != i) best = std::min(best, detail::dist2(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]));
    nn[static_cast<std::size_t>(i)] = std::sqrt(best);
  }
  std::sort(nn.begin(), nn.end());
  return 1.5 * nn[static_cast<std::size_t>((n - 1) / 2)];
}

// Full mask-pair to graph pipeline: trace both boundaries, sample n points
// per bone, build kNN-union-radius edges over the merged vertex set, grow tau
// to connectivity, then center on the centroid and scale by the bounding-box
// diagonal. One merged graph lets cross-joint edges encode joint-space width.
inline JointGraph build_joint_graph(const BinaryMask& mask_u, const BinaryMask& mask_l,
                                    const GraphBuildConfig& cfg = {}) {
  if (mask_u.height != mask_l.height || mask_u.width != mask_l.width)
    throw std::invalid_argument("build_joint_graph: mask dimensions differ");
  if (mask_u.empty() || mask_l.empty()) throw std::invalid_argument("build_joint_graph: empty mask");

  const auto pts_u = uniform_sample(trace_boundary(mask_u), cfg.n_per_bone);
  const auto pts_l = uniform_sample(trace_boundary(mask_l), cfg.n_per_bone);

  std::vector<Point2> points;
  points.reserve(pts_u.size() + pts_l.size());
  points.insert(points.end(), pts_u.begin(), pts_u.end());
  points.insert(points.end(), pts_l.begin(), pts_l.end());

  const double tau0 = cfg.tau0 > 0.0 ? cfg.tau0 : auto_tau(points);
  auto edges = build_edges(points, cfg.k, tau0);
  auto [connected, tau_final] = ensure_connected(points, std::move(edges), cfg.k, tau0, cfg.growth);

  double cx = 0.0, cy = 0.0;
  for (const auto& p : points) {
    cx += p[0];
    cy += p[1];
  }
  cx /= static_cast<double>(points.size());
  cy /= static_cast<double>(points.size());
  double min_x = points[0][0], max_x = points[0][0], min_y = points[0][1], max_y = points[0][1];
  for (const auto& p : points) {
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }
  const double diag = std::hypot(max_x - min_x, max_y - min_y);
  const double inv = diag > 0.0 ? 1.0 / diag : 1.0;

  JointGraph g;
  g.tau_final = tau_final;
  g.edges = std::move(connected);
  g.nodes.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double bone = i < pts_u.size() ? 0.0 : 1.0;
    g.nodes.push_back({(points[i][0] - cx) * inv, (points[i][1] - cy) * inv, bone});
  }
  return g;
}

// ---------------------------------------------------------------------------
// versioned JSON round trip
// ---------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const JointGraph& g) {
  nlohmann::json j;
  j["version"] = 1;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes) nodes.push_back({n[0], n[1], n[2]});
  auto& edges = j["edges"] = nlohmann::json::array();
  for (const auto& [a, b] : g.edges) edges.push_back({a, b});
  j["tau_final"] = g.tau_final;
  return j;
}

inline JointGraph graph_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::runtime_error("graph_from_json: unsupported version");
  JointGraph g;
  for (const auto& n : j.at("nodes"))
    g.nodes.push_back({n.at(0).get<double>(), n.at(1).get<double>(), n.at(2).get<double>()});
  for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  g.tau_final = j.at("tau_final").get<double>();
  return g;
}

inline void save_graph_json(const JointGraph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_graph_json: cannot open " + path);
  f << graph_to_json(g).dump();
  f << "\n";
}

inline JointGraph load_graph_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_graph_json: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return graph_from_json(j);
}

}  // namespace morpho
