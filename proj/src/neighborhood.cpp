#include "dnfn/neighborhood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "dnfn/error.hpp"

namespace dnfn {

namespace {

using Candidate = std::pair<double, std::uint32_t>;  // (squared distance, index)

void check_centers(std::span<const Point3> points, std::span<const std::uint32_t> centers,
                   const char* op) {
  for (auto c : centers) {
    if (c >= points.size()) {
      throw IndexError(std::string(op) + ": center " + std::to_string(c) + " outside " +
                       std::to_string(points.size()) + " points");
    }
  }
}

void check_knn(std::span<const Point3> points, std::size_t k) {
  if (k == 0) throw DomainError("knn: k must be at least 1");
  if (points.empty() || k > points.size() - 1) {
    throw CapacityError("knn: k=" + std::to_string(k) + " exceeds N-1=" +
                        std::to_string(points.empty() ? 0 : points.size() - 1));
  }
}

void check_ball(std::span<const Point3> points, double radius, std::size_t k) {
  if (!(radius > 0.0)) throw DomainError("ball_query: radius must be positive");
  if (k == 0) throw DomainError("ball_query: k must be at least 1");
  if (points.size() < 2) throw CapacityError("ball_query: no candidate points (N < 2)");
}

// Nearest k candidates of one center using a bounded partial sort.
void knn_one(std::span<const Point3> points, std::uint32_t center, std::size_t k,
             std::vector<Candidate>& buf, std::uint32_t* out) {
  buf.clear();
  const Point3& c = points[center];
  for (std::uint32_t j = 0; j < points.size(); ++j) {
    if (j != center) buf.emplace_back(squared_distance(c, points[j]), j);
  }
  std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k), buf.end());
  for (std::size_t j = 0; j < k; ++j) out[j] = buf[j].second;
}

void ball_one(std::span<const Point3> points, std::uint32_t center, double r2,
              std::size_t k, std::vector<Candidate>& buf, std::uint32_t* out) {
  buf.clear();
  const Point3& c = points[center];
  Candidate nearest{std::numeric_limits<double>::infinity(), 0};
  for (std::uint32_t j = 0; j < points.size(); ++j) {
    if (j == center) continue;
    const Candidate cand{squared_distance(c, points[j]), j};
    nearest = std::min(nearest, cand);
    if (cand.first <= r2) buf.push_back(cand);
  }
  const std::size_t take = std::min(k, buf.size());
  std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(take), buf.end());
  for (std::size_t j = 0; j < take; ++j) out[j] = buf[j].second;
  const std::uint32_t pad = take > 0 ? buf[0].second : nearest.second;
  for (std::size_t j = take; j < k; ++j) out[j] = pad;
}

}  // namespace

void validate(const PointCloud& cloud) {
  if (cloud.points.empty()) throw DomainError("point cloud is empty");
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    for (float v : cloud.points[i]) {
      if (!std::isfinite(v)) {
        throw DomainError("point " + std::to_string(i) + " has a non-finite coordinate");
      }
    }
  }
}

std::string to_string(NeighborMode mode) {
  switch (mode) {
    case NeighborMode::tn: return "tn";
    case NeighborMode::ball: return "ball";
    case NeighborMode::knn: return "knn";
    case NeighborMode::ball_knn: return "ball+knn";
    case NeighborMode::tn_knn: return "tn+knn";
    case NeighborMode::tn_ball: return "tn+ball";
  }
  return "?";
}

NeighborMode parse_neighbor_mode(const std::string& text) {
  if (text == "tn") return NeighborMode::tn;
  if (text == "ball") return NeighborMode::ball;
  if (text == "knn") return NeighborMode::knn;
  if (text == "ball+knn" || text == "knn+ball") return NeighborMode::ball_knn;
  if (text == "tn+knn" || text == "knn+tn") return NeighborMode::tn_knn;
  if (text == "tn+ball" || text == "ball+tn") return NeighborMode::tn_ball;
  throw ConfigError("unknown neighborhood mode '" + text +
                    "' (expected tn, ball, knn, ball+knn, tn+knn or tn+ball)");
}

std::vector<std::uint32_t> all_centers(std::size_t n) {
  std::vector<std::uint32_t> c(n);
  std::iota(c.begin(), c.end(), 0u);
  return c;
}

NeighborLists knn(std::span<const Point3> points, std::span<const std::uint32_t> centers,
                  std::size_t k) {
  check_knn(points, k);
  check_centers(points, centers, "knn");
  NeighborLists out{k, std::vector<std::uint32_t>(centers.size() * k)};
#pragma omp parallel
  {
    std::vector<Candidate> buf;
    buf.reserve(points.size());
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < centers.size(); ++i) {
      knn_one(points, centers[i], k, buf, out.indices.data() + i * k);
    }
  }
  return out;
}

NeighborLists ball_query(std::span<const Point3> points,
                         std::span<const std::uint32_t> centers, double radius,
                         std::size_t k) {
  check_ball(points, radius, k);
  check_centers(points, centers, "ball_query");
  const double r2 = radius * radius;
  NeighborLists out{k, std::vector<std::uint32_t>(centers.size() * k)};
#pragma omp parallel
  {
    std::vector<Candidate> buf;
    buf.reserve(points.size());
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < centers.size(); ++i) {
      ball_one(points, centers[i], r2, k, buf, out.indices.data() + i * k);
    }
  }
  return out;
}

std::vector<std::uint32_t> fps(std::span<const Point3> points, std::size_t m,
                               std::uint32_t start) {
  const std::size_t n = points.size();
  if (m == 0) throw DomainError("fps: m must be at least 1");
  if (m > n) {
    throw CapacityError("fps: m=" + std::to_string(m) + " exceeds N=" + std::to_string(n));
  }
  if (start >= n) throw IndexError("fps: start index " + std::to_string(start) + " outside cloud");
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> picks;
  picks.reserve(m);
  picks.push_back(start);
  std::uint32_t last = start;
  for (std::size_t s = 1; s < m; ++s) {
    double best = -1.0;
    std::uint32_t best_idx = 0;
#pragma omp parallel
    {
      double tbest = -1.0;
      std::uint32_t tidx = 0;
#pragma omp for schedule(static) nowait
      for (std::size_t j = 0; j < n; ++j) {
        const double d = squared_distance(points[last], points[j]);
        if (d < mind[j]) mind[j] = d;
        if (mind[j] > tbest) {
          tbest = mind[j];
          tidx = static_cast<std::uint32_t>(j);
        }
      }
#pragma omp critical(dnfn_fps)
      {
        // Lexicographic (max distance, min index) merge is independent of
        // thread order.
        if (tbest > best || (tbest == best && tidx < best_idx)) {
          best = tbest;
          best_idx = tidx;
        }
      }
    }
    picks.push_back(best_idx);
    last = best_idx;
  }
  return picks;
}

namespace serial {

NeighborLists knn(std::span<const Point3> points, std::span<const std::uint32_t> centers,
                  std::size_t k) {
  check_knn(points, k);
  check_centers(points, centers, "knn");
  NeighborLists out{k, {}};
  for (auto c : centers) {
    std::vector<Candidate> all;
    for (std::uint32_t j = 0; j < points.size(); ++j) {
      if (j != c) all.emplace_back(squared_distance(points[c], points[j]), j);
    }
    std::sort(all.begin(), all.end());
    for (std::size_t j = 0; j < k; ++j) out.indices.push_back(all[j].second);
  }
  return out;
}

NeighborLists ball_query(std::span<const Point3> points,
                         std::span<const std::uint32_t> centers, double radius,
                         std::size_t k) {
  check_ball(points, radius, k);
  check_centers(points, centers, "ball_query");
  NeighborLists out{k, {}};
  for (auto c : centers) {
    std::vector<Candidate> all;
    for (std::uint32_t j = 0; j < points.size(); ++j) {
      if (j != c) all.emplace_back(squared_distance(points[c], points[j]), j);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::uint32_t> inside;
    for (const auto& [d2, j] : all) {
      if (d2 <= radius * radius && inside.size() < k) inside.push_back(j);
    }
    const std::uint32_t pad = inside.empty() ? all.front().second : inside.front();
    inside.resize(k, pad);
    out.indices.insert(out.indices.end(), inside.begin(), inside.end());
  }
  return out;
}

std::vector<std::uint32_t> fps(std::span<const Point3> points, std::size_t m,
                               std::uint32_t start) {
  const std::size_t n = points.size();
  if (m == 0) throw DomainError("fps: m must be at least 1");
  if (m > n) {
    throw CapacityError("fps: m=" + std::to_string(m) + " exceeds N=" + std::to_string(n));
  }
  if (start >= n) throw IndexError("fps: start index " + std::to_string(start) + " outside cloud");
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> picks{start};
  while (picks.size() < m) {
    const std::uint32_t last = picks.back();
    std::uint32_t best = 0;
    for (std::uint32_t j = 0; j < n; ++j) {
      mind[j] = std::min(mind[j], squared_distance(points[last], points[j]));
      if (mind[j] > mind[best]) best = j;
    }
    picks.push_back(best);
  }
  return picks;
}

}  // namespace serial
}  // namespace dnfn
