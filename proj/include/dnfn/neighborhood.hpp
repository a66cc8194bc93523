#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dnfn {

using Point3 = std::array<float, 3>;

/// N points in model units plus an optional class label.
struct PointCloud {
  std::vector<Point3> points;
  std::optional<int> label;

  std::size_t size() const { return points.size(); }
};

/// Throws DomainError unless the cloud is non-empty with finite coordinates.
void validate(const PointCloud& cloud);

/// Squared Euclidean distance, accumulated in double.
inline double squared_distance(const Point3& a, const Point3& b) {
  double s = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
    s += diff * diff;
  }
  return s;
}

/// k neighbor indices per center, stored flat (center-major).
struct NeighborLists {
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;

  std::size_t centers() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::uint32_t> of(std::size_t center) const {
    return std::span<const std::uint32_t>(indices).subspan(center * k, k);
  }
};

enum class NeighborMode { tn, ball, knn, ball_knn, tn_knn, tn_ball };

std::string to_string(NeighborMode mode);
NeighborMode parse_neighbor_mode(const std::string& text);

/// Local and key neighborhoods of one layer. Either list may be empty when
/// its branch is disabled by the mode.
struct NeighborhoodIndex {
  std::vector<std::uint32_t> centers;
  NeighborLists local;
  NeighborLists key;
  NeighborMode mode = NeighborMode::tn_ball;
};

/// All indices 0..n-1, the usual center set.
std::vector<std::uint32_t> all_centers(std::size_t n);

// The tuned searches parallelize over centers (OpenMP); results are written
// to disjoint slots, so they are identical for any thread count.

/// The k nearest points to each center, center excluded, ordered by
/// (distance, index). Throws CapacityError if k > N - 1.
NeighborLists knn(std::span<const Point3> points, std::span<const std::uint32_t> centers,
                  std::size_t k);

/// The k nearest points within `radius` of each center (center excluded),
/// ordered like knn. Short lists are padded with their nearest member; empty
/// ones with the globally nearest point. Throws CapacityError if N = 1.
NeighborLists ball_query(std::span<const Point3> points,
                         std::span<const std::uint32_t> centers, double radius,
                         std::size_t k);

/// Greedy farthest-point sampling of m indices starting at `start`; ties go to
/// the lowest index. Throws CapacityError if m > N.
std::vector<std::uint32_t> fps(std::span<const Point3> points, std::size_t m,
                               std::uint32_t start);

/// Straightforward single-threaded versions used as references by tests and
/// the benchmark.
namespace serial {

NeighborLists knn(std::span<const Point3> points, std::span<const std::uint32_t> centers,
                  std::size_t k);
NeighborLists ball_query(std::span<const Point3> points,
                         std::span<const std::uint32_t> centers, double radius,
                         std::size_t k);
std::vector<std::uint32_t> fps(std::span<const Point3> points, std::size_t m,
                               std::uint32_t start);

}  // namespace serial
}  // namespace dnfn
