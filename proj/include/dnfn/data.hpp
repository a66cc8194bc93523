#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dnfn/neighborhood.hpp"

namespace dnfn {

// Synthetic shape primitives.
//
// Canonical shapes are centered at the origin with unit size s (radius or
// half-extent). A generated cloud draws s uniformly from [0.8, 1.25], samples
// the surface uniformly, then applies a pose: a tilt of up to 0.25 rad about
// each axis and a translation of up to 0.1 per coordinate.

enum class Primitive { sphere, cube, cylinder, torus, plane, cone };

std::string to_string(Primitive p);
/// Throws ConfigError naming the unknown class.
Primitive parse_primitive(const std::string& name);

enum class Split { train, test };

std::string to_string(Split s);

inline constexpr double kScaleLow = 0.8;
inline constexpr double kScaleHigh = 1.25;
inline constexpr double kPoseTilt = 0.25;
inline constexpr double kPoseShift = 0.1;

/// Uniform surface sample of a canonical primitive of size `size`, before any
/// pose. Spheres have radius `size`; planes lie in z = 0.
std::vector<Point3> sample_primitive(Primitive p, std::size_t n, double size,
                                     std::mt19937_64& rng);

struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<std::string> class_names;
  Split split = Split::train;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_names.size(); }
};

/// per_class clouds of each listed class, labels in list order. Each cloud has
/// its own random stream keyed by (seed, split, class, index), so train and
/// test never share a stream.
Dataset gen_dataset(const std::vector<std::string>& classes, std::size_t per_class,
                    std::size_t points, std::uint64_t seed, Split split);

// Cloud files.

enum class CloudFormat { xyz, binary };

/// ".xyz" is text, ".dnpc" binary; anything else is a FormatError.
CloudFormat format_from_path(const std::filesystem::path& path);

void save_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format);
/// Reads the points and, if present, the companion "<path>.label" file.
PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);

std::string encode_xyz(const std::vector<Point3>& points);
std::vector<Point3> decode_xyz(const std::string& text);
std::string encode_binary(const std::vector<Point3>& points);
std::vector<Point3> decode_binary(const std::string& bytes);

inline constexpr std::uint32_t kCloudVersion = 1;

/// Directory layout: classes.txt (one name per line) and one file per cloud
/// under train/ and test/, each with its .label companion.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, CloudFormat format);
Dataset load_dataset(const std::filesystem::path& dir, Split split);

// Augmentation.

enum class Rotation { none, z_axis, arbitrary };

std::string to_string(Rotation r);
Rotation parse_rotation(const std::string& text);

struct AugmentSpec {
  Rotation rotation = Rotation::none;
  double scale_lo = 1.0;
  double scale_hi = 1.0;
  double jitter = 0.0;  // Gaussian sigma per coordinate
  std::optional<std::size_t> subsample;

  bool is_identity() const {
    return rotation == Rotation::none && scale_lo == 1.0 && scale_hi == 1.0 && jitter == 0.0 &&
           !subsample;
  }
  /// Throws DomainError unless lo <= hi, both positive, and sigma >= 0.
  void validate() const;
};

using Matrix3 = std::array<std::array<double, 3>, 3>;

/// Rotation drawn uniformly: over SO(3) from a uniform unit quaternion, or
/// about the z axis by a uniform angle.
Matrix3 random_rotation(Rotation mode, std::mt19937_64& rng);

/// Subsample (order kept), rotate, scale, jitter. The identity spec returns
/// the cloud unchanged. Throws CapacityError if subsample exceeds the size.
PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, std::uint64_t seed);

}  // namespace dnfn
