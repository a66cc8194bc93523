#include "dnfn/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dnfn/error.hpp"

namespace dnfn {

namespace {

constexpr std::array<Primitive, 6> kPrimitives{Primitive::sphere, Primitive::cube,
                                               Primitive::cylinder, Primitive::torus,
                                               Primitive::plane, Primitive::cone};
constexpr double kTorusTube = 0.35;
constexpr char kCloudMagic[4] = {'D', 'N', 'P', 'C'};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point3 to_point(double x, double y, double z) {
  return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
}

// Point on a uniformly chosen disk of radius r, in the plane z.
Point3 disk_point(std::mt19937_64& rng, double r, double z) {
  const double rho = r * std::sqrt(uniform(rng, 0.0, 1.0));
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return to_point(rho * std::cos(phi), rho * std::sin(phi), z);
}

Matrix3 multiply(const Matrix3& a, const Matrix3& b) {
  Matrix3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l < 3; ++l) c[i][j] += a[i][l] * b[l][j];
  return c;
}

Matrix3 axis_rotation(int axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const int u = (axis + 1) % 3;
  const int v = (axis + 2) % 3;
  Matrix3 m{};
  m[axis][axis] = 1.0;
  m[u][u] = c;
  m[u][v] = -s;
  m[v][u] = s;
  m[v][v] = c;
  return m;
}

Point3 transform(const Matrix3& m, const Point3& p, double scale = 1.0) {
  Point3 out{};
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) acc += m[i][j] * static_cast<double>(p[j]);
    out[i] = static_cast<float>(scale * acc);
  }
  return out;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::filesystem::path label_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".label");
}

}  // namespace

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::sphere: return "sphere";
    case Primitive::cube: return "cube";
    case Primitive::cylinder: return "cylinder";
    case Primitive::torus: return "torus";
    case Primitive::plane: return "plane";
    case Primitive::cone: return "cone";
  }
  return "?";
}

Primitive parse_primitive(const std::string& name) {
  for (auto p : kPrimitives) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown shape class '" + name +
                    "' (expected sphere, cube, cylinder, torus, plane or cone)");
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::vector<Point3> sample_primitive(Primitive p, std::size_t n, double size,
                                     std::mt19937_64& rng) {
  if (!(size > 0.0)) throw DomainError("sample_primitive: size must be positive");
  std::vector<Point3> pts;
  pts.reserve(n);
  const double two_pi = 2.0 * std::numbers::pi;
  while (pts.size() < n) {
    switch (p) {
      case Primitive::sphere: {
        std::normal_distribution<double> nd;
        double v[3];
        double norm = 0.0;
        do {
          for (auto& c : v) c = nd(rng);
          norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        } while (norm < 1e-12);
        pts.push_back(to_point(size * v[0] / norm, size * v[1] / norm, size * v[2] / norm));
        break;
      }
      case Primitive::cube: {
        // Six faces of equal area.
        const int face = std::uniform_int_distribution<int>(0, 5)(rng);
        const int axis = face / 2;
        double v[3];
        v[axis] = face % 2 == 0 ? -size : size;
        v[(axis + 1) % 3] = uniform(rng, -size, size);
        v[(axis + 2) % 3] = uniform(rng, -size, size);
        pts.push_back(to_point(v[0], v[1], v[2]));
        break;
      }
      case Primitive::cylinder: {
        // Radius and half-height `size`: side area 4 pi s^2, each cap pi s^2.
        const double pick = uniform(rng, 0.0, 6.0);
        if (pick < 4.0) {
          const double phi = uniform(rng, 0.0, two_pi);
          pts.push_back(
              to_point(size * std::cos(phi), size * std::sin(phi), uniform(rng, -size, size)));
        } else {
          pts.push_back(disk_point(rng, size, pick < 5.0 ? -size : size));
        }
        break;
      }
      case Primitive::torus: {
        // Rejection on the angle pair keeps the area element uniform.
        const double big = size;
        const double tube = kTorusTube * size;
        const double u = uniform(rng, 0.0, two_pi);
        const double v = uniform(rng, 0.0, two_pi);
        if (uniform(rng, 0.0, big + tube) > big + tube * std::cos(v)) break;
        const double ring = big + tube * std::cos(v);
        pts.push_back(to_point(ring * std::cos(u), ring * std::sin(u), tube * std::sin(v)));
        break;
      }
      case Primitive::plane:
        pts.push_back(to_point(uniform(rng, -size, size), uniform(rng, -size, size), 0.0));
        break;
      case Primitive::cone: {
        // Base radius `size` at z = -size, apex at z = +size.
        const double slant = std::sqrt(size * size + 4.0 * size * size);
        const double side = std::numbers::pi * size * slant;
        const double base = std::numbers::pi * size * size;
        if (uniform(rng, 0.0, side + base) < side) {
          const double t = std::sqrt(uniform(rng, 0.0, 1.0));  // fraction from the apex
          const double phi = uniform(rng, 0.0, two_pi);
          pts.push_back(
              to_point(t * size * std::cos(phi), t * size * std::sin(phi), size - 2.0 * size * t));
        } else {
          pts.push_back(disk_point(rng, size, -size));
        }
        break;
      }
    }
  }
  return pts;
}

Dataset gen_dataset(const std::vector<std::string>& classes, std::size_t per_class,
                    std::size_t points, std::uint64_t seed, Split split) {
  if (classes.empty()) throw ConfigError("gen_dataset: no classes given");
  if (per_class < 1) throw ConfigError("gen_dataset: per_class must be at least 1");
  if (points < 8) throw ConfigError("gen_dataset: points must be at least 8");
  std::vector<Primitive> prims;
  for (const auto& name : classes) prims.push_back(parse_primitive(name));

  Dataset ds;
  ds.class_names = classes;
  ds.split = split;
  ds.seed = seed;
  ds.clouds.reserve(classes.size() * per_class);
  for (std::size_t c = 0; c < prims.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(split == Split::train ? 1 : 2),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
      std::mt19937_64 rng(seq);
      const double size = uniform(rng, kScaleLow, kScaleHigh);
      auto pts = sample_primitive(prims[c], points, size, rng);
      Matrix3 pose = multiply(axis_rotation(2, uniform(rng, -kPoseTilt, kPoseTilt)),
                              multiply(axis_rotation(1, uniform(rng, -kPoseTilt, kPoseTilt)),
                                       axis_rotation(0, uniform(rng, -kPoseTilt, kPoseTilt))));
      std::array<double, 3> shift{};
      for (auto& s : shift) s = uniform(rng, -kPoseShift, kPoseShift);
      for (auto& q : pts) {
        q = transform(pose, q);
        for (int d = 0; d < 3; ++d) q[d] = static_cast<float>(q[d] + shift[d]);
      }
      ds.clouds.push_back(PointCloud{std::move(pts), static_cast<int>(c)});
    }
  }
  return ds;
}

CloudFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".xyz") return CloudFormat::xyz;
  if (ext == ".dnpc") return CloudFormat::binary;
  throw FormatError("unknown cloud file extension '" + ext + "' in " + path.string() +
                    " (expected .xyz or .dnpc)");
}

std::string encode_xyz(const std::vector<Point3>& points) {
  std::string out;
  char buf[64];
  for (const auto& p : points) {
    for (int d = 0; d < 3; ++d) {
      auto res = std::to_chars(buf, buf + sizeof buf, p[d]);
      out.append(buf, res.ptr);
      out.push_back(d == 2 ? '\n' : ' ');
    }
  }
  return out;
}

std::vector<Point3> decode_xyz(const std::string& text) {
  std::vector<Point3> pts;
  std::size_t pos = 0;
  std::size_t line = 0;
  while (pos < text.size()) {
    ++line;
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) {
      throw FormatError("xyz line " + std::to_string(line) + ": missing newline terminator");
    }
    const char* cur = text.data() + pos;
    const char* stop = text.data() + end;
    Point3 p{};
    for (int d = 0; d < 3; ++d) {
      auto res = std::from_chars(cur, stop, p[d]);
      if (res.ec != std::errc{}) {
        throw FormatError("xyz line " + std::to_string(line) + ": expected a number at column " +
                          std::to_string(cur - (text.data() + pos) + 1));
      }
      if (!std::isfinite(p[d])) {
        throw FormatError("xyz line " + std::to_string(line) + ": non-finite coordinate");
      }
      cur = res.ptr;
      if (d < 2) {
        if (cur == stop || *cur != ' ') {
          throw FormatError("xyz line " + std::to_string(line) +
                            ": expected a single space after coordinate " + std::to_string(d + 1));
        }
        ++cur;
      }
    }
    if (cur != stop) {
      throw FormatError("xyz line " + std::to_string(line) + ": trailing characters after three values");
    }
    pts.push_back(p);
    pos = end + 1;
  }
  return pts;
}

std::string encode_binary(const std::vector<Point3>& points) {
  static_assert(sizeof(float) == 4);
  std::string out(kCloudMagic, 4);
  put_u32(out, kCloudVersion);
  put_u32(out, static_cast<std::uint32_t>(points.size()));
  for (const auto& p : points) {
    for (float v : p) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<Point3> decode_binary(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCloudMagic, 4) != 0) {
    throw FormatError("binary cloud: bad magic at byte offset 0, expected \"DNPC\"");
  }
  if (bytes.size() < 12) {
    throw FormatError("binary cloud: header truncated at byte offset " +
                      std::to_string(bytes.size()));
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCloudVersion) {
    throw FormatError("binary cloud: unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  }
  const std::uint64_t count = get_u32(bytes, 8);
  const std::uint64_t need = 12 + count * 12;
  if (bytes.size() < need) {
    throw FormatError("binary cloud: truncated at byte offset " + std::to_string(bytes.size()) +
                      ", expected " + std::to_string(need) + " bytes");
  }
  if (bytes.size() > need) {
    throw FormatError("binary cloud: trailing bytes after byte offset " + std::to_string(need));
  }
  std::vector<Point3> pts(count);
  std::size_t off = 12;
  for (auto& p : pts) {
    for (auto& v : p) {
      v = std::bit_cast<float>(get_u32(bytes, off));
      off += 4;
    }
  }
  return pts;
}

void save_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format) {
  write_file(path, format == CloudFormat::xyz ? encode_xyz(cloud.points)
                                              : encode_binary(cloud.points));
  const auto lp = label_path(path);
  if (cloud.label) {
    write_file(lp, std::to_string(*cloud.label) + "\n");
  } else {
    std::filesystem::remove(lp);
  }
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  const std::string bytes = read_file(path);
  PointCloud cloud;
  try {
    cloud.points = format == CloudFormat::xyz ? decode_xyz(bytes) : decode_binary(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto lp = label_path(path);
  if (std::filesystem::exists(lp)) {
    const std::string text = read_file(lp);
    int label = 0;
    auto begin = text.data();
    auto end = text.data() + text.size();
    while (end > begin && (end[-1] == '\n' || end[-1] == '\r' || end[-1] == ' ')) --end;
    auto res = std::from_chars(begin, end, label);
    if (res.ec != std::errc{} || res.ptr != end) {
      throw FormatError(lp.string() + " line 1: expected one integer label");
    }
    cloud.label = label;
  }
  return cloud;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, CloudFormat format) {
  namespace fs = std::filesystem;
  const fs::path sub = dir / to_string(dataset.split);
  fs::create_directories(sub);
  std::string names;
  for (const auto& n : dataset.class_names) names += n + "\n";
  const fs::path classes = dir / "classes.txt";
  if (fs::exists(classes) && read_file(classes) != names) {
    throw ConfigError(classes.string() + " already lists different classes");
  }
  write_file(classes, names);
  const char* ext = format == CloudFormat::xyz ? ".xyz" : ".dnpc";
  for (std::size_t i = 0; i < dataset.clouds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu%s", i, ext);
    save_cloud(sub / name, dataset.clouds[i], format);
  }
}

Dataset load_dataset(const std::filesystem::path& dir, Split split) {
  namespace fs = std::filesystem;
  const fs::path classes = dir / "classes.txt";
  if (!fs::exists(classes)) throw ConfigError("dataset " + dir.string() + " has no classes.txt");
  Dataset ds;
  ds.split = split;
  std::istringstream names(read_file(classes));
  for (std::string line; std::getline(names, line);) {
    if (!line.empty()) ds.class_names.push_back(line);
  }
  const fs::path sub = dir / to_string(split);
  if (!fs::is_directory(sub)) throw ConfigError("dataset " + dir.string() + " has no " + to_string(split) + "/ directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(sub)) {
    const auto ext = entry.path().extension();
    if (ext == ".xyz" || ext == ".dnpc") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    PointCloud c = load_cloud(f, format_from_path(f));
    if (!c.label) throw FormatError(f.string() + ": missing .label companion");
    if (*c.label < 0 || static_cast<std::size_t>(*c.label) >= ds.num_classes()) {
      throw ConfigError(f.string() + ": label " + std::to_string(*c.label) + " outside the " +
                        std::to_string(ds.num_classes()) + " listed classes");
    }
    ds.clouds.push_back(std::move(c));
  }
  return ds;
}

std::string to_string(Rotation r) {
  switch (r) {
    case Rotation::none: return "none";
    case Rotation::z_axis: return "z";
    case Rotation::arbitrary: return "arbitrary";
  }
  return "?";
}

Rotation parse_rotation(const std::string& text) {
  if (text == "none") return Rotation::none;
  if (text == "z" || text == "z-axis" || text == "z_axis") return Rotation::z_axis;
  if (text == "arbitrary" || text == "so3") return Rotation::arbitrary;
  throw ConfigError("unknown rotation '" + text + "' (expected none, z or arbitrary)");
}

void AugmentSpec::validate() const {
  if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi)) {
    throw DomainError("augment: scale range [" + std::to_string(scale_lo) + ", " +
                      std::to_string(scale_hi) + "] must satisfy 0 < lo <= hi");
  }
  if (!(jitter >= 0.0)) throw DomainError("augment: jitter sigma must be non-negative");
}

Matrix3 random_rotation(Rotation mode, std::mt19937_64& rng) {
  if (mode == Rotation::none) return axis_rotation(2, 0.0);
  if (mode == Rotation::z_axis) {
    return axis_rotation(2, uniform(rng, 0.0, 2.0 * std::numbers::pi));
  }
  // Shoemake's construction of a uniform unit quaternion.
  const double u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double u3 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double w = a * std::sin(u2);
  const double x = a * std::cos(u2);
  const double y = b * std::sin(u3);
  const double z = b * std::cos(u3);
  return Matrix3{{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                  {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                  {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.subsample && *spec.subsample > cloud.size()) {
    throw CapacityError("augment: subsample of " + std::to_string(*spec.subsample) +
                        " points from a cloud of " + std::to_string(cloud.size()));
  }
  if (spec.is_identity()) return cloud;
  std::mt19937_64 rng(seed);
  PointCloud out;
  out.label = cloud.label;
  if (spec.subsample) {
    std::vector<std::uint32_t> idx(cloud.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(i);
    const std::size_t m = *spec.subsample;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    out.points.reserve(m);
    for (auto i : idx) out.points.push_back(cloud.points[i]);
  } else {
    out.points = cloud.points;
  }
  if (spec.rotation != Rotation::none || spec.scale_lo != 1.0 || spec.scale_hi != 1.0) {
    const Matrix3 rot = random_rotation(spec.rotation, rng);
    const double s = spec.scale_lo == spec.scale_hi ? spec.scale_lo
                                                     : uniform(rng, spec.scale_lo, spec.scale_hi);
    for (auto& p : out.points) p = transform(rot, p, s);
  }
  if (spec.jitter > 0.0) {
    std::normal_distribution<double> nd(0.0, spec.jitter);
    for (auto& p : out.points)
      for (auto& v : p) v = static_cast<float>(v + nd(rng));
  }
  return out;
}

}  // namespace dnfn
