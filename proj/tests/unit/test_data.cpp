#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "dnfn/data.hpp"
#include "dnfn/error.hpp"

using namespace dnfn;
namespace fs = std::filesystem;

namespace {

double norm(const Point3& p) { return std::sqrt(squared_distance(p, {0, 0, 0})); }

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dnfn_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_text(auto fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

double det3(const Matrix3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace

TEST(Primitives, SpherePointsOnRadius) {
  std::mt19937_64 rng(1);
  for (const auto& p : sample_primitive(Primitive::sphere, 1000, 1.0, rng)) {
    EXPECT_NEAR(norm(p), 1.0, 1e-6);
  }
  for (const auto& p : sample_primitive(Primitive::sphere, 200, 0.5, rng)) {
    EXPECT_NEAR(norm(p), 0.5, 1e-6);
  }
}

TEST(Primitives, PlaneHasZeroHeight) {
  std::mt19937_64 rng(2);
  for (const auto& p : sample_primitive(Primitive::plane, 500, 1.0, rng)) {
    EXPECT_EQ(p[2], 0.0f);
    EXPECT_LE(std::abs(p[0]), 1.0f);
    EXPECT_LE(std::abs(p[1]), 1.0f);
  }
}

TEST(Primitives, CubePointsOnSurface) {
  std::mt19937_64 rng(3);
  for (const auto& p : sample_primitive(Primitive::cube, 500, 1.0, rng)) {
    const float m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
    EXPECT_NEAR(m, 1.0f, 1e-6f);
  }
}

TEST(Primitives, CylinderPointsOnSideOrCaps) {
  std::mt19937_64 rng(4);
  for (const auto& p : sample_primitive(Primitive::cylinder, 500, 1.0, rng)) {
    const double r = std::hypot(p[0], p[1]);
    const bool side = std::abs(r - 1.0) < 1e-6 && std::abs(p[2]) <= 1.0f;
    const bool cap = std::abs(std::abs(p[2]) - 1.0f) < 1e-6f && r <= 1.0 + 1e-6;
    EXPECT_TRUE(side || cap);
  }
}

TEST(Primitives, ConeBaseAndSlant) {
  std::mt19937_64 rng(5);
  for (const auto& p : sample_primitive(Primitive::cone, 500, 1.0, rng)) {
    const double r = std::hypot(p[0], p[1]);
    const bool base = std::abs(p[2] + 1.0f) < 1e-6f && r <= 1.0 + 1e-6;
    const bool slant = std::abs(r - (1.0 - p[2]) / 2.0) < 1e-5;
    EXPECT_TRUE(base || slant);
  }
}

TEST(Primitives, SeedDetermines) {
  std::mt19937_64 a(6), b(6);
  EXPECT_EQ(sample_primitive(Primitive::torus, 64, 1.0, a),
            sample_primitive(Primitive::torus, 64, 1.0, b));
  EXPECT_THROW(sample_primitive(Primitive::sphere, 4, 0.0, a), DomainError);
}

TEST(Dataset, ShapesLabelsAndDeterminism) {
  const std::vector<std::string> cls{"sphere", "cube", "cone"};
  const auto a = gen_dataset(cls, 4, 64, 11, Split::train);
  const auto b = gen_dataset(cls, 4, 64, 11, Split::train);
  ASSERT_EQ(a.clouds.size(), 12u);
  EXPECT_EQ(a.num_classes(), 3u);
  for (std::size_t i = 0; i < a.clouds.size(); ++i) {
    EXPECT_EQ(a.clouds[i].size(), 64u);
    EXPECT_EQ(*a.clouds[i].label, static_cast<int>(i / 4));
    EXPECT_EQ(a.clouds[i].points, b.clouds[i].points);
  }
}

TEST(Dataset, SplitsAreDisjoint) {
  const std::vector<std::string> cls{"sphere", "cylinder"};
  const auto tr = gen_dataset(cls, 10, 32, 3, Split::train);
  const auto te = gen_dataset(cls, 10, 32, 3, Split::test);
  std::set<std::vector<Point3>> seen;
  for (const auto& c : tr.clouds) seen.insert(c.points);
  for (const auto& c : te.clouds) EXPECT_EQ(seen.count(c.points), 0u);
}

TEST(Dataset, UnknownClassNamesIt) {
  try {
    gen_dataset({"sphere", "dodecahedron"}, 1, 32, 1, Split::train);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("dodecahedron"), std::string::npos);
  }
}

TEST(CloudIo, TextRoundTripIsExact) {
  std::mt19937_64 rng(7);
  const auto pts = sample_primitive(Primitive::cone, 100, 1.1, rng);
  EXPECT_EQ(decode_xyz(encode_xyz(pts)), pts);
}

TEST(CloudIo, BinaryRoundTripIsExact) {
  std::mt19937_64 rng(8);
  const auto pts = sample_primitive(Primitive::torus, 100, 0.9, rng);
  const auto bytes = encode_binary(pts);
  EXPECT_EQ(bytes.size(), 12u + 12u * 100u);
  EXPECT_EQ(decode_binary(bytes), pts);
}

TEST(CloudIo, TextAndBinaryAgree) {
  std::mt19937_64 rng(9);
  const auto pts = sample_primitive(Primitive::sphere, 50, 1.0, rng);
  EXPECT_EQ(decode_xyz(encode_xyz(pts)), decode_binary(encode_binary(pts)));
}

TEST(CloudIo, BadMagicNamesExpectedMagic) {
  auto bytes = encode_binary({{1, 2, 3}});
  bytes[0] = 'X';
  const auto msg = error_text([&] { decode_binary(bytes); });
  EXPECT_NE(msg.find("DNPC"), std::string::npos) << msg;
  EXPECT_NE(msg.find("offset 0"), std::string::npos) << msg;
}

TEST(CloudIo, TruncationReportsOffset) {
  auto bytes = encode_binary({{1, 2, 3}, {4, 5, 6}});
  bytes.resize(bytes.size() - 5);
  const auto msg = error_text([&] { decode_binary(bytes); });
  EXPECT_NE(msg.find("offset 31"), std::string::npos) << msg;
  EXPECT_FALSE(error_text([] { decode_binary("DNPC"); }).empty());
}

TEST(CloudIo, NonNumericTokenReportsLineAndColumn) {
  const auto msg = error_text([] { decode_xyz("1 2 3\n4 abc 6\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column 3"), std::string::npos) << msg;
  EXPECT_FALSE(error_text([] { decode_xyz("1 2 3"); }).empty());
  EXPECT_FALSE(error_text([] { decode_xyz("1 2 3 4\n"); }).empty());
  EXPECT_FALSE(error_text([] { decode_xyz("1 2 inf\n"); }).empty());
}

TEST(CloudIo, FileRoundTripWithLabel) {
  const auto dir = scratch_dir("io");
  PointCloud c{{{0.25f, -1, 2}, {3, 4, 5}}, 2};
  for (auto fmt : {CloudFormat::xyz, CloudFormat::binary}) {
    const auto path = dir / (fmt == CloudFormat::xyz ? "c.xyz" : "c.dnpc");
    EXPECT_EQ(format_from_path(path), fmt);
    save_cloud(path, c, fmt);
    const auto back = load_cloud(path, fmt);
    EXPECT_EQ(back.points, c.points);
    EXPECT_EQ(back.label, c.label);
  }
  EXPECT_THROW(format_from_path(dir / "c.ply"), FormatError);
  EXPECT_THROW(load_cloud(dir / "missing.xyz", CloudFormat::xyz), FormatError);
  fs::remove_all(dir);
}

TEST(CloudIo, DatasetDirectoryRoundTrip) {
  const auto dir = scratch_dir("ds");
  const std::vector<std::string> cls{"cube", "plane"};
  const auto tr = gen_dataset(cls, 3, 16, 5, Split::train);
  const auto te = gen_dataset(cls, 2, 16, 5, Split::test);
  save_dataset(dir, tr, CloudFormat::binary);
  save_dataset(dir, te, CloudFormat::binary);
  const auto back = load_dataset(dir, Split::train);
  EXPECT_EQ(back.class_names, cls);
  ASSERT_EQ(back.clouds.size(), tr.clouds.size());
  std::multiset<std::pair<int, std::vector<Point3>>> want, got;
  for (const auto& c : tr.clouds) want.emplace(*c.label, c.points);
  for (const auto& c : back.clouds) got.emplace(*c.label, c.points);
  EXPECT_EQ(got, want);
  EXPECT_EQ(load_dataset(dir, Split::test).clouds.size(), 4u);
  EXPECT_THROW(load_dataset(dir / "nowhere", Split::train), ConfigError);
  fs::remove_all(dir);
}

TEST(Augment, IdentitySpecReturnsInput) {
  std::mt19937_64 rng(10);
  const PointCloud c{sample_primitive(Primitive::cube, 40, 1.0, rng), 1};
  const auto out = augment(c, AugmentSpec{}, 99);
  EXPECT_EQ(out.points, c.points);
  EXPECT_EQ(out.label, c.label);
}

TEST(Augment, RotationPreservesPairwiseDistances) {
  std::mt19937_64 rng(11);
  const PointCloud c{sample_primitive(Primitive::cone, 50, 1.0, rng), 0};
  for (auto mode : {Rotation::z_axis, Rotation::arbitrary}) {
    AugmentSpec spec;
    spec.rotation = mode;
    const auto out = augment(c, spec, 3);
    for (std::size_t i = 0; i < 50; ++i) {
      for (std::size_t j = i + 1; j < 50; j += 7) {
        EXPECT_NEAR(squared_distance(out.points[i], out.points[j]),
                    squared_distance(c.points[i], c.points[j]), 1e-5);
      }
      if (mode == Rotation::z_axis) {
        EXPECT_NEAR(out.points[i][2], c.points[i][2], 1e-6);
      }
    }
  }
}

TEST(Augment, FixedScaleMultipliesCoordinates) {
  const PointCloud c{{{1, 2, 3}, {-1, 0, 0.5f}}, std::nullopt};
  AugmentSpec spec;
  spec.scale_lo = spec.scale_hi = 2.0;
  const auto out = augment(c, spec, 1);
  for (std::size_t i = 0; i < 2; ++i)
    for (int d = 0; d < 3; ++d) EXPECT_FLOAT_EQ(out.points[i][d], 2 * c.points[i][d]);
}

TEST(Augment, SubsampleIsSubsetInOrder) {
  std::mt19937_64 rng(12);
  const PointCloud c{sample_primitive(Primitive::sphere, 256, 1.0, rng), 3};
  AugmentSpec spec;
  spec.subsample = 128;
  const auto out = augment(c, spec, 4);
  ASSERT_EQ(out.size(), 128u);
  std::size_t j = 0;
  for (const auto& p : out.points) {
    while (j < c.size() && c.points[j] != p) ++j;
    ASSERT_LT(j, c.size());
    ++j;
  }
  EXPECT_EQ(augment(c, spec, 4).points, out.points);
  spec.subsample = 257;
  EXPECT_THROW(augment(c, spec, 4), CapacityError);
}

TEST(Augment, JitterHasRequestedSpread) {
  const PointCloud c{std::vector<Point3>(20000, Point3{0, 0, 0}), std::nullopt};
  AugmentSpec spec;
  spec.jitter = 0.01;
  const auto out = augment(c, spec, 5);
  double sq = 0;
  for (const auto& p : out.points) sq += squared_distance(p, {0, 0, 0});
  EXPECT_NEAR(std::sqrt(sq / (3.0 * 20000)), 0.01, 3e-4);
}

TEST(Augment, InvalidSpecs) {
  const PointCloud c{{{0, 0, 0}}, std::nullopt};
  AugmentSpec spec;
  spec.scale_lo = 2;
  spec.scale_hi = 1;
  EXPECT_THROW(augment(c, spec, 1), DomainError);
  spec = AugmentSpec{};
  spec.jitter = -1;
  EXPECT_THROW(augment(c, spec, 1), DomainError);
}

TEST(Rotation, ProperOrthogonal) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 100; ++t) {
    for (auto mode : {Rotation::z_axis, Rotation::arbitrary}) {
      const auto r = random_rotation(mode, rng);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double s = 0;
          for (int q = 0; q < 3; ++q) s += r[q][i] * r[q][j];
          EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12);
        }
      EXPECT_NEAR(det3(r), 1.0, 1e-12);
    }
  }
}

TEST(Rotation, ArbitraryCoversSphere) {
  // The image of a fixed axis should have mean near zero over many draws.
  std::mt19937_64 rng(14);
  std::array<double, 3> mean{};
  for (int t = 0; t < 20000; ++t) {
    const auto r = random_rotation(Rotation::arbitrary, rng);
    for (int d = 0; d < 3; ++d) mean[d] += r[d][2] / 20000.0;
  }
  for (double m : mean) EXPECT_NEAR(m, 0.0, 0.03);
}

TEST(Rotation, NamesParse) {
  EXPECT_EQ(parse_rotation("none"), Rotation::none);
  EXPECT_EQ(parse_rotation("z"), Rotation::z_axis);
  EXPECT_EQ(parse_rotation("arbitrary"), Rotation::arbitrary);
  EXPECT_EQ(parse_rotation(to_string(Rotation::z_axis)), Rotation::z_axis);
  EXPECT_THROW(parse_rotation("x"), ConfigError);
}
