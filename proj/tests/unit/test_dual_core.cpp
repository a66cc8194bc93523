#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dnfn/dual_core.hpp"
#include "dnfn/error.hpp"
#include "helpers.hpp"

using namespace dnfn;
using test::random_tensor;

namespace {

AffineLayer<double> plain_layer(const Tensor<double>& w, const Tensor<double>& b, double slope) {
  return AffineLayer<double>::from_values("m", w, b, false, slope);
}

Tensor<double> eye(std::size_t n) {
  Tensor<double> w({n, n});
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  return w;
}

// Loop oracle for (weighted) IT-Conv with normalized Phi and alpha, unit
// gamma and zero beta. Empty weights means unweighted.
std::vector<double> conv_oracle(const Tensor<double>& f, const std::vector<std::uint32_t>& nbr,
                                std::size_t k, const AffineLayer<double>& phi, Aggregate agg,
                                const std::vector<double>& weights) {
  const std::size_t n = f.rows(), c = f.cols();
  std::vector<double> edge(n * k * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < k; ++q) {
      const std::size_t j = nbr[i * k + q];
      for (std::size_t o = 0; o < c; ++o) {
        double s = phi.bias.value[o];
        for (std::size_t t = 0; t < c; ++t) s += phi.weight.value[o * c + t] * (f[j * c + t] - f[i * c + t]);
        edge[(i * k + q) * c + o] = s;
      }
    }
  const auto rel = phi.act.normalize ? test::norm_act(edge, c, phi.act.slope) : edge;
  std::vector<double> pooled(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < c; ++o) {
      double acc = agg == Aggregate::max ? -INFINITY : 0.0;
      for (std::size_t q = 0; q < k; ++q) {
        const std::size_t j = nbr[i * k + q];
        double m = rel[(i * k + q) * c + o] * f[j * c + o];
        if (!weights.empty()) m *= weights[i * k + q];
        acc = agg == Aggregate::max ? std::max(acc, m) : acc + m;
      }
      pooled[i * c + o] = acc;
    }
  return test::norm_act(pooled, c, 0.2);
}

std::vector<double> random_weights(std::size_t rows, std::size_t k, std::mt19937_64& rng) {
  auto w = random_tensor({rows, k}, rng, 0.1, 1.0).values;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t q = 0; q < k; ++q) s += w[r * k + q];
    for (std::size_t q = 0; q < k; ++q) w[r * k + q] /= s;
  }
  return w;
}

std::vector<std::uint32_t> random_rows(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::uint32_t> rows(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < k; ++q) {
      std::uint32_t j;
      do j = static_cast<std::uint32_t>(rng() % n); while (j == i);
      rows[i * k + q] = j;
    }
  return rows;
}

RelationshipMatrix<double> matrix_from_row(std::vector<double> row) {
  // One center (index 0) whose coefficients are `row`; other rows are zero.
  const std::size_t n = row.size();
  RelationshipMatrix<double> rel{1, n, std::vector<double>(n * n, 0.0)};
  std::copy(row.begin(), row.end(), rel.entries.begin());
  return rel;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol * std::max(1.0, std::abs(b[i]))) << i;
}

}  // namespace

TEST(PhiDescriptor, IdentityMapsWithLeakySlope) {
  auto theta = plain_layer(eye(2), Tensor<double>({2}), 0.2);
  auto pi = plain_layer(eye(2), Tensor<double>({2}), 1.0);
  Tape<double> tape(Mode::eval);
  auto d = phi_descriptor(tape.constant(Tensor<double>({1, 2}, {1.0, -1.0})), theta, pi);
  EXPECT_DOUBLE_EQ(d.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(d.value()[1], -0.2);
}

TEST(PhiDescriptor, ZeroInputZeroBiases) {
  std::mt19937_64 rng(1);
  auto theta = plain_layer(random_tensor({3, 3}, rng), Tensor<double>({3}), 0.2);
  auto pi = plain_layer(random_tensor({3, 3}, rng), Tensor<double>({3}), 1.0);
  Tape<double> tape(Mode::eval);
  auto d = phi_descriptor(tape.constant(Tensor<double>({4, 3})), theta, pi);
  for (double v : d.value().values) EXPECT_EQ(v, 0.0);
}

TEST(PhiDescriptor, MatchesComposedLoops) {
  std::mt19937_64 rng(2);
  const std::size_t n = 9, c = 5;
  auto theta = plain_layer(random_tensor({c, c}, rng), random_tensor({c}, rng), 0.2);
  auto pi = plain_layer(random_tensor({c, c}, rng), random_tensor({c}, rng), 1.0);
  const auto f = random_tensor({n, c}, rng);
  Tape<double> tape(Mode::eval);
  const auto d = phi_descriptor(tape.constant(f), theta, pi).value();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> h(c);
    for (std::size_t o = 0; o < c; ++o) {
      double s = theta.bias.value[o];
      for (std::size_t t = 0; t < c; ++t) s += theta.weight.value[o * c + t] * f[i * c + t];
      h[o] = s < 0 ? 0.2 * s : s;
    }
    for (std::size_t o = 0; o < c; ++o) {
      double s = pi.bias.value[o];
      for (std::size_t t = 0; t < c; ++t) s += pi.weight.value[o * c + t] * h[t];
      EXPECT_LE(test::rel_diff(d[i * c + o], s), 1e-12);
    }
  }
}

TEST(PhiDescriptor, WidthMismatchIsDimensionError) {
  std::mt19937_64 rng(3);
  AffineLayer<double> theta("t", 4, 3, false, 0.2, rng);
  AffineLayer<double> pi("p", 4, 4, false, 1.0, rng);
  Tape<double> tape(Mode::eval);
  EXPECT_THROW(phi_descriptor(tape.constant(Tensor<double>({2, 4})), theta, pi), DimensionError);
}

TEST(Relationship, OrthogonalOneHots) {
  const auto rel = relationship_matrix(Tensor<double>({2, 2}, {1, 0, 0, 1}), BatchLayout{1, 2});
  EXPECT_EQ(rel.at(0, 0, 1), 0.0);
  EXPECT_EQ(rel.at(0, 1, 0), 0.0);
}

TEST(Relationship, IdenticalDescriptorsGiveSquaredNorm) {
  Tensor<double> d({4, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    d[i * 3] = 1.0;
    d[i * 3 + 1] = -2.0;
    d[i * 3 + 2] = 0.5;
  }
  const auto rel = relationship_matrix(d, BatchLayout{1, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) {
        EXPECT_DOUBLE_EQ(rel.at(0, i, j), 5.25);
      }
}

TEST(Relationship, MatchesDoubleLoopAndIsSymmetric) {
  std::mt19937_64 rng(4);
  const std::size_t b = 2, n = 16, c = 7;
  const auto d = random_tensor({b * n, c}, rng);
  const auto rel = relationship_matrix(d, BatchLayout{b, n});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double dot = 0;
        for (std::size_t t = 0; t < c; ++t) dot += d[(s * n + i) * c + t] * d[(s * n + j) * c + t];
        EXPECT_LE(test::rel_diff(rel.at(s, i, j), dot), 1e-12);
        EXPECT_LT(std::abs(rel.at(s, i, j) - rel.at(s, j, i)), 1e-12);
      }
}

TEST(Relationship, NeedsTwoPoints) {
  EXPECT_THROW(relationship_matrix(Tensor<double>({1, 3}), BatchLayout{1, 1}), CapacityError);
  EXPECT_THROW(relationship_matrix(Tensor<double>({5, 3}), BatchLayout{2, 3}), DimensionError);
}

TEST(SelectKey, StrongestTwo) {
  const auto lists = select_key_neighbors(matrix_from_row({NAN, 3, 1, 2}), 2);
  const auto row = lists[0].of(0);
  EXPECT_EQ(std::vector<std::uint32_t>(row.begin(), row.end()), (std::vector<std::uint32_t>{1, 3}));
}

TEST(SelectKey, EqualCoefficientsPickLowestIndices) {
  RelationshipMatrix<double> rel{1, 5, std::vector<double>(25, 1.5)};
  const auto lists = select_key_neighbors(rel, 3);
  EXPECT_EQ(std::vector<std::uint32_t>(lists[0].of(0).begin(), lists[0].of(0).end()),
            (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(std::vector<std::uint32_t>(lists[0].of(2).begin(), lists[0].of(2).end()),
            (std::vector<std::uint32_t>{0, 1, 3}));
}

TEST(SelectKey, TooManyIsCapacityError) {
  RelationshipMatrix<double> rel{1, 3, std::vector<double>(9, 0.0)};
  EXPECT_THROW(select_key_neighbors(rel, 3), CapacityError);
  EXPECT_THROW(select_key_neighbors(rel, 0), DomainError);
}

TEST(SelectKey, MatchesFullSortOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 63);
    const std::size_t k = 1 + rng() % (n - 1);
    // Coarse values so ties occur and the index rule is exercised.
    RelationshipMatrix<double> rel{1, n, std::vector<double>(n * n)};
    for (auto& v : rel.entries) v = static_cast<double>(rng() % 7);
    const auto got = select_key_neighbors(rel, k);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::vector<std::uint32_t> idx;
      for (std::uint32_t j = 0; j < n; ++j)
        if (j != i) idx.push_back(j);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](auto a, auto b) { return rel.at(0, i, a) > rel.at(0, i, b); });
      idx.resize(k);
      const auto row = got[0].of(i);
      ASSERT_EQ(std::vector<std::uint32_t>(row.begin(), row.end()), idx);
    }
  }
}

TEST(SelectKey, InvariantToPositiveDescriptorScaling) {
  std::mt19937_64 rng(6);
  const std::size_t n = 20, c = 4;
  const auto d = random_tensor({n, c}, rng);
  auto scaled = d;
  for (auto& v : scaled.values) v *= 3.0;
  const auto r1 = relationship_matrix(d, BatchLayout{1, n});
  const auto r2 = relationship_matrix(scaled, BatchLayout{1, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        EXPECT_NEAR(r2.at(0, i, j), 9.0 * r1.at(0, i, j), 1e-12);
      }
  EXPECT_EQ(select_key_neighbors(r1, 6)[0].indices, select_key_neighbors(r2, 6)[0].indices);
}

TEST(KeyWeights, EqualCoefficientsAreUniform) {
  RelationshipMatrix<double> rel{1, 5, std::vector<double>(25, 0.7)};
  const auto lists = select_key_neighbors(rel, 4);
  const auto w = key_weights(rel, lists);
  for (double v : w.values) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(KeyWeights, LogTwoAndZero) {
  const auto rel = matrix_from_row({NAN, std::log(2.0), 0.0});
  NeighborLists key{2, {1, 2, 0, 2, 0, 1}};
  const auto w = key_weights(rel, std::span<const NeighborLists>(&key, 1));
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
}

TEST(KeyWeights, RowsSumToOne) {
  std::mt19937_64 rng(7);
  std::size_t rows = 0;
  while (rows < 1000) {
    const std::size_t n = 2 + rng() % 40;
    const std::size_t k = 1 + rng() % (n - 1);
    RelationshipMatrix<double> rel{1, n, random_tensor({n * n}, rng, -40.0, 40.0).values};
    const auto lists = select_key_neighbors(rel, k);
    const auto w = key_weights(rel, lists);
    for (std::size_t i = 0; i < n; ++i, ++rows) {
      double s = 0;
      for (std::size_t q = 0; q < k; ++q) {
        EXPECT_GT(w[i * k + q], 0.0);
        s += w[i * k + q];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(KeyWeights, RecordedVersionMatchesPlain) {
  std::mt19937_64 rng(8);
  const BatchLayout layout{2, 9};
  const auto d = random_tensor({layout.rows(), 5}, rng);
  const auto rel = relationship_matrix(d, layout);
  const auto lists = select_key_neighbors(rel, 4);
  const auto rows = to_rows(lists, layout.points);
  Tape<double> tape(Mode::train);
  const auto recorded = key_weights(tape.constant(d), rows, 4).value();
  const auto plain = key_weights(rel, lists);
  expect_close(recorded.values, plain.values, 1e-12);
}

TEST(KeyWeights, SelfInListIsIndexError) {
  RelationshipMatrix<double> rel{1, 3, std::vector<double>(9, 0.0)};
  NeighborLists key{1, {0, 0, 1}};
  EXPECT_THROW(key_weights(rel, std::span<const NeighborLists>(&key, 1)), IndexError);
}

TEST(TnLearning, ListsExcludeSelfAndWeightsNormalize) {
  std::mt19937_64 rng(9);
  const BatchLayout layout{3, 12};
  AffineLayer<double> theta("t", 6, 6, true, 0.2, rng);
  AffineLayer<double> pi("p", 6, 6, false, 1.0, rng);
  Tape<double> tape(Mode::train);
  auto key = tn_learning(tape.constant(random_tensor({layout.rows(), 6}, rng)), layout, theta, pi, 5);
  ASSERT_EQ(key.lists.size(), 3u);
  ASSERT_EQ(key.rows.size(), layout.rows() * 5);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t q = 0; q < 5; ++q) {
        const auto j = key.lists[b].of(i)[q];
        EXPECT_NE(j, i);
        EXPECT_EQ(key.rows[(b * 12 + i) * 5 + q], b * 12 + j);
      }
  const auto& w = key.weights.value();
  for (std::size_t r = 0; r < layout.rows(); ++r) {
    double s = 0;
    for (std::size_t q = 0; q < 5; ++q) s += w[r * 5 + q];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(ItConv, ConstantRelationGivesChannelMax) {
  const std::size_t c = 3;
  auto phi = plain_layer(Tensor<double>({c, c}), Tensor<double>({c}, 1.0), 1.0);
  NormAct<double> alpha("a", c, false, 1.0);
  std::mt19937_64 rng(10);
  const auto f = random_tensor({4, c}, rng);
  const std::vector<std::uint32_t> nbr{1, 2, 0, 3, 0, 1, 2, 1};
  Tape<double> tape(Mode::eval);
  const auto y = it_conv(tape.constant(f), nbr, 2, phi, alpha, Aggregate::max).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < c; ++o)
      EXPECT_DOUBLE_EQ(y[i * c + o], std::max(f[nbr[i * 2] * c + o], f[nbr[i * 2 + 1] * c + o]));
}

TEST(ItConv, SingleNeighborAppliesRelation) {
  std::mt19937_64 rng(11);
  const std::size_t c = 2;
  const auto w = random_tensor({c, c}, rng);
  const auto b = random_tensor({c}, rng);
  auto phi = plain_layer(w, b, 1.0);
  NormAct<double> alpha("a", c, false, 1.0);
  const auto f = random_tensor({2, c}, rng);
  const std::vector<std::uint32_t> nbr{1, 0};
  Tape<double> tape(Mode::eval);
  const auto y = it_conv(tape.constant(f), nbr, 1, phi, alpha, Aggregate::sum).value();
  for (std::size_t o = 0; o < c; ++o) {
    double rel = b[o];
    for (std::size_t t = 0; t < c; ++t) rel += w[o * c + t] * (f[c + t] - f[t]);
    EXPECT_NEAR(y[o], rel * f[c + o], 1e-14);
  }
}

TEST(ItConv, MatchesLoopOracle) {
  std::mt19937_64 rng(12);
  const std::size_t n = 14, c = 5, k = 4;
  for (Aggregate agg : {Aggregate::max, Aggregate::sum}) {
    AffineLayer<double> phi("phi", c, c, true, 0.2, rng);
    phi.bias.value = random_tensor({c}, rng);
    NormAct<double> alpha("a", c, true, 0.2);
    const auto f = random_tensor({n, c}, rng);
    const auto nbr = random_rows(n, k, rng);
    Tape<double> tape(Mode::train);
    const auto y = it_conv(tape.constant(f), nbr, k, phi, alpha, agg).value();
    expect_close(y.values, conv_oracle(f, nbr, k, phi, agg, {}), 1e-12);
  }
}

TEST(ItConv, EmptyNeighborhoodIsRejected) {
  std::mt19937_64 rng(13);
  AffineLayer<double> phi("phi", 2, 2, false, 1.0, rng);
  NormAct<double> alpha("a", 2, false, 1.0);
  Tape<double> tape(Mode::eval);
  const std::vector<std::uint32_t> none;
  EXPECT_THROW(it_conv(tape.constant(Tensor<double>({3, 2})), none, 0, phi, alpha, Aggregate::max),
               CapacityError);
  AffineLayer<double> wide("phi", 3, 3, false, 1.0, rng);
  const std::vector<std::uint32_t> nbr{1, 0, 0};
  EXPECT_THROW(it_conv(tape.constant(Tensor<double>({3, 2})), nbr, 1, wide, alpha, Aggregate::max),
               DimensionError);
}

TEST(WeightedItConv, SingleNeighborEqualsSumConv) {
  std::mt19937_64 rng(14);
  const std::size_t n = 6, c = 3;
  AffineLayer<double> phi("phi", c, c, true, 0.2, rng);
  NormAct<double> alpha("a", c, true, 0.2);
  const auto f = random_tensor({n, c}, rng);
  const auto nbr = random_rows(n, 1, rng);
  Tape<double> tape(Mode::train);
  auto x = tape.constant(f);
  const auto a = weighted_it_conv(x, nbr, 1, tape.constant(Tensor<double>({n, 1}, 1.0)), phi, alpha);
  const auto b = it_conv(x, nbr, 1, phi, alpha, Aggregate::sum);
  expect_close(a.value().values, b.value().values, 1e-14);
}

TEST(WeightedItConv, SharedFeatureAndConstantRelation) {
  std::mt19937_64 rng(15);
  const std::size_t n = 5, c = 3, k = 3;
  const auto bias = random_tensor({c}, rng);
  auto phi = plain_layer(Tensor<double>({c, c}), bias, 1.0);
  NormAct<double> alpha("a", c, false, 0.2);
  Tensor<double> f({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < c; ++o) f[i * c + o] = 0.3 + static_cast<double>(o);
  const auto nbr = random_rows(n, k, rng);
  const auto w = random_weights(n, k, rng);
  Tape<double> tape(Mode::eval);
  const auto y = weighted_it_conv(tape.constant(f), nbr, k, tape.constant(Tensor<double>({n, k}, w)),
                                  phi, alpha).value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < c; ++o) {
      double v = bias[o] * f[o];
      v = v < 0 ? 0.2 * v : v;
      EXPECT_NEAR(y[i * c + o], v, 1e-14);
    }
}

TEST(WeightedItConv, MatchesWeightedLoopOracle) {
  std::mt19937_64 rng(16);
  const std::size_t n = 12, c = 4, k = 5;
  AffineLayer<double> phi("phi", c, c, true, 0.2, rng);
  phi.bias.value = random_tensor({c}, rng);
  NormAct<double> alpha("a", c, true, 0.2);
  const auto f = random_tensor({n, c}, rng);
  const auto nbr = random_rows(n, k, rng);
  const auto w = random_weights(n, k, rng);
  Tape<double> tape(Mode::train);
  const auto y = weighted_it_conv(tape.constant(f), nbr, k, tape.constant(Tensor<double>({n, k}, w)),
                                  phi, alpha).value();
  expect_close(y.values, conv_oracle(f, nbr, k, phi, Aggregate::sum, w), 1e-12);
}

TEST(WeightedItConv, EqualWeightsAreSumOverK) {
  std::mt19937_64 rng(17);
  const std::size_t n = 10, c = 3, k = 4;
  auto phi = plain_layer(random_tensor({c, c}, rng), random_tensor({c}, rng), 0.2);
  NormAct<double> identity("a", c, false, 1.0);
  const auto f = random_tensor({n, c}, rng);
  const auto nbr = random_rows(n, k, rng);
  Tape<double> tape(Mode::eval);
  auto x = tape.constant(f);
  const auto w = tape.constant(Tensor<double>({n, k}, 1.0 / k));
  const auto a = weighted_it_conv(x, nbr, k, w, phi, identity).value();
  const auto b = it_conv(x, nbr, k, phi, identity, Aggregate::sum).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i] / k, 1e-14);
}

TEST(WeightedItConv, WrongWeightCountIsDimensionError) {
  std::mt19937_64 rng(18);
  AffineLayer<double> phi("phi", 2, 2, false, 1.0, rng);
  NormAct<double> alpha("a", 2, false, 1.0);
  Tape<double> tape(Mode::eval);
  const std::vector<std::uint32_t> nbr{1, 0};
  EXPECT_THROW(weighted_it_conv(tape.constant(Tensor<double>({2, 2})), nbr, 1,
                                tape.constant(Tensor<double>({3, 1})), phi, alpha),
               DimensionError);
}

namespace {

struct DnfeCase {
  std::mt19937_64 rng{19};
  BatchLayout layout{2, 10};
  std::size_t k = 3;
  DnfeParams<double> params{"layer2", 4, 6, rng};
  Tensor<double> features = random_tensor({20, 4}, rng);
  std::vector<std::uint32_t> local = random_rows_batched();

  std::vector<std::uint32_t> random_rows_batched() {
    std::vector<NeighborLists> per;
    for (std::size_t b = 0; b < layout.batch; ++b) {
      const auto r = random_rows(layout.points, k, rng);
      per.push_back(NeighborLists{k, r});
    }
    return to_rows(per, layout.points);
  }
};

}  // namespace

TEST(Dnfe, OutputWidthIsFusionWidth) {
  DnfeCase s;
  Tape<double> tape(Mode::train);
  auto x = tape.constant(s.features);
  auto key = tn_learning(x, s.layout, s.params.theta, s.params.pi, s.k);
  Branch<double> local{s.local, s.k, std::nullopt};
  Branch<double> keyb{key.rows, s.k, key.weights};
  const auto y = dnfe_forward(x, local, keyb, s.params);
  EXPECT_EQ(y.shape(), (Shape{20, 6}));
  EXPECT_EQ(s.params.out_width(), 6u);
}

TEST(Dnfe, KeyOnlyZeroesLocalSlot) {
  DnfeCase s;
  Tape<double> tape(Mode::train);
  auto x = tape.constant(s.features);
  auto key = tn_learning(x, s.layout, s.params.theta, s.params.pi, s.k);
  const auto y = dnfe_forward(x, Branch<double>{}, Branch<double>{key.rows, s.k, key.weights}, s.params).value();

  auto conv = weighted_it_conv(x, key.rows, s.k, key.weights, s.params.phi_key, s.params.alpha_key);
  auto raised = s.params.raise_key.forward(conv);
  auto fused = s.params.fusion.forward(ops::concat_cols(tape.constant(Tensor<double>({20, 6})), raised));
  EXPECT_EQ(y.values, fused.value().values);
}

TEST(Dnfe, NeighborOrderDoesNotMatter) {
  DnfeCase s;
  std::mt19937_64 rng(20);
  Tape<double> tape(Mode::train);
  auto x = tape.constant(s.features);
  auto key = tn_learning(x, s.layout, s.params.theta, s.params.pi, s.k);
  const auto base = dnfe_forward(x, Branch<double>{s.local, s.k, std::nullopt},
                                 Branch<double>{key.rows, s.k, key.weights}, s.params).value();
  for (int trial = 0; trial < 10; ++trial) {
    auto local = s.local;
    auto krows = key.rows;
    auto kw = key.weights.value();
    for (std::size_t r = 0; r < s.layout.rows(); ++r) {
      std::vector<std::size_t> p(s.k);
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), rng);
      std::shuffle(local.begin() + r * s.k, local.begin() + (r + 1) * s.k, rng);
      for (std::size_t q = 0; q < s.k; ++q) {
        krows[r * s.k + q] = key.rows[r * s.k + p[q]];
        kw[r * s.k + q] = key.weights.value()[r * s.k + p[q]];
      }
    }
    const auto y = dnfe_forward(x, Branch<double>{local, s.k, std::nullopt},
                                Branch<double>{krows, s.k, tape.constant(kw)}, s.params).value();
    expect_close(y.values, base.values, 1e-12);
  }
}

TEST(Dnfe, GradientsReachEveryParameterIncludingThetaAndPi) {
  DnfeCase s;
  std::vector<Parameter<double>*> ps;
  s.params.visit_parameters([&](Parameter<double>& p) { ps.push_back(&p); });
  Parameter<double> feat("features", s.features);
  ps.push_back(&feat);
  const auto report = test::check_params(ps, [&](Tape<double>& tape) {
    auto x = tape.parameter(feat);
    auto key = tn_learning(x, s.layout, s.params.theta, s.params.pi, s.k);
    return dnfe_forward(x, Branch<double>{s.local, s.k, std::nullopt},
                        Branch<double>{key.rows, s.k, key.weights}, s.params);
  });
  EXPECT_TRUE(report.passed) << report.worst_param << " " << report.worst;
  for (const auto& e : report.params) {
    if (e.name.find(".bias") != std::string::npos) continue;  // removed by normalization
    EXPECT_GT(e.checked, 0u) << e.name;
  }
  bool theta_moves = false, pi_moves = false;
  for (auto* p : ps) {
    double g = 0;
    for (double v : p->grad) g += std::abs(v);
    if (p->name == "layer2.theta.weight") theta_moves = g > 0;
    if (p->name == "layer2.pi.weight") pi_moves = g > 0;
  }
  EXPECT_TRUE(theta_moves);
  EXPECT_TRUE(pi_moves);
}

TEST(Dnfe, PiStandardizesAtFixedScale) {
  DnfeCase s;
  std::vector<std::string> names;
  s.params.pi.visit_parameters([&](Parameter<double>& p) { names.push_back(p.name); });
  EXPECT_EQ(names, (std::vector<std::string>{"layer2.pi.weight", "layer2.pi.bias"}));
  Tape<double> tape(Mode::train);
  const auto d = phi_descriptor(tape.constant(s.features), s.params.theta, s.params.pi).value();
  const double scale = std::pow(4.0, -0.25);
  for (std::size_t o = 0; o < 4; ++o) {
    double mean = 0, sq = 0;
    for (std::size_t r = 0; r < 20; ++r) mean += d[r * 4 + o];
    mean /= 20;
    for (std::size_t r = 0; r < 20; ++r) sq += std::pow(d[r * 4 + o] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(sq / 20), scale, 1e-3);
  }
}
