#include "dnfn/dual_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dnfn {

std::vector<std::uint32_t> to_rows(std::span<const NeighborLists> per_cloud,
                                   std::size_t points_per_cloud) {
  std::vector<std::uint32_t> rows;
  for (std::size_t b = 0; b < per_cloud.size(); ++b) {
    const auto offset = static_cast<std::uint32_t>(b * points_per_cloud);
    for (auto idx : per_cloud[b].indices) {
      if (idx >= points_per_cloud) {
        throw IndexError("neighbor index " + std::to_string(idx) + " outside cloud of " +
                         std::to_string(points_per_cloud) + " points");
      }
      rows.push_back(offset + idx);
    }
  }
  return rows;
}

template <typename T>
Var<T> phi_descriptor(Var<T> features, AffineLayer<T>& theta, AffineLayer<T>& pi) {
  if (pi.in != theta.out) {
    throw DimensionError("phi_descriptor: theta output width " + std::to_string(theta.out) +
                         " vs Pi input width " + std::to_string(pi.in));
  }
  return pi.forward(theta.forward(features));
}

template <typename T>
RelationshipMatrix<T> relationship_matrix(const Tensor<T>& desc, BatchLayout layout) {
  if (desc.rows() != layout.rows()) {
    throw DimensionError("relationship_matrix: descriptors " + shape_str(desc.shape) +
                         " for " + std::to_string(layout.batch) + " clouds of " +
                         std::to_string(layout.points) + " points");
  }
  if (layout.points < 2) throw CapacityError("relationship_matrix: need at least 2 points");
  const std::size_t n = layout.points;
  const std::size_t c = desc.cols();
  RelationshipMatrix<T> rel{layout.batch, n, std::vector<T>(layout.batch * n * n)};
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < layout.rows(); ++r) {
    const std::size_t b = r / n;
    const std::size_t i = r % n;
    const T* di = desc.row(r);
    T* out = rel.entries.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        out[j] = std::numeric_limits<T>::quiet_NaN();
        continue;
      }
      const T* dj = desc.row(b * n + j);
      T acc{};
      for (std::size_t q = 0; q < c; ++q) acc += di[q] * dj[q];
      out[j] = acc;
    }
  }
  return rel;
}

template <typename T>
std::vector<NeighborLists> select_key_neighbors(const RelationshipMatrix<T>& rel,
                                                std::size_t k) {
  const std::size_t n = rel.points;
  if (k == 0) throw DomainError("select_key_neighbors: k must be at least 1");
  if (n == 0 || k > n - 1) {
    throw CapacityError("select_key_neighbors: k=" + std::to_string(k) + " exceeds N-1=" +
                        std::to_string(n == 0 ? 0 : n - 1));
  }
  std::vector<NeighborLists> out(rel.batch, NeighborLists{k, {}});
  for (auto& l : out) l.indices.resize(n * k);
#pragma omp parallel
  {
    std::vector<std::uint32_t> order(n - 1);
#pragma omp for schedule(static)
    for (std::size_t r = 0; r < rel.batch * n; ++r) {
      const std::size_t b = r / n;
      const std::size_t i = r % n;
      const T* row = rel.entries.data() + r * n;
      std::size_t w = 0;
      for (std::uint32_t j = 0; j < n; ++j) {
        if (j != i) order[w++] = j;
      }
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                        order.end(), [row](std::uint32_t a, std::uint32_t c) {
                          return row[a] > row[c] || (row[a] == row[c] && a < c);
                        });
      std::copy_n(order.begin(), k, out[b].indices.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
  }
  return out;
}

template <typename T>
Tensor<T> key_weights(const RelationshipMatrix<T>& rel, std::span<const NeighborLists> key) {
  if (key.size() != rel.batch) {
    throw DimensionError("key_weights: " + std::to_string(key.size()) + " list sets for " +
                         std::to_string(rel.batch) + " clouds");
  }
  const std::size_t k = key.empty() ? 0 : key[0].k;
  const std::size_t n = rel.points;
  Tensor<T> w({rel.batch * n, k});
  for (std::size_t b = 0; b < rel.batch; ++b) {
    if (key[b].k != k || key[b].centers() != n) {
      throw DimensionError("key_weights: list set " + std::to_string(b) + " does not cover " +
                           std::to_string(n) + " centers with k=" + std::to_string(k));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto lst = key[b].of(i);
      T mx = -std::numeric_limits<T>::infinity();
      for (auto j : lst) {
        if (j == i) throw IndexError("key_weights: center " + std::to_string(i) + " lists itself");
        mx = std::max(mx, rel.at(b, i, j));
      }
      T sum{};
      T* out = w.row(b * n + i);
      for (std::size_t q = 0; q < k; ++q) {
        out[q] = std::exp(rel.at(b, i, lst[q]) - mx);
        sum += out[q];
      }
      for (std::size_t q = 0; q < k; ++q) out[q] /= sum;
    }
  }
  return w;
}

template <typename T>
Var<T> key_weights(Var<T> desc, std::span<const std::uint32_t> key_rows, std::size_t k) {
  return ops::softmax_rows(ops::pair_dot(desc, key_rows, k));
}

template <typename T>
KeyNeighborhood<T> tn_learning(Var<T> features, BatchLayout layout, AffineLayer<T>& theta,
                               AffineLayer<T>& pi, std::size_t k) {
  Var<T> desc = phi_descriptor(features, theta, pi);
  const auto rel = relationship_matrix(desc.value(), layout);
  KeyNeighborhood<T> key;
  key.lists = select_key_neighbors(rel, k);
  key.rows = to_rows(key.lists, layout.points);
  if (features.tape->track_regime()) {
    std::uint64_t h = 0;
    for (auto r : key.rows) h = h * 1000003u + r;
    features.tape->note_regime(h);
  }
  key.weights = key_weights(desc, key.rows, k);
  return key;
}

namespace {

template <typename T>
void check_conv(Var<T> features, std::span<const std::uint32_t> nbr_rows, std::size_t k,
                const AffineLayer<T>& phi, const char* op) {
  const std::size_t c = features.cols();
  if (phi.in != c || phi.out != c) {
    throw DimensionError(std::string(op) + ": relation map " + std::to_string(phi.in) + "->" +
                         std::to_string(phi.out) + " for feature width " + std::to_string(c));
  }
  if (k == 0 || nbr_rows.empty()) {
    throw CapacityError(std::string(op) + ": empty neighbor list");
  }
  if (nbr_rows.size() != features.rows() * k) {
    throw DimensionError(std::string(op) + ": " + std::to_string(nbr_rows.size()) +
                         " neighbor slots for " + std::to_string(features.rows()) +
                         " centers with k=" + std::to_string(k));
  }
}

// Phi(f_k - f_i) * f_k for every neighbor slot.
template <typename T>
Var<T> transfer_messages(Var<T> features, std::span<const std::uint32_t> nbr_rows,
                         std::size_t k, AffineLayer<T>& phi) {
  auto& tape = *features.tape;
  Var<T> projected = phi.project(features);
  Var<T> edges = ops::edge_diff<T>(projected, nbr_rows, k, tape.parameter(phi.bias));
  Var<T> relation = phi.act.forward(edges);
  return ops::mul(relation, ops::gather_rows(features, nbr_rows));
}

}  // namespace

template <typename T>
Var<T> it_conv(Var<T> features, std::span<const std::uint32_t> nbr_rows, std::size_t k,
               AffineLayer<T>& phi, NormAct<T>& alpha, Aggregate aggregate) {
  check_conv(features, nbr_rows, k, phi, "it_conv");
  Var<T> msg = transfer_messages(features, nbr_rows, k, phi);
  Var<T> pooled = aggregate == Aggregate::max ? ops::group_max(msg, k) : ops::group_sum(msg, k);
  return alpha.forward(pooled);
}

template <typename T>
Var<T> weighted_it_conv(Var<T> features, std::span<const std::uint32_t> nbr_rows,
                        std::size_t k, Var<T> weights, AffineLayer<T>& phi,
                        NormAct<T>& alpha) {
  check_conv(features, nbr_rows, k, phi, "weighted_it_conv");
  if (weights.value().size() != nbr_rows.size()) {
    throw DimensionError("weighted_it_conv: weights " + shape_str(weights.shape()) + " for " +
                         std::to_string(nbr_rows.size()) + " neighbor slots");
  }
  Var<T> msg = transfer_messages(features, nbr_rows, k, phi);
  return alpha.forward(ops::group_sum(ops::scale_rows(msg, weights), k));
}

template <typename T>
DnfeParams<T>::DnfeParams(const std::string& name, std::size_t c_in, std::size_t c_out,
                          std::mt19937_64& rng)
    : theta(name + ".theta", c_in, c_in, true, static_cast<T>(kLeakySlope), rng),
      pi(name + ".pi", c_in, c_in, false, T{1}, rng),
      phi_local(name + ".phi_local", c_in, c_in, true, static_cast<T>(kLeakySlope), rng),
      phi_key(name + ".phi_key", c_in, c_in, true, static_cast<T>(kLeakySlope), rng),
      alpha_local(name + ".alpha_local", c_in, true, static_cast<T>(kLeakySlope)),
      alpha_key(name + ".alpha_key", c_in, true, static_cast<T>(kLeakySlope)),
      raise_local(name + ".raise_local", c_in, c_out, true, static_cast<T>(kLeakySlope), rng),
      raise_key(name + ".raise_key", c_in, c_out, true, static_cast<T>(kLeakySlope), rng),
      fusion(name + ".fusion", 2 * c_out, c_out, true, static_cast<T>(kLeakySlope), rng) {
  // Standardized descriptors scaled by C^(-1/4) give relationship
  // coefficients of unit spread, so the transfer softmax starts soft and
  // cannot sharpen by inflating Pi.
  pi.act = NormAct<T>::fixed_scale(name + ".pi", c_in,
                                   static_cast<T>(std::pow(static_cast<double>(c_in), -0.25)));
}

namespace {

template <typename T>
Var<T> run_slot(Var<T> features, const Branch<T>& slot, AffineLayer<T>& phi,
                NormAct<T>& alpha, AffineLayer<T>& raise) {
  if (!slot.enabled()) {
    return features.tape->constant(Tensor<T>({features.rows(), raise.out}));
  }
  Var<T> conv = slot.weights
                    ? weighted_it_conv(features, slot.rows, slot.k, *slot.weights, phi, alpha)
                    : it_conv(features, slot.rows, slot.k, phi, alpha, Aggregate::max);
  return raise.forward(conv);
}

}  // namespace

template <typename T>
Var<T> dnfe_forward(Var<T> features, const Branch<T>& local, const Branch<T>& key,
                    DnfeParams<T>& params) {
  if (features.cols() != params.in_width()) {
    throw DimensionError("dnfe_forward: features " + shape_str(features.shape()) +
                         " for layer input width " + std::to_string(params.in_width()));
  }
  Var<T> a = run_slot(features, local, params.phi_local, params.alpha_local, params.raise_local);
  Var<T> b = run_slot(features, key, params.phi_key, params.alpha_key, params.raise_key);
  return params.fusion.forward(ops::concat_cols(a, b));
}

#define DNFN_INSTANTIATE(T)                                                                  \
  template Var<T> phi_descriptor(Var<T>, AffineLayer<T>&, AffineLayer<T>&);                 \
  template RelationshipMatrix<T> relationship_matrix(const Tensor<T>&, BatchLayout);       \
  template std::vector<NeighborLists> select_key_neighbors(const RelationshipMatrix<T>&,   \
                                                           std::size_t);                   \
  template Tensor<T> key_weights(const RelationshipMatrix<T>&,                             \
                                 std::span<const NeighborLists>);                          \
  template Var<T> key_weights(Var<T>, std::span<const std::uint32_t>, std::size_t);         \
  template KeyNeighborhood<T> tn_learning(Var<T>, BatchLayout, AffineLayer<T>&,            \
                                          AffineLayer<T>&, std::size_t);                   \
  template Var<T> it_conv(Var<T>, std::span<const std::uint32_t>, std::size_t,              \
                          AffineLayer<T>&, NormAct<T>&, Aggregate);                        \
  template Var<T> weighted_it_conv(Var<T>, std::span<const std::uint32_t>, std::size_t,     \
                                   Var<T>, AffineLayer<T>&, NormAct<T>&);                  \
  template struct DnfeParams<T>;                                                            \
  template Var<T> dnfe_forward(Var<T>, const Branch<T>&, const Branch<T>&, DnfeParams<T>&);

DNFN_INSTANTIATE(float)
DNFN_INSTANTIATE(double)

#undef DNFN_INSTANTIATE

}  // namespace dnfn
