#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dnfn/layers.hpp"
#include "dnfn/neighborhood.hpp"

// Dual-neighborhood building blocks. Feature maps are batched: B clouds of N
// points each occupy rows b*N .. b*N + N - 1 of a (B*N) x C tensor. Neighbor
// lists handed to the convolutions hold such global row numbers.

namespace dnfn {

struct BatchLayout {
  std::size_t batch = 1;
  std::size_t points = 0;
  std::size_t rows() const { return batch * points; }
};

/// Per-cloud neighbor lists (indices local to each cloud) flattened into
/// global batch rows.
std::vector<std::uint32_t> to_rows(std::span<const NeighborLists> per_cloud,
                                   std::size_t points_per_cloud);

/// Feature descriptor Pi(sigma(theta(f))), with sigma the activation attached
/// to theta. One parameter set serves every point.
template <typename T>
Var<T> phi_descriptor(Var<T> features, AffineLayer<T>& theta, AffineLayer<T>& pi);

/// Pairwise descriptor dot products within each cloud; the diagonal is NaN
/// and never read.
template <typename T>
struct RelationshipMatrix {
  std::size_t batch = 0;
  std::size_t points = 0;
  std::vector<T> entries;  // batch x points x points

  T at(std::size_t b, std::size_t i, std::size_t j) const {
    return entries[(b * points + i) * points + j];
  }
};

template <typename T>
RelationshipMatrix<T> relationship_matrix(const Tensor<T>& desc, BatchLayout layout);

/// Per center, the k other points with the largest coefficient, ordered by
/// (coefficient descending, index ascending). One list set per cloud.
template <typename T>
std::vector<NeighborLists> select_key_neighbors(const RelationshipMatrix<T>& rel,
                                                std::size_t k);

/// Softmax of each center's coefficients over its key list; rows x k.
template <typename T>
Tensor<T> key_weights(const RelationshipMatrix<T>& rel, std::span<const NeighborLists> key);

/// Recorded version of key_weights computed from descriptors, so gradients
/// reach theta and Pi. `key_rows` are global rows, k per center.
template <typename T>
Var<T> key_weights(Var<T> desc, std::span<const std::uint32_t> key_rows, std::size_t k);

/// Key neighborhood found by learning: lists, their global rows and the
/// recorded transfer weights.
template <typename T>
struct KeyNeighborhood {
  std::vector<NeighborLists> lists;
  std::vector<std::uint32_t> rows;
  Var<T> weights;
};

template <typename T>
KeyNeighborhood<T> tn_learning(Var<T> features, BatchLayout layout, AffineLayer<T>& theta,
                               AffineLayer<T>& pi, std::size_t k);

enum class Aggregate { max, sum };

/// Information-transfer convolution:
///   f'_i = alpha( A_k { Phi(f_k - f_i) * f_k } ),  * elementwise.
/// Phi maps C -> C. Because Phi's affine part is linear, the per-edge map is
/// evaluated as W f_k - W f_i + b from one per-point projection.
template <typename T>
Var<T> it_conv(Var<T> features, std::span<const std::uint32_t> nbr_rows, std::size_t k,
               AffineLayer<T>& phi, NormAct<T>& alpha, Aggregate aggregate);

/// Weighted variant: f''_i = alpha( sum_k w_k Phi(f_k - f_i) * f_k ), where
/// weights holds one scalar per neighbor slot (rows x k).
template <typename T>
Var<T> weighted_it_conv(Var<T> features, std::span<const std::uint32_t> nbr_rows,
                        std::size_t k, Var<T> weights, AffineLayer<T>& phi,
                        NormAct<T>& alpha);

/// Parameters of one Dual-Neighborhood Fusion Encoder layer (C_in -> C_out).
template <typename T>
struct DnfeParams {
  AffineLayer<T> theta;        // C_in -> C_in, normalized, leaky
  AffineLayer<T> pi;           // C_in -> C_in, standardized at a fixed scale
  AffineLayer<T> phi_local;    // C_in -> C_in relation map, local slot
  AffineLayer<T> phi_key;      // same for the key slot
  NormAct<T> alpha_local;
  NormAct<T> alpha_key;
  AffineLayer<T> raise_local;  // C_in -> C_out after aggregation
  AffineLayer<T> raise_key;
  AffineLayer<T> fusion;       // 2 C_out -> C_out

  DnfeParams() = default;
  DnfeParams(const std::string& name, std::size_t c_in, std::size_t c_out,
             std::mt19937_64& rng);

  std::size_t in_width() const { return theta.in; }
  std::size_t out_width() const { return fusion.out; }

  template <typename F>
  void visit_parameters(F&& f) {
    theta.visit_parameters(f);
    pi.visit_parameters(f);
    phi_local.visit_parameters(f);
    phi_key.visit_parameters(f);
    alpha_local.visit_parameters(f);
    alpha_key.visit_parameters(f);
    raise_local.visit_parameters(f);
    raise_key.visit_parameters(f);
    fusion.visit_parameters(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    theta.visit_buffers(f);
    pi.visit_buffers(f);
    phi_local.visit_buffers(f);
    phi_key.visit_buffers(f);
    alpha_local.visit_buffers(f);
    alpha_key.visit_buffers(f);
    raise_local.visit_buffers(f);
    raise_key.visit_buffers(f);
    fusion.visit_buffers(f);
  }
};

/// One concatenation slot of a DNFE layer. k = 0 disables the slot, which
/// then contributes zeros. With weights the slot runs weighted IT-Conv (sum),
/// otherwise IT-Conv (max).
template <typename T>
struct Branch {
  std::vector<std::uint32_t> rows;
  std::size_t k = 0;
  std::optional<Var<T>> weights;

  bool enabled() const { return k > 0; }
};

/// Local slot and key slot, each raised to C_out, concatenated, fused by an
/// MLP to C_out.
template <typename T>
Var<T> dnfe_forward(Var<T> features, const Branch<T>& local, const Branch<T>& key,
                    DnfeParams<T>& params);

}  // namespace dnfn
