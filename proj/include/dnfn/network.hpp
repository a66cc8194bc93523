#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dnfn/dual_core.hpp"

namespace dnfn {

/// Shape of the classifier: a relation-convolution first layer followed by
/// three DNFE layers, global max pooling and two fully connected layers. Every
/// layer, the logit layer included, is batch-normalized.
struct NetworkConfig {
  std::size_t points_in = 256;
  std::vector<std::size_t> layer_points{256, 128, 64, 32};
  std::vector<std::size_t> channels{64, 128, 256, 512};
  std::size_t k = 8;  // neighbors per branch
  std::vector<double> radii{0.4, 0.5, 0.7, 1.0};
  std::size_t head_hidden = 256;
  std::size_t num_classes = 4;
  double dropout = 0.5;
  NeighborMode mode = NeighborMode::tn_ball;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

inline constexpr std::size_t kLayers = 4;
inline constexpr std::size_t kRelationWidth = 10;

/// Geometric relation of a neighbor pair: (|x_k - x_i|, x_i, x_k, x_k - x_i).
template <typename T>
std::array<T, kRelationWidth> relation_vector(const Point3& center, const Point3& neighbor);

template <typename T>
struct FirstLayerParams {
  AffineLayer<T> embed;     // xyz -> C1, the raised per-point feature
  AffineLayer<T> relation;  // relation vector -> C1 channel weights
  NormAct<T> act;

  template <typename F>
  void visit_parameters(F&& f) {
    embed.visit_parameters(f);
    relation.visit_parameters(f);
    act.visit_parameters(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    embed.visit_buffers(f);
    relation.visit_buffers(f);
    act.visit_buffers(f);
  }
};

template <typename T>
struct ModelParams {
  FirstLayerParams<T> first;
  std::array<DnfeParams<T>, kLayers - 1> dnfe;
  AffineLayer<T> fc1;
  AffineLayer<T> fc2;

  static ModelParams init(const NetworkConfig& config, std::uint64_t seed);

  template <typename F>
  void visit_parameters(F&& f) {
    first.visit_parameters(f);
    for (auto& d : dnfe) d.visit_parameters(f);
    fc1.visit_parameters(f);
    fc2.visit_parameters(f);
  }
  /// Non-trainable state (normalization running statistics).
  template <typename F>
  void visit_buffers(F&& f) {
    first.visit_buffers(f);
    for (auto& d : dnfe) d.visit_buffers(f);
    fc1.visit_buffers(f);
    fc2.visit_buffers(f);
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    visit_parameters([&](Parameter<T>& p) { out.push_back(&p); });
    return out;
  }
  void zero_grad() {
    visit_parameters([](Parameter<T>& p) { p.zero_grad(); });
  }
};

/// Total trainable scalar count.
template <typename T>
std::size_t param_count(ModelParams<T>& params);

/// Simplified relation-shape convolution for the first layer: per neighbor,
/// an MLP maps the relation vector to channel weights that scale the raised
/// neighbor feature; max over neighbors, then normalization and activation.
/// `coords` holds each cloud's points (layout.points each), `features` the
/// per-point input (xyz), `nbr_rows` global rows k per center.
template <typename T>
Var<T> rs_conv_lite(std::span<const std::vector<Point3>> coords, Var<T> features,
                    std::span<const std::uint32_t> nbr_rows, std::size_t k,
                    FirstLayerParams<T>& params);

/// Per-layer record of one forward pass, for visualization.
struct LayerTrace {
  std::vector<std::vector<Point3>> coords;  // per cloud
  std::vector<NeighborLists> local;         // per cloud, empty if disabled
  std::vector<NeighborLists> key;
};

struct ForwardTrace {
  std::array<LayerTrace, kLayers> layers;
};

/// Centers a cloud on its centroid and scales it to unit max norm. The
/// centroid sums coordinates in sorted order, so the result does not depend
/// on point order.
std::vector<Point3> normalize_cloud(std::span<const Point3> points);

/// Per-layer point counts for an input of n points. Sparser inputs keep the
/// configured counts wherever they have enough points, so deeper layers see
/// the same number of centers as in training.
std::vector<std::size_t> layer_schedule(const NetworkConfig& config, std::size_t n);

/// Index of the point farthest from the origin (ties: lowest index); the
/// deterministic, order-independent start for farthest-point sampling.
std::uint32_t farthest_from_origin(std::span<const Point3> points);

/// Full classifier. All clouds in the batch must have the same size; clouds
/// larger than points_in are reduced to points_in by farthest-point
/// sampling. Mode (train/eval) comes from the tape. Returns logits B x K.
template <typename T>
Var<T> dndfn_forward(Tape<T>& tape, std::span<const PointCloud> clouds, ModelParams<T>& params,
                     const NetworkConfig& config, ForwardTrace* trace = nullptr);

}  // namespace dnfn
