#include "dnfn/network.hpp"

#include <algorithm>
#include <cmath>

namespace dnfn {

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("network config: " + msg); };
  if (layer_points.size() != kLayers) fail("layer_points needs 4 entries");
  if (channels.size() != kLayers) fail("channels needs 4 entries");
  if (radii.size() != kLayers) fail("radii needs 4 entries");
  if (points_in < 2) fail("points_in must be at least 2");
  if (layer_points[0] != points_in) fail("the first layer keeps all points: layer_points[0] must equal points_in");
  for (std::size_t l = 1; l < kLayers; ++l) {
    if (layer_points[l] > layer_points[l - 1]) fail("layer point counts must be non-increasing");
  }
  if (k == 0) fail("k must be at least 1");
  if (2 * k > layer_points.back()) {
    fail("2k=" + std::to_string(2 * k) + " exceeds the smallest layer point count " +
         std::to_string(layer_points.back()));
  }
  for (auto c : channels) {
    if (c == 0) fail("channel widths must be positive");
  }
  for (double r : radii) {
    if (!(r > 0.0)) fail("radii must be positive");
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (head_hidden == 0) fail("head_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

template <typename T>
std::array<T, kRelationWidth> relation_vector(const Point3& center, const Point3& neighbor) {
  std::array<T, kRelationWidth> h{};
  double d2 = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double diff = static_cast<double>(neighbor[d]) - static_cast<double>(center[d]);
    d2 += diff * diff;
    h[1 + d] = static_cast<T>(center[d]);
    h[4 + d] = static_cast<T>(neighbor[d]);
    h[7 + d] = static_cast<T>(diff);
  }
  h[0] = static_cast<T>(std::sqrt(d2));
  return h;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const T slope = static_cast<T>(kLeakySlope);
  const auto& ch = config.channels;
  ModelParams<T> p;
  p.first.embed = AffineLayer<T>("layer1.embed", 3, ch[0], true, slope, rng);
  p.first.relation = AffineLayer<T>("layer1.relation", kRelationWidth, ch[0], true, slope, rng);
  p.first.act = NormAct<T>("layer1.act", ch[0], true, slope);
  for (std::size_t l = 0; l + 1 < kLayers; ++l) {
    p.dnfe[l] = DnfeParams<T>("layer" + std::to_string(l + 2), ch[l], ch[l + 1], rng);
  }
  p.fc1 = AffineLayer<T>("head.fc1", ch.back(), config.head_hidden, true, slope, rng);
  p.fc2 = AffineLayer<T>("head.fc2", config.head_hidden, config.num_classes, true, T{1}, rng);
  return p;
}

template <typename T>
std::size_t param_count(ModelParams<T>& params) {
  std::size_t n = 0;
  params.visit_parameters([&](Parameter<T>& p) { n += p.value.size(); });
  return n;
}

template <typename T>
Var<T> rs_conv_lite(std::span<const std::vector<Point3>> coords, Var<T> features,
                    std::span<const std::uint32_t> nbr_rows, std::size_t k,
                    FirstLayerParams<T>& params) {
  if (coords.empty()) throw DimensionError("rs_conv_lite: empty batch");
  const std::size_t n = coords[0].size();
  for (const auto& c : coords) {
    if (c.size() != n) throw DimensionError("rs_conv_lite: clouds of unequal size");
  }
  const std::size_t rows = coords.size() * n;
  if (features.rows() != rows) {
    throw DimensionError("rs_conv_lite: features " + shape_str(features.shape()) + " for " +
                         std::to_string(rows) + " points");
  }
  if (k == 0 || nbr_rows.size() != rows * k) {
    throw DimensionError("rs_conv_lite: " + std::to_string(nbr_rows.size()) +
                         " neighbor slots for " + std::to_string(rows) + " centers, k=" +
                         std::to_string(k));
  }
  Tensor<T> h({rows * k, kRelationWidth});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = r / n;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = nbr_rows[r * k + j];
      if (nb / n != b) throw IndexError("rs_conv_lite: neighbor row crosses clouds");
      const auto rel = relation_vector<T>(coords[b][r % n], coords[b][nb % n]);
      std::copy(rel.begin(), rel.end(), h.row(r * k + j));
    }
  }
  auto& tape = *features.tape;
  Var<T> weights = params.relation.forward(tape.constant(std::move(h)));
  Var<T> raised = params.embed.forward(features);
  Var<T> msg = ops::mul(weights, ops::gather_rows(raised, nbr_rows));
  return params.act.forward(ops::group_max(msg, k));
}

std::vector<Point3> normalize_cloud(std::span<const Point3> points) {
  if (points.empty()) throw DomainError("normalize_cloud: empty cloud");
  std::array<double, 3> centroid{};
  std::vector<double> axis(points.size());
  for (int d = 0; d < 3; ++d) {
    for (std::size_t i = 0; i < points.size(); ++i) axis[i] = points[i][d];
    std::sort(axis.begin(), axis.end());
    double s = 0.0;
    for (double v : axis) s += v;
    centroid[d] = s / static_cast<double>(points.size());
  }
  double max_norm = 0.0;
  for (const auto& p : points) {
    double n2 = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double v = p[d] - centroid[d];
      n2 += v * v;
    }
    max_norm = std::max(max_norm, std::sqrt(n2));
  }
  const double scale = max_norm > 0.0 ? 1.0 / max_norm : 1.0;
  std::vector<Point3> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      out[i][d] = static_cast<float>((points[i][d] - centroid[d]) * scale);
    }
  }
  return out;
}

std::vector<std::size_t> layer_schedule(const NetworkConfig& config, std::size_t n) {
  if (n < 2) throw CapacityError("need at least 2 points, got " + std::to_string(n));
  if (n >= config.points_in) return config.layer_points;
  std::vector<std::size_t> s(kLayers);
  s[0] = n;
  for (std::size_t l = 1; l < kLayers; ++l) s[l] = std::min(config.layer_points[l], s[l - 1]);
  return s;
}

std::uint32_t farthest_from_origin(std::span<const Point3> points) {
  const Point3 origin{0.0f, 0.0f, 0.0f};
  std::uint32_t best = 0;
  double best_d = -1.0;
  for (std::uint32_t i = 0; i < points.size(); ++i) {
    const double d = squared_distance(points[i], origin);
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace {

enum class Search { ball, knn };

std::vector<NeighborLists> spatial(Search kind, std::span<const std::vector<Point3>> coords,
                                   double radius, std::size_t k) {
  std::vector<NeighborLists> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    const auto centers = all_centers(c.size());
    out.push_back(kind == Search::ball ? ball_query(c, centers, radius, k) : knn(c, centers, k));
  }
  return out;
}

template <typename T>
Tensor<T> coords_tensor(std::span<const std::vector<Point3>> coords) {
  const std::size_t n = coords[0].size();
  Tensor<T> t({coords.size() * n, 3});
  for (std::size_t b = 0; b < coords.size(); ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) t[(b * n + i) * 3 + d] = static_cast<T>(coords[b][i][d]);
  return t;
}

}  // namespace

template <typename T>
Var<T> dndfn_forward(Tape<T>& tape, std::span<const PointCloud> clouds, ModelParams<T>& params,
                     const NetworkConfig& config, ForwardTrace* trace) {
  config.validate();
  if (clouds.empty()) throw DimensionError("dndfn_forward: empty batch");
  const std::size_t raw_n = clouds[0].size();
  std::vector<std::vector<Point3>> coords;
  coords.reserve(clouds.size());
  for (const auto& c : clouds) {
    validate(c);
    if (c.size() != raw_n) {
      throw DimensionError("dndfn_forward: clouds of " + std::to_string(raw_n) + " and " +
                           std::to_string(c.size()) + " points in one batch");
    }
    auto norm = normalize_cloud(c.points);
    if (norm.size() > config.points_in) {
      const auto pick = fps(norm, config.points_in, farthest_from_origin(norm));
      std::vector<Point3> kept;
      kept.reserve(pick.size());
      for (auto i : pick) kept.push_back(norm[i]);
      norm = std::move(kept);
    }
    coords.push_back(std::move(norm));
  }
  const std::size_t batch = coords.size();
  const auto sched = layer_schedule(config, coords[0].size());

  // Layer 1: relation convolution over a ball of 2k neighbors.
  std::size_t n = sched[0];
  const std::size_t k1 = std::min(2 * config.k, n - 1);
  auto first_local = spatial(Search::ball, coords, config.radii[0], k1);
  Var<T> feat = rs_conv_lite<T>(coords, tape.constant(coords_tensor<T>(coords)),
                                to_rows(first_local, n), k1, params.first);
  if (trace) trace->layers[0] = LayerTrace{coords, std::move(first_local), {}};

  // Layers 2-4: downsample, then dual-neighborhood fusion.
  for (std::size_t l = 1; l < kLayers; ++l) {
    const std::size_t m = sched[l];
    std::vector<std::uint32_t> gather;
    gather.reserve(batch * m);
    std::vector<std::vector<Point3>> next(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto pick = fps(coords[b], m, farthest_from_origin(coords[b]));
      next[b].reserve(m);
      for (auto i : pick) {
        next[b].push_back(coords[b][i]);
        gather.push_back(static_cast<std::uint32_t>(b * n + i));
      }
    }
    coords = std::move(next);
    n = m;
    feat = ops::gather_rows(feat, gather);

    const BatchLayout layout{batch, n};
    const std::size_t kb = std::min(config.k, n - 1);
    const std::size_t k2 = std::min(2 * config.k, n - 1);
    const double radius = config.radii[l];
    auto& dp = params.dnfe[l - 1];

    Branch<T> local;
    Branch<T> key;
    std::vector<NeighborLists> local_lists;
    std::vector<NeighborLists> key_lists;
    auto set_spatial = [&](Branch<T>& slot, std::vector<NeighborLists>& lists, Search kind,
                           std::size_t kk) {
      lists = spatial(kind, coords, radius, kk);
      slot.rows = to_rows(lists, n);
      slot.k = kk;
    };
    auto set_learned = [&](std::size_t kk) {
      auto learned = tn_learning(feat, layout, dp.theta, dp.pi, kk);
      key.rows = std::move(learned.rows);
      key.k = kk;
      key.weights = learned.weights;
      key_lists = std::move(learned.lists);
    };
    switch (config.mode) {
      case NeighborMode::tn_ball:
        set_spatial(local, local_lists, Search::ball, kb);
        set_learned(kb);
        break;
      case NeighborMode::tn_knn:
        set_spatial(local, local_lists, Search::knn, kb);
        set_learned(kb);
        break;
      case NeighborMode::ball_knn:
        set_spatial(local, local_lists, Search::ball, kb);
        set_spatial(key, key_lists, Search::knn, kb);
        break;
      case NeighborMode::ball:
        set_spatial(local, local_lists, Search::ball, k2);
        break;
      case NeighborMode::knn:
        set_spatial(local, local_lists, Search::knn, k2);
        break;
      case NeighborMode::tn:
        set_learned(k2);
        break;
    }
    feat = dnfe_forward(feat, local, key, dp);
    if (trace) trace->layers[l] = LayerTrace{coords, std::move(local_lists), std::move(key_lists)};
  }

  Var<T> pooled = ops::group_max(feat, n);
  Var<T> hidden = params.fc1.forward(ops::dropout(pooled, config.dropout));
  return params.fc2.forward(ops::dropout(hidden, config.dropout));
}

#define DNFN_INSTANTIATE(T)                                                                   \
  template std::array<T, kRelationWidth> relation_vector<T>(const Point3&, const Point3&);   \
  template struct ModelParams<T>;                                                            \
  template std::size_t param_count(ModelParams<T>&);                                         \
  template Var<T> rs_conv_lite(std::span<const std::vector<Point3>>, Var<T>,                 \
                               std::span<const std::uint32_t>, std::size_t,                  \
                               FirstLayerParams<T>&);                                        \
  template Var<T> dndfn_forward(Tape<T>&, std::span<const PointCloud>, ModelParams<T>&,      \
                                const NetworkConfig&, ForwardTrace*);

DNFN_INSTANTIATE(float)
DNFN_INSTANTIATE(double)

#undef DNFN_INSTANTIATE

}  // namespace dnfn
