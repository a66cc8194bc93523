#include "dnfn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "dnfn/error.hpp"

namespace dnfn {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kEvalChunk = 32;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<int> labels_of(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.clouds.size());
  for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
    const auto& c = ds.clouds[i];
    if (!c.label) throw ConfigError("cloud " + std::to_string(i) + " has no label");
    out.push_back(*c.label);
  }
  return out;
}

void check_classes(const NetworkConfig& config, const Dataset& ds, const char* what) {
  if (ds.num_classes() != 0 && ds.num_classes() != config.num_classes) {
    throw ConfigError(std::string(what) + " has " + std::to_string(ds.num_classes()) +
                      " classes but the model is configured for " +
                      std::to_string(config.num_classes));
  }
  for (const auto& c : ds.clouds) {
    if (c.label && (*c.label < 0 || static_cast<std::size_t>(*c.label) >= config.num_classes)) {
      throw ConfigError(std::string(what) + " holds label " + std::to_string(*c.label) +
                        " outside the " + std::to_string(config.num_classes) +
                        " configured classes");
    }
  }
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

}  // namespace

std::vector<int> predict(const Tensor<float>& logits) {
  std::vector<int> out(logits.rows());
  const std::size_t k = logits.cols();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const float* z = logits.row(r);
    out[r] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

MetricsReport accuracy_report(std::span<const int> predictions, std::span<const int> labels,
                              std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("accuracy_report: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(labels.size()) + " labels");
  }
  MetricsReport r;
  r.class_correct.assign(num_classes, 0);
  r.class_total.assign(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw IndexError("accuracy_report: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    ++r.class_total[l];
    if (predictions[i] == l) {
      ++r.class_correct[l];
      ++r.correct;
    }
  }
  r.total = labels.size();
  r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.predictions.assign(predictions.begin(), predictions.end());
  return r;
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream out;
  out << "accuracy " << fixed(r.accuracy) << " (" << r.correct << "/" << r.total << ")\n";
  for (std::size_t c = 0; c < r.class_total.size(); ++c) {
    const std::string name = c < r.class_names.size() ? r.class_names[c] : "class" + std::to_string(c);
    out << "  " << std::left << std::setw(10) << name << " " << fixed(r.class_accuracy(c)) << " ("
        << r.class_correct[c] << "/" << r.class_total[c] << ")\n";
  }
  return out.str();
}

Tensor<float> eval_logits(ModelParams<float>& params, const NetworkConfig& config,
                          std::span<const PointCloud> clouds) {
  Tensor<float> out({clouds.size(), config.num_classes});
  std::size_t start = 0;
  while (start < clouds.size()) {
    // Chunks hold consecutive clouds of equal size.
    std::size_t end = start + 1;
    while (end < clouds.size() && end - start < kEvalChunk &&
           clouds[end].size() == clouds[start].size()) {
      ++end;
    }
    Tape<float> tape(Mode::eval, false);
    auto logits = dndfn_forward(tape, clouds.subspan(start, end - start), params, config);
    std::copy(logits.value().values.begin(), logits.value().values.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(start * config.num_classes));
    start = end;
  }
  return out;
}

MetricsReport evaluate(ModelParams<float>& params, const NetworkConfig& config,
                       const Dataset& dataset, const EvalOverride& override) {
  check_classes(config, dataset, "evaluation set");
  const auto t0 = Clock::now();
  const auto labels = labels_of(dataset);
  std::vector<PointCloud> clouds;
  const bool changed = override.points || override.rotation != Rotation::none;
  if (changed) {
    AugmentSpec spec;
    spec.rotation = override.rotation;
    spec.subsample = override.points;
    clouds.reserve(dataset.clouds.size());
    for (std::size_t i = 0; i < dataset.clouds.size(); ++i) {
      clouds.push_back(augment(dataset.clouds[i], spec, mix(override.seed, i)));
    }
  }
  const auto& input = changed ? clouds : dataset.clouds;
  const auto logits = eval_logits(params, config, input);
  MetricsReport r = accuracy_report(predict(logits), labels, config.num_classes);
  r.class_names = dataset.class_names;
  r.seconds = seconds_since(t0);
  return r;
}

namespace {

// The configured augmentation plus this step's point dropout.
AugmentSpec batch_augment(const TrainConfig& config, std::size_t cloud_size, std::int64_t step) {
  AugmentSpec spec = config.augment;
  if (config.point_dropout <= 0.0) return spec;
  const std::size_t n = spec.subsample.value_or(cloud_size);
  std::mt19937_64 rng(mix(mix(config.seed, 0xd709), static_cast<std::uint64_t>(step)));
  const double frac = std::uniform_real_distribution<double>(0.0, config.point_dropout)(rng);
  const auto drop = static_cast<std::size_t>(frac * static_cast<double>(n));
  spec.subsample = std::max<std::size_t>(n - drop, std::min<std::size_t>(n, 2));
  return spec;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set,
                  const TrainOptions& options) {
  config.validate();
  const auto& net = config.network;
  check_classes(net, train_set, "training set");
  if (options.test) check_classes(net, *options.test, "test set");
  const auto labels = labels_of(train_set);
  const std::size_t n = train_set.clouds.size();
  const std::size_t full = n / config.batch;
  const std::size_t tail = n % config.batch;
  const std::size_t steps_per_epoch = full + (tail >= 2 ? 1 : 0);
  if (steps_per_epoch == 0) {
    throw ConfigError("training set of " + std::to_string(n) +
                      " clouds yields no batch of at least 2");
  }
  if (config.batch < 2 && full > 0) {
    throw ConfigError("batch must be at least 2 for batch statistics");
  }
  const auto total_steps = static_cast<std::int64_t>(config.epochs * steps_per_epoch);

  TrainResult res;
  res.params = ModelParams<float>::init(net, config.seed);
  // The last step (index total_steps - 1) runs at exactly lr_final.
  res.optimizer = make_optimizer(config.momentum, config.lr_initial, config.lr_final,
                                 total_steps - 1);
  auto plist = res.params.parameters();
  res.report.config_echo = serialize_config(config);

  std::mt19937_64 order_rng(mix(config.seed, 0x5f0a7d));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const auto t_run = Clock::now();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * config.batch;
      const std::size_t end = std::min(begin + config.batch, n);
      const std::int64_t step = res.optimizer.current_step;
      const AugmentSpec spec = batch_augment(config, train_set.clouds[order[begin]].size(), step);
      std::vector<PointCloud> batch;
      std::vector<int> batch_labels;
      batch.reserve(end - begin);
      for (std::size_t j = begin; j < end; ++j) {
        const std::size_t idx = order[j];
        batch.push_back(augment(train_set.clouds[idx], spec, mix(mix(config.seed, epoch), idx)));
        batch_labels.push_back(labels[idx]);
      }
      Tape<float> tape(Mode::train);
      tape.set_dropout_stream(config.seed, static_cast<std::uint64_t>(step));
      auto logits = dndfn_forward(tape, batch, res.params, net);
      auto loss = ops::cross_entropy(logits, batch_labels);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      res.params.zero_grad();
      tape.backward(loss);
      const double lr = sgd_cosine_step(res.optimizer, plist);
      if (step == 0) res.lr_first = lr;
      res.lr_last = lr;
      if (s == 0) stats.lr_first = lr;
      stats.lr_last = lr;
      loss_sum += lv * static_cast<double>(batch.size());
      seen += batch.size();
      const auto pred = predict(logits.value());
      for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == batch_labels[j];
    }
    stats.loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (options.test) {
      res.report = evaluate(res.params, net, *options.test);
      stats.test_accuracy = res.report.accuracy;
    }
    stats.seconds = seconds_since(t0);
    res.report.curve.push_back(stats);
    if (options.log) {
      *options.log << "epoch " << epoch << "/" << config.epochs << "  loss " << fixed(stats.loss)
                   << "  train_acc " << fixed(stats.train_accuracy);
      if (stats.test_accuracy) *options.log << "  test_acc " << fixed(*stats.test_accuracy);
      *options.log << "  lr " << fixed(stats.lr_first, 5) << " -> " << fixed(stats.lr_last, 5)
                   << "  (" << fixed(stats.seconds, 1) << " s)" << std::endl;
    }
  }
  // The report's curve and echo survive the per-epoch evaluations above.
  auto curve = std::move(res.report.curve);
  if (!options.test) res.report = MetricsReport{};
  res.report.curve = std::move(curve);
  res.report.config_echo = serialize_config(config);
  res.report.seconds = seconds_since(t_run);
  if (options.final_train_eval) {
    res.final_train_accuracy = evaluate(res.params, net, train_set).accuracy;
  }
  res.steps = res.optimizer.current_step;
  res.epochs = static_cast<std::int64_t>(config.epochs);
  return res;
}

std::vector<NeighborMode> ablation_modes() {
  return {NeighborMode::tn,      NeighborMode::ball,   NeighborMode::knn,
          NeighborMode::ball_knn, NeighborMode::tn_knn, NeighborMode::tn_ball};
}

std::vector<AblationRow> ablate(const TrainConfig& base, const Dataset& train_set,
                                const Dataset& test_set, std::ostream* log) {
  std::vector<AblationRow> rows;
  for (auto mode : ablation_modes()) {
    TrainConfig cfg = base;
    cfg.network.mode = mode;
    if (log) *log << "== mode " << to_string(mode) << " ==" << std::endl;
    TrainOptions opts;
    opts.test = &test_set;
    opts.log = log;
    auto res = train(cfg, train_set, opts);
    rows.push_back(AblationRow{mode, std::move(res.report)});
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "mode       TN  ball  knn  accuracy\n";
  for (const auto& row : rows) {
    const auto m = row.mode;
    const bool tn = m == NeighborMode::tn || m == NeighborMode::tn_knn || m == NeighborMode::tn_ball;
    const bool ball = m == NeighborMode::ball || m == NeighborMode::ball_knn || m == NeighborMode::tn_ball;
    const bool knn = m == NeighborMode::knn || m == NeighborMode::ball_knn || m == NeighborMode::tn_knn;
    out << std::left << std::setw(10) << to_string(m) << " " << (tn ? " x " : "   ") << " "
        << (ball ? "  x  " : "     ") << " " << (knn ? " x  " : "    ") << " "
        << fixed(row.report.accuracy) << "\n";
  }
  return out.str();
}

std::vector<std::string> gradcheck_groups() {
  return {"first_layer", "theta", "pi", "phi_local", "phi_key",
          "alpha",       "raise", "fusion", "head"};
}

std::string gradcheck_group(const std::string& name) {
  if (name.rfind("layer1.", 0) == 0) return "first_layer";
  if (name.rfind("head.", 0) == 0) return "head";
  const auto dot = name.find('.');
  if (dot == std::string::npos) return name;
  const auto dot2 = name.find('.', dot + 1);
  const std::string part = name.substr(dot + 1, dot2 == std::string::npos ? std::string::npos : dot2 - dot - 1);
  if (part == "alpha_local" || part == "alpha_key") return "alpha";
  if (part == "raise_local" || part == "raise_key") return "raise";
  return part;
}

NetworkConfig gradcheck_config() {
  NetworkConfig c;
  c.points_in = 8;
  c.layer_points = {8, 8, 6, 4};
  c.channels = {4, 6, 6, 8};
  c.k = 2;
  c.radii = {0.8, 1.0, 1.2, 1.4};
  c.head_hidden = 8;
  c.num_classes = 3;
  c.dropout = 0.0;
  c.mode = NeighborMode::tn_ball;
  return c;
}

ModelGradCheck gradcheck_model(std::uint64_t seed, Fault fault, GradCheckOptions options) {
  const NetworkConfig config = gradcheck_config();
  auto params = ModelParams<double>::init(config, seed);
  std::mt19937_64 rng(mix(seed, 0x6c0d));
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<PointCloud> clouds(3);
  std::vector<int> labels{0, 1, 2};
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    clouds[b].points.resize(config.points_in);
    for (auto& p : clouds[b].points) p = {u(rng), u(rng), u(rng)};
    clouds[b].label = labels[b];
  }

  auto loss_at = [&](bool record) {
    Tape<double> tape(Mode::train, record);
    tape.set_track_regime(true);
    auto logits = dndfn_forward(tape, std::span<const PointCloud>(clouds), params, config);
    auto loss = ops::cross_entropy(logits, labels);
    if (record) {
      params.zero_grad();
      tape.backward(loss);
    }
    return LossSample{loss.value()[0], tape.regime()};
  };
  loss_at(true);

  auto plist = params.parameters();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(plist.size());
  for (auto* p : plist) {
    analytic.push_back(p->grad);
    if (fault == Fault::flip_phi && gradcheck_group(p->name) == "phi_local") {
      for (auto& g : analytic.back()) g = -g;
    }
  }
  std::vector<CheckedParam> checked;
  for (std::size_t i = 0; i < plist.size(); ++i) {
    checked.push_back(CheckedParam{plist[i]->name, plist[i]->value.values, analytic[i]});
  }
  const auto report = finite_diff_check([&] { return loss_at(false); }, checked, options);

  ModelGradCheck out;
  std::map<std::string, GroupCheck> by_group;
  for (const auto& g : gradcheck_groups()) by_group[g].group = g;
  for (const auto& e : report.params) {
    auto& g = by_group[gradcheck_group(e.name)];
    g.group = gradcheck_group(e.name);
    if (g.worst_param.empty() || e.max_rel_error > g.worst) {
      g.worst = e.max_rel_error;
      g.worst_param = e.name;
    }
    g.checked += e.checked;
    g.skipped += e.skipped;
  }
  out.passed = true;
  for (const auto& name : gradcheck_groups()) {
    auto g = by_group[name];
    g.passed = g.checked > 0 && g.worst < options.tolerance;
    out.passed = out.passed && g.passed;
    if (out.worst_group.empty() || g.worst > out.worst) {
      out.worst = g.worst;
      out.worst_group = g.group;
    }
    out.groups.push_back(g);
  }
  return out;
}

std::string format_gradcheck(const ModelGradCheck& check) {
  std::ostringstream out;
  out << "group        worst_rel_error  checked  skipped  status\n";
  for (const auto& g : check.groups) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << g.worst;
    out << std::left << std::setw(12) << g.group << " " << std::setw(16) << err.str() << " "
        << std::setw(8) << g.checked << " " << std::setw(8) << g.skipped << " "
        << (g.passed ? "ok" : "FAIL") << "\n";
  }
  std::ostringstream worst;
  worst << std::scientific << std::setprecision(3) << check.worst;
  out << (check.passed ? "gradcheck passed" : "gradcheck FAILED") << ": worst " << worst.str()
      << " in " << check.worst_group << "\n";
  return out.str();
}

nlohmann::json export_neighbors(ModelParams<float>& params, const NetworkConfig& config,
                                const PointCloud& cloud, std::size_t layer, std::size_t center) {
  if (layer < 2 || layer > kLayers) {
    throw IndexError("export_neighbors: layer " + std::to_string(layer) +
                     " outside the dual-neighborhood layers 2-4");
  }
  const auto m = config.mode;
  if (m != NeighborMode::tn_ball && m != NeighborMode::tn_knn && m != NeighborMode::ball_knn) {
    throw ConfigError("export_neighbors: mode " + to_string(m) +
                      " has a single neighborhood; export needs two");
  }
  ForwardTrace trace;
  Tape<float> tape(Mode::eval, false);
  dndfn_forward(tape, std::span<const PointCloud>(&cloud, 1), params, config, &trace);
  const auto& lt = trace.layers[layer - 1];
  const auto& coords = lt.coords[0];
  if (center >= coords.size()) {
    throw IndexError("export_neighbors: center " + std::to_string(center) + " not among the " +
                     std::to_string(coords.size()) + " points of layer " + std::to_string(layer));
  }
  const auto local = lt.local[0].of(center);
  const auto key = lt.key[0].of(center);
  std::map<std::uint32_t, int> key_count;
  for (auto i : key) ++key_count[i];
  std::vector<std::uint32_t> green;
  std::vector<std::uint32_t> red;
  for (auto i : local) {
    auto it = key_count.find(i);
    if (it != key_count.end() && it->second > 0) {
      --it->second;
      red.push_back(i);
    } else {
      green.push_back(i);
    }
  }
  std::vector<std::uint32_t> blue;
  std::map<std::uint32_t, int> red_count;
  for (auto i : red) ++red_count[i];
  for (auto i : key) {
    auto it = red_count.find(i);
    if (it != red_count.end() && it->second > 0) {
      --it->second;
    } else {
      blue.push_back(i);
    }
  }
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : coords) pts.push_back({p[0], p[1], p[2]});
  return nlohmann::json{
      {"layer", layer},
      {"k", local.size()},
      {"center", {{"index", center}, {"role", "center"}, {"color", "pink"}}},
      {"sets", {{"green", green}, {"blue", blue}, {"red", red}}},
      {"points", std::move(pts)}};
}

void validate_neighbor_export(const nlohmann::json& doc) {
  auto fail = [](const std::string& msg) { throw FormatError("neighbor export: " + msg); };
  if (!doc.is_object()) fail("top level must be an object");
  for (const char* field : {"layer", "k", "center", "sets", "points"}) {
    if (!doc.contains(field)) fail(std::string("missing field '") + field + "'");
  }
  if (!doc["layer"].is_number_integer() || doc["layer"].get<int>() < 2 ||
      doc["layer"].get<int>() > 4) {
    fail("'layer' must be an integer in 2..4");
  }
  if (!doc["k"].is_number_integer() || doc["k"].get<long>() < 1) fail("'k' must be a positive integer");
  const auto k = doc["k"].get<std::size_t>();
  const auto& pts = doc["points"];
  if (!pts.is_array() || pts.empty()) fail("'points' must be a non-empty array");
  for (const auto& p : pts) {
    if (!p.is_array() || p.size() != 3) fail("each point must be [x, y, z]");
    for (const auto& v : p) {
      if (!v.is_number()) fail("point coordinates must be numbers");
    }
  }
  const auto& c = doc["center"];
  if (!c.is_object() || !c.contains("index") || !c.contains("role") || !c.contains("color")) {
    fail("'center' needs index, role and color");
  }
  if (!c["index"].is_number_unsigned() || c["index"].get<std::size_t>() >= pts.size()) {
    fail("center index must address a point");
  }
  if (c["role"] != "center") fail("center role must be \"center\"");
  if (c["color"] != "pink") fail("center color must be \"pink\"");
  const auto& sets = doc["sets"];
  if (!sets.is_object()) fail("'sets' must be an object");
  for (const char* color : {"green", "blue", "red"}) {
    if (!sets.contains(color) || !sets[color].is_array()) {
      fail(std::string("sets.") + color + " must be an array");
    }
    for (const auto& i : sets[color]) {
      if (!i.is_number_unsigned() || i.get<std::size_t>() >= pts.size()) {
        fail(std::string("sets.") + color + " holds an index outside 'points'");
      }
    }
  }
  const std::size_t g = sets["green"].size();
  const std::size_t b = sets["blue"].size();
  const std::size_t r = sets["red"].size();
  if (g + r != k) fail("|green| + |red| must equal k");
  if (b + r != k) fail("|blue| + |red| must equal k");
}

int exit_status(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const FormatError*>(&e)) return kExitFormat;
  if (dynamic_cast<const CheckFailure*>(&e)) return kExitCheck;
  if (dynamic_cast<const TrainingError*>(&e)) return kExitTraining;
  return kExitError;
}

}  // namespace dnfn
