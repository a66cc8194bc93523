#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dnfn/checkpoint.hpp"
#include "dnfn/data.hpp"
#include "dnfn/gradcheck.hpp"

namespace dnfn {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch
  double train_accuracy = 0.0;  // from the train-mode forward passes
  std::optional<double> test_accuracy;
  double lr_first = 0.0;
  double lr_last = 0.0;
  double seconds = 0.0;
};

struct MetricsReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;  // correct / total
  std::vector<std::string> class_names;
  std::vector<std::size_t> class_correct;
  std::vector<std::size_t> class_total;
  std::vector<int> predictions;
  std::vector<EpochStats> curve;
  double seconds = 0.0;
  std::string config_echo;

  double class_accuracy(std::size_t c) const {
    return class_total[c] == 0 ? 0.0
                               : static_cast<double>(class_correct[c]) /
                                     static_cast<double>(class_total[c]);
  }
};

/// Row-wise argmax; ties go to the lowest class.
std::vector<int> predict(const Tensor<float>& logits);

MetricsReport accuracy_report(std::span<const int> predictions, std::span<const int> labels,
                              std::size_t num_classes);

std::string format_report(const MetricsReport& report);

struct TrainOptions {
  const Dataset* test = nullptr;     // evaluated after every epoch when set
  bool final_train_eval = false;     // eval-mode accuracy on the training set at the end
  std::ostream* log = nullptr;
};

struct TrainResult {
  ModelParams<float> params;
  OptimizerState optimizer;
  MetricsReport report;  // test metrics when a test set was given
  std::optional<double> final_train_accuracy;
  double lr_first = 0.0;  // learning rate applied at the first step
  double lr_last = 0.0;   // and at the last one
  std::int64_t steps = 0;
  std::int64_t epochs = 0;
};

/// Shuffled mini-batch SGD under cosine annealing. Batches of fewer than two
/// clouds are dropped (batch statistics need two rows). Deterministic for a
/// fixed seed and thread count. Throws ConfigError when the dataset does not
/// match the configured class count.
TrainResult train(const TrainConfig& config, const Dataset& train_set,
                  const TrainOptions& options = {});

struct EvalOverride {
  std::optional<std::size_t> points;  // random subset of this many points per cloud
  Rotation rotation = Rotation::none;
  std::uint64_t seed = 0;
};

/// Eval-mode logits, one row per cloud. Clouds are processed in fixed-size
/// chunks so the result does not depend on the thread count.
Tensor<float> eval_logits(ModelParams<float>& params, const NetworkConfig& config,
                          std::span<const PointCloud> clouds);

MetricsReport evaluate(ModelParams<float>& params, const NetworkConfig& config,
                       const Dataset& dataset, const EvalOverride& override = {});

/// The six neighborhood configurations compared by the ablation, in table order.
std::vector<NeighborMode> ablation_modes();

struct AblationRow {
  NeighborMode mode;
  MetricsReport report;
};

/// Trains one model per mode with identical seeds, data order and schedule.
std::vector<AblationRow> ablate(const TrainConfig& base, const Dataset& train_set,
                                const Dataset& test_set, std::ostream* log = nullptr);

std::string format_ablation(const std::vector<AblationRow>& rows);

// Gradient check of the full network on a tiny double-precision model.

enum class Fault { none, flip_phi };

struct GroupCheck {
  std::string group;
  double worst = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

struct ModelGradCheck {
  std::vector<GroupCheck> groups;
  double worst = 0.0;
  std::string worst_group;
  bool passed = false;
};

/// Parameter groups reported by the model gradient check.
std::vector<std::string> gradcheck_groups();
/// Group of a parameter name, e.g. "layer3.phi_local.weight" -> "phi_local".
std::string gradcheck_group(const std::string& param_name);

/// The tiny configuration: 8-point clouds, widths at most 8.
NetworkConfig gradcheck_config();

/// Checks every parameter of a tiny model. Fault::flip_phi negates the
/// analytic gradient of the local relation map before comparison.
ModelGradCheck gradcheck_model(std::uint64_t seed, Fault fault = Fault::none,
                               GradCheckOptions options = {});

std::string format_gradcheck(const ModelGradCheck& check);

// Neighborhood export for layers 2-4.
//
// {"layer": L, "k": k,
//  "center": {"index": i, "role": "center", "color": "pink"},
//  "sets": {"green": [...], "blue": [...], "red": [...]},
//  "points": [[x, y, z], ...]}
//
// Indices refer to "points", the layer's sampled coordinates. red is the
// multiset intersection of the local and key lists, green the rest of the
// local list and blue the rest of the key list, so |green| + |red| and
// |blue| + |red| both equal k.

nlohmann::json export_neighbors(ModelParams<float>& params, const NetworkConfig& config,
                                const PointCloud& cloud, std::size_t layer, std::size_t center);

/// Throws FormatError describing the first schema violation.
void validate_neighbor_export(const nlohmann::json& doc);

// Process exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitCheck = 4;
inline constexpr int kExitTraining = 5;

/// Exit status for an exception escaping a command.
int exit_status(const std::exception& e);

}  // namespace dnfn
