// Command-line front end: gen-data, train, eval, ablate, gradcheck,
// export-neighbors.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dnfn/error.hpp"
#include "dnfn/harness.hpp"

using namespace dnfn;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Flag spelling of a config key: "augment.scale_lo" -> "--augment-scale-lo".
std::string flag_of(std::string key) {
  std::replace(key.begin(), key.end(), '.', '-');
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Config file, then --set overrides, then per-key flags.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "flat key = value config file");
    cmd->add_option("--set", sets, "override one setting, key=value (repeatable)");
    for (const auto& key : config_keys()) {
      cmd->add_option(flag_of(key), flags[key], "config key " + key);
    }
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!file.empty()) c = parse_config(read_text(file));
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& key : config_keys()) {
      const auto& v = flags.at(key);
      if (!v.empty()) apply_setting(c, key, v);
    }
    c.validate();
    return c;
  }
};

void echo_config(const TrainConfig& c) {
  std::cout << "# resolved config\n" << serialize_config(c) << std::flush;
}

Dataset require_split(const TrainConfig& c, Split split) {
  if (c.dataset.empty()) throw ConfigError("no dataset given (set dataset = <dir>)");
  return load_dataset(c.dataset, split);
}

int run(int argc, char** argv) {
  CLI::App app{"Dual-neighborhood point cloud classifier"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic primitive dataset");
  std::string gen_out;
  std::string gen_classes = "sphere,cube,cylinder,cone";
  std::size_t gen_train = 100;
  std::size_t gen_test = 25;
  std::size_t gen_points = 256;
  std::uint64_t gen_seed = 1;
  std::string gen_format = "binary";
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", gen_classes, "comma-separated primitive names");
  gen->add_option("--train-per-class", gen_train, "training clouds per class");
  gen->add_option("--test-per-class", gen_test, "test clouds per class");
  gen->add_option("--points", gen_points, "points per cloud");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--format", gen_format, "binary or xyz")->check(CLI::IsMember({"binary", "xyz"}));

  // train
  auto* tr = app.add_subcommand("train", "train a classifier");
  ConfigArgs tr_cfg;
  tr_cfg.attach(tr);
  std::string tr_out = "model.dnck";
  tr->add_option("--out", tr_out, "checkpoint path");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt;
  std::string ev_dataset;
  std::string ev_split = "test";
  std::size_t ev_points = 0;
  std::string ev_rotation = "none";
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--dataset", ev_dataset, "dataset directory (default: from checkpoint)");
  ev->add_option("--split", ev_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--points", ev_points, "evaluate on a random subset of this many points");
  ev->add_option("--rotation", ev_rotation, "none, z or arbitrary");
  ev->add_option("--seed", ev_seed, "seed for the override sampling");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train all six neighborhood configurations");
  ConfigArgs ab_cfg;
  ab_cfg.attach(ab);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full network");
  std::uint64_t gc_seed = 1;
  std::string gc_fault = "none";
  gc->add_option("--seed", gc_seed, "model and data seed");
  gc->add_option("--inject-fault", gc_fault, "none or phi (negates the relation-map gradient)")
      ->check(CLI::IsMember({"none", "phi"}));

  // export-neighbors
  auto* ex = app.add_subcommand("export-neighbors", "write one center's dual neighborhoods");
  std::string ex_ckpt;
  std::string ex_cloud;
  std::size_t ex_layer = 2;
  std::size_t ex_center = 0;
  std::string ex_out;
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint path")->required();
  ex->add_option("--cloud", ex_cloud, "cloud file (.xyz or .dnpc)")->required();
  ex->add_option("--layer", ex_layer, "layer 2, 3 or 4");
  ex->add_option("--center", ex_center, "center index within the layer's points");
  ex->add_option("--out", ex_out, "output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*gen) {
    const auto classes = split_list(gen_classes);
    const auto fmt = gen_format == "xyz" ? CloudFormat::xyz : CloudFormat::binary;
    save_dataset(gen_out, gen_dataset(classes, gen_train, gen_points, gen_seed, Split::train), fmt);
    save_dataset(gen_out, gen_dataset(classes, gen_test, gen_points, gen_seed, Split::test), fmt);
    std::cout << "wrote " << classes.size() << " classes x (" << gen_train << " train + "
              << gen_test << " test) clouds of " << gen_points << " points to " << gen_out << "\n";
    return kExitOk;
  }

  if (*tr) {
    const auto cfg = tr_cfg.resolve();
    echo_config(cfg);
    const auto train_set = require_split(cfg, Split::train);
    const auto test_set = require_split(cfg, Split::test);
    TrainOptions opts;
    opts.test = &test_set;
    opts.log = &std::cout;
    auto res = train(cfg, train_set, opts);
    save_checkpoint(tr_out, cfg, res.params, res.optimizer, res.epochs);
    std::cout << format_report(res.report) << "lr first step " << res.lr_first << ", last step "
              << res.lr_last << "\nwall clock " << res.report.seconds << " s\ncheckpoint "
              << tr_out << "\n";
    return kExitOk;
  }

  if (*ev) {
    auto ck = load_checkpoint(ev_ckpt);
    if (!ev_dataset.empty()) ck.config.dataset = ev_dataset;
    echo_config(ck.config);
    const auto ds = require_split(ck.config, ev_split == "train" ? Split::train : Split::test);
    EvalOverride ov;
    if (ev_points > 0) ov.points = ev_points;
    ov.rotation = parse_rotation(ev_rotation);
    ov.seed = ev_seed;
    const auto report = evaluate(ck.params, ck.config.network, ds, ov);
    std::cout << format_report(report);
    return kExitOk;
  }

  if (*ab) {
    const auto cfg = ab_cfg.resolve();
    echo_config(cfg);
    const auto train_set = require_split(cfg, Split::train);
    const auto test_set = require_split(cfg, Split::test);
    const auto rows = ablate(cfg, train_set, test_set, &std::cout);
    std::cout << format_ablation(rows);
    return kExitOk;
  }

  if (*gc) {
    const auto check = gradcheck_model(gc_seed, gc_fault == "phi" ? Fault::flip_phi : Fault::none);
    std::cout << format_gradcheck(check);
    if (!check.passed) throw CheckFailure("gradient check failed in group " + check.worst_group);
    return kExitOk;
  }

  if (*ex) {
    auto ck = load_checkpoint(ex_ckpt);
    const auto cloud = load_cloud(ex_cloud, format_from_path(ex_cloud));
    const auto doc = export_neighbors(ck.params, ck.config.network, cloud, ex_layer, ex_center);
    validate_neighbor_export(doc);
    if (ex_out.empty()) {
      std::cout << doc.dump(1) << "\n";
    } else {
      std::ofstream out(ex_out);
      if (!out) throw FormatError("cannot write " + ex_out);
      out << doc.dump(1) << "\n";
    }
    return kExitOk;
  }
  return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_status(e);
  }
}
