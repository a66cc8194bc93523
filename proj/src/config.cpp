#include "dnfn/config.hpp"

#include <charconv>
#include <sstream>

#include "dnfn/error.hpp"

namespace dnfn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& text) {
  std::vector<N> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    out.push_back(parse_number<N>(key, trim(item)));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

template <typename N>
std::string fmt(N v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename N>
std::string fmt_list(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  network.validate();
  if (epochs < 1) throw ConfigError("train config: epochs must be at least 1");
  if (batch < 1) throw ConfigError("train config: batch must be at least 1");
  if (!(lr_initial > 0.0) || !(lr_final > 0.0) || lr_final > lr_initial) {
    throw ConfigError("train config: need 0 < lr_final <= lr_initial");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train config: momentum must lie in [0, 1)");
  }
  if (!(point_dropout >= 0.0 && point_dropout < 1.0)) {
    throw ConfigError("train config: point_dropout must lie in [0, 1)");
  }
  try {
    augment.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

std::vector<std::string> config_keys() {
  return {"points_in",  "layer_points", "channels",          "k",
          "radii",      "head_hidden",  "num_classes",       "dropout",
          "mode",       "epochs",       "batch",             "lr_initial",
          "lr_final",   "momentum",     "seed",              "dataset",
          "augment.rotation", "augment.scale_lo", "augment.scale_hi", "augment.jitter",
          "augment.subsample", "point_dropout"};
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  auto& n = c.network;
  if (key == "points_in") {
    n.points_in = parse_number<std::size_t>(key, value);
  } else if (key == "layer_points") {
    n.layer_points = parse_list<std::size_t>(key, value);
  } else if (key == "channels") {
    n.channels = parse_list<std::size_t>(key, value);
  } else if (key == "k") {
    n.k = parse_number<std::size_t>(key, value);
  } else if (key == "radii") {
    n.radii = parse_list<double>(key, value);
  } else if (key == "head_hidden") {
    n.head_hidden = parse_number<std::size_t>(key, value);
  } else if (key == "num_classes") {
    n.num_classes = parse_number<std::size_t>(key, value);
  } else if (key == "dropout") {
    n.dropout = parse_number<double>(key, value);
  } else if (key == "mode") {
    try {
      n.mode = parse_neighbor_mode(value);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config key 'mode': ") + e.what());
    }
  } else if (key == "epochs") {
    c.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "batch") {
    c.batch = parse_number<std::size_t>(key, value);
  } else if (key == "lr_initial") {
    c.lr_initial = parse_number<double>(key, value);
  } else if (key == "lr_final") {
    c.lr_final = parse_number<double>(key, value);
  } else if (key == "momentum") {
    c.momentum = parse_number<double>(key, value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "dataset") {
    c.dataset = value;
  } else if (key == "augment.rotation") {
    c.augment.rotation = parse_rotation(value);
  } else if (key == "augment.scale_lo") {
    c.augment.scale_lo = parse_number<double>(key, value);
  } else if (key == "augment.scale_hi") {
    c.augment.scale_hi = parse_number<double>(key, value);
  } else if (key == "augment.jitter") {
    c.augment.jitter = parse_number<double>(key, value);
  } else if (key == "augment.subsample") {
    if (value == "none" || value.empty()) {
      c.augment.subsample.reset();
    } else {
      c.augment.subsample = parse_number<std::size_t>(key, value);
    }
  } else if (key == "point_dropout") {
    c.point_dropout = parse_number<double>(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

std::string serialize_config(const TrainConfig& c) {
  const auto& n = c.network;
  std::ostringstream out;
  out << "points_in = " << n.points_in << "\n"
      << "layer_points = " << fmt_list(n.layer_points) << "\n"
      << "channels = " << fmt_list(n.channels) << "\n"
      << "k = " << n.k << "\n"
      << "radii = " << fmt_list(n.radii) << "\n"
      << "head_hidden = " << n.head_hidden << "\n"
      << "num_classes = " << n.num_classes << "\n"
      << "dropout = " << fmt(n.dropout) << "\n"
      << "mode = " << to_string(n.mode) << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch = " << c.batch << "\n"
      << "lr_initial = " << fmt(c.lr_initial) << "\n"
      << "lr_final = " << fmt(c.lr_final) << "\n"
      << "momentum = " << fmt(c.momentum) << "\n"
      << "seed = " << c.seed << "\n"
      << "dataset = " << c.dataset << "\n"
      << "augment.rotation = " << to_string(c.augment.rotation) << "\n"
      << "augment.scale_lo = " << fmt(c.augment.scale_lo) << "\n"
      << "augment.scale_hi = " << fmt(c.augment.scale_hi) << "\n"
      << "augment.jitter = " << fmt(c.augment.jitter) << "\n"
      << "augment.subsample = "
      << (c.augment.subsample ? std::to_string(*c.augment.subsample) : std::string("none"))
      << "\n"
      << "point_dropout = " << fmt(c.point_dropout) << "\n";
  return out.str();
}

}  // namespace dnfn
