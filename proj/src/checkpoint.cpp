#include "dnfn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dnfn/error.hpp"

namespace dnfn {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'C', 'K'};
constexpr double kExactFloatInt = 16777216.0;  // 2^24

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void record(const std::string& name, const Shape& shape, const float* data) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) u32(static_cast<std::uint32_t>(e));
    const std::size_t n = shape_size(shape);
    for (std::size_t i = 0; i < n; ++i) u32(std::bit_cast<std::uint32_t>(data[i]));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint: truncated " + std::string(what) + " at byte offset " +
                        std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Record record() {
    Record r;
    r.name = text(u32("record name length"), "record name");
    const std::uint32_t rank = u32("record rank");
    if (rank > 8) {
      throw FormatError("checkpoint: record '" + r.name + "' has implausible rank " +
                        std::to_string(rank) + " before byte offset " + std::to_string(pos_));
    }
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(u32("record extent"));
    const std::size_t n = shape_size(r.shape);
    if (n > (in_.size() - pos_) / 4) need(n * 4, "record payload");
    r.values.resize(n);
    for (auto& v : r.values) v = std::bit_cast<float>(u32("record payload"));
    return r;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void put_scalar(Writer& w, const std::string& name, double v) {
  if (v < 0.0 || v > kExactFloatInt) {
    throw TrainingError("checkpoint: " + name + " = " + std::to_string(v) +
                        " is not exactly representable");
  }
  const float f = static_cast<float>(v);
  w.record(name, Shape{1}, &f);
}

std::int64_t get_scalar(std::map<std::string, Record>& recs, const std::string& name) {
  auto it = recs.find(name);
  if (it == recs.end()) throw FormatError("checkpoint: missing record '" + name + "'");
  if (it->second.values.size() != 1) {
    throw FormatError("checkpoint: record '" + name + "' must be a scalar");
  }
  const auto v = static_cast<std::int64_t>(it->second.values[0]);
  recs.erase(it);
  return v;
}

void fill(const std::string& name, const Record& rec, const Shape& shape, float* dst) {
  if (rec.shape != shape) {
    throw ConfigError("checkpoint: record '" + name + "' has shape " + shape_str(rec.shape) +
                      ", config expects " + shape_str(shape));
  }
  std::copy(rec.values.begin(), rec.values.end(), dst);
}

}  // namespace

std::string encode_checkpoint(const TrainConfig& config, ModelParams<float>& params,
                              const OptimizerState& optimizer, std::int64_t epoch) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string cfg = serialize_config(config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());

  std::uint32_t count = 0;
  params.visit_parameters([&](Parameter<float>&) { ++count; });
  params.visit_buffers([&](const std::string&, Tensor<float>&) { ++count; });
  w.u32(count);
  std::vector<const Parameter<float>*> plist;
  params.visit_parameters([&](Parameter<float>& p) {
    w.record(p.name, p.value.shape, p.value.values.data());
    plist.push_back(&p);
  });
  params.visit_buffers([&](const std::string& name, Tensor<float>& t) {
    w.record(name, t.shape, t.values.data());
  });

  const bool with_momentum = !optimizer.momentum.empty();
  if (with_momentum && optimizer.momentum.size() != plist.size()) {
    throw TrainingError("checkpoint: optimizer holds " +
                        std::to_string(optimizer.momentum.size()) + " buffers for " +
                        std::to_string(plist.size()) + " parameters");
  }
  w.u32(static_cast<std::uint32_t>(3 + (with_momentum ? plist.size() : 0)));
  put_scalar(w, "optimizer.step", static_cast<double>(optimizer.current_step));
  put_scalar(w, "optimizer.epoch", static_cast<double>(epoch));
  put_scalar(w, "optimizer.total_steps", static_cast<double>(optimizer.total_steps));
  if (with_momentum) {
    for (std::size_t i = 0; i < plist.size(); ++i) {
      if (optimizer.momentum[i].size() != plist[i]->value.size()) {
        throw TrainingError("checkpoint: momentum buffer size mismatch for " + plist[i]->name);
      }
      w.record("momentum." + plist[i]->name, plist[i]->value.shape, optimizer.momentum[i].data());
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic at byte offset 0, expected \"DNCK\"");
  }
  Reader r(bytes);
  r.text(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  }
  Checkpoint ck;
  ck.config = parse_config(r.text(r.u32("config length"), "config block"));
  ck.config.validate();
  ck.params = ModelParams<float>::init(ck.config.network, ck.config.seed);

  std::map<std::string, Record> model;
  const std::uint32_t n_model = r.u32("record count");
  for (std::uint32_t i = 0; i < n_model; ++i) {
    const std::size_t at = r.pos();
    Record rec = r.record();
    if (model.count(rec.name)) {
      throw FormatError("checkpoint: duplicate record '" + rec.name + "' at byte offset " +
                        std::to_string(at));
    }
    model.emplace(rec.name, std::move(rec));
  }
  auto take = [&](const std::string& name, const Shape& shape, float* dst) {
    auto it = model.find(name);
    if (it == model.end()) throw ConfigError("checkpoint: missing record '" + name + "'");
    fill(name, it->second, shape, dst);
    model.erase(it);
  };
  std::vector<Parameter<float>*> plist;
  ck.params.visit_parameters([&](Parameter<float>& p) {
    take(p.name, p.value.shape, p.value.values.data());
    plist.push_back(&p);
  });
  ck.params.visit_buffers([&](const std::string& name, Tensor<float>& t) {
    take(name, t.shape, t.values.data());
  });
  if (!model.empty()) {
    throw ConfigError("checkpoint: record '" + model.begin()->first +
                      "' does not belong to the configured model");
  }

  std::map<std::string, Record> opt;
  const std::uint32_t n_opt = r.u32("optimizer record count");
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    Record rec = r.record();
    opt.emplace(rec.name, std::move(rec));
  }
  if (!r.done()) {
    throw FormatError("checkpoint: trailing bytes at byte offset " + std::to_string(r.pos()));
  }
  const auto step = get_scalar(opt, "optimizer.step");
  ck.epoch = get_scalar(opt, "optimizer.epoch");
  const auto total = get_scalar(opt, "optimizer.total_steps");
  ck.optimizer = make_optimizer(ck.config.momentum, ck.config.lr_initial, ck.config.lr_final,
                                total);
  ck.optimizer.current_step = step;
  if (!opt.empty()) {
    for (auto* p : plist) {
      const std::string name = "momentum." + p->name;
      auto it = opt.find(name);
      if (it == opt.end()) throw FormatError("checkpoint: missing record '" + name + "'");
      std::vector<float> buf(p->value.size());
      fill(name, it->second, p->value.shape, buf.data());
      ck.optimizer.momentum.push_back(std::move(buf));
      opt.erase(it);
    }
    if (!opt.empty()) {
      throw FormatError("checkpoint: unexpected optimizer record '" + opt.begin()->first + "'");
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     ModelParams<float>& params, const OptimizerState& optimizer,
                     std::int64_t epoch) {
  const std::string bytes = encode_checkpoint(config, params, optimizer, epoch);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace dnfn
