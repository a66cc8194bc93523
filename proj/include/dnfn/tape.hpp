#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dnfn/tensor.hpp"

namespace dnfn {

enum class Mode { train, eval };

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), T{}) {}

  void zero_grad() { grad.assign(value.size(), T{}); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Dynamic gradient tape. Operations append nodes in evaluation order and
/// backward() replays them in reverse. Nodes live in a deque so references
/// to earlier values stay valid while new nodes are appended.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  explicit Tape(Mode mode = Mode::eval, bool record = true)
      : mode_(mode), recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::train; }
  bool recording() const { return recording_; }

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
    return {this, nodes_.size() - 1};
  }

  Var<T> parameter(Parameter<T>& p) {
    nodes_.push_back(Node{p.value, {}, recording_, {}, recording_ ? &p : nullptr});
    return {this, nodes_.size() - 1};
  }

  /// Appends an operation result. The backward closure is kept only when at
  /// least one input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> inputs,
                Backward backward) {
    bool needs = false;
    if (recording_) {
      for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs,
                          needs ? std::move(backward) : Backward{}, nullptr});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  std::vector<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T{});
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every parameter leaf.
  void backward(Var<T> loss) {
    if (loss.value().size() != 1) {
      throw DimensionError("backward() needs a scalar, got shape " +
                           shape_str(loss.shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] += T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg.assign(n.grad.size(), T{});
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Discrete decisions made during the forward pass (rectifier signs, max
  // winners, top-k picks) are folded into one hash when tracking is on, so a
  // finite-difference probe can tell whether it crossed a kink.
  void set_track_regime(bool on) { track_regime_ = on; }
  bool track_regime() const { return track_regime_; }
  void note_regime(std::uint64_t v) {
    regime_ ^= v + 0x9e3779b97f4a7c15ULL + (regime_ << 6) + (regime_ >> 2);
  }
  std::uint64_t regime() const { return regime_; }

  // Dropout masks are a pure function of (seed, step, stream id).
  void set_dropout_stream(std::uint64_t seed, std::uint64_t step) {
    dropout_seed_ = seed;
    dropout_step_ = step;
  }
  std::uint64_t dropout_seed() const { return dropout_seed_; }
  std::uint64_t dropout_step() const { return dropout_step_; }
  std::uint64_t next_stream_id() { return stream_counter_++; }

 private:
  Mode mode_;
  bool recording_;
  std::deque<Node> nodes_;
  bool track_regime_ = false;
  std::uint64_t regime_ = 0;
  std::uint64_t dropout_seed_ = 0;
  std::uint64_t dropout_step_ = 0;
  std::uint64_t stream_counter_ = 0;
};

}  // namespace dnfn
