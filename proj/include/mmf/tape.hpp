#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmf/tensor.hpp"

namespace mmf {

using NodeId = std::int32_t;
inline constexpr NodeId kUntracked = -1;

// A value flowing through a computation. `node` is the tape slot that
// produced it, or kUntracked when no gradient will ever be needed.
struct Var {
  Tensor value;
  NodeId node = kUntracked;

  bool tracked() const noexcept { return node != kUntracked; }
  const Shape& shape() const noexcept { return value.shape(); }
};

enum class Mode { Train, Eval };

// Receives the upstream gradient and accumulates into the input gradients.
// Entries of `grad_in` are null for inputs that do not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

struct TapeNode {
  std::string op;
  std::vector<NodeId> inputs;
  Shape shape;
  BackwardFn backward;  // empty for leaves
};

// Which branch every relu and max-pool took during one forward pass. A
// forward run in Replay phase reuses the recorded branches instead of
// re-deciding them, which evaluates the same linear piece of the network at a
// nearby point. Finite-difference checks use this so that a perturbation
// crossing a kink does not masquerade as a gradient error.
class ActivationPattern {
 public:
  enum class Phase { Record, Replay };

  Phase phase() const noexcept { return phase_; }
  void start_replay() noexcept {
    phase_ = Phase::Replay;
    rewind();
  }
  void rewind() noexcept { relu_cursor_ = pool_cursor_ = 0; }

  // Record: stores `decided` and returns it. Replay: returns the next stored
  // entry (size-checked).
  const std::vector<std::uint8_t>& relu_mask(std::vector<std::uint8_t> decided);
  const std::vector<std::uint32_t>& pool_choice(std::vector<std::uint32_t> decided);
  bool replaying() const noexcept { return phase_ == Phase::Replay; }

 private:
  Phase phase_ = Phase::Record;
  std::vector<std::vector<std::uint8_t>> relu_;
  std::vector<std::vector<std::uint32_t>> pool_;
  std::size_t relu_cursor_ = 0;
  std::size_t pool_cursor_ = 0;
};

// Records primitive ops in execution order, which is a topological order by
// construction. The mode selects batchnorm behaviour; recording can be turned
// off for pure inference.
class Tape {
 public:
  explicit Tape(Mode mode = Mode::Train, bool record = true) : mode_(mode), record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const noexcept { return mode_; }
  bool training() const noexcept { return mode_ == Mode::Train; }
  bool recording() const noexcept { return record_; }

  // Leaf for a tensor. Tracked iff recording and t.requires_grad(); the same
  // storage always maps to the same leaf.
  Var leaf(const Tensor& t);
  static Var constant(const Tensor& t) { return Var{t, kUntracked}; }

  // Used by op implementations. Returns an untracked Var when no input is
  // tracked, in which case `fn` is dropped.
  Var record(std::string op, Tensor out, std::initializer_list<const Var*> inputs, BackwardFn fn);
  Var record(std::string op, Tensor out, std::span<const Var* const> inputs, BackwardFn fn);

  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t count_ops(std::string_view op) const;

  std::optional<NodeId> find_leaf(const Tensor& t) const;

  void set_pattern(ActivationPattern* pattern) noexcept { pattern_ = pattern; }
  ActivationPattern* pattern() const noexcept { return pattern_; }
  const std::unordered_map<const void*, NodeId>& leaves() const noexcept { return leaf_by_storage_; }

 private:
  Mode mode_;
  bool record_;
  std::vector<TapeNode> nodes_;
  std::unordered_map<const void*, NodeId> leaf_by_storage_;
  ActivationPattern* pattern_ = nullptr;
};

class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::optional<Tensor>> grads, std::unordered_map<const void*, NodeId> leaves)
      : grads_(std::move(grads)), leaves_(std::move(leaves)) {}

  // Gradient w.r.t. a tracked Var, or a parameter tensor watched on the tape.
  const Tensor& of(const Var& v) const;
  const Tensor& of(const Tensor& leaf_tensor) const;
  bool has(const Tensor& leaf_tensor) const;

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::unordered_map<const void*, NodeId> leaves_;
};

// Reverse-mode sweep from a scalar loss. Every tracked leaf receives a
// gradient; leaves the loss does not depend on get zeros. Interior gradients
// are freed as the sweep passes them unless `retain_interior` is set.
Gradients backward(const Tape& tape, const Var& loss, bool retain_interior = false);

}  // namespace mmf
