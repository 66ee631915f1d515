#include "mmf/tape.hpp"

#include <algorithm>

#include "mmf/error.hpp"

namespace mmf {

const std::vector<std::uint8_t>& ActivationPattern::relu_mask(std::vector<std::uint8_t> decided) {
  if (phase_ == Phase::Record) {
    relu_.push_back(std::move(decided));
    return relu_.back();
  }
  if (relu_cursor_ >= relu_.size() || relu_[relu_cursor_].size() != decided.size()) {
    throw Error("activation pattern replay does not match the recorded forward pass");
  }
  return relu_[relu_cursor_++];
}

const std::vector<std::uint32_t>& ActivationPattern::pool_choice(std::vector<std::uint32_t> decided) {
  if (phase_ == Phase::Record) {
    pool_.push_back(std::move(decided));
    return pool_.back();
  }
  if (pool_cursor_ >= pool_.size() || pool_[pool_cursor_].size() != decided.size()) {
    throw Error("activation pattern replay does not match the recorded forward pass");
  }
  return pool_[pool_cursor_++];
}

Var Tape::leaf(const Tensor& t) {
  if (!record_ || !t.requires_grad()) return Var{t, kUntracked};
  if (auto it = leaf_by_storage_.find(t.storage_id()); it != leaf_by_storage_.end()) {
    if (nodes_[static_cast<std::size_t>(it->second)].shape != t.shape()) {
      throw ShapeMismatch("leaf storage re-watched with a different shape");
    }
    return Var{t, it->second};
  }
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(TapeNode{"leaf", {}, t.shape(), {}});
  leaf_by_storage_.emplace(t.storage_id(), id);
  return Var{t, id};
}

Var Tape::record(std::string op, Tensor out, std::initializer_list<const Var*> inputs, BackwardFn fn) {
  return record(std::move(op), std::move(out), std::span<const Var* const>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(std::string op, Tensor out, std::span<const Var* const> inputs, BackwardFn fn) {
#ifndef NDEBUG
  if (!out.all_finite()) throw NumericError("non-finite output from op '" + op + "'");
#endif
  const bool any_tracked =
      record_ && std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return v->tracked(); });
  if (!any_tracked) return Var{std::move(out), kUntracked};
  TapeNode node;
  node.op = std::move(op);
  node.shape = out.shape();
  node.backward = std::move(fn);
  node.inputs.reserve(inputs.size());
  for (const Var* v : inputs) node.inputs.push_back(v->node);
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  return Var{std::move(out), id};
}

std::size_t Tape::count_ops(std::string_view op) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [&](const TapeNode& n) { return n.op == op; }));
}

std::optional<NodeId> Tape::find_leaf(const Tensor& t) const {
  if (auto it = leaf_by_storage_.find(t.storage_id()); it != leaf_by_storage_.end()) return it->second;
  return std::nullopt;
}

const Tensor& Gradients::of(const Var& v) const {
  if (!v.tracked() || static_cast<std::size_t>(v.node) >= grads_.size() || !grads_[v.node]) {
    throw Error("no gradient recorded for this value");
  }
  return *grads_[v.node];
}

const Tensor& Gradients::of(const Tensor& leaf_tensor) const {
  auto it = leaves_.find(leaf_tensor.storage_id());
  if (it == leaves_.end() || !grads_[it->second]) throw Error("tensor was not watched on the tape");
  return *grads_[it->second];
}

bool Gradients::has(const Tensor& leaf_tensor) const {
  return leaves_.contains(leaf_tensor.storage_id());
}

Gradients backward(const Tape& tape, const Var& loss, bool retain_interior) {
  if (loss.value.numel() != 1 || loss.value.rank() != 0) {
    throw ShapeMismatch("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  std::vector<std::optional<Tensor>> grads(tape.size());
  if (loss.tracked()) {
    grads[loss.node] = Tensor(Shape{}, {1.0f});
    std::vector<Tensor*> grad_in;
    for (NodeId id = loss.node; id >= 0; --id) {
      const TapeNode& node = tape.node(id);
      if (!grads[id] || !node.backward) continue;
      grad_in.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const NodeId in = node.inputs[k];
        if (in == kUntracked) continue;
        if (!grads[in]) grads[in] = Tensor(tape.node(in).shape);
        grad_in[k] = &*grads[in];
      }
      node.backward(*grads[id], grad_in);
      if (!retain_interior && id != loss.node) grads[id].reset();
    }
  }
  for (const auto& [storage, id] : tape.leaves()) {
    if (!grads[id]) grads[id] = Tensor(tape.node(id).shape);
  }
  return Gradients(std::move(grads), tape.leaves());
}

}  // namespace mmf
