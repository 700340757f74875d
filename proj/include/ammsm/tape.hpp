#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ammsm/tensor.hpp"

namespace ammsm {

// Reverse-mode tape. Forward ops append one record each; backward() replays
// the records in exact reverse order, accumulating into per-node gradient
// buffers. A tape and the tensors it tracks stay on one logical thread;
// independent tapes on other threads never share state.
template <typename S>
class GradTape {
 public:
  GradTape() : epoch_(next_epoch()) {}
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape*& current() {
    thread_local GradTape* cur = nullptr;
    return cur;
  }

  std::uint64_t epoch() const { return epoch_; }

  bool tracks(const Tensor<S>& t) const { return t.tape_epoch == epoch_ && t.node >= 0; }

  // Register a leaf (parameter or checked input) for gradient accumulation.
  void watch(Tensor<S>& t) {
    if (tracks(t)) return;
    t.node = new_node(t.numel());
    t.tape_epoch = epoch_;
  }

  // Register an op output together with its backward closure. The closure
  // receives the output gradient buffer and this tape for parent accumulation.
  using BackwardFn = std::function<void(GradTape&, const std::vector<S>&)>;

  void record(Tensor<S>& out, BackwardFn backward) {
    out.node = new_node(out.numel());
    out.tape_epoch = epoch_;
    ops_.push_back({out.node, std::move(backward)});
  }

  // Gradient buffer for a node, zero-initialized on first touch.
  std::vector<S>& grad_buffer(std::int64_t node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(node_sizes_[static_cast<std::size_t>(node)]), S(0));
    return g;
  }

  bool has_grad(std::int64_t node) const { return !grads_[static_cast<std::size_t>(node)].empty(); }

  void backward(const Tensor<S>& loss) {
    require(tracks(loss), "backward: loss tensor is not tracked by this tape");
    require(loss.numel() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!std::isfinite(static_cast<double>(loss.value())))
      throw NumericError("backward: loss is non-finite");
    grad_buffer(loss.node).assign(1, S(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      auto& g = grads_[static_cast<std::size_t>(it->out_node)];
      if (g.empty()) continue;  // output not on any path to the loss
      it->backward(*this, g);
    }
  }

  // Gradient of a watched/derived tensor. Untouched nodes read as zeros,
  // matching the "off-path gradient is exactly zero" contract.
  Tensor<S> grad_of(const Tensor<S>& t) {
    require(tracks(t), "grad_of: tensor is not tracked by this tape");
    Tensor<S> g(t.shape());
    const auto& buf = grads_[static_cast<std::size_t>(t.node)];
    if (!buf.empty()) std::copy(buf.begin(), buf.end(), g.data().begin());
    return g;
  }

  std::size_t op_count() const { return ops_.size(); }

 private:
  struct OpRecord {
    std::int64_t out_node;
    BackwardFn backward;
  };

  static std::uint64_t next_epoch() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::int64_t new_node(Index size) {
    node_sizes_.push_back(size);
    grads_.emplace_back();
    return static_cast<std::int64_t>(node_sizes_.size()) - 1;
  }

  std::uint64_t epoch_;
  std::vector<Index> node_sizes_;
  std::vector<std::vector<S>> grads_;
  std::vector<OpRecord> ops_;
};

// RAII activation of a tape on the current thread.
template <typename S>
class TapeScope {
 public:
  explicit TapeScope(GradTape<S>* tape) : prev_(GradTape<S>::current()) { GradTape<S>::current() = tape; }
  ~TapeScope() { GradTape<S>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<S>* prev_;
};

}  // namespace ammsm
