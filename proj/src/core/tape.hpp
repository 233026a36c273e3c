#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace mmvd::ad {

class Tape;

/// Handle into a Tape. Default constructed handles are invalid; ops that
/// accept an optional input (conv/linear bias) treat invalid as absent.
struct Var {
  int id = -1;
  bool ok() const { return id >= 0; }
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_live = false;
  std::string op;
  std::vector<int> inputs;
  // Re-derives value from current input values. Selection indices chosen at
  // record time (top-k, scatter targets, attention masks) stay frozen, which
  // keeps finite differencing consistent with the recorded gradient path.
  std::function<void(Tape&, Node&)> recompute;
  std::function<void(Tape&, Node&)> backprop;
};

/// Define-by-run reverse-mode tape over dense tensors. Each builder call
/// computes the forward value immediately and records closures for replay
/// and gradient accumulation. Evaluation order is fixed by node id, so
/// repeated runs on identical inputs are bitwise identical.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false, const std::string& name = "leaf");

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var affine(Var a, real scale, real shift);
  Var relu(Var a);
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var stop_grad(Var a);
  Var reshape(Var a, std::vector<int> shape);

  Var matmul(Var a, Var b);     // (m,k)x(k,n)
  Var matmul_nt(Var a, Var b);  // (m,k)x(n,k)^T
  Var linear(Var x, Var w, Var b);  // x:(T,Din) w:(Din,Dout) b:{Dout} or invalid
  // x:(T,Din) w:{Dout,k,Din}, same padding, odd k, optional dilation
  Var conv1d(Var x, Var w, Var b, int dilation = 1);
  Var layer_norm(Var x, Var gain, Var bias, real eps = 1e-5);
  Var masked_softmax(Var scores, std::shared_ptr<const std::vector<uint8_t>> mask);
  Var concat_cols(const std::vector<Var>& xs);
  Var slice_cols(Var x, int c0, int c1);
  Var slice_rows(Var x, int r0, int r1);
  Var gather_cols(Var x, std::vector<int> idx);
  Var scatter_cols(Var x, std::vector<int> dst, int out_cols);

  Var sum_all(Var x);
  Var mean_of(const std::vector<Var>& xs);
  Var weighted_sum(const std::vector<Var>& xs, const std::vector<real>& w);
  Var topk_mean(Var s, int k, int valid_len);
  Var select_rows_mean(Var x, std::vector<int> rows);
  Var l2_normalize(Var v);
  Var l2_norm(Var v);
  Var cosine_row_mean(Var x, Var y, int valid_len);
  Var score_cross_entropy(Var p, Var q, int valid_len, real eps);
  Var bce(Var s, real y, real eps);

  const Tensor& value(Var v) const;
  /// Mutable leaf access, used by finite-difference probing. Errors on
  /// non-leaf nodes.
  Tensor& leaf_value(Var v);
  /// Replays every recorded op in record order.
  void recompute_all();
  /// Reverse sweep from a scalar loss. Callable once per tape.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }
  bool grad_defined(Var v) const;
  /// Gradient of the loss w.r.t. v. Requires backward(); for an untouched
  /// requires-grad node this is zeros of the value shape.
  Tensor grad(Var v) const;
  size_t node_count() const { return nodes_.size(); }
  const Node& node(Var v) const;

  // used by op closures
  Tensor* grad_accum(int id);
  Node& node_mut(int id) { return nodes_[static_cast<size_t>(id)]; }

 private:
  int new_node(const std::string& op, std::vector<int> inputs, bool requires_grad);
  void check(Var v, const char* who) const;

  // deque: growing the tape must not move existing nodes, values handed out
  // by value() stay pinned while later ops are recorded
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace mmvd::ad
