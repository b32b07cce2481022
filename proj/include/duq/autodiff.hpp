// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over Tensor. A Tape records every operation
// of one forward pass; backward() replays the records in exact reverse
// order and accumulates adjoints into a gradient store keyed by parameter
// identity. Tapes are rebuilt per pass and are independent of each other,
// so concurrent forwards over shared read-only parameters are safe.

#pragma once

#include "duq/tensor.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace duq {

/// Named trainable tensor. Identity (the object address) is what ties a
/// tape leaf to its gradient; the name is used for optimizer state and
/// checkpoints, which must survive copies and moves of the value.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Handle to a node on a Tape.
struct Var {
  Index id = -1;
  bool valid() const { return id >= 0; }
};

enum class EwOp { Add, Sub, Mul, Sigmoid, Tanh, Softplus, Log, Square };

/// Gradients of one backward pass, in parameter registration order.
/// Parameters registered on the tape but unreachable from the loss report
/// zero gradients of the parameter's shape.
class GradientStore {
 public:
  bool contains(const Parameter& p) const { return index_.count(&p) != 0; }
  const Tensor& grad(const Parameter& p) const;

  const std::vector<std::pair<const Parameter*, Tensor>>& items() const { return items_; }

  /// sqrt of the summed squared entries over all gradients, accumulated in
  /// registration order so repeated runs agree bitwise.
  double global_norm() const;
  void scale(double factor);

 private:
  friend class Tape;
  void insert(const Parameter* p, Tensor grad);

  std::vector<std::pair<const Parameter*, Tensor>> items_;
  std::unordered_map<const Parameter*, std::size_t> index_;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

/// Record of one forward pass. Node ids grow in execution order; inputs of
/// a node always have smaller ids, so the reverse id sweep in backward()
/// visits nodes in exact reverse execution order.
class Tape {
 public:
  /// Registers a leaf bound to the parameter's identity. Repeated calls
  /// with the same parameter return the same node.
  Var parameter(const Parameter& p);

  /// Leaf with no gradient tracking.
  Var constant(Tensor value);
  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  Var elementwise(EwOp op, Var a);
  Var elementwise(EwOp op, Var a, Var b);

  Var add(Var a, Var b) { return elementwise(EwOp::Add, a, b); }
  Var sub(Var a, Var b) { return elementwise(EwOp::Sub, a, b); }
  Var mul(Var a, Var b) { return elementwise(EwOp::Mul, a, b); }
  Var sigmoid(Var x) { return elementwise(EwOp::Sigmoid, x); }
  Var tanh(Var x) { return elementwise(EwOp::Tanh, x); }
  Var softplus(Var x) { return elementwise(EwOp::Softplus, x); }
  Var log(Var x) { return elementwise(EwOp::Log, x); }
  Var square(Var x) { return elementwise(EwOp::Square, x); }

  Var matmul(Var a, Var b);
  Var concat(const std::vector<Var>& parts, Index axis);
  Var slice(Var t, Index axis, Index start, Index extent);
  Var gather_rows(Var table, std::vector<Index> ids);

  Var reduce_sum(Var t);
  Var reduce_sum(Var t, Index axis);
  Var reduce_mean(Var t);
  Var reduce_mean(Var t, Index axis);

  /// Extension point for fused operations with hand-derived adjoints
  /// (the loss terms use this). The backward fn sees the node's adjoint
  /// and accumulates into its inputs.
  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  Index size() const { return static_cast<Index>(nodes_.size()); }

  /// Reverse sweep from a scalar loss. Does not mutate the tape; calling
  /// it twice on the same tape yields bitwise-identical stores.
  GradientStore backward(Var loss) const;

 private:
  friend class BackwardContext;
  struct Node {
    Tensor value;
    std::vector<Index> inputs;
    BackwardFn backward;  // empty for leaves
    const Parameter* param = nullptr;
  };

  Var push(Tensor value, std::vector<Index> inputs, BackwardFn backward);
  const Node& node(Var v) const;
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter*, Index>> param_nodes_;
  std::unordered_map<const Parameter*, Index> param_index_;
};

/// View handed to backward functions: the node's adjoint and forward
/// values, plus accumulation into the adjoints of its inputs.
class BackwardContext {
 public:
  const Tensor& adjoint() const { return (*adjoints_)[id_]; }
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  std::size_t input_count() const;
  void accumulate(std::size_t i, Tensor grad);

 private:
  friend class Tape;
  BackwardContext(const Tape& tape, Index id, std::vector<Tensor>& adjoints)
      : tape_(&tape), id_(id), adjoints_(&adjoints) {}

  const Tape* tape_;
  Index id_;
  std::vector<Tensor>* adjoints_;
};

// Stable scalar kernels shared with non-tape code.
double sigmoid_value(double x);
double softplus_value(double x);

}  // namespace duq
