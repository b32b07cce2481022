// SPDX-License-Identifier: Apache-2.0

#include "duq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace duq {

namespace {

// Shapes interact only two ways: exact match, or scalar against anything.
bool ew_compatible(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) || a.is_scalar() || b.is_scalar();
}

const Shape& ew_result_shape(const Tensor& a, const Tensor& b) {
  if (a.is_scalar() && !b.is_scalar()) return b.shape();
  return a.shape();
}

// Folds an output-shaped gradient back to an operand's shape: a scalar
// operand broadcast over the output collects the sum of the gradient.
Tensor reduce_to_operand(const Tensor& grad, const Tensor& operand) {
  if (grad.same_shape(operand)) return grad;
  Tensor out(operand.shape());
  out.data()[0] = grad.array().sum();
  return out;
}

Index checked_axis(const Tensor& t, Index axis, const char* op) {
  if (axis < 0 || axis >= t.rank()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for rank " + std::to_string(t.rank()));
  }
  return axis;
}

// Decomposes a shape around an axis into (outer, extent, inner) so that
// flat index = (o * extent + e) * inner + i.
void axis_spans(const Shape& shape, Index axis, Index& outer, Index& extent, Index& inner) {
  outer = 1;
  for (Index d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
  extent = shape[static_cast<std::size_t>(axis)];
  inner = 1;
  for (Index d = axis + 1; d < static_cast<Index>(shape.size()); ++d) {
    inner *= shape[static_cast<std::size_t>(d)];
  }
}

}  // namespace

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  if (x > -37.0) return std::log1p(std::exp(x));
  return std::exp(x);
}

const Tensor& GradientStore::grad(const Parameter& p) const {
  auto it = index_.find(&p);
  if (it == index_.end()) {
    throw std::invalid_argument("GradientStore: no gradient recorded for parameter '" + p.name + "'");
  }
  return items_[it->second].second;
}

double GradientStore::global_norm() const {
  double sq = 0.0;
  for (const auto& [p, g] : items_) sq += g.array().square().sum();
  return std::sqrt(sq);
}

void GradientStore::scale(double factor) {
  for (auto& [p, g] : items_) g.array() *= factor;
}

void GradientStore::insert(const Parameter* p, Tensor grad) {
  index_.emplace(p, items_.size());
  items_.emplace_back(p, std::move(grad));
}

Var Tape::push(Tensor value, std::vector<Index> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<Index>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<Index>(nodes_.size())) {
    throw std::invalid_argument("Tape: variable id " + std::to_string(v.id) +
                                " does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Var Tape::parameter(const Parameter& p) {
  auto it = param_index_.find(&p);
  if (it != param_index_.end()) return Var{it->second};
  Var v = push(p.value, {}, nullptr);
  nodes_[static_cast<std::size_t>(v.id)].param = &p;
  param_index_.emplace(&p, v.id);
  param_nodes_.emplace_back(&p, v.id);
  return v;
}

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::elementwise(EwOp op, Var a) {
  const Tensor& x = value(a);
  Tensor out(x.shape());
  switch (op) {
    case EwOp::Sigmoid:
      out.array() = x.array().unaryExpr([](double v) { return sigmoid_value(v); });
      break;
    case EwOp::Tanh:
      out.array() = x.array().tanh();
      break;
    case EwOp::Softplus:
      out.array() = x.array().unaryExpr([](double v) { return softplus_value(v); });
      break;
    case EwOp::Log:
      if ((x.array() <= 0.0).any()) {
        throw std::invalid_argument("elementwise log: input contains non-positive entries");
      }
      out.array() = x.array().log();
      break;
    case EwOp::Square:
      out.array() = x.array().square();
      break;
    default:
      throw std::invalid_argument("elementwise: binary operation applied to one operand");
  }
  return push(std::move(out), {a.id}, [op](BackwardContext& ctx) {
    const Tensor& g = ctx.adjoint();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.output();
    Tensor gx(x.shape());
    switch (op) {
      case EwOp::Sigmoid:
        gx.array() = g.array() * y.array() * (1.0 - y.array());
        break;
      case EwOp::Tanh:
        gx.array() = g.array() * (1.0 - y.array().square());
        break;
      case EwOp::Softplus:
        gx.array() = g.array() * x.array().unaryExpr([](double v) { return sigmoid_value(v); });
        break;
      case EwOp::Log:
        gx.array() = g.array() / x.array();
        break;
      case EwOp::Square:
        gx.array() = g.array() * 2.0 * x.array();
        break;
      default:
        break;
    }
    ctx.accumulate(0, std::move(gx));
  });
}

Var Tape::elementwise(EwOp op, Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (op != EwOp::Add && op != EwOp::Sub && op != EwOp::Mul) {
    throw std::invalid_argument("elementwise: unary operation applied to two operands");
  }
  if (!ew_compatible(x, y)) {
    throw std::invalid_argument("elementwise: incompatible shapes " + shape_to_string(x.shape()) +
                                " and " + shape_to_string(y.shape()) +
                                " (only exact match or scalar broadcast)");
  }
  Tensor out(ew_result_shape(x, y));
  auto apply = [&](auto&& f) {
    if (x.same_shape(y)) {
      out.array() = f(x.array(), y.array());
    } else if (y.is_scalar()) {
      out.array() = f(x.array(), y.data()[0]);
    } else {
      out.array() = f(x.data()[0], y.array());
    }
  };
  switch (op) {
    case EwOp::Add:
      apply([](const auto& u, const auto& v) { return u + v; });
      break;
    case EwOp::Sub:
      apply([](const auto& u, const auto& v) { return u - v; });
      break;
    case EwOp::Mul:
      apply([](const auto& u, const auto& v) { return u * v; });
      break;
    default:
      break;
  }
  return push(std::move(out), {a.id, b.id}, [op](BackwardContext& ctx) {
    const Tensor& g = ctx.adjoint();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    switch (op) {
      case EwOp::Add:
        ctx.accumulate(0, reduce_to_operand(g, x));
        ctx.accumulate(1, reduce_to_operand(g, y));
        break;
      case EwOp::Sub: {
        ctx.accumulate(0, reduce_to_operand(g, x));
        Tensor neg(g.shape());
        neg.array() = -g.array();
        ctx.accumulate(1, reduce_to_operand(neg, y));
        break;
      }
      case EwOp::Mul: {
        Tensor gx(g.shape());
        Tensor gy(g.shape());
        if (x.same_shape(y)) {
          gx.array() = g.array() * y.array();
          gy.array() = g.array() * x.array();
        } else if (y.is_scalar()) {
          gx.array() = g.array() * y.data()[0];
          gy.array() = g.array() * x.array();
        } else {
          gx.array() = g.array() * y.array();
          gy.array() = g.array() * x.data()[0];
        }
        ctx.accumulate(0, reduce_to_operand(gx, x));
        ctx.accumulate(1, reduce_to_operand(gy, y));
        break;
      }
      default:
        break;
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.extent(1) != y.extent(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_to_string(x.shape()) +
                                " and " + shape_to_string(y.shape()));
  }
  Tensor out({x.extent(0), y.extent(1)});
  out.matrix().noalias() = x.matrix() * y.matrix();
  return push(std::move(out), {a.id, b.id}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.adjoint();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    Tensor gx(x.shape());
    gx.matrix().noalias() = g.matrix() * y.matrix().transpose();
    ctx.accumulate(0, std::move(gx));
    Tensor gy(y.shape());
    gy.matrix().noalias() = x.matrix().transpose() * g.matrix();
    ctx.accumulate(1, std::move(gy));
  });
}

Var Tape::concat(const std::vector<Var>& parts, Index axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor& first = value(parts[0]);
  checked_axis(first, axis, "concat");
  Shape out_shape = first.shape();
  Index total = 0;
  for (Var v : parts) {
    const Tensor& t = value(v);
    if (t.rank() != first.rank()) {
      throw std::invalid_argument("concat: rank mismatch between inputs");
    }
    for (Index d = 0; d < t.rank(); ++d) {
      if (d != axis && t.extent(d) != first.extent(d)) {
        throw std::invalid_argument("concat: extent mismatch off axis between " +
                                    shape_to_string(first.shape()) + " and " +
                                    shape_to_string(t.shape()));
      }
    }
    total += t.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  Tensor out(out_shape);
  Index outer, extent, inner;
  axis_spans(out_shape, axis, outer, extent, inner);
  Index offset = 0;
  std::vector<Index> offsets;
  std::vector<Index> extents;
  std::vector<Index> input_ids;
  offsets.reserve(parts.size());
  extents.reserve(parts.size());
  input_ids.reserve(parts.size());
  for (Var v : parts) {
    const Tensor& t = value(v);
    const Index e = t.extent(axis);
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(t.data() + o * e * inner, e * inner,
                  out.data() + (o * extent + offset) * inner);
    }
    offsets.push_back(offset);
    extents.push_back(e);
    input_ids.push_back(v.id);
    offset += e;
  }

  return push(std::move(out), std::move(input_ids),
              [axis, offsets, extents](BackwardContext& ctx) {
                const Tensor& g = ctx.adjoint();
                Index outer, extent, inner;
                axis_spans(g.shape(), axis, outer, extent, inner);
                for (std::size_t p = 0; p < offsets.size(); ++p) {
                  const Tensor& in = ctx.input(p);
                  Tensor gp(in.shape());
                  const Index e = extents[p];
                  for (Index o = 0; o < outer; ++o) {
                    std::copy_n(g.data() + (o * extent + offsets[p]) * inner, e * inner,
                                gp.data() + o * e * inner);
                  }
                  ctx.accumulate(p, std::move(gp));
                }
              });
}

Var Tape::slice(Var t, Index axis, Index start, Index extent) {
  const Tensor& x = value(t);
  checked_axis(x, axis, "slice");
  if (start < 0 || extent < 0 || start + extent > x.extent(axis)) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + extent) + ") out of bounds for extent " +
                                std::to_string(x.extent(axis)));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = extent;
  Tensor out(out_shape);
  Index outer, full, inner;
  axis_spans(x.shape(), axis, outer, full, inner);
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(x.data() + (o * full + start) * inner, extent * inner,
                out.data() + o * extent * inner);
  }
  return push(std::move(out), {t.id}, [axis, start, extent](BackwardContext& ctx) {
    const Tensor& g = ctx.adjoint();
    const Tensor& x = ctx.input(0);
    Tensor gx(x.shape());
    Index outer, full, inner;
    axis_spans(x.shape(), axis, outer, full, inner);
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(g.data() + o * extent * inner, extent * inner,
                  gx.data() + (o * full + start) * inner);
    }
    ctx.accumulate(0, std::move(gx));
  });
}

Var Tape::gather_rows(Var table, std::vector<Index> ids) {
  const Tensor& x = value(table);
  if (x.rank() != 2) {
    throw std::invalid_argument("gather_rows: table must have rank 2, got " +
                                shape_to_string(x.shape()));
  }
  const Index rows = x.extent(0);
  const Index cols = x.extent(1);
  for (Index id : ids) {
    if (id < 0 || id >= rows) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(id) +
                                  " out of range for table with " + std::to_string(rows) +
                                  " rows");
    }
  }
  Tensor out({static_cast<Index>(ids.size()), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(x.data() + ids[r] * cols, cols, out.data() + static_cast<Index>(r) * cols);
  }
  return push(std::move(out), {table.id}, [ids](BackwardContext& ctx) {
    const Tensor& g = ctx.adjoint();
    const Tensor& x = ctx.input(0);
    const Index cols = x.extent(1);
    Tensor gx(x.shape());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      ConstArrayMap src(g.data() + static_cast<Index>(r) * cols, cols);
      ArrayMap dst(gx.data() + ids[r] * cols, cols);
      dst += src;
    }
    ctx.accumulate(0, std::move(gx));
  });
}

Var Tape::reduce_sum(Var t) {
  const Tensor& x = value(t);
  Tensor out = Tensor::scalar(x.array().sum());
  return push(std::move(out), {t.id}, [](BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    Tensor gx = Tensor::full(x.shape(), ctx.adjoint().data()[0]);
    ctx.accumulate(0, std::move(gx));
  });
}

Var Tape::reduce_mean(Var t) {
  const Tensor& x = value(t);
  const double n = static_cast<double>(x.size());
  Tensor out = Tensor::scalar(x.array().sum() / n);
  return push(std::move(out), {t.id}, [n](BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    Tensor gx = Tensor::full(x.shape(), ctx.adjoint().data()[0] / n);
    ctx.accumulate(0, std::move(gx));
  });
}

namespace {

Shape drop_axis(const Shape& shape, Index axis) {
  Shape out;
  for (Index d = 0; d < static_cast<Index>(shape.size()); ++d) {
    if (d != axis) out.push_back(shape[static_cast<std::size_t>(d)]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Var Tape::reduce_sum(Var t, Index axis) {
  const Tensor& x = value(t);
  checked_axis(x, axis, "reduce_sum");
  Tensor out(drop_axis(x.shape(), axis));
  Index outer, extent, inner;
  axis_spans(x.shape(), axis, outer, extent, inner);
  out.array() = 0.0;
  for (Index o = 0; o < outer; ++o) {
    for (Index e = 0; e < extent; ++e) {
      ConstArrayMap src(x.data() + (o * extent + e) * inner, inner);
      ArrayMap dst(out.data() + o * inner, inner);
      dst += src;
    }
  }
  return push(std::move(out), {t.id}, [axis](BackwardContext& ctx) {
    const Tensor& g = ctx.adjoint();
    const Tensor& x = ctx.input(0);
    Tensor gx(x.shape());
    Index outer, extent, inner;
    axis_spans(x.shape(), axis, outer, extent, inner);
    for (Index o = 0; o < outer; ++o) {
      for (Index e = 0; e < extent; ++e) {
        std::copy_n(g.data() + o * inner, inner, gx.data() + (o * extent + e) * inner);
      }
    }
    ctx.accumulate(0, std::move(gx));
  });
}

Var Tape::reduce_mean(Var t, Index axis) {
  const Tensor& x = value(t);
  checked_axis(x, axis, "reduce_mean");
  const double n = static_cast<double>(x.extent(axis));
  Var summed = reduce_sum(t, axis);
  return mul(summed, constant_scalar(1.0 / n));
}

Var Tape::custom(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  std::vector<Index> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) {
    check(v);
    ids.push_back(v.id);
  }
  return push(std::move(value), std::move(ids), std::move(backward));
}

GradientStore Tape::backward(Var loss) const {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be a single value, got shape " +
                                shape_to_string(root.value.shape()));
  }
  std::vector<Tensor> adjoints(nodes_.size());
  adjoints[static_cast<std::size_t>(loss.id)] = Tensor::full(root.value.shape(), 1.0);
  for (Index id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || adjoints[static_cast<std::size_t>(id)].empty()) continue;
    BackwardContext ctx(*this, id, adjoints);
    n.backward(ctx);
  }
  GradientStore store;
  for (const auto& [p, id] : param_nodes_) {
    Tensor& g = adjoints[static_cast<std::size_t>(id)];
    if (g.empty()) {
      store.insert(p, Tensor::zeros(p->value.shape()));
    } else {
      store.insert(p, std::move(g));
    }
  }
  return store;
}

const Tensor& BackwardContext::output() const {
  return tape_->nodes_[static_cast<std::size_t>(id_)].value;
}

const Tensor& BackwardContext::input(std::size_t i) const {
  const auto& inputs = tape_->nodes_[static_cast<std::size_t>(id_)].inputs;
  if (i >= inputs.size()) {
    throw std::invalid_argument("BackwardContext: input index out of range");
  }
  return tape_->nodes_[static_cast<std::size_t>(inputs[i])].value;
}

std::size_t BackwardContext::input_count() const {
  return tape_->nodes_[static_cast<std::size_t>(id_)].inputs.size();
}

void BackwardContext::accumulate(std::size_t i, Tensor grad) {
  const auto& inputs = tape_->nodes_[static_cast<std::size_t>(id_)].inputs;
  if (i >= inputs.size()) {
    throw std::invalid_argument("BackwardContext: input index out of range");
  }
  const std::size_t target = static_cast<std::size_t>(inputs[i]);
  const Tensor& held = tape_->nodes_[target].value;
  if (!grad.same_shape(held)) {
    throw std::invalid_argument("BackwardContext: gradient shape " +
                                shape_to_string(grad.shape()) + " does not match input shape " +
                                shape_to_string(held.shape()));
  }
  Tensor& slot = (*adjoints_)[target];
  if (slot.empty()) {
    slot = std::move(grad);
  } else {
    slot.array() += grad.array();
  }
}

}  // namespace duq
