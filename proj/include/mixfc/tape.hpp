#pragma once

#include "mixfc/tensor.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace mixfc {

/// Reverse-mode automatic differentiation over dense 2-D tensors.
///
/// A Tape records every operation of one forward pass (define-by-run). Nodes
/// are appended in creation order, so inputs always precede their consumers
/// and backward() is a single reverse sweep. Elementwise binary ops broadcast
/// a 1x1 operand, a 1xN row or an Nx1 column against the other operand.

enum class OpKind {
  Leaf,
  Matmul,
  Add,
  Mul,
  Sub,
  Div,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Softplus,
  Square,
  Sum,
  Mean,
  Concat,
  Slice,
  LogSumExp,
};

std::string_view op_name(OpKind kind);

/// Column range for Slice.
struct OpAttrs {
  Index offset = 0;
  Index count = 0;
};

class Tape;

class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients {
 public:
  /// Gradient with respect to `v`; zeros when no path from the root reaches it.
  Tensor operator[](const Var& v) const;
  bool has(const Var& v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> set_;
  const Tape* tape_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Tensor value);
  /// Leaf excluded from differentiation.
  Var constant(Tensor value);

  /// Computes `kind` on `inputs`, records the node and returns it.
  Var record(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {});

  /// Gradient of the scalar `root` with respect to every node that requires one.
  Gradients backward(const Var& root) const;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    OpAttrs attrs;
    bool requires_grad;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// Generic dispatcher; the named helpers below are thin wrappers around it.
Var forward_op(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {});

Var matmul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);
Var operator-(const Var& a);
Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var square(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
/// Concatenates along columns; all inputs share the row count.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Columns [offset, offset + count).
Var slice(const Var& x, Index offset, Index count);
/// Row-wise log(sum(exp(x))), returns an Nx1 column.
Var log_sum_exp(const Var& x);

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Max over every parameter entry of |autodiff - central difference| /
/// max(1, |central difference|).
double check_gradients(const ScalarFunction& f, std::span<const Tensor> params, double step);

}  // namespace mixfc
