#include "mixfc/tape.hpp"

#include "mixfc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mixfc {

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
}

void require_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    shape_error(kind, "expected " + std::to_string(want) + " inputs, got " + std::to_string(got));
  }
}

Index broadcast_dim(OpKind kind, const Tensor& a, const Tensor& b, Index da, Index db) {
  if (da == db) return da;
  if (da == 1) return db;
  if (db == 1) return da;
  shape_error(kind, "shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

// Returns `t` itself when no broadcast is needed, else a replicated copy in `storage`.
const Tensor& expand(const Tensor& t, Index rows, Index cols, Tensor& storage) {
  if (t.rows() == rows && t.cols() == cols) return t;
  storage = t.replicate(rows / t.rows(), cols / t.cols());
  return storage;
}

// Sums a full-shape gradient back down to the shape of a broadcast operand.
Tensor reduce_to(Tensor g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return scalar_tensor(g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor row_log_sum_exp(const Tensor& x) {
  Tensor out(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    if (!std::isfinite(m)) {
      out(r, 0) = m;
      continue;
    }
    out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  return out;
}

void accumulate(Tensor& slot, bool& set, Tensor&& g) {
  if (set) {
    slot += g;
  } else {
    slot = std::move(g);
    set = true;
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Sub: return "sub";
    case OpKind::Div: return "div";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::LogSumExp: return "log_sum_exp";
  }
  return "unknown";
}

Tensor Gradients::operator[](const Var& v) const {
  if (v.id() < grads_.size() && set_[v.id()]) return grads_[v.id()];
  const Tensor& value = tape_->value(v.id());
  return Tensor::Zero(value.rows(), value.cols());
}

bool Gradients::has(const Var& v) const { return v.id() < set_.size() && set_[v.id()]; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) { return push({OpKind::Leaf, {}, std::move(value), {}, true}); }

Var Tape::constant(Tensor value) { return push({OpKind::Leaf, {}, std::move(value), {}, false}); }

Var Tape::record(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  for (const Var& in : inputs) {
    if (&in.tape() != this) shape_error(kind, "input belongs to a different tape");
  }
  auto val = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i].id()].value; };

  Tensor out;
  switch (kind) {
    case OpKind::Leaf:
      shape_error(kind, "leaves are created with variable() or constant()");
    case OpKind::Matmul: {
      require_arity(kind, inputs.size(), 2);
      if (val(0).cols() != val(1).rows()) {
        shape_error(kind, "shape mismatch " + shape_string(val(0)) + " x " + shape_string(val(1)));
      }
      out = val(0) * val(1);
      break;
    }
    case OpKind::Add:
    case OpKind::Mul:
    case OpKind::Sub:
    case OpKind::Div: {
      require_arity(kind, inputs.size(), 2);
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      const Index rows = broadcast_dim(kind, a, b, a.rows(), b.rows());
      const Index cols = broadcast_dim(kind, a, b, a.cols(), b.cols());
      Tensor sa;
      Tensor sb;
      const Tensor& ea = expand(a, rows, cols, sa);
      const Tensor& eb = expand(b, rows, cols, sb);
      if (kind == OpKind::Add) out = ea + eb;
      if (kind == OpKind::Sub) out = ea - eb;
      if (kind == OpKind::Mul) out = ea.cwiseProduct(eb);
      if (kind == OpKind::Div) out = ea.cwiseQuotient(eb);
      break;
    }
    case OpKind::Exp:
      require_arity(kind, inputs.size(), 1);
      out = val(0).array().exp().matrix();
      break;
    case OpKind::Log:
      require_arity(kind, inputs.size(), 1);
      out = val(0).array().log().matrix();
      break;
    case OpKind::Tanh:
      require_arity(kind, inputs.size(), 1);
      out = val(0).array().tanh().matrix();
      break;
    case OpKind::Sigmoid:
      require_arity(kind, inputs.size(), 1);
      out = val(0).unaryExpr([](double x) { return stable_sigmoid(x); });
      break;
    case OpKind::Softplus:
      require_arity(kind, inputs.size(), 1);
      out = val(0).unaryExpr([](double x) { return stable_softplus(x); });
      break;
    case OpKind::Square:
      require_arity(kind, inputs.size(), 1);
      out = val(0).array().square().matrix();
      break;
    case OpKind::Sum:
      require_arity(kind, inputs.size(), 1);
      out = scalar_tensor(val(0).sum());
      break;
    case OpKind::Mean:
      require_arity(kind, inputs.size(), 1);
      if (val(0).size() == 0) shape_error(kind, "empty input");
      out = scalar_tensor(val(0).mean());
      break;
    case OpKind::Concat: {
      if (inputs.empty()) shape_error(kind, "no inputs");
      const Index rows = val(0).rows();
      Index cols = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (val(i).rows() != rows) {
          shape_error(kind, "row mismatch " + shape_string(val(0)) + " vs " + shape_string(val(i)));
        }
        cols += val(i).cols();
      }
      out.resize(rows, cols);
      Index at = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        out.middleCols(at, val(i).cols()) = val(i);
        at += val(i).cols();
      }
      break;
    }
    case OpKind::Slice:
      require_arity(kind, inputs.size(), 1);
      if (attrs.offset < 0 || attrs.count < 0 || attrs.offset + attrs.count > val(0).cols()) {
        shape_error(kind, "columns [" + std::to_string(attrs.offset) + ", " +
                              std::to_string(attrs.offset + attrs.count) + ") out of range for " +
                              shape_string(val(0)));
      }
      out = val(0).middleCols(attrs.offset, attrs.count);
      break;
    case OpKind::LogSumExp:
      require_arity(kind, inputs.size(), 1);
      if (val(0).cols() == 0) shape_error(kind, "empty rows");
      out = row_log_sum_exp(val(0));
      break;
  }

  bool needs = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Var& in : inputs) {
    ids.push_back(in.id());
    needs = needs || nodes_[in.id()].requires_grad;
  }
  return push({kind, std::move(ids), std::move(out), attrs, needs});
}

Gradients Tape::backward(const Var& root) const {
  if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to a different tape");
  if (!is_scalar(root.value())) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_string(root.value()));
  }
  Gradients result;
  result.tape_ = this;
  result.grads_.resize(nodes_.size());
  result.set_.assign(nodes_.size(), false);
  auto& grads = result.grads_;
  std::vector<bool> set(nodes_.size(), false);

  grads[root.id()] = scalar_tensor(1.0);
  set[root.id()] = true;

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!set[i] || !node.requires_grad || node.kind == OpKind::Leaf) continue;
    const Tensor& g = grads[i];
    auto in_val = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
    auto wants = [&](std::size_t k) { return nodes_[node.inputs[k]].requires_grad; };
    auto add_to = [&](std::size_t k, Tensor contribution) {
      const std::size_t id = node.inputs[k];
      bool s = set[id];
      accumulate(grads[id], s, std::move(contribution));
      set[id] = s;
    };

    switch (node.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::Matmul:
        if (wants(0)) add_to(0, g * in_val(1).transpose());
        if (wants(1)) add_to(1, in_val(0).transpose() * g);
        break;
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul:
      case OpKind::Div: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        const Index rows = g.rows();
        const Index cols = g.cols();
        Tensor storage;
        if (node.kind == OpKind::Add) {
          if (wants(0)) add_to(0, reduce_to(g, a.rows(), a.cols()));
          if (wants(1)) add_to(1, reduce_to(g, b.rows(), b.cols()));
        } else if (node.kind == OpKind::Sub) {
          if (wants(0)) add_to(0, reduce_to(g, a.rows(), a.cols()));
          if (wants(1)) add_to(1, reduce_to(-g, b.rows(), b.cols()));
        } else if (node.kind == OpKind::Mul) {
          if (wants(0)) add_to(0, reduce_to(g.cwiseProduct(expand(b, rows, cols, storage)), a.rows(), a.cols()));
          if (wants(1)) add_to(1, reduce_to(g.cwiseProduct(expand(a, rows, cols, storage)), b.rows(), b.cols()));
        } else {
          const Tensor& eb = expand(b, rows, cols, storage);
          if (wants(0)) add_to(0, reduce_to(g.cwiseQuotient(eb), a.rows(), a.cols()));
          if (wants(1)) {
            const Tensor db = -(g.cwiseProduct(node.value)).cwiseQuotient(eb);
            add_to(1, reduce_to(db, b.rows(), b.cols()));
          }
        }
        break;
      }
      case OpKind::Exp:
        add_to(0, g.cwiseProduct(node.value));
        break;
      case OpKind::Log:
        add_to(0, g.cwiseQuotient(in_val(0)));
        break;
      case OpKind::Tanh:
        add_to(0, (g.array() * (1.0 - node.value.array().square())).matrix());
        break;
      case OpKind::Sigmoid:
        add_to(0, (g.array() * node.value.array() * (1.0 - node.value.array())).matrix());
        break;
      case OpKind::Softplus:
        add_to(0, g.cwiseProduct(in_val(0).unaryExpr([](double x) { return stable_sigmoid(x); })));
        break;
      case OpKind::Square:
        add_to(0, (2.0 * g.array() * in_val(0).array()).matrix());
        break;
      case OpKind::Sum:
        add_to(0, Tensor::Constant(in_val(0).rows(), in_val(0).cols(), g(0, 0)));
        break;
      case OpKind::Mean: {
        const Tensor& x = in_val(0);
        add_to(0, Tensor::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
        break;
      }
      case OpKind::Concat: {
        Index at = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const Index c = in_val(k).cols();
          if (wants(k)) add_to(k, g.middleCols(at, c));
          at += c;
        }
        break;
      }
      case OpKind::Slice: {
        const Tensor& x = in_val(0);
        Tensor full = Tensor::Zero(x.rows(), x.cols());
        full.middleCols(node.attrs.offset, node.attrs.count) = g;
        add_to(0, full);
        break;
      }
      case OpKind::LogSumExp: {
        const Tensor& x = in_val(0);
        Tensor soft(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
          soft.row(r) = (x.row(r).array() - node.value(r, 0)).exp().matrix() * g(r, 0);
        }
        add_to(0, soft);
        break;
      }
    }
  }
  result.set_ = std::move(set);
  return result;
}

Var forward_op(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  if (inputs.empty()) throw std::invalid_argument(std::string(op_name(kind)) + ": no inputs");
  return inputs.front().tape().record(kind, inputs, attrs);
}

namespace {

Var binary(OpKind kind, const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return a.tape().record(kind, in);
}

Var unary(OpKind kind, const Var& x, OpAttrs attrs = {}) {
  const Var in[] = {x};
  return x.tape().record(kind, in, attrs);
}

Var lift(const Var& like, double v) { return like.tape().constant(scalar_tensor(v)); }

}  // namespace

Var matmul(const Var& a, const Var& b) { return binary(OpKind::Matmul, a, b); }
Var operator+(const Var& a, const Var& b) { return binary(OpKind::Add, a, b); }
Var operator-(const Var& a, const Var& b) { return binary(OpKind::Sub, a, b); }
Var operator*(const Var& a, const Var& b) { return binary(OpKind::Mul, a, b); }
Var operator/(const Var& a, const Var& b) { return binary(OpKind::Div, a, b); }
Var operator+(const Var& a, double b) { return a + lift(a, b); }
Var operator+(double a, const Var& b) { return lift(b, a) + b; }
Var operator-(const Var& a, double b) { return a - lift(a, b); }
Var operator-(double a, const Var& b) { return lift(b, a) - b; }
Var operator*(const Var& a, double b) { return a * lift(a, b); }
Var operator*(double a, const Var& b) { return lift(b, a) * b; }
Var operator/(const Var& a, double b) { return a / lift(a, b); }
Var operator-(const Var& a) { return -1.0 * a; }
Var exp(const Var& x) { return unary(OpKind::Exp, x); }
Var log(const Var& x) { return unary(OpKind::Log, x); }
Var tanh(const Var& x) { return unary(OpKind::Tanh, x); }
Var sigmoid(const Var& x) { return unary(OpKind::Sigmoid, x); }
Var softplus(const Var& x) { return unary(OpKind::Softplus, x); }
Var square(const Var& x) { return unary(OpKind::Square, x); }
Var sum(const Var& x) { return unary(OpKind::Sum, x); }
Var mean(const Var& x) { return unary(OpKind::Mean, x); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  return parts.front().tape().record(OpKind::Concat, parts);
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice(const Var& x, Index offset, Index count) { return unary(OpKind::Slice, x, {offset, count}); }

Var log_sum_exp(const Var& x) { return unary(OpKind::LogSumExp, x); }

double check_gradients(const ScalarFunction& f, std::span<const Tensor> params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("check_gradients: step must be positive");

  std::vector<Tensor> point(params.begin(), params.end());
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : point) vars.push_back(tape.variable(p));
    const Var out = f(tape, vars);
    const Gradients grads = tape.backward(out);
    for (const Var& v : vars) analytic.push_back(grads[v]);
  }

  auto evaluate = [&]() {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : point) vars.push_back(tape.variable(p));
    const double v = f(tape, vars).value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite function value at perturbed point");
    return v;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    for (Index i = 0; i < point[k].size(); ++i) {
      double& x = point[k].data()[i];
      const double saved = x;
      x = saved + step;
      const double up = evaluate();
      x = saved - step;
      const double down = evaluate();
      x = saved;
      const double central = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[k].data()[i] - central) / std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mixfc
