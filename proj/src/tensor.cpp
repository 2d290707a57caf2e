#include "hfan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hfan {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "(" << m.rows() << "," << m.cols() << ")";
  return os.str();
}

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("expected a 1x1 tensor, got " + shape_string(v));
  }
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(std::string name, const Matrix& value) {
  Node node;
  node.external = &value;
  node.name = std::move(name);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  if (!nodes_[id].requires_grad) return;
  if (!has_grad_[id]) {
    grads_[id] = g;
    has_grad_[id] = true;
  } else {
    grads_[id] += g;
  }
}

void Tape::accumulate_rows(std::size_t id, std::span<const int> rows, const Matrix& g) {
  if (!nodes_[id].requires_grad) return;
  if (!has_grad_[id]) {
    const Matrix& v = value(id);
    grads_[id] = Matrix::Zero(v.rows(), v.cols());
    has_grad_[id] = true;
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    grads_[id].row(rows[k]) += g.row(static_cast<Index>(k));
  }
}

TensorMap Tape::backward(Var loss) {
  const Matrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward needs a scalar loss, got " + shape_string(lv));
  }
  grads_.assign(nodes_.size(), Matrix());
  has_grad_.assign(nodes_.size(), false);
  grads_[loss.id] = Matrix::Ones(1, 1);
  has_grad_[loss.id] = true;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!has_grad_[i] || !node.backward) continue;
    node.backward(*this, grads_[i]);
  }

  TensorMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.name.empty()) continue;
    const Matrix& v = value(i);
    auto [it, inserted] = out.try_emplace(node.name, Matrix::Zero(v.rows(), v.cols()));
    if (has_grad_[i]) it->second += grads_[i];
  }
  return out;
}

Matrix Tape::grad(Var v) const {
  if (v.id < has_grad_.size() && has_grad_[v.id]) return grads_[v.id];
  return Matrix::Zero(v.rows(), v.cols());
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
  return *a.tape;
}

void require_same_rows(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows()) {
    throw DimensionError(std::string(op) + ": leading shape mismatch " + shape_string(a) +
                         " vs " + shape_string(b));
  }
}

void require_mask_shape(const Matrix& x, const Mask& mask, const char* op) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": mask shape does not match " + shape_string(x));
  }
}

// Sums `g` over the axes along which an operand of shape (r, c) was broadcast.
Matrix unbroadcast(const Matrix& g, Index r, Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(av) + " x " +
                         shape_string(bv));
  }
  Matrix out = av * bv;
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) tp.accumulate(a.id, g * tp.value(b.id).transpose());
    if (tp.requires_grad(b.id)) tp.accumulate(b.id, tp.value(a.id).transpose() * g);
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g.transpose());
  });
}

Var unary(Unary kind, Var x) {
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  switch (kind) {
    case Unary::Tanh: y = xv.array().tanh(); break;
    case Unary::Sigmoid:
      y = xv.unaryExpr([](double v) {
        // split by sign so exp never overflows
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
      break;
    case Unary::Relu: y = xv.cwiseMax(0.0); break;
    case Unary::Exp: y = xv.array().exp(); break;
    case Unary::Log:
      if ((xv.array() <= 0.0).any()) throw std::domain_error("log of a non-positive value");
      y = xv.array().log();
      break;
    case Unary::Sqrt:
      if ((xv.array() < 0.0).any()) throw std::domain_error("sqrt of a negative value");
      y = xv.array().sqrt();
      break;
  }
  Tape& t = *x.tape;
  const std::size_t yid = t.size();
  return t.record(std::move(y), {x}, [kind, x, yid](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(yid);
    const Matrix& xv = tp.value(x.id);
    Matrix d(y.rows(), y.cols());
    switch (kind) {
      case Unary::Tanh: d = (1.0 - y.array().square()).matrix(); break;
      case Unary::Sigmoid: d = (y.array() * (1.0 - y.array())).matrix(); break;
      case Unary::Relu: d = (xv.array() > 0.0).cast<double>().matrix(); break;
      case Unary::Exp: d = y; break;
      case Unary::Log: d = xv.array().inverse().matrix(); break;
      case Unary::Sqrt: d = (0.5 / y.array()).matrix(); break;
    }
    tp.accumulate(x.id, g.cwiseProduct(d));
  });
}

Var binary(Binary kind, Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  auto compatible = [](Index p, Index q) { return p == q || p == 1 || q == 1; };
  if (!compatible(av.rows(), bv.rows()) || !compatible(av.cols(), bv.cols())) {
    throw DimensionError("elementwise op: shapes " + shape_string(av) + " and " +
                         shape_string(bv) + " do not broadcast");
  }
  const Index rows = std::max(av.rows(), bv.rows());
  const Index cols = std::max(av.cols(), bv.cols());
  auto at = [](const Matrix& m, Index i, Index j) {
    return m(m.rows() == 1 ? 0 : i, m.cols() == 1 ? 0 : j);
  };
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const double p = at(av, i, j);
      const double q = at(bv, i, j);
      switch (kind) {
        case Binary::Add: out(i, j) = p + q; break;
        case Binary::Sub: out(i, j) = p - q; break;
        case Binary::Mul: out(i, j) = p * q; break;
        case Binary::Div: out(i, j) = p / q; break;
      }
    }
  }
  return t.record(std::move(out), {a, b}, [kind, a, b, at](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(a.id);
    const Matrix& bv = tp.value(b.id);
    Matrix ga(g.rows(), g.cols());
    Matrix gb(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index j = 0; j < g.cols(); ++j) {
        const double p = at(av, i, j);
        const double q = at(bv, i, j);
        switch (kind) {
          case Binary::Add: ga(i, j) = g(i, j); gb(i, j) = g(i, j); break;
          case Binary::Sub: ga(i, j) = g(i, j); gb(i, j) = -g(i, j); break;
          case Binary::Mul: ga(i, j) = g(i, j) * q; gb(i, j) = g(i, j) * p; break;
          case Binary::Div: ga(i, j) = g(i, j) / q; gb(i, j) = -g(i, j) * p / (q * q); break;
        }
      }
    }
    if (tp.requires_grad(a.id)) tp.accumulate(a.id, unbroadcast(ga, av.rows(), av.cols()));
    if (tp.requires_grad(b.id)) tp.accumulate(b.id, unbroadcast(gb, bv.rows(), bv.cols()));
  });
}

Var scale(Var x, double factor) {
  Matrix out = x.value() * factor;
  return x.tape->record(std::move(out), {x}, [x, factor](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, g * factor);
  });
}

Var maximum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw DimensionError("maximum: shapes " + shape_string(av) + " and " + shape_string(bv) +
                         " differ");
  }
  Mask take_a = av.array() >= bv.array();
  Matrix out = take_a.select(av, bv);
  return t.record(std::move(out), {a, b}, [a, b, take_a](Tape& tp, const Matrix& g) {
    const Matrix zero = Matrix::Zero(g.rows(), g.cols());
    if (tp.requires_grad(a.id)) tp.accumulate(a.id, take_a.select(g, zero));
    if (tp.requires_grad(b.id)) tp.accumulate(b.id, take_a.select(zero, g));
  });
}

Var masked_softmax(Var x, const Mask& mask) {
  const Matrix& xv = x.value();
  require_mask_shape(xv, mask, "masked_softmax");
  Matrix y = Matrix::Zero(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Index j = 0; j < xv.cols(); ++j) {
      if (mask(i, j)) {
        mx = std::max(mx, xv(i, j));
        any = true;
      }
    }
    if (!any) {
      throw DegenerateError("masked_softmax: row " + std::to_string(i) + " is fully masked");
    }
    double z = 0.0;
    for (Index j = 0; j < xv.cols(); ++j) {
      if (mask(i, j)) {
        y(i, j) = std::exp(xv(i, j) - mx);
        z += y(i, j);
      }
    }
    y.row(i) /= z;
  }
  Tape& t = *x.tape;
  const std::size_t next = t.size();
  return t.record(std::move(y), {x}, [x, next](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(next);
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    tp.accumulate(x.id, dx);
  });
}

Var softmax(Var x) {
  return masked_softmax(x, Mask::Constant(x.rows(), x.cols(), true));
}

Var reduce(Reduce kind, Var x, int axis, const std::optional<Mask>& mask) {
  const Matrix& xv = x.value();
  if (axis != 0 && axis != 1) {
    throw DimensionError("reduce: axis must be 0 or 1, got " + std::to_string(axis));
  }
  if (mask) require_mask_shape(xv, *mask, "reduce");
  const Index slices = axis == 0 ? xv.cols() : xv.rows();
  const Index length = axis == 0 ? xv.rows() : xv.cols();
  auto elem = [&](Index s, Index k) { return axis == 0 ? xv(k, s) : xv(s, k); };
  auto on = [&](Index s, Index k) {
    return !mask || (axis == 0 ? (*mask)(k, s) : (*mask)(s, k));
  };

  Matrix out = axis == 0 ? Matrix(1, slices) : Matrix(slices, 1);
  std::vector<Index> argmax(static_cast<std::size_t>(slices), -1);
  std::vector<double> counts(static_cast<std::size_t>(slices), 0.0);
  for (Index s = 0; s < slices; ++s) {
    double acc = kind == Reduce::Max ? -std::numeric_limits<double>::infinity() : 0.0;
    Index best = -1;
    double count = 0.0;
    for (Index k = 0; k < length; ++k) {
      if (!on(s, k)) continue;
      count += 1.0;
      const double v = elem(s, k);
      if (kind == Reduce::Max) {
        if (best < 0 || v > acc) {
          acc = v;
          best = k;
        }
      } else {
        acc += v;
      }
    }
    if (count == 0.0) {
      throw DegenerateError("reduce: slice " + std::to_string(s) +
                            " has no unmasked elements along axis " + std::to_string(axis));
    }
    if (kind == Reduce::Mean) acc /= count;
    out(axis == 0 ? 0 : s, axis == 0 ? s : 0) = acc;
    argmax[static_cast<std::size_t>(s)] = best;
    counts[static_cast<std::size_t>(s)] = count;
  }

  const Index rows = xv.rows();
  const Index cols = xv.cols();
  return x.tape->record(
      std::move(out), {x},
      [kind, x, axis, mask, argmax = std::move(argmax), counts = std::move(counts), rows,
       cols](Tape& tp, const Matrix& g) {
        Matrix dx = Matrix::Zero(rows, cols);
        const Index slices = axis == 0 ? cols : rows;
        const Index length = axis == 0 ? rows : cols;
        for (Index s = 0; s < slices; ++s) {
          const double gs = axis == 0 ? g(0, s) : g(s, 0);
          const auto su = static_cast<std::size_t>(s);
          if (kind == Reduce::Max) {
            const Index k = argmax[su];
            (axis == 0 ? dx(k, s) : dx(s, k)) = gs;
            continue;
          }
          const double w = kind == Reduce::Mean ? gs / counts[su] : gs;
          for (Index k = 0; k < length; ++k) {
            const bool unmasked = !mask || (axis == 0 ? (*mask)(k, s) : (*mask)(s, k));
            if (unmasked) (axis == 0 ? dx(k, s) : dx(s, k)) = w;
          }
        }
        tp.accumulate(x.id, dx);
      });
}

Var sum_all(Var x) {
  Matrix out = Matrix::Constant(1, 1, x.value().sum());
  const Index r = x.rows();
  const Index c = x.cols();
  return x.tape->record(std::move(out), {x}, [x, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var concat_last(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_rows(av, bv, "concat_last");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Index p = av.cols();
  const Index q = bv.cols();
  return t.record(std::move(out), {a, b}, [a, b, p, q](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) tp.accumulate(a.id, g.leftCols(p));
    if (tp.requires_grad(b.id)) tp.accumulate(b.id, g.rightCols(q));
  });
}

Var slice_cols(Var x, Index start, Index count) {
  const Matrix& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols: range out of bounds for " + shape_string(xv));
  }
  Matrix out = xv.middleCols(start, count);
  const Index r = xv.rows();
  const Index c = xv.cols();
  return x.tape->record(std::move(out), {x}, [x, start, count, r, c](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(r, c);
    dx.middleCols(start, count) = g;
    tp.accumulate(x.id, dx);
  });
}

Var row(Var x, Index i) {
  const Matrix& xv = x.value();
  if (i < 0 || i >= xv.rows()) {
    throw DimensionError("row: index " + std::to_string(i) + " out of range for " +
                         shape_string(xv));
  }
  Matrix out = xv.row(i);
  const Index r = xv.rows();
  const Index c = xv.cols();
  return x.tape->record(std::move(out), {x}, [x, i, r, c](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(r, c);
    dx.row(i) = g;
    tp.accumulate(x.id, dx);
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  Tape& t = *rows.front().tape;
  const Index d = rows.front().cols();
  Matrix out(static_cast<Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& v = rows[i].value();
    if (v.rows() != 1 || v.cols() != d) {
      throw DimensionError("stack_rows: row " + std::to_string(i) + " has shape " +
                           shape_string(v) + ", expected (1," + std::to_string(d) + ")");
    }
    out.row(static_cast<Index>(i)) = v;
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return t.record(std::move(out), inputs, [inputs](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (tp.requires_grad(inputs[i].id)) tp.accumulate(inputs[i].id, g.row(static_cast<Index>(i)));
    }
  });
}

Var lookup(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tv.rows()) {
      throw std::out_of_range("lookup: id " + std::to_string(ids[k]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Index>(k)) = tv.row(ids[k]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table},
                            [table, saved = std::move(saved)](Tape& tp, const Matrix& g) {
                              tp.accumulate_rows(table.id, saved, g);
                            });
}

Var clamp_norm(Var x, double max_norm) {
  const Matrix& xv = x.value();
  const double n = xv.norm();
  if (n <= max_norm) {
    Matrix out = xv;
    return x.tape->record(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
      tp.accumulate(x.id, g);
    });
  }
  Matrix out = xv * (max_norm / n);
  return x.tape->record(std::move(out), {x}, [x, n, max_norm](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(x.id);
    const double gx = g.cwiseProduct(xv).sum();
    tp.accumulate(x.id, (max_norm / n) * (g - xv * (gx / (n * n))));
  });
}

Var softmax_cross_entropy(Var logits, int label) {
  const Matrix& y = logits.value();
  if (y.rows() != 1) throw DimensionError("softmax_cross_entropy: expected one logit row");
  if (label < 0 || label >= y.cols()) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label));
  }
  const double mx = y.maxCoeff();
  const double lse = mx + std::log((y.array() - mx).exp().sum());
  Matrix out = Matrix::Constant(1, 1, lse - y(0, label));
  return logits.tape->record(std::move(out), {logits},
                             [logits, label, lse](Tape& tp, const Matrix& g) {
                               Matrix p = (tp.value(logits.id).array() - lse).exp();
                               p(0, label) -= 1.0;
                               tp.accumulate(logits.id, g(0, 0) * p);
                             });
}

}  // namespace hfan
