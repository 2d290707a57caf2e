#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfan {

/// Row-major dense matrix; every tensor in the model is rank 2 (vectors are 1 x n).
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixT<double>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Named tensor map, ordered by name so iteration (and hence checkpoints) are stable.
using TensorMap = std::map<std::string, Matrix>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a reduction or softmax would operate on zero effective elements.
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::string shape_string(const Matrix& m);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
};

/// Reverse-mode differentiation record. Nodes are appended in evaluation order,
/// so the node vector is already topologically sorted.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);

  /// Leaf bound to an externally owned tensor. The tensor must outlive the tape
  /// and stay unmodified until backward() returns.
  Var parameter(std::string name, const Matrix& value);
  Var parameter(std::string name, Matrix&&) = delete;

  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& g);
  /// Scatter-adds row k of `g` into row rows[k] of node `id`'s gradient.
  void accumulate_rows(std::size_t id, std::span<const int> rows, const Matrix& g);

  /// Runs reverse accumulation from a 1x1 loss. Returns the gradient of every
  /// parameter leaf keyed by name; leaves off every path get zeros.
  TensorMap backward(Var loss);

  /// Gradient of an arbitrary node after backward(); zeros if none reached it.
  Matrix grad(Var v) const;

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    std::string name;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  // A deque keeps value() references valid while later ops append nodes.
  std::deque<Node> nodes_;
  std::vector<Matrix> grads_;
  std::vector<bool> has_grad_;
};

enum class Unary { Tanh, Sigmoid, Relu, Exp, Log, Sqrt };
enum class Binary { Add, Sub, Mul, Div };
enum class Reduce { Max, Mean, Sum };

Var matmul(Var a, Var b);
Var transpose(Var a);

Var unary(Unary kind, Var x);
inline Var tanh(Var x) { return unary(Unary::Tanh, x); }
inline Var sigmoid(Var x) { return unary(Unary::Sigmoid, x); }
inline Var relu(Var x) { return unary(Unary::Relu, x); }
inline Var exp(Var x) { return unary(Unary::Exp, x); }

/// Elementwise op with 2-D broadcasting: each dimension must match or be 1 on
/// one side (bias rows, column scalings, 1x1 scalars).
Var binary(Binary kind, Var a, Var b);
inline Var add(Var a, Var b) { return binary(Binary::Add, a, b); }
inline Var sub(Var a, Var b) { return binary(Binary::Sub, a, b); }
inline Var mul(Var a, Var b) { return binary(Binary::Mul, a, b); }
inline Var div(Var a, Var b) { return binary(Binary::Div, a, b); }
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var x, double factor);

/// Elementwise maximum; ties take `a`.
Var maximum(Var a, Var b);

/// Row-wise softmax restricted to entries where `mask` is true; masked entries
/// come out as exactly 0. Throws DegenerateError on a fully masked row.
Var masked_softmax(Var x, const Mask& mask);
Var softmax(Var x);

/// Reduction along `axis` (0 collapses rows, 1 collapses columns) over the
/// unmasked entries. Max routes the gradient to the lowest-index argmax.
Var reduce(Reduce kind, Var x, int axis, const std::optional<Mask>& mask = std::nullopt);

/// Sum of every entry, as 1x1.
Var sum_all(Var x);

Var concat_last(Var a, Var b);
Var slice_cols(Var x, Index start, Index count);
Var row(Var x, Index i);

/// Stacks 1 x d rows into an n x d matrix.
Var stack_rows(std::span<const Var> rows);

/// Gathers table rows; backward scatter-adds (duplicate ids accumulate).
Var lookup(Var table, std::span<const int> ids);

/// Rescales a row vector to L2 norm <= max_norm (identity when already inside).
Var clamp_norm(Var x, double max_norm);

/// -log softmax(logits)[label] for a 1 x c logit row, via log-sum-exp.
Var softmax_cross_entropy(Var logits, int label);

}  // namespace hfan
