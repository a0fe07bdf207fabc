#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation eagerly: values are computed at call time
// and a closure that pushes output gradients back to the inputs is kept when
// any input needs a gradient. Parameters are leaves whose gradients
// accumulate into Parameter::grad. Instantiated for float and double.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "poi/tensor.hpp"

namespace poi::ad {

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  // Accumulated by Tape::backward; mutable so a const model can be differentiated.
  mutable Matrix<T> grad;

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<T>&)>;

  /// With `record_gradients == false` no closures are stored (inference).
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value);
  /// Leaf that reads `value` in place; it must outlive the tape.
  Var<T> constant_ref(const Matrix<T>& value);
  Var<T> parameter(const Parameter<T>& p);

  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> record(Matrix<T> value, std::span<const Var<T>> inputs, Backward backward);

  const Matrix<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  template <typename Derived>
  void accumulate(Var<T> v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    Matrix<T>& target = n.param ? n.param->grad : n.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 `loss` and runs all closures in
  /// reverse creation order.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* ref = nullptr;
    const Parameter<T>* param = nullptr;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

// Linear algebra
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> hadamard(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
/// Adds a 1 x c row to every row of `a`.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// Multiplies row i of `a` by w(i, 0).
template <typename T> Var<T> mul_rows(Var<T> a, Var<T> w);

// Elementwise nonlinearities
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> leaky_relu(Var<T> a, T negative_slope);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);

// Row-wise
template <typename T> Var<T> softmax_rows(Var<T> a);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
/// Each row divided by its L2 norm; throws std::domain_error on a zero row.
template <typename T> Var<T> normalize_rows(Var<T> a);

// Shape
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice(Var<T> a, Eigen::Index row0, Eigen::Index rows, Eigen::Index col0, Eigen::Index cols);
template <typename T> Var<T> gather_rows(Var<T> a, std::span<const Eigen::Index> rows);

// Reductions to 1 x 1
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// Mean over rows of -log softmax(logits)[label].
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const Eigen::Index> labels);
/// Mean of squared differences against a constant target.
template <typename T> Var<T> mse(Var<T> a, const Matrix<T>& target);

}  // namespace poi::ad
