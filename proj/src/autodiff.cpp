#include "poi/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace poi::ad {

namespace {

template <typename T>
[[noreturn]] void shape_error(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
  std::ostringstream ss;
  ss << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
  throw std::invalid_argument(ss.str());
}

template <typename T>
void require_same_shape(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

}  // namespace

template <typename T>
Var<T> Tape<T>::constant(Matrix<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant_ref(const Matrix<T>& value) {
  Node n;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(const Parameter<T>& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, std::span<const Var<T>> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& v : inputs) {
      if (nodes_[v.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
const Matrix<T>& Tape<T>::value(Var<T> v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (value(loss).size() != 1) throw std::invalid_argument("backward needs a scalar loss");
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Matrix<T>::Ones(1, 1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
    // Intermediate gradients are no longer needed once propagated.
    n.grad.resize(0, 0);
  }
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  const auto &A = t.value(a), &B = t.value(b);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Matrix<T> out = A * B;
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  const auto &A = t.value(a), &B = t.value(b);
  if (A.cols() != B.cols()) shape_error("matmul_nt", A, B);
  Matrix<T> out = A * B.transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require_same_shape("add", t.value(a), t.value(b));
  Matrix<T> out = t.value(a) + t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require_same_shape("sub", t.value(a), t.value(b));
  Matrix<T> out = t.value(a) - t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require_same_shape("hadamard", t.value(a), t.value(b));
  Matrix<T> out = t.value(a).cwiseProduct(t.value(b));
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  auto& t = *a.tape;
  Matrix<T> out = t.value(a) * s;
  return t.record(std::move(out), {a}, [a, s](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a, g * s); });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  auto& t = *a.tape;
  const auto &A = t.value(a), &R = t.value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row", A, R);
  Matrix<T> out = A.rowwise() + R.row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

template <typename T>
Var<T> mul_rows(Var<T> a, Var<T> w) {
  auto& t = *a.tape;
  const auto &A = t.value(a), &W = t.value(w);
  if (W.cols() != 1 || W.rows() != A.rows()) shape_error("mul_rows", A, W);
  Matrix<T> out = W.col(0).asDiagonal() * A;
  return t.record(std::move(out), {a, w}, [a, w](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, t.value(w).col(0).asDiagonal() * g);
    if (t.requires_grad(w)) t.accumulate(w, g.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  auto& t = *a.tape;
  const auto& X = t.value(a);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Matrix<T> out = X.unaryExpr([inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); });
  return t.record(std::move(out), {a}, [a, inv_sqrt2](Tape<T>& t, const Matrix<T>& g) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    Matrix<T> d = t.value(a).unaryExpr([&](T x) {
      return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  auto& t = *a.tape;
  Matrix<T> out = t.value(a).unaryExpr([slope](T x) { return x > T(0) ? x : slope * x; });
  return t.record(std::move(out), {a}, [a, slope](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> d = t.value(a).unaryExpr([slope](T x) { return x > T(0) ? T(1) : slope; });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  auto& t = *a.tape;
  Matrix<T> out = t.value(a).unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  Matrix<T> y = out;
  return t.record(std::move(out), {a}, [a, y = std::move(y)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(y.unaryExpr([](T s) { return s * (T(1) - s); })));
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  auto& t = *a.tape;
  Matrix<T> out = t.value(a).array().tanh().matrix();
  Matrix<T> y = out;
  return t.record(std::move(out), {a}, [a, y = std::move(y)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(y.unaryExpr([](T s) { return T(1) - s * s; })));
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  auto& t = *a.tape;
  Matrix<T> out = t.value(a).cwiseAbs();
  return t.record(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> s = t.value(a).unaryExpr([](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
    t.accumulate(a, g.cwiseProduct(s));
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  auto& t = *a.tape;
  const auto& X = t.value(a);
  Matrix<T> out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const T m = X.row(i).maxCoeff();
    out.row(i) = (X.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  Matrix<T> y = out;
  return t.record(std::move(out), {a}, [a, y = std::move(y)](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> gy = g.cwiseProduct(y);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
    t.accumulate(a, gy - y.cwiseProduct(dots.replicate(1, y.cols())));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  auto& t = *x.tape;
  const auto &X = t.value(x), &G = t.value(gamma), &B = t.value(beta);
  if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols()) {
    shape_error("layer_norm", X, G);
  }
  const auto n = X.rows(), c = X.cols();
  Matrix<T> xhat(n, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = X.row(i).mean();
    auto centered = (X.row(i).array() - mu).matrix();
    const T var = centered.squaredNorm() / T(c);
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix<T> out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Matrix<T>& g) {
                    if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                    if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                    if (!t.requires_grad(x)) return;
                    const auto c = static_cast<T>(xhat.cols());
                    Matrix<T> dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
                    Matrix<T> dx(xhat.rows(), xhat.cols());
                    for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                      const T m1 = dxhat.row(i).sum() / c;
                      const T m2 = dxhat.row(i).dot(xhat.row(i)) / c;
                      dx.row(i) = ((dxhat.row(i).array() - m1) - xhat.row(i).array() * m2) * inv_std(i);
                    }
                    t.accumulate(x, dx);
                  });
}

template <typename T>
Var<T> normalize_rows(Var<T> a) {
  auto& t = *a.tape;
  const auto& X = t.value(a);
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = X.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > T(0))) throw std::domain_error("cosine similarity undefined: row " + std::to_string(i) + " has zero norm");
  }
  Matrix<T> out = norms.cwiseInverse().asDiagonal() * X;
  Matrix<T> u = out;
  return t.record(std::move(out), {a}, [a, u = std::move(u), norms = std::move(norms)](Tape<T>& t, const Matrix<T>& g) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = g.cwiseProduct(u).rowwise().sum();
    Matrix<T> d = g - dots.asDiagonal() * u;
    t.accumulate(a, norms.cwiseInverse().asDiagonal() * d);
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  auto& t = *parts[0].tape;
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (t.value(p).rows() != rows) shape_error("concat_cols", t.value(parts[0]), t.value(p));
    cols += t.value(p).cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, t.value(p).cols()) = t.value(p);
    offsets.push_back(off);
    off += t.value(p).cols();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), std::span<const Var<T>>(inputs),
                  [inputs, offsets](Tape<T>& t, const Matrix<T>& g) {
                    for (std::size_t k = 0; k < inputs.size(); ++k) {
                      if (t.requires_grad(inputs[k])) t.accumulate(inputs[k], g.middleCols(offsets[k], t.value(inputs[k]).cols()));
                    }
                  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  auto& t = *parts[0].tape;
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (t.value(p).cols() != cols) shape_error("concat_rows", t.value(parts[0]), t.value(p));
    rows += t.value(p).rows();
  }
  Matrix<T> out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, t.value(p).rows()) = t.value(p);
    offsets.push_back(off);
    off += t.value(p).rows();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), std::span<const Var<T>>(inputs),
                  [inputs, offsets](Tape<T>& t, const Matrix<T>& g) {
                    for (std::size_t k = 0; k < inputs.size(); ++k) {
                      if (t.requires_grad(inputs[k])) t.accumulate(inputs[k], g.middleRows(offsets[k], t.value(inputs[k]).rows()));
                    }
                  });
}

template <typename T>
Var<T> slice(Var<T> a, Eigen::Index row0, Eigen::Index rows, Eigen::Index col0, Eigen::Index cols) {
  auto& t = *a.tape;
  const auto& A = t.value(a);
  if (row0 < 0 || col0 < 0 || rows < 0 || cols < 0 || row0 + rows > A.rows() || col0 + cols > A.cols()) {
    throw std::invalid_argument("slice out of range");
  }
  Matrix<T> out = A.block(row0, col0, rows, cols);
  return t.record(std::move(out), {a}, [a, row0, rows, col0, cols](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> full = Matrix<T>::Zero(t.value(a).rows(), t.value(a).cols());
    full.block(row0, col0, rows, cols) = g;
    t.accumulate(a, full);
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const Eigen::Index> rows) {
  auto& t = *a.tape;
  const auto& A = t.value(a);
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= A.rows()) throw std::invalid_argument("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
  }
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {a}, [a, idx = std::move(idx)](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> full = Matrix<T>::Zero(t.value(a).rows(), t.value(a).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, full);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  auto& t = *a.tape;
  Matrix<T> out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, Matrix<T>::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  auto& t = *a.tape;
  const auto count = static_cast<T>(t.value(a).size());
  return scale(sum(a), T(1) / count);
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const Eigen::Index> labels) {
  auto& t = *logits.tape;
  const auto& L = t.value(logits);
  if (static_cast<std::size_t>(L.rows()) != labels.size() || L.rows() == 0) {
    throw std::invalid_argument("cross_entropy: one label per row required");
  }
  Matrix<T> probs(L.rows(), L.cols());
  T total = 0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const auto label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= L.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    const T m = L.row(i).maxCoeff();
    probs.row(i) = (L.row(i).array() - m).exp().matrix();
    const T z = probs.row(i).sum();
    probs.row(i) /= z;
    total += (m + std::log(z)) - L(i, label);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(L.rows());
  std::vector<Eigen::Index> lab(labels.begin(), labels.end());
  return t.record(std::move(out), {logits},
                  [logits, probs = std::move(probs), lab = std::move(lab)](Tape<T>& t, const Matrix<T>& g) {
                    Matrix<T> d = probs;
                    for (std::size_t i = 0; i < lab.size(); ++i) d(static_cast<Eigen::Index>(i), lab[i]) -= T(1);
                    t.accumulate(logits, d * (g(0, 0) / static_cast<T>(lab.size())));
                  });
}

template <typename T>
Var<T> mse(Var<T> a, const Matrix<T>& target) {
  auto& t = *a.tape;
  require_same_shape("mse", t.value(a), target);
  Matrix<T> diff = t.value(a) - target;
  Matrix<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<T>(diff.size());
  return t.record(std::move(out), {a}, [a, diff = std::move(diff)](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, diff * (T(2) * g(0, 0) / static_cast<T>(diff.size())));
  });
}

#define POI_AD_INSTANTIATE(T)                                                                        \
  template class Tape<T>;                                                                            \
  template Var<T> matmul(Var<T>, Var<T>);                                                            \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                         \
  template Var<T> add(Var<T>, Var<T>);                                                               \
  template Var<T> sub(Var<T>, Var<T>);                                                               \
  template Var<T> hadamard(Var<T>, Var<T>);                                                          \
  template Var<T> scale(Var<T>, T);                                                                  \
  template Var<T> add_row(Var<T>, Var<T>);                                                           \
  template Var<T> mul_rows(Var<T>, Var<T>);                                                          \
  template Var<T> gelu(Var<T>);                                                                      \
  template Var<T> leaky_relu(Var<T>, T);                                                             \
  template Var<T> sigmoid(Var<T>);                                                                   \
  template Var<T> tanh(Var<T>);                                                                      \
  template Var<T> abs(Var<T>);                                                                       \
  template Var<T> softmax_rows(Var<T>);                                                              \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                             \
  template Var<T> normalize_rows(Var<T>);                                                            \
  template Var<T> concat_cols(std::span<const Var<T>>);                                              \
  template Var<T> concat_rows(std::span<const Var<T>>);                                              \
  template Var<T> slice(Var<T>, Eigen::Index, Eigen::Index, Eigen::Index, Eigen::Index);             \
  template Var<T> gather_rows(Var<T>, std::span<const Eigen::Index>);                                \
  template Var<T> sum(Var<T>);                                                                       \
  template Var<T> mean(Var<T>);                                                                      \
  template Var<T> cross_entropy(Var<T>, std::span<const Eigen::Index>);                              \
  template Var<T> mse(Var<T>, const Matrix<T>&);

POI_AD_INSTANTIATE(float)
POI_AD_INSTANTIATE(double)

#undef POI_AD_INSTANTIATE

}  // namespace poi::ad
