#include "poi/recurrent.hpp"

#include <cmath>
#include <stdexcept>

namespace poi {

namespace {

template <typename T>
void uniform(ad::Parameter<T>& p, Eigen::Index r, Eigen::Index c, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  p.value.resize(r, c);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(u(rng));
  p.grad.resize(0, 0);
}

}  // namespace

template <typename T>
Lstm<T> Lstm<T>::init(int input, int hidden, int num_layers, std::mt19937_64& rng) {
  if (input < 1 || hidden < 1 || num_layers < 1) throw std::invalid_argument("lstm: sizes must be positive");
  Lstm<T> net;
  net.input = input;
  net.hidden = hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int l = 0; l < num_layers; ++l) {
    LstmLayer<T> layer;
    uniform(layer.wx, l == 0 ? input : hidden, 4 * hidden, bound, rng);
    uniform(layer.wh, hidden, 4 * hidden, bound, rng);
    layer.b.value = Matrix<T>::Zero(1, 4 * hidden);
    layer.b.value.middleCols(hidden, hidden).setOnes();
    net.layers.push_back(std::move(layer));
  }
  return net;
}

template <typename T>
std::vector<ad::Parameter<T>*> Lstm<T>::parameters() {
  std::vector<ad::Parameter<T>*> out;
  for (auto& l : layers) {
    out.push_back(&l.wx);
    out.push_back(&l.wh);
    out.push_back(&l.b);
  }
  return out;
}

template <typename T>
LstmState<T> lstm_zero_state(ad::Tape<T>& tape, const Lstm<T>& net, Eigen::Index batch) {
  LstmState<T> s;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    s.h.push_back(tape.constant(Matrix<T>::Zero(batch, net.hidden)));
    s.c.push_back(tape.constant(Matrix<T>::Zero(batch, net.hidden)));
  }
  return s;
}

template <typename T>
std::vector<ad::Var<T>> lstm_forward(const Lstm<T>& net, const std::vector<ad::Var<T>>& xs, LstmState<T>& state) {
  std::vector<ad::Var<T>> outputs;
  outputs.reserve(xs.size());
  const Eigen::Index h = net.hidden;
  for (const auto& x : xs) {
    auto& tape = *x.tape;
    ad::Var<T> in = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& layer = net.layers[l];
      const auto b = in.rows();
      auto gates = ad::add_row(ad::add(ad::matmul(in, tape.parameter(layer.wx)), ad::matmul(state.h[l], tape.parameter(layer.wh))),
                               tape.parameter(layer.b));
      auto i = ad::sigmoid(ad::slice(gates, 0, b, 0, h));
      auto f = ad::sigmoid(ad::slice(gates, 0, b, h, h));
      auto g = ad::tanh(ad::slice(gates, 0, b, 2 * h, h));
      auto o = ad::sigmoid(ad::slice(gates, 0, b, 3 * h, h));
      state.c[l] = ad::add(ad::hadamard(f, state.c[l]), ad::hadamard(i, g));
      state.h[l] = ad::hadamard(o, ad::tanh(state.c[l]));
      in = state.h[l];
    }
    outputs.push_back(in);
  }
  return outputs;
}

template <typename T>
Dense<T> Dense<T>::init(int in, int out, std::mt19937_64& rng) {
  Dense<T> d;
  uniform(d.w, in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  d.b.value = Matrix<T>::Zero(1, out);
  return d;
}

template <typename T>
ad::Var<T> Dense<T>::operator()(ad::Var<T> x) const {
  auto& tape = *x.tape;
  return ad::add_row(ad::matmul(x, tape.parameter(w)), tape.parameter(b));
}

template <typename T>
std::vector<ad::Parameter<T>*> Dense<T>::parameters() {
  return {&w, &b};
}

template struct Lstm<float>;
template struct Lstm<double>;
template struct Dense<float>;
template struct Dense<double>;
template LstmState<float> lstm_zero_state(ad::Tape<float>&, const Lstm<float>&, Eigen::Index);
template LstmState<double> lstm_zero_state(ad::Tape<double>&, const Lstm<double>&, Eigen::Index);
template std::vector<ad::Var<float>> lstm_forward(const Lstm<float>&, const std::vector<ad::Var<float>>&, LstmState<float>&);
template std::vector<ad::Var<double>> lstm_forward(const Lstm<double>&, const std::vector<ad::Var<double>>&,
                                                   LstmState<double>&);

}  // namespace poi
