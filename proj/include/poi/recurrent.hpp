#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "poi/autodiff.hpp"

namespace poi {

/// Gates laid out as [input, forget, cell, output] along the columns.
template <typename T>
struct LstmLayer {
  ad::Parameter<T> wx;  // in x 4h
  ad::Parameter<T> wh;  // h x 4h
  ad::Parameter<T> b;   // 1 x 4h, forget-gate slice starts at 1
};

template <typename T>
struct Lstm {
  int input = 0;
  int hidden = 0;
  std::vector<LstmLayer<T>> layers;

  static Lstm init(int input, int hidden, int num_layers, std::mt19937_64& rng);
  std::vector<ad::Parameter<T>*> parameters();
};

template <typename T>
struct LstmState {
  std::vector<ad::Var<T>> h, c;  // one per layer, each B x hidden
};

/// Zero state for a batch of `batch` rows.
template <typename T>
LstmState<T> lstm_zero_state(ad::Tape<T>& tape, const Lstm<T>& net, Eigen::Index batch);

/// Runs all layers over the steps `xs` (each B x input), updating `state`.
/// Returns the top layer's hidden state at every step.
template <typename T>
std::vector<ad::Var<T>> lstm_forward(const Lstm<T>& net, const std::vector<ad::Var<T>>& xs, LstmState<T>& state);

template <typename T>
struct Dense {
  ad::Parameter<T> w, b;

  static Dense init(int in, int out, std::mt19937_64& rng);
  ad::Var<T> operator()(ad::Var<T> x) const;
  std::vector<ad::Parameter<T>*> parameters();
};

extern template struct Lstm<float>;
extern template struct Lstm<double>;
extern template struct Dense<float>;
extern template struct Dense<double>;

}  // namespace poi
