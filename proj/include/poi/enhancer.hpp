#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "poi/autodiff.hpp"
#include "poi/tensor.hpp"

namespace poi {

struct HyperParams {
  int d = 256;
  int d_prime = 256;  // SFF latent width
  int H = 8;
  int d_h = 32;
  int L1 = 4;  // DFA layers per branch
  int L2 = 2;  // CAF layers
  int D = 4096;
  int ffn_mult = 4;
  bool paf_parallel = false;
  // Attention logits are divided by sqrt(d) unless this is set (then sqrt(d_h)).
  bool scale_by_head_dim = false;

  void validate() const;  // throws UserError
  bool operator==(const HyperParams&) const = default;
};

nlohmann::json to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const nlohmann::json& j);

template <typename T>
using Param = ad::Parameter<T>;

/// Query weights for all heads side by side (d x H*d_h, head h in columns
/// [h*d_h, (h+1)*d_h)). Key/value weights are d x H*d_h for full attention or
/// d x d_h when every head shares one projection (multi-query).
template <typename T>
struct AttentionParams {
  Param<T> wq, wk, wv;
  Param<T> wo;  // H*d_h x d
};

template <typename T>
struct FfnParams {
  Param<T> w1, b1, w2, b2;  // d x f, 1 x f, f x d, 1 x d
};

template <typename T>
struct LayerNormParams {
  Param<T> gamma, beta;
};

template <typename T>
struct FusionLayer {
  AttentionParams<T> attn;
  FfnParams<T> ffn;
  LayerNormParams<T> ln1, ln2;  // ln2 unused in parallel mode
};

template <typename T>
struct EnhancerModel {
  HyperParams hp;
  Param<T> proj_v, proj_a, proj_s;  // D x d, no bias
  std::vector<FusionLayer<T>> dfa_av, dfa_as;
  Param<T> sff_w1;  // d x d'
  Param<T> sff_w2;  // 2d' x 1
  std::vector<FusionLayer<T>> caf;

  /// Fan-in scaled uniform weights, zero biases, unit layer-norm gains.
  static EnhancerModel init(const HyperParams& hp, std::uint64_t seed);

  /// Every tensor in a fixed order; pointers stay valid while the model lives.
  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
};

extern template struct EnhancerModel<float>;
extern template struct EnhancerModel<double>;

template <typename T>
struct SffOutput {
  ad::Var<T> e_llm;
  ad::Var<T> omega;  // n x 2: weights of (A-V, A-S)
};

template <typename T>
struct ForwardOutput {
  ad::Var<T> tilde_v, tilde_a, tilde_s;
  ad::Var<T> e_av, e_as;
  ad::Var<T> e_llm, omega;
  ad::Var<T> e_fuse;
};

/// Bias-free projection of one feature matrix (n x D) to n x d.
template <typename T>
ad::Var<T> project(ad::Var<T> features, const Param<T>& w);

/// Attention across the n rows. `where` labels errors (non-finite scores).
template <typename T>
ad::Var<T> mha(ad::Var<T> q_src, ad::Var<T> kv_src, const AttentionParams<T>& p, const HyperParams& hp,
               const std::string& where = "attention");

template <typename T>
ad::Var<T> ffn(ad::Var<T> x, const FfnParams<T>& p);

template <typename T>
ad::Var<T> dfa_forward(ad::Var<T> tilde_other, ad::Var<T> tilde_addr, const std::vector<FusionLayer<T>>& layers,
                       const HyperParams& hp, const std::string& name = "dfa");

template <typename T>
SffOutput<T> sff_forward(ad::Var<T> e_av, ad::Var<T> e_as, const Param<T>& w1, const Param<T>& w2);

template <typename T>
ad::Var<T> caf_forward(ad::Var<T> e_llm, ad::Var<T> e_poi, const std::vector<FusionLayer<T>>& layers,
                       const HyperParams& hp);

/// project -> two DFA branches -> SFF -> CAF over one chunk of rows.
template <typename T>
ForwardOutput<T> forward(ad::Tape<T>& tape, const EnhancerModel<T>& model, ad::Var<T> fv, ad::Var<T> fa,
                         ad::Var<T> fs, ad::Var<T> e_poi);

struct EnhanceResult {
  MatrixF fused;
  MatrixF semantic;
};

/// Runs the model over rows [0, n) in consecutive chunks of `chunk_size`
/// (0 means one chunk). Attention mixes rows within a chunk only.
EnhanceResult enhance(const EnhancerModel<float>& model, const MatrixF& visit, const MatrixF& address,
                      const MatrixF& surrounding, const MatrixF& base, std::size_t chunk_size);

/// Single file: 8-byte magic, uint64 LE header length, JSON header
/// ({hyperparams, meta, tensors:[{name, rows, cols}]}), float32 LE tensors.
void save_checkpoint(const std::filesystem::path& path, const EnhancerModel<float>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

struct Checkpoint {
  EnhancerModel<float> model;
  nlohmann::json meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Names in parameters() order, e.g. "dfa_av.0.attn.wq".
std::vector<std::string> parameter_names(const HyperParams& hp);

}  // namespace poi
