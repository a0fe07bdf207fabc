#include "poi/enhancer.hpp"

#include <spdlog/spdlog.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "poi/util.hpp"

namespace poi {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void HyperParams::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw UserError("enhancer hyperparameters: " + msg);
  };
  need(d >= 1 && d_prime >= 1 && H >= 1 && d_h >= 1 && D >= 1, "d, d_prime, H, d_h and D must be positive");
  need(L1 >= 1 && L2 >= 1, "L1 and L2 must be at least 1");
  need(ffn_mult >= 1, "ffn_mult must be at least 1");
}

nlohmann::json to_json(const HyperParams& hp) {
  return {{"d", hp.d},         {"d_prime", hp.d_prime},   {"H", hp.H},
          {"d_h", hp.d_h},     {"L1", hp.L1},             {"L2", hp.L2},
          {"D", hp.D},         {"ffn_mult", hp.ffn_mult}, {"paf_parallel", hp.paf_parallel},
          {"scale_by_head_dim", hp.scale_by_head_dim}};
}

HyperParams hyperparams_from_json(const nlohmann::json& j) {
  HyperParams hp;
  try {
    hp.d = j.at("d").get<int>();
    hp.d_prime = j.at("d_prime").get<int>();
    hp.H = j.at("H").get<int>();
    hp.d_h = j.at("d_h").get<int>();
    hp.L1 = j.at("L1").get<int>();
    hp.L2 = j.at("L2").get<int>();
    hp.D = j.at("D").get<int>();
    hp.ffn_mult = j.at("ffn_mult").get<int>();
    hp.paf_parallel = j.at("paf_parallel").get<bool>();
    hp.scale_by_head_dim = j.at("scale_by_head_dim").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw UserError(std::string("hyperparameters: ") + e.what());
  }
  hp.validate();
  return hp;
}

namespace {

template <typename T>
void shape(Param<T>& p, Eigen::Index r, Eigen::Index c) {
  p.value = Matrix<T>::Zero(r, c);
  p.grad.resize(0, 0);
}

template <typename T>
void shape_layer(FusionLayer<T>& l, const HyperParams& hp, bool multi_query) {
  const int hd = hp.H * hp.d_h;
  const int kv = multi_query ? hp.d_h : hd;
  const int f = hp.ffn_mult * hp.d;
  shape(l.attn.wq, hp.d, hd);
  shape(l.attn.wk, hp.d, kv);
  shape(l.attn.wv, hp.d, kv);
  shape(l.attn.wo, hd, hp.d);
  shape(l.ffn.w1, hp.d, f);
  shape(l.ffn.b1, 1, f);
  shape(l.ffn.w2, f, hp.d);
  shape(l.ffn.b2, 1, hp.d);
  for (auto* ln : {&l.ln1, &l.ln2}) {
    shape(ln->gamma, 1, hp.d);
    shape(ln->beta, 1, hp.d);
  }
}

// Calls f(name, param) for every tensor in the canonical order.
template <typename M, typename F>
void visit(M& m, F&& f) {
  f("proj_v", m.proj_v);
  f("proj_a", m.proj_a);
  f("proj_s", m.proj_s);
  auto layers = [&](const std::string& stack, auto& ls) {
    for (std::size_t k = 0; k < ls.size(); ++k) {
      const std::string p = stack + "." + std::to_string(k) + ".";
      auto& l = ls[k];
      f(p + "attn.wq", l.attn.wq);
      f(p + "attn.wk", l.attn.wk);
      f(p + "attn.wv", l.attn.wv);
      f(p + "attn.wo", l.attn.wo);
      f(p + "ffn.w1", l.ffn.w1);
      f(p + "ffn.b1", l.ffn.b1);
      f(p + "ffn.w2", l.ffn.w2);
      f(p + "ffn.b2", l.ffn.b2);
      f(p + "ln1.gamma", l.ln1.gamma);
      f(p + "ln1.beta", l.ln1.beta);
      f(p + "ln2.gamma", l.ln2.gamma);
      f(p + "ln2.beta", l.ln2.beta);
    }
  };
  layers("dfa_av", m.dfa_av);
  layers("dfa_as", m.dfa_as);
  f("sff.w1", m.sff_w1);
  f("sff.w2", m.sff_w2);
  layers("caf", m.caf);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
EnhancerModel<T> skeleton(const HyperParams& hp) {
  hp.validate();
  EnhancerModel<T> m;
  m.hp = hp;
  m.dfa_av.resize(static_cast<std::size_t>(hp.L1));
  m.dfa_as.resize(static_cast<std::size_t>(hp.L1));
  m.caf.resize(static_cast<std::size_t>(hp.L2));
  return m;
}

// All tensors at their final shapes, zero-filled.
template <typename T>
EnhancerModel<T> shaped(const HyperParams& hp) {
  EnhancerModel<T> m = skeleton<T>(hp);
  shape(m.proj_v, hp.D, hp.d);
  shape(m.proj_a, hp.D, hp.d);
  shape(m.proj_s, hp.D, hp.d);
  for (auto& l : m.dfa_av) shape_layer(l, hp, false);
  for (auto& l : m.dfa_as) shape_layer(l, hp, false);
  shape(m.sff_w1, hp.d, hp.d_prime);
  shape(m.sff_w2, 2 * hp.d_prime, 1);
  for (auto& l : m.caf) shape_layer(l, hp, true);
  return m;
}

}  // namespace

template <typename T>
EnhancerModel<T> EnhancerModel<T>::init(const HyperParams& hp, std::uint64_t seed) {
  EnhancerModel<T> m = shaped<T>(hp);
  std::mt19937_64 rng(seed);
  visit(m, [&](const std::string& name, Param<T>& p) {
    p.name = name;
    if (ends_with(name, ".gamma")) {
      p.value.setOnes();
    } else if (ends_with(name, ".beta") || ends_with(name, ".b1") || ends_with(name, ".b2")) {
      p.value.setZero();
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(u(rng));
    }
  });
  return m;
}

template <typename T>
std::vector<Param<T>*> EnhancerModel<T>::parameters() {
  std::vector<Param<T>*> out;
  visit(*this, [&](const std::string&, Param<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::vector<const Param<T>*> EnhancerModel<T>::parameters() const {
  std::vector<const Param<T>*> out;
  visit(*this, [&](const std::string&, const Param<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::size_t EnhancerModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename T>
void EnhancerModel<T>::zero_grad() const {
  for (const auto* p : parameters()) p->zero_grad();
}

template struct EnhancerModel<float>;
template struct EnhancerModel<double>;

std::vector<std::string> parameter_names(const HyperParams& hp) {
  auto m = skeleton<float>(hp);
  std::vector<std::string> names;
  visit(m, [&](const std::string& name, Param<float>&) { names.push_back(name); });
  return names;
}

template <typename T>
ad::Var<T> project(ad::Var<T> features, const Param<T>& w) {
  if (features.cols() != w.value.rows()) {
    throw UserError("feature dimension " + std::to_string(features.cols()) + " does not match model D = " +
                    std::to_string(w.value.rows()));
  }
  return ad::matmul(features, features.tape->parameter(w));
}

template <typename T>
ad::Var<T> mha(ad::Var<T> q_src, ad::Var<T> kv_src, const AttentionParams<T>& p, const HyperParams& hp,
               const std::string& where) {
  auto& t = *q_src.tape;
  const auto n = q_src.rows();
  const auto dh = static_cast<Eigen::Index>(hp.d_h);
  const bool multi_query = p.wk.value.cols() == dh;
  auto q = ad::matmul(q_src, t.parameter(p.wq));
  auto k = ad::matmul(kv_src, t.parameter(p.wk));
  auto v = ad::matmul(kv_src, t.parameter(p.wv));
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(hp.scale_by_head_dim ? hp.d_h : hp.d));

  std::vector<ad::Var<T>> heads;
  heads.reserve(static_cast<std::size_t>(hp.H));
  for (Eigen::Index h = 0; h < hp.H; ++h) {
    auto qh = ad::slice(q, 0, n, h * dh, dh);
    auto kh = multi_query ? k : ad::slice(k, 0, kv_src.rows(), h * dh, dh);
    auto vh = multi_query ? v : ad::slice(v, 0, kv_src.rows(), h * dh, dh);
    auto scores = ad::scale(ad::matmul_nt(qh, kh), inv_scale);
    if (!scores.value().allFinite()) {
      throw std::runtime_error("non-finite attention scores in " + where + " head " + std::to_string(h));
    }
    heads.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  auto concat = ad::concat_cols<T>(heads);
  return ad::matmul(concat, t.parameter(p.wo));
}

template <typename T>
ad::Var<T> ffn(ad::Var<T> x, const FfnParams<T>& p) {
  auto& t = *x.tape;
  auto h = ad::gelu(ad::add_row(ad::matmul(x, t.parameter(p.w1)), t.parameter(p.b1)));
  return ad::add_row(ad::matmul(h, t.parameter(p.w2)), t.parameter(p.b2));
}

namespace {

template <typename T>
ad::Var<T> norm(ad::Var<T> x, const LayerNormParams<T>& p) {
  auto& t = *x.tape;
  return ad::layer_norm(x, t.parameter(p.gamma), t.parameter(p.beta));
}

}  // namespace

template <typename T>
ad::Var<T> dfa_forward(ad::Var<T> tilde_other, ad::Var<T> tilde_addr, const std::vector<FusionLayer<T>>& layers,
                       const HyperParams& hp, const std::string& name) {
  if (tilde_other.rows() != tilde_addr.rows()) throw std::invalid_argument(name + ": row counts differ");
  ad::Var<T> z_prime{};
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const std::string where = name + " layer " + std::to_string(k + 1);
    ad::Var<T> z = k == 0 ? norm(ad::add(tilde_addr, mha(tilde_other, tilde_addr, l.attn, hp, where)), l.ln1)
                          : norm(ad::add(z_prime, mha(tilde_addr, z_prime, l.attn, hp, where)), l.ln1);
    z_prime = norm(ad::add(z, ffn(z, l.ffn)), l.ln2);
  }
  return z_prime;
}

template <typename T>
SffOutput<T> sff_forward(ad::Var<T> e_av, ad::Var<T> e_as, const Param<T>& w1, const Param<T>& w2) {
  if (e_av.rows() != e_as.rows()) throw std::invalid_argument("sff: row counts differ");
  auto& t = *e_av.tape;
  auto W1 = t.parameter(w1);
  auto W2 = t.parameter(w2);
  auto a = ad::matmul(e_av, W1);
  auto s = ad::matmul(e_as, W1);
  const T slope = T(0.01);
  const std::vector<ad::Var<T>> as{a, s}, sa{s, a};
  auto theta_av = ad::matmul(ad::leaky_relu(ad::concat_cols<T>(as), slope), W2);
  auto theta_as = ad::matmul(ad::leaky_relu(ad::concat_cols<T>(sa), slope), W2);
  const std::vector<ad::Var<T>> thetas{theta_av, theta_as};
  auto omega = ad::softmax_rows(ad::concat_cols<T>(thetas));
  const auto n = e_av.rows();
  auto e_llm = ad::add(ad::mul_rows(e_av, ad::slice(omega, 0, n, 0, 1)), ad::mul_rows(e_as, ad::slice(omega, 0, n, 1, 1)));
  return {e_llm, omega};
}

template <typename T>
ad::Var<T> caf_forward(ad::Var<T> e_llm, ad::Var<T> e_poi, const std::vector<FusionLayer<T>>& layers,
                       const HyperParams& hp) {
  if (e_llm.rows() != e_poi.rows()) throw std::invalid_argument("caf: row counts differ");
  ad::Var<T> x_in = e_poi;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const std::string where = "caf layer " + std::to_string(k + 1);
    if (hp.paf_parallel) {
      auto n = norm(x_in, l.ln1);
      x_in = ad::add(ad::add(x_in, mha(e_llm, n, l.attn, hp, where)), ffn(n, l.ffn));
    } else {
      auto x = norm(ad::add(x_in, mha(e_llm, x_in, l.attn, hp, where)), l.ln1);
      x_in = norm(ad::add(x, ffn(x, l.ffn)), l.ln2);
    }
  }
  return x_in;
}

template <typename T>
ForwardOutput<T> forward(ad::Tape<T>&, const EnhancerModel<T>& m, ad::Var<T> fv, ad::Var<T> fa, ad::Var<T> fs,
                         ad::Var<T> e_poi) {
  if (fv.rows() != fa.rows() || fv.rows() != fs.rows() || fv.rows() != e_poi.rows()) {
    throw std::invalid_argument("forward: inputs have different row counts");
  }
  if (e_poi.cols() != m.hp.d) {
    throw UserError("base embedding dimension " + std::to_string(e_poi.cols()) + " does not match d = " +
                    std::to_string(m.hp.d));
  }
  ForwardOutput<T> o;
  o.tilde_v = project(fv, m.proj_v);
  o.tilde_a = project(fa, m.proj_a);
  o.tilde_s = project(fs, m.proj_s);
  o.e_av = dfa_forward(o.tilde_v, o.tilde_a, m.dfa_av, m.hp, "dfa_av");
  o.e_as = dfa_forward(o.tilde_s, o.tilde_a, m.dfa_as, m.hp, "dfa_as");
  auto sff = sff_forward(o.e_av, o.e_as, m.sff_w1, m.sff_w2);
  o.e_llm = sff.e_llm;
  o.omega = sff.omega;
  o.e_fuse = caf_forward(o.e_llm, e_poi, m.caf, m.hp);
  return o;
}

#define POI_ENHANCER_INSTANTIATE(T)                                                                              \
  template ad::Var<T> project(ad::Var<T>, const Param<T>&);                                                     \
  template ad::Var<T> mha(ad::Var<T>, ad::Var<T>, const AttentionParams<T>&, const HyperParams&,                \
                          const std::string&);                                                                  \
  template ad::Var<T> ffn(ad::Var<T>, const FfnParams<T>&);                                                     \
  template ad::Var<T> dfa_forward(ad::Var<T>, ad::Var<T>, const std::vector<FusionLayer<T>>&, const HyperParams&, \
                                  const std::string&);                                                          \
  template SffOutput<T> sff_forward(ad::Var<T>, ad::Var<T>, const Param<T>&, const Param<T>&);                  \
  template ad::Var<T> caf_forward(ad::Var<T>, ad::Var<T>, const std::vector<FusionLayer<T>>&, const HyperParams&); \
  template ForwardOutput<T> forward(ad::Tape<T>&, const EnhancerModel<T>&, ad::Var<T>, ad::Var<T>, ad::Var<T>,   \
                                    ad::Var<T>);

POI_ENHANCER_INSTANTIATE(float)
POI_ENHANCER_INSTANTIATE(double)

#undef POI_ENHANCER_INSTANTIATE

EnhanceResult enhance(const EnhancerModel<float>& model, const MatrixF& visit, const MatrixF& address,
                      const MatrixF& surrounding, const MatrixF& base, std::size_t chunk_size) {
  const auto n = base.rows();
  if (visit.rows() != n || address.rows() != n || surrounding.rows() != n) {
    throw UserError("enhance: feature and base embedding row counts differ");
  }
  EnhanceResult r;
  r.fused.resize(n, model.hp.d);
  r.semantic.resize(n, model.hp.d);
  const Eigen::Index chunk = chunk_size == 0 ? std::max<Eigen::Index>(n, 1) : static_cast<Eigen::Index>(chunk_size);
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const auto len = std::min(chunk, n - start);
    ad::Tape<float> tape(false);
    auto o = forward(tape, model, tape.constant(visit.middleRows(start, len)), tape.constant(address.middleRows(start, len)),
                     tape.constant(surrounding.middleRows(start, len)), tape.constant(base.middleRows(start, len)));
    r.fused.middleRows(start, len) = o.e_fuse.value();
    r.semantic.middleRows(start, len) = o.e_llm.value();
  }
  return r;
}

namespace {
constexpr char kCheckpointMagic[8] = {'P', 'O', 'I', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::filesystem::path& path, const EnhancerModel<float>& model, const nlohmann::json& meta) {
  nlohmann::json header;
  header["hyperparams"] = to_json(model.hp);
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::string payload;
  visit(model, [&](const std::string& name, const Param<float>& p) {
    header["tensors"].push_back({{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    payload.append(reinterpret_cast<const char*>(p.value.data()), static_cast<std::size_t>(p.value.size()) * sizeof(float));
  });
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = h.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += h;
  out += payload;
  atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw UserError(where + ": not a checkpoint file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (len > bytes.size() - 16) throw UserError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw UserError(where + ": bad header: " + e.what());
  }
  Checkpoint c;
  try {
    c.model = shaped<float>(hyperparams_from_json(header.at("hyperparams")));
  } catch (const nlohmann::json::exception& e) {
    throw UserError(where + ": bad header: " + e.what());
  }
  c.meta = header.value("meta", nlohmann::json::object());
  const auto& tensors = header.at("tensors");
  std::size_t offset = 16 + len;
  std::size_t idx = 0;
  visit(c.model, [&](const std::string& name, Param<float>& p) {
    if (idx >= tensors.size() || tensors[idx].at("name").get<std::string>() != name) {
      throw UserError(where + ": tensor list does not match the architecture at '" + name + "'");
    }
    const auto rows = tensors[idx].at("rows").get<Eigen::Index>();
    const auto cols = tensors[idx].at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw UserError(where + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", architecture expects " + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    const std::size_t count = static_cast<std::size_t>(rows * cols);
    if (offset + count * sizeof(float) > bytes.size()) throw UserError(where + ": truncated tensor data");
    p.name = name;
    std::memcpy(p.value.data(), bytes.data() + offset, count * sizeof(float));
    offset += count * sizeof(float);
    ++idx;
  });
  if (idx != tensors.size() || offset != bytes.size()) throw UserError(where + ": trailing data in checkpoint");
  return c;
}

}  // namespace poi
