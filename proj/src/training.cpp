#include "poi/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "poi/util.hpp"

namespace poi {

void TrainConfig::validate() const {
  if (!(gamma > 0)) throw UserError("train.gamma must be positive");
  if (epochs < 1) throw UserError("train.epochs must be at least 1");
  if (!(learning_rate >= 0)) throw UserError("train.learning_rate must be non-negative");
  if (!(weight_decay >= 0)) throw UserError("train.weight_decay must be non-negative");
  if (!(grad_clip >= 0)) throw UserError("train.grad_clip must be non-negative");
}

nlohmann::json to_json(const LossReport& r) {
  return {{"epoch", r.epoch}, {"l_cont", r.l_cont}, {"l_sim", r.l_sim}, {"total", r.total}, {"batches", r.batches}};
}

namespace {

// Same arithmetic as ad::normalize_rows, so equal inputs give equal bits.
template <typename T>
Matrix<T> unit_rows(const Matrix<T>& m) {
  const Eigen::Matrix<T, Eigen::Dynamic, 1> norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > T(0))) throw std::domain_error("cosine similarity undefined: row " + std::to_string(i) + " has zero norm");
  }
  return norms.cwiseInverse().asDiagonal() * m;
}

}  // namespace

double infonce_loss(const MatrixD& batch, double gamma) {
  if (batch.rows() < 3) throw std::invalid_argument("infonce_loss needs at least 3 rows");
  const MatrixD u = unit_rows(batch);
  Eigen::VectorXd s = (u.bottomRows(batch.rows() - 1) * u.row(0).transpose()) / gamma;
  const double mx = s.maxCoeff();
  const double lse = mx + std::log((s.array() - mx).exp().sum());
  return lse - s(0);
}

double similarity_loss(const MatrixD& fused, const MatrixD& base) {
  if (fused.rows() != base.rows()) throw std::invalid_argument("similarity_loss: row counts differ");
  const MatrixD uf = unit_rows(fused), ub = unit_rows(base);
  const double m = static_cast<double>(fused.rows());
  MatrixD diff = (uf * uf.transpose()) - (ub * ub.transpose());
  diff.diagonal().setZero();  // cos(x, x) = 1 on both sides; drop the rounding residue
  return diff.cwiseAbs().sum() / (m * m);
}

template <typename T>
ad::Var<T> infonce_loss(ad::Var<T> batch, T gamma) {
  const auto m = batch.rows();
  if (m < 3) throw std::invalid_argument("infonce_loss needs at least 3 rows");
  auto u = ad::normalize_rows(batch);
  auto sims = ad::matmul_nt(ad::slice(u, 0, 1, 0, u.cols()), ad::slice(u, 1, m - 1, 0, u.cols()));
  const Eigen::Index label = 0;
  return ad::cross_entropy(ad::scale(sims, T(1) / gamma), std::span<const Eigen::Index>(&label, 1));
}

template <typename T>
ad::Var<T> similarity_loss(ad::Var<T> fused, const Matrix<T>& base) {
  auto& t = *fused.tape;
  if (fused.rows() != base.rows()) throw std::invalid_argument("similarity_loss: row counts differ");
  const Matrix<T> ub = unit_rows(base);
  auto u = ad::normalize_rows(fused);
  auto diff = ad::sub(ad::matmul_nt(u, u), t.constant(ub * ub.transpose()));
  Matrix<T> off_diag = Matrix<T>::Ones(base.rows(), base.rows());
  off_diag.diagonal().setZero();
  return ad::mean(ad::abs(ad::hadamard(diff, t.constant(std::move(off_diag)))));
}

template ad::Var<float> infonce_loss(ad::Var<float>, float);
template ad::Var<double> infonce_loss(ad::Var<double>, double);
template ad::Var<float> similarity_loss(ad::Var<float>, const MatrixF&);
template ad::Var<double> similarity_loss(ad::Var<double>, const MatrixD&);

template <typename T>
AdamW<T>::AdamW(std::vector<ad::Parameter<T>*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
  }
}

template <typename T>
void AdamW<T>::step() {
  ++t_;
  const T lr = static_cast<T>(cfg_.learning_rate);
  const T wd = static_cast<T>(cfg_.weight_decay);
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T eps = static_cast<T>(cfg_.eps);
  const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
  const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));

  T clip_scale = T(1);
  if (cfg_.grad_clip > 0) {
    T sq = 0;
    for (auto* p : params_) {
      if (p->grad.size() != 0) sq += p->grad.squaredNorm();
    }
    const T norm = std::sqrt(sq);
    if (norm > static_cast<T>(cfg_.grad_clip)) clip_scale = static_cast<T>(cfg_.grad_clip) / norm;
  }

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    if (p->grad.size() == 0) p->zero_grad();
    const Matrix<T> g = p->grad * clip_scale;
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
    const auto m_hat = (m_[i] / c1).array();
    const auto v_hat = (v_[i] / c2).array();
    p->value.array() -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p->value.array());
  }
}

template class AdamW<float>;
template class AdamW<double>;

BatchTensors gather_batch(const TrainingInputs& in, const std::map<PoiId, Eigen::Index>& row_of, const TrainingBatch& b) {
  const auto ids = b.rows();
  const auto m = static_cast<Eigen::Index>(ids.size());
  BatchTensors t{MatrixF(m, in.visit.cols()), MatrixF(m, in.address.cols()), MatrixF(m, in.surrounding.cols()),
                 MatrixF(m, in.base.cols())};
  for (Eigen::Index k = 0; k < m; ++k) {
    auto it = row_of.find(ids[static_cast<std::size_t>(k)]);
    if (it == row_of.end()) throw UserError("batch refers to POI " + std::to_string(ids[static_cast<std::size_t>(k)]) + " without features");
    t.visit.row(k) = in.visit.row(it->second);
    t.address.row(k) = in.address.row(it->second);
    t.surrounding.row(k) = in.surrounding.row(it->second);
    t.base.row(k) = in.base.row(it->second);
  }
  return t;
}

template <typename T>
BatchLoss<T> batch_loss(ad::Tape<T>& tape, const EnhancerModel<T>& model, const Matrix<T>& visit,
                        const Matrix<T>& address, const Matrix<T>& surrounding, const Matrix<T>& base, T gamma) {
  auto o = forward(tape, model, tape.constant_ref(visit), tape.constant_ref(address), tape.constant_ref(surrounding),
                   tape.constant_ref(base));
  auto cont = infonce_loss(o.e_fuse, gamma);
  auto sim = similarity_loss(o.e_fuse, base);
  BatchLoss<T> r;
  r.total = ad::add(cont, sim);
  r.l_cont = static_cast<double>(cont.value()(0, 0));
  r.l_sim = static_cast<double>(sim.value()(0, 0));
  return r;
}

template BatchLoss<float> batch_loss(ad::Tape<float>&, const EnhancerModel<float>&, const MatrixF&, const MatrixF&,
                                    const MatrixF&, const MatrixF&, float);
template BatchLoss<double> batch_loss(ad::Tape<double>&, const EnhancerModel<double>&, const MatrixD&, const MatrixD&,
                                     const MatrixD&, const MatrixD&, double);

TrainResult train_enhancer(EnhancerModel<float>& model, const TrainingInputs& in, std::span<const TrainingBatch> batches,
                           const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (batches.empty()) throw UserError("no training batches: every anchor lacks positives");
  std::map<PoiId, Eigen::Index> row_of;
  for (std::size_t i = 0; i < in.poi_ids.size(); ++i) row_of[in.poi_ids[i]] = static_cast<Eigen::Index>(i);

  if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);
  AdamW<float> opt(model.parameters(), cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(batches.size());
  TrainResult result;
  std::string log;
  bool stop = false;

  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    LossReport rep;
    rep.epoch = epoch;
    for (std::size_t idx : order) {
      const auto& b = batches[idx];
      const auto t = gather_batch(in, row_of, b);
      model.zero_grad();
      auto fail = [&](const std::string& why) {
        std::string dump = batches_to_jsonl(std::span<const TrainingBatch>(&b, 1));
        if (opts.out_dir) {
          atomic_write(*opts.out_dir / "bad_batch.jsonl", dump);
          dump = (*opts.out_dir / "bad_batch.jsonl").string();
        }
        throw std::runtime_error(why + " at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(result.step_losses.size() + 1) + "; batch: " + dump);
      };
      ad::Tape<float> tape;
      std::optional<BatchLoss<float>> loss;
      try {
        loss = batch_loss(tape, model, t.visit, t.address, t.surrounding, t.base, static_cast<float>(cfg.gamma));
      } catch (const UserError&) {
        throw;
      } catch (const std::exception& e) {
        fail(e.what());
      }
      const double total = static_cast<double>(loss->total.value()(0, 0));
      if (!std::isfinite(total)) fail("non-finite loss");
      tape.backward(loss->total);
      opt.step();
      rep.l_cont += loss->l_cont;
      rep.l_sim += loss->l_sim;
      ++rep.batches;
      result.step_losses.push_back(total);
      if (opts.max_steps && result.step_losses.size() >= opts.max_steps) {
        stop = true;
        break;
      }
    }
    rep.l_cont /= static_cast<double>(rep.batches);
    rep.l_sim /= static_cast<double>(rep.batches);
    rep.total = rep.l_cont + rep.l_sim;
    result.epochs.push_back(rep);
    spdlog::info("epoch {}: l_cont={:.6f} l_sim={:.6f} total={:.6f} ({} batches)", epoch, rep.l_cont, rep.l_sim, rep.total,
                 rep.batches);
    const bool best = result.best_epoch == 0 || rep.total < result.best_total;
    if (best) {
      result.best_epoch = epoch;
      result.best_total = rep.total;
    }
    if (opts.out_dir) {
      auto meta = opts.checkpoint_meta;
      meta["epoch"] = epoch;
      meta["total_loss"] = rep.total;
      save_checkpoint(*opts.out_dir / "checkpoint_last.bin", model, meta);
      if (best) save_checkpoint(*opts.out_dir / "checkpoint_best.bin", model, meta);
      log += to_json(rep).dump() + "\n";
      atomic_write(*opts.out_dir / "train_log.jsonl", log);
    }
    if (opts.on_epoch) opts.on_epoch(rep);
  }
  return result;
}

}  // namespace poi
