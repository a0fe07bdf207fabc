#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "poi/enhancer.hpp"
#include "poi/sampling.hpp"

namespace poi {

struct TrainConfig {
  double gamma = 0.1;
  int epochs = 100;
  double learning_rate = 0.001;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;

  void validate() const;  // throws UserError
};

struct LossReport {
  int epoch = 0;
  double l_cont = 0.0;
  double l_sim = 0.0;
  double total = 0.0;
  std::size_t batches = 0;
};

nlohmann::json to_json(const LossReport& r);

/// InfoNCE over cosine similarity. Row 0 is the anchor, row 1 the positive,
/// the rest negatives; the denominator runs over rows 1..m-1.
/// Throws std::domain_error on a zero row.
double infonce_loss(const MatrixD& batch, double gamma);
/// Mean over all m^2 ordered pairs of |cos(fuse_i, fuse_j) - cos(poi_i, poi_j)|.
double similarity_loss(const MatrixD& fused, const MatrixD& base);

template <typename T>
ad::Var<T> infonce_loss(ad::Var<T> batch, T gamma);
template <typename T>
ad::Var<T> similarity_loss(ad::Var<T> fused, const Matrix<T>& base);

/// Adam with decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<ad::Parameter<T>*> params, const TrainConfig& cfg);
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Parameter<T>*> params_;
  std::vector<Matrix<T>> m_, v_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

/// Features and base embeddings with rows aligned to `poi_ids`.
struct TrainingInputs {
  std::vector<PoiId> poi_ids;
  MatrixF visit, address, surrounding;
  MatrixF base;
};

/// Batch rows gathered from `in` (anchor, positive, negatives).
struct BatchTensors {
  MatrixF visit, address, surrounding, base;
};
BatchTensors gather_batch(const TrainingInputs& in, const std::map<PoiId, Eigen::Index>& row_of,
                          const TrainingBatch& b);

/// Total loss (L_Cont + L_Sim) of one batch on `tape`, plus its two parts.
template <typename T>
struct BatchLoss {
  ad::Var<T> total;
  double l_cont = 0.0;
  double l_sim = 0.0;
};
template <typename T>
BatchLoss<T> batch_loss(ad::Tape<T>& tape, const EnhancerModel<T>& model, const Matrix<T>& visit,
                        const Matrix<T>& address, const Matrix<T>& surrounding, const Matrix<T>& base, T gamma);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints, train_log.jsonl, bad_batch.json
  nlohmann::json checkpoint_meta = nlohmann::json::object();
  std::size_t max_steps = 0;                     // 0: run all epochs
  std::function<void(const LossReport&)> on_epoch;
};

struct TrainResult {
  std::vector<LossReport> epochs;
  std::vector<double> step_losses;
  int best_epoch = 0;
  double best_total = 0.0;
};

/// Each epoch visits every batch once in a seeded shuffled order, running the
/// m batch POIs as one attention chunk. Throws std::runtime_error on a
/// non-finite loss after dumping the batch.
TrainResult train_enhancer(EnhancerModel<float>& model, const TrainingInputs& in,
                           std::span<const TrainingBatch> batches, const TrainConfig& cfg,
                           const TrainOptions& opts = {});

}  // namespace poi
