#include "poi/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "poi/util.hpp"

namespace poi {

namespace {

KMeansResult lloyd(const MatrixD& x, int k, std::mt19937_64& rng, int max_iter) {
  const auto n = x.rows();
  MatrixD c(k, x.cols());
  Eigen::VectorXd d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  for (int j = 1; j < k; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - c.row(j - 1)).squaredNorm());
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2(pick);
        if (r < 0) break;
      }
    } else {
      pick = first(rng);
    }
    c.row(j) = x.row(pick);
  }

  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    res.inertia = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double dist = (x.row(i) - c.row(j)).squaredNorm();
        if (dist < bd) {
          bd = dist;
          best = j;
        }
      }
      res.inertia += bd;
      if (res.labels[static_cast<std::size_t>(i)] != best) {
        res.labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    MatrixD sums = MatrixD::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        c.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
        continue;
      }
      // Empty cluster: move it to the point farthest from its centroid.
      Eigen::Index far = 0;
      double fd = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dist = (x.row(i) - c.row(res.labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (dist > fd) {
          fd = dist;
          far = i;
        }
      }
      c.row(j) = x.row(far);
    }
  }
  res.centroids = std::move(c);
  return res;
}

}  // namespace

KMeansResult kmeans(const MatrixD& x, int k, int restarts, std::uint64_t seed, int max_iter) {
  if (k < 1) throw UserError("k-means: k must be positive");
  if (k > x.rows()) throw UserError("k-means: k = " + std::to_string(k) + " exceeds the " + std::to_string(x.rows()) + " points");
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    auto res = lloyd(x, k, rng, max_iter);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

double normalized_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("nmi: labelings differ in length");
  if (a.empty()) throw std::invalid_argument("nmi: empty labeling");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    joint[{a[i], b[i]}] += 1;
  }
  auto entropy = [n](const std::map<int, double>& c) {
    double h = 0;
    for (const auto& [_, v] : c) h -= (v / n) * std::log(v / n);
    return h;
  };
  const double ha = entropy(ca), hb = entropy(cb);
  if (ha + hb == 0) return 1.0;
  // A one-to-one correspondence is exactly 1; the log arithmetic below would
  // only get within rounding of it.
  if (joint.size() == ca.size() && joint.size() == cb.size()) return 1.0;
  double mi = 0;
  for (const auto& [key, v] : joint) {
    mi += (v / n) * std::log(v * n / (ca[key.first] * cb[key.second]));
  }
  return std::clamp(2 * mi / (ha + hb), 0.0, 1.0);
}

}  // namespace poi
