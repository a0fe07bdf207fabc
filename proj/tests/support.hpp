#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "poi/autodiff.hpp"
#include "poi/corpus.hpp"
#include "poi/tensor.hpp"

namespace poi::test {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "poi_test_XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Matrix<T> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g(rng));
  return m;
}

struct RandomCorpusSpec {
  int pois = 50;
  int users = 8;
  int min_len = 5;
  int max_len = 30;
  int categories = 4;
  double box_km = 2.0;  // POIs scattered in a square of this side
  int days = 4;
  std::uint64_t seed = 1;
};

// Uniform random POIs and users; timestamps span `days` days at UTC-5.
inline Dataset random_dataset(const RandomCorpusSpec& s) {
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset ds;
  const double lat0 = 40.7, lon0 = -74.0;
  for (int i = 1; i <= s.pois; ++i) {
    Poi p;
    p.id = i * 3 + 7;  // non-contiguous ids
    p.category = "cat" + std::to_string(std::uniform_int_distribution<int>(0, s.categories - 1)(rng));
    p.name = "poi" + std::to_string(i);
    p.lat = lat0 + u(rng) * s.box_km / 111.32;
    p.lon = lon0 + u(rng) * s.box_km / (111.32 * std::cos(lat0 * M_PI / 180.0));
    ds.pois.emplace(p.id, p);
  }
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  for (int k = 0; k < s.users; ++k) {
    CheckinSequence seq;
    seq.user = "user" + std::to_string(k);
    const int len = std::uniform_int_distribution<int>(s.min_len, s.max_len)(rng);
    std::int64_t t = 1333324800 + static_cast<std::int64_t>(u(rng) * 3600);
    const std::int64_t span = std::int64_t{s.days} * 86400 / std::max(len, 1);
    for (int j = 0; j < len; ++j) {
      t += 1 + static_cast<std::int64_t>(u(rng) * static_cast<double>(span));
      seq.records.push_back({seq.user, ids[pick(rng)], t, -300});
    }
    ds.sequences.push_back(std::move(seq));
  }
  ds.rebuild_vocab();
  return ds;
}

// Largest relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
// over the given parameter tensors, central differences with step h.
template <typename LossFn>
double max_relative_grad_error(const std::vector<ad::Parameter<double>*>& params, LossFn&& loss, double h = 1e-6,
                               std::string* worst = nullptr) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
  }
  double worst_err = 0.0;
  for (auto* p : params) {
    MatrixD numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      double up, down;
      {
        ad::Tape<double> t(false);
        up = loss(t).value()(0, 0);
      }
      p->value.data()[i] = keep - h;
      {
        ad::Tape<double> t(false);
        down = loss(t).value()(0, 0);
      }
      p->value.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const MatrixD analytic = p->grad.size() == 0 ? MatrixD::Zero(numeric.rows(), numeric.cols()) : p->grad;
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-10});
    const double err = (analytic - numeric).norm() / denom;
    if (err > worst_err) {
      worst_err = err;
      if (worst) *worst = p->name;
    }
  }
  return worst_err;
}

}  // namespace poi::test
