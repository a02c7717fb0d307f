#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dsml/common.hpp"
#include "dsml/dataset.hpp"
#include "dsml/tensor.hpp"
#include "dsml/trainer.hpp"

namespace dsml {

enum class Scorer { kEuclid, kDissimSvm, kMahalanobis };

inline std::string to_string(Scorer s) {
  switch (s) {
    case Scorer::kEuclid: return "euclid";
    case Scorer::kDissimSvm: return "dissim_svm";
    case Scorer::kMahalanobis: return "mahalanobis";
  }
  return "?";
}

inline Scorer scorer_from_string(const std::string& s) {
  if (s == "euclid") return Scorer::kEuclid;
  if (s == "dissim_svm") return Scorer::kDissimSvm;
  if (s == "mahalanobis") return Scorer::kMahalanobis;
  throw DataError("unknown scorer: " + s);
}

struct RetrievalResult {
  std::map<std::size_t, double> recall_at;
  std::vector<long> first_correct_rank;  // 1-based; -1 for skipped queries
  std::size_t skipped = 0;
  std::size_t scored_queries = 0;
  std::string scorer;
};

// Open-set retrieval: every test point queries all other test points.
// euclid ranks ascending ||phi_q - phi_g||, dissim_svm descending decision
// score, mahalanobis ascending d_m^2. Ties break on ascending gallery index.
inline RetrievalResult recall_at_k(Model& model, const Dataset& test,
                                   const std::vector<std::size_t>& ks,
                                   Scorer scorer) {
  if (test.size() == 0) throw DataError("recall_at_k: empty test set");
  const std::size_t N = test.size();
  const Tensor phi = model.phi(test.features);
  const std::size_t d = phi.cols();

  RetrievalResult res;
  res.scorer = to_string(scorer);
  res.first_correct_rank.assign(N, -1);

  std::vector<std::size_t> class_count(test.num_classes(), 0);
  for (int y : test.labels) ++class_count[y];

  for (std::size_t q = 0; q < N; ++q) {
    if (class_count[test.labels[q]] < 2) {
      ++res.skipped;
      continue;
    }
    // Ranking key: ascending key = better match.
    std::vector<std::pair<double, std::size_t>> keyed;
    keyed.reserve(N - 1);
    if (scorer == Scorer::kDissimSvm) {
      Tensor u({N - 1, d});
      std::vector<std::size_t> gallery;
      gallery.reserve(N - 1);
      std::size_t r = 0;
      for (std::size_t g = 0; g < N; ++g) {
        if (g == q) continue;
        for (std::size_t j = 0; j < d; ++j)
          u(r, j) = std::abs(phi(q, j) - phi(g, j));
        gallery.push_back(g);
        ++r;
      }
      const Tensor s = model.dichotomizer().score(u, Mode::kEval);
      for (std::size_t i = 0; i < gallery.size(); ++i)
        keyed.emplace_back(-s(i), gallery[i]);
    } else {
      for (std::size_t g = 0; g < N; ++g) {
        if (g == q) continue;
        double key = 0.0;
        if (scorer == Scorer::kEuclid) {
          for (std::size_t j = 0; j < d; ++j) {
            const double c = phi(q, j) - phi(g, j);
            key += c * c;
          }
        } else {
          Tensor xq({d}), xg({d});
          for (std::size_t j = 0; j < d; ++j) {
            xq(j) = phi(q, j);
            xg(j) = phi(g, j);
          }
          key = model.mahalanobis().distance2(xq, xg);
        }
        keyed.emplace_back(key, g);
      }
    }
    std::sort(keyed.begin(), keyed.end());
    long rank = -1;
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      if (test.labels[keyed[i].second] == test.labels[q]) {
        rank = static_cast<long>(i) + 1;
        break;
      }
    }
    res.first_correct_rank[q] = rank;
    ++res.scored_queries;
  }

  if (res.scored_queries == 0)
    throw DataError("recall_at_k: every query was skipped");
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (long r : res.first_correct_rank)
      if (r > 0 && static_cast<std::size_t>(r) <= k) ++hits;
    res.recall_at[k] =
        static_cast<double>(hits) / static_cast<double>(res.scored_queries);
  }
  return res;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValueError("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationCell {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  double r1_dissim = 0.0;
  double r1_euclid = 0.0;
};

struct AblationRow {
  double fraction = 1.0;
  double dissim_median = 0.0;
  double euclid_median = 0.0;
  double delta_median = 0.0;  // median over seeds of per-seed paired delta
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::vector<AblationRow> rows;
};

// Data-size ablation: per fraction and seed, both pipelines train on the
// identical per-class subsample of the train split and are evaluated on the
// same held-out classes.
inline AblationResult ablate_datasize(const DatasetSpec& data_spec,
                                      const TrainConfig& dissim_cfg,
                                      const TrainConfig& euclid_cfg,
                                      const std::vector<double>& fractions,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::vector<std::string>* warnings =
                                          nullptr) {
  if (euclid_cfg.mode_enum() != TrainMode::kEuclidBaseline)
    throw DataError("ablate_datasize: second config must be euclid_baseline");
  AblationResult out;
  for (double f : fractions) {
    std::vector<double> dvals, evals, deltas;
    for (std::uint64_t seed : seeds) {
      DatasetSpec ds = data_spec;
      ds.synthetic.seed = seed;
      const Dataset full = generate_synthetic(ds.synthetic);
      const SplitDataset split = split_by_class(full, ds.holdout_fraction,
                                                seed);
      std::vector<std::string> dropped;
      const Dataset train_sub =
          f >= 1.0 ? split.train
                   : subsample_per_class(split.train, f, seed, &dropped);
      if (warnings != nullptr)
        for (const std::string& c : dropped)
          warnings->push_back("fraction " + std::to_string(f) + " seed " +
                              std::to_string(seed) + ": class " + c +
                              " dropped (< 2 samples)");
      TrainConfig dc = dissim_cfg;
      dc.seed = seed;
      TrainConfig ec = euclid_cfg;
      ec.seed = seed;
      TrainResult rd = train(train_sub, dc);
      TrainResult re = train(train_sub, ec);
      auto md = model_from_checkpoint(rd.checkpoint);
      auto me = model_from_checkpoint(re.checkpoint);
      const double r1d =
          recall_at_k(*md, split.test, {1}, Scorer::kDissimSvm).recall_at.at(1);
      const double r1e =
          recall_at_k(*me, split.test, {1}, Scorer::kEuclid).recall_at.at(1);
      out.cells.push_back({f, seed, r1d, r1e});
      dvals.push_back(r1d);
      evals.push_back(r1e);
      deltas.push_back(r1d - r1e);
    }
    out.rows.push_back(
        {f, median(dvals), median(evals), median(deltas)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Figure-1-style 2-d PCA projection.
// ---------------------------------------------------------------------------

struct ProjectionExport {
  Tensor coords;                    // N x 2
  Tensor axes;                      // 2 x d, orthonormal rows
  double eigenvalue1 = 0.0;
  double eigenvalue2 = 0.0;
  bool degenerate = false;          // rank < 2: second axis arbitrary
  std::vector<std::string> kinds;   // embedding | within | between
  std::vector<std::string> labels;
};

namespace detail {

// v <- C v (C symmetric d x d)
inline void symv(const std::vector<double>& c, std::size_t d,
                 const std::vector<double>& v, std::vector<double>& out) {
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += c[i * d + j] * v[j];
    out[i] = acc;
  }
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Deterministic power iteration; returns the eigenvalue and writes the unit
// eigenvector, or returns 0 when the matrix is (numerically) null.
inline double power_iteration(const std::vector<double>& c, std::size_t d,
                              std::vector<double>& v, double tol,
                              std::size_t max_iters) {
  SeededRng rng(0x9E3779B97F4A7C15ULL);
  v.assign(d, 0.0);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  double n = norm2(v);
  for (double& x : v) x /= n;
  std::vector<double> next(d);
  for (std::size_t it = 0; it < max_iters; ++it) {
    symv(c, d, v, next);
    const double nn = norm2(next);
    if (nn < 1e-300) return 0.0;
    for (double& x : next) x /= nn;
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += next[i] * v[i];
    if (dot < 0.0)
      for (double& x : next) x = -x;
    double diff = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      diff += (next[i] - v[i]) * (next[i] - v[i]);
    v = next;
    if (std::sqrt(diff) < tol) break;
  }
  std::vector<double> cv(d);
  symv(c, d, v, cv);
  double lambda = 0.0;
  for (std::size_t i = 0; i < d; ++i) lambda += v[i] * cv[i];
  return lambda;
}

}  // namespace detail

// Mean-center, take the top-2 covariance eigenvectors by power iteration
// with deflation, and project.
inline ProjectionExport pca_project_2d(const Tensor& points,
                                       double tol = 1e-10,
                                       std::size_t max_iters = 10000) {
  if (points.ndim() != 2)
    throw ShapeError("pca_project_2d: expected N x d points");
  const std::size_t N = points.rows(), d = points.cols();
  if (N < 3) throw DataError("pca_project_2d: need at least 3 points");
  if (d < 2) throw DataError("pca_project_2d: need dimension >= 2");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += points(i, j);
  for (double& m : mean) m /= static_cast<double>(N);

  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = points(i, a) - mean[a];
      for (std::size_t b = a; b < d; ++b)
        cov[a * d + b] += ca * (points(i, b) - mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(N - 1);
      cov[b * d + a] = cov[a * d + b];
    }

  ProjectionExport out;
  out.axes = Tensor({2, d});
  out.coords = Tensor({N, 2});

  std::vector<double> v1(d), v2(d);
  const double l1 = detail::power_iteration(cov, d, v1, tol, max_iters);
  if (l1 <= 0.0) {
    // all points identical (or numerically so): zero projection
    out.degenerate = true;
    out.axes(0, 0) = 1.0;
    out.axes(1, 1) = 1.0;
    return out;
  }
  out.eigenvalue1 = l1;
  // deflate and repeat
  std::vector<double> cov2 = cov;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) cov2[a * d + b] -= l1 * v1[a] * v1[b];
  double l2 = detail::power_iteration(cov2, d, v2, tol, max_iters);
  if (l2 <= l1 * 1e-12) {
    // rank deficient: pick any unit vector orthogonal to v1
    out.degenerate = true;
    for (std::size_t basis = 0; basis < d; ++basis) {
      std::fill(v2.begin(), v2.end(), 0.0);
      v2[basis] = 1.0;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += v1[i] * v2[i];
      for (std::size_t i = 0; i < d; ++i) v2[i] -= dot * v1[i];
      const double n = detail::norm2(v2);
      if (n > 1e-6) {
        for (double& x : v2) x /= n;
        break;
      }
    }
    l2 = std::max(l2, 0.0);
  } else {
    // re-orthogonalize against v1 for the 1e-10 orthonormality contract
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += v1[i] * v2[i];
    for (std::size_t i = 0; i < d; ++i) v2[i] -= dot * v1[i];
    const double n = detail::norm2(v2);
    for (double& x : v2) x /= n;
  }
  out.eigenvalue2 = l2;

  for (std::size_t j = 0; j < d; ++j) {
    out.axes(0, j) = v1[j];
    out.axes(1, j) = v2[j];
  }
  for (std::size_t i = 0; i < N; ++i) {
    double c1 = 0.0, c2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = points(i, j) - mean[j];
      c1 += x * v1[j];
      c2 += x * v2[j];
    }
    out.coords(i, 0) = c1;
    out.coords(i, 1) = c2;
  }
  return out;
}

}  // namespace dsml
