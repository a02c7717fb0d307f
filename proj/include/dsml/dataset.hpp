#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsml/common.hpp"
#include "dsml/config.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

// Labeled feature vectors. Labels are dense 0-based indices; label_names[i]
// is the original name of class i.
struct Dataset {
  Tensor features;  // N x d
  std::vector<int> labels;
  std::vector<std::string> label_names;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const { return label_names.size(); }

  std::vector<std::vector<std::size_t>> indices_by_class() const {
    std::vector<std::vector<std::size_t>> by_class(num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i)
      by_class[labels[i]].push_back(i);
    return by_class;
  }
};

// Class means drawn uniformly on the sphere of radius between_sep; samples
// are mean + within_std * gaussian noise. Deterministic per seed.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  const std::size_t K = spec.num_classes, n = spec.per_class, d = spec.dim;
  std::vector<std::vector<double>> means(K, std::vector<double>(d));
  for (std::size_t k = 0; k < K; ++k) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      means[k][j] = rng.normal();
      norm += means[k][j] * means[k][j];
    }
    norm = std::sqrt(norm);
    while (norm <= 0.0) {
      norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        means[k][j] = rng.normal();
        norm += means[k][j] * means[k][j];
      }
      norm = std::sqrt(norm);
    }
    for (std::size_t j = 0; j < d; ++j)
      means[k][j] *= spec.between_sep / norm;
  }
  Dataset ds;
  ds.features = Tensor({K * n, d});
  ds.labels.resize(K * n);
  for (std::size_t k = 0; k < K; ++k) {
    ds.label_names.push_back("class_" + std::to_string(k));
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t i = k * n + s;
      ds.labels[i] = static_cast<int>(k);
      for (std::size_t j = 0; j < d; ++j)
        ds.features(i, j) = means[k][j] + spec.within_std * rng.normal();
    }
  }
  return ds;
}

struct SplitDataset {
  Dataset train;
  Dataset test;
  std::vector<std::string> train_class_names;
  std::vector<std::string> test_class_names;
};

namespace detail {
inline Dataset subset_remapped(const Dataset& ds,
                               const std::vector<std::size_t>& sample_idx) {
  Dataset out;
  out.features = gather_rows(ds.features, sample_idx);
  out.labels.reserve(sample_idx.size());
  std::unordered_map<int, int> remap;
  for (std::size_t i : sample_idx) {
    const int orig = ds.labels[i];
    auto it = remap.find(orig);
    if (it == remap.end()) {
      it = remap.emplace(orig, static_cast<int>(out.label_names.size())).first;
      out.label_names.push_back(ds.label_names[orig]);
    }
    out.labels.push_back(it->second);
  }
  return out;
}
}  // namespace detail

// Open-set split: the train and test CLASS sets are disjoint. Classes are
// shuffled deterministically by `seed`; round(K * holdout_fraction) of them
// (at least 1, at most K-1) become the test classes.
inline SplitDataset split_by_class(const Dataset& ds, double holdout_fraction,
                                   std::uint64_t seed) {
  const std::size_t K = ds.num_classes();
  if (K < 2) throw DataError("split_by_class: need at least 2 classes");
  std::vector<std::size_t> order(K);
  for (std::size_t i = 0; i < K; ++i) order[i] = i;
  SeededRng rng(seed);
  for (std::size_t i = 0; i + 1 < K; ++i) {
    const std::size_t j = i + rng.index(K - i);
    std::swap(order[i], order[j]);
  }
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(static_cast<double>(K) * holdout_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, K - 1);

  std::vector<bool> is_test(K, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (is_test[ds.labels[i]] ? test_idx : train_idx).push_back(i);

  SplitDataset out;
  out.train = detail::subset_remapped(ds, train_idx);
  out.test = detail::subset_remapped(ds, test_idx);
  out.train_class_names = out.train.label_names;
  out.test_class_names = out.test.label_names;

  // class-disjointness is a structural invariant of every run
  for (const std::string& t : out.train_class_names)
    for (const std::string& e : out.test_class_names)
      if (t == e)
        throw DataError("split_by_class: train/test class overlap: " + t);
  return out;
}

// Per-class seed-deterministic subsample keeping floor(fraction * n_c)
// samples; classes left with < 2 samples are dropped (callers may warn).
inline Dataset subsample_per_class(const Dataset& ds, double fraction,
                                   std::uint64_t seed,
                                   std::vector<std::string>* dropped = nullptr) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw DataError("subsample_per_class: fraction must be in (0, 1]");
  SeededRng rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == static_cast<int>(c)) pool.push_back(i);
    std::size_t n_keep = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(pool.size())));
    if (n_keep < 2) {
      if (dropped) dropped->push_back(ds.label_names[c]);
      continue;
    }
    for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
      const std::size_t j = i + rng.index(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n_keep);
    std::sort(pool.begin(), pool.end());
    keep.insert(keep.end(), pool.begin(), pool.end());
  }
  if (keep.size() < 2)
    throw DataError("subsample_per_class: fraction leaves fewer than 2 "
                    "usable samples");
  std::sort(keep.begin(), keep.end());
  return detail::subset_remapped(ds, keep);
}

}  // namespace dsml
