#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dsml/common.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

// A batch of sample-index pairs with labels: +1 within-class, -1 between.
struct PairBatch {
  std::vector<std::size_t> q;
  std::vector<std::size_t> g;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

struct PairCount {
  std::uint64_t total = 0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

// u[i,j] = |q[i,j] - g[i,j]|
inline Tensor dichotomy_transform(const Tensor& phi_q, const Tensor& phi_g) {
  if (!phi_q.same_shape(phi_g))
    throw ShapeError("dichotomy_transform: shape mismatch " +
                     phi_q.shape_str() + " vs " + phi_g.shape_str());
  Tensor u(phi_q.shape());
  for (std::size_t i = 0; i < u.numel(); ++i)
    u(i) = std::abs(phi_q(i) - phi_g(i));
  return u;
}

// Routes grad_u into both inputs with sign(phi_q - phi_g); subgradient 0 at
// ties. Accumulates into grad_q / grad_g.
inline void dichotomy_backward(const Tensor& phi_q, const Tensor& phi_g,
                               const Tensor& grad_u, Tensor& grad_q,
                               Tensor& grad_g) {
  if (!phi_q.same_shape(phi_g) || !phi_q.same_shape(grad_u) ||
      !phi_q.same_shape(grad_q) || !phi_q.same_shape(grad_g))
    throw ShapeError("dichotomy_backward: shape mismatch");
  for (std::size_t i = 0; i < grad_u.numel(); ++i) {
    const double d = phi_q(i) - phi_g(i);
    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    grad_q(i) += grad_u(i) * s;
    grad_g(i) -= grad_u(i) * s;
  }
}

inline std::uint64_t choose2(std::uint64_t n) { return n * (n - 1) / 2; }

// K classes with R references each:
//   positives = K*C(R,2), negatives = C(K,2)*R^2, total = C(K*R, 2).
inline PairCount count_pairs(std::uint64_t K, std::uint64_t R) {
  if (K < 1 || R < 1)
    throw ValueError("count_pairs: K and R must be >= 1");
  PairCount c;
  c.positives = K * choose2(R);
  c.negatives = choose2(K) * R * R;
  c.total = choose2(K * R);
  return c;
}

// Every unordered pair (i < j) exactly once.
inline PairBatch enumerate_all_pairs(const std::vector<int>& labels) {
  if (labels.size() < 2)
    throw ValueError("enumerate_all_pairs: need at least 2 samples");
  PairBatch out;
  const std::size_t n = labels.size();
  out.q.reserve(choose2(n));
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      out.q.push_back(i);
      out.g.push_back(j);
      out.y.push_back(labels[i] == labels[j] ? +1 : -1);
    }
  return out;
}

// Exactly pairs_per_batch/2 positive and pairs_per_batch/2 negative pairs,
// drawn uniformly without replacement when the pool allows, with
// replacement otherwise.
inline PairBatch sample_balanced_pairs(const std::vector<int>& labels,
                                       std::size_t pairs_per_batch,
                                       SeededRng& rng) {
  if (pairs_per_batch == 0 || pairs_per_batch % 2 != 0)
    throw ValueError("sample_balanced_pairs: pairs_per_batch must be a "
                     "positive even number");
  if (labels.size() < 2)
    throw DataError("sample_balanced_pairs: need at least 2 samples");

  std::vector<std::pair<std::size_t, std::size_t>> pos, neg;
  for (std::size_t i = 0; i + 1 < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      (labels[i] == labels[j] ? pos : neg).emplace_back(i, j);
  if (pos.empty())
    throw DataError("sample_balanced_pairs: no positive pairs available "
                    "(no class has >= 2 samples in the batch)");
  if (neg.empty())
    throw DataError("sample_balanced_pairs: no negative pairs available "
                    "(batch contains a single class)");

  const std::size_t half = pairs_per_batch / 2;
  auto draw = [&rng](std::vector<std::pair<std::size_t, std::size_t>>& pool,
                     std::size_t k) {
    std::vector<std::pair<std::size_t, std::size_t>> picked;
    picked.reserve(k);
    if (pool.size() >= k) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        picked.push_back(pool[i]);
      }
    } else {
      for (std::size_t i = 0; i < k; ++i)
        picked.push_back(pool[rng.index(pool.size())]);
    }
    return picked;
  };

  PairBatch out;
  for (const auto& [a, b] : draw(pos, half)) {
    out.q.push_back(a);
    out.g.push_back(b);
    out.y.push_back(+1);
  }
  for (const auto& [a, b] : draw(neg, half)) {
    out.q.push_back(a);
    out.g.push_back(b);
    out.y.push_back(-1);
  }
  return out;
}

}  // namespace dsml
