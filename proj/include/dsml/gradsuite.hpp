#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsml/backbone.hpp"
#include "dsml/common.hpp"
#include "dsml/dichotomizer.hpp"
#include "dsml/ops.hpp"
#include "dsml/pairspace.hpp"
#include "dsml/tensor.hpp"
#include "dsml/trainer.hpp"

namespace dsml {

struct OpGradReport {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace gradsuite_detail {

constexpr double kEps = 1e-5;
constexpr double kKinkClearance = 1e-3;  // > 10 * eps away from every kink

inline Tensor random_tensor(std::vector<std::size_t> shape, SeededRng& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.flat()) v = rng.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero: |v| in [clearance, 1].
inline Tensor random_away_from_zero(std::vector<std::size_t> shape,
                                    SeededRng& rng,
                                    double clearance = 0.1) {
  Tensor t(std::move(shape));
  for (double& v : t.flat()) {
    const double mag = rng.uniform(clearance, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Scalar objective L = sum_i R_i * out_i with fixed random coefficients:
// turns any tensor-valued op into a differentiable scalar.
inline double weighted_sum(const Tensor& out, const Tensor& coeff) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out(i) * coeff(i);
  return s;
}

inline double check_linear(SeededRng& rng) {
  SeededRng init(rng.next_u64());
  Linear lin(3, 5, /*bias=*/true, init);
  Tensor x = random_tensor({4, 3}, rng);
  const Tensor coeff = random_tensor({4, 5}, rng);

  lin.weight().zero_grad();
  lin.bias().zero_grad();
  lin.forward(x);
  const Tensor grad_x = lin.backward(coeff);
  const Tensor gw = lin.weight().grad, gb = lin.bias().grad;

  auto f = [&]() { return weighted_sum(lin.forward(x), coeff); };
  return finite_diff_gradcheck(
      f,
      {{&x, &grad_x},
       {&lin.weight().value, &gw},
       {&lin.bias().value, &gb}},
      kEps);
}

inline double check_relu(SeededRng& rng) {
  Relu relu;
  Tensor x = random_away_from_zero({4, 6}, rng);
  const Tensor coeff = random_tensor({4, 6}, rng);
  relu.forward(x);
  const Tensor grad_x = relu.backward(coeff);
  auto f = [&]() { return weighted_sum(relu.forward(x), coeff); };
  return finite_diff_gradcheck(f, {{&x, &grad_x}}, kEps);
}

inline double check_softmax_ce(SeededRng& rng) {
  const std::size_t B = 5, K = 7;
  Tensor logits = random_tensor({B, K}, rng, -2.0, 2.0);
  std::vector<int> labels(B);
  for (int& y : labels) y = static_cast<int>(rng.index(K));
  const CeResult res = softmax_cross_entropy(logits, labels);
  auto f = [&]() { return softmax_cross_entropy(logits, labels).loss; };
  return finite_diff_gradcheck(f, {{&logits, &res.grad_logits}}, kEps);
}

inline double check_batchnorm(SeededRng& rng) {
  const std::size_t B = 8, d = 5;
  BatchNorm1d bn(d);
  Tensor x = random_tensor({B, d}, rng, -2.0, 2.0);
  for (std::size_t j = 0; j < d; ++j) {
    bn.gamma().value(j) = rng.uniform(0.5, 1.5);
    bn.beta().value(j) = rng.uniform(-0.5, 0.5);
  }
  const Tensor coeff = random_tensor({B, d}, rng);
  bn.gamma().zero_grad();
  bn.beta().zero_grad();
  bn.forward(x, Mode::kTrain);
  const Tensor grad_x = bn.backward(coeff);
  const Tensor gg = bn.gamma().grad, gb = bn.beta().grad;
  auto f = [&]() { return weighted_sum(bn.forward(x, Mode::kTrain), coeff); };
  return finite_diff_gradcheck(f,
                               {{&x, &grad_x},
                                {&bn.gamma().value, &gg},
                                {&bn.beta().value, &gb}},
                               kEps);
}

inline double check_dropout_fixed_mask(SeededRng& rng) {
  Dropout drop(0.4);
  Tensor x = random_tensor({6, 5}, rng);
  const Tensor coeff = random_tensor({6, 5}, rng);
  SeededRng mask_rng(rng.next_u64());
  drop.forward(x, Mode::kTrain, mask_rng);  // fixes the mask
  const Tensor grad_x = drop.backward(coeff);
  auto f = [&]() {
    return weighted_sum(drop.forward_with_cached_mask(x), coeff);
  };
  return finite_diff_gradcheck(f, {{&x, &grad_x}}, kEps);
}

inline double check_dichotomy(SeededRng& rng) {
  const std::size_t B = 5, n = 6;
  Tensor a = random_tensor({B, n}, rng);
  Tensor b(a.shape());
  for (std::size_t i = 0; i < b.numel(); ++i) {
    const double offset = rng.uniform(0.1, 0.8);
    b(i) = a(i) + (rng.uniform() < 0.5 ? -offset : offset);
  }
  const Tensor coeff = random_tensor({B, n}, rng);
  Tensor grad_a = Tensor::zeros(a.shape()), grad_b = Tensor::zeros(b.shape());
  dichotomy_backward(a, b, coeff, grad_a, grad_b);
  auto f = [&]() { return weighted_sum(dichotomy_transform(a, b), coeff); };
  return finite_diff_gradcheck(f, {{&a, &grad_a}, {&b, &grad_b}}, kEps);
}

inline double check_hinge(SeededRng& rng) {
  const std::size_t N = 8, n = 6;
  for (int attempt = 0; attempt < 200; ++attempt) {
    DichotomizerConfig dc;
    dc.calibrate_margins = false;
    Dichotomizer dich(n, dc);
    for (std::size_t j = 0; j < n; ++j)
      dich.weight().value(j) = rng.uniform(-1.0, 1.0);
    dich.bias().value(0) = rng.uniform(-0.5, 0.5);
    Tensor u = random_tensor({N, n}, rng, 0.0, 1.0);
    std::vector<int> y(N);
    for (int& v : y) v = rng.uniform() < 0.5 ? 1 : -1;

    const Tensor s = dich.score(u, Mode::kEval);
    bool clear = true;
    int violating_label_sum = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double margin = 1.0 - y[i] * s(i);
      if (std::abs(margin) < kKinkClearance) clear = false;
      if (margin > 0.0) violating_label_sum += y[i];
    }
    // balanced violating labels make dL/db exactly zero with noise-only
    // central differences; such points are degenerate for the check
    if (violating_label_sum == 0) clear = false;
    if (!clear) continue;

    dich.weight().zero_grad();
    dich.bias().zero_grad();
    Tensor grad_u;
    dich.hinge_loss(u, y, Mode::kTrain, nullptr, &grad_u);
    const Tensor gw = dich.weight().grad, gb = dich.bias().grad;
    auto f = [&]() { return dich.hinge_loss(u, y, Mode::kEval); };
    return finite_diff_gradcheck(f,
                                 {{&u, &grad_u},
                                  {&dich.weight().value, &gw},
                                  {&dich.bias().value, &gb}},
                                 kEps);
  }
  throw NumericError("check_hinge: no kink-free configuration found");
}

inline double check_triplet(SeededRng& rng) {
  const std::size_t B = 8, d = 4;
  const double margin = 0.5;
  std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1, 1};
  for (int attempt = 0; attempt < 500; ++attempt) {
    Tensor emb = random_tensor({B, d}, rng, -1.0, 1.0);
    // kink clearance: distinct hardest picks, margins away from the hinge,
    // distances away from the sqrt kink
    std::vector<std::vector<double>> dist(B, std::vector<double>(B, 0.0));
    bool clear = true;
    for (std::size_t i = 0; i < B && clear; ++i)
      for (std::size_t j = i + 1; j < B; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double c = emb(i, k) - emb(j, k);
          s += c * c;
        }
        dist[i][j] = dist[j][i] = std::sqrt(s);
        if (dist[i][j] < kKinkClearance) {
          clear = false;
          break;
        }
      }
    if (!clear) continue;
    for (std::size_t a = 0; a < B && clear; ++a) {
      std::vector<double> pos, neg;
      for (std::size_t j = 0; j < B; ++j) {
        if (j == a) continue;
        (labels[j] == labels[a] ? pos : neg).push_back(dist[a][j]);
      }
      std::sort(pos.begin(), pos.end());
      std::sort(neg.begin(), neg.end());
      if (pos[pos.size() - 1] - pos[pos.size() - 2] < kKinkClearance)
        clear = false;
      if (neg.size() >= 2 && neg[1] - neg[0] < kKinkClearance) clear = false;
      const double viol = margin + pos.back() - neg.front();
      if (std::abs(viol) < kKinkClearance) clear = false;
    }
    if (!clear) continue;

    Tensor grad = Tensor::zeros(emb.shape());
    triplet_loss_batch_hard(emb, labels, margin, &grad);
    auto f = [&]() { return triplet_loss_batch_hard(emb, labels, margin); };
    return finite_diff_gradcheck(f, {{&emb, &grad}}, kEps);
  }
  throw NumericError("check_triplet: no kink-free configuration found");
}

inline double check_mahalanobis_pair_loss(SeededRng& rng) {
  const std::size_t B = 6, n = 5;
  for (int attempt = 0; attempt < 200; ++attempt) {
    MahalanobisMetric maha(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        maha.l_mat().value(i, j) = (i == j ? 1.0 : 0.0) + rng.uniform(-0.3, 0.3);
    maha.threshold().value(0) = rng.uniform(0.5, 2.0);
    Tensor q = random_tensor({B, n}, rng);
    Tensor g = random_tensor({B, n}, rng);
    std::vector<int> y(B);
    for (int& v : y) v = rng.uniform() < 0.5 ? 1 : -1;

    bool clear = true;
    for (std::size_t i = 0; i < B; ++i) {
      Tensor xi({n}), yi({n});
      for (std::size_t j = 0; j < n; ++j) {
        xi(j) = q(i, j);
        yi(j) = g(i, j);
      }
      const double margin =
          1.0 - y[i] * (maha.threshold().value(0) - maha.distance2(xi, yi));
      if (std::abs(margin) < kKinkClearance) clear = false;
    }
    if (!clear) continue;

    maha.l_mat().zero_grad();
    maha.threshold().zero_grad();
    Tensor gq, gg;
    maha.pair_loss(q, g, y, &gq, &gg);
    const Tensor gl = maha.l_mat().grad, gt = maha.threshold().grad;
    auto f = [&]() { return maha.pair_loss(q, g, y); };
    return finite_diff_gradcheck(f,
                                 {{&q, &gq},
                                  {&g, &gg},
                                  {&maha.l_mat().value, &gl},
                                  {&maha.threshold().value, &gt}},
                                 kEps);
  }
  throw NumericError("check_mahalanobis_pair_loss: no kink-free "
                     "configuration found");
}

// Full Eq. 7 pipeline at a verified kink-free point.
inline double check_pipeline(SeededRng& rng) {
  TrainConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dims = {8};
  cfg.embed_dim = 6;
  cfg.adapt_dim = 6;
  cfg.batch_p = 3;
  cfg.batch_k = 2;
  cfg.pairs_per_batch = 4;
  cfg.triplet_margin = 0.5;
  cfg.calibrate_margins = false;
  cfg.bn_on_u = false;
  cfg.dropout_u = 0.0;

  for (int attempt = 0; attempt < 500; ++attempt) {
    cfg.seed = rng.next_u64();
    Model model(cfg, 3);
    const std::size_t B = cfg.batch_p * cfg.batch_k;
    Tensor x = random_tensor({B, cfg.input_dim}, rng, -1.5, 1.5);
    std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    SeededRng pair_rng(rng.next_u64());
    const PairBatch pairs =
        sample_balanced_pairs(labels, cfg.pairs_per_batch, pair_rng);

    // measure every kink distance along the pipeline
    double min_clear = 1e12;
    {
      Tensor h = x;
      auto& layers = model.backbone().layers();
      for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) {
          for (double v : h.flat())
            min_clear = std::min(min_clear, std::abs(v));
          Relu relu;
          h = relu.forward(h);
        }
      }
      const Tensor psi = h;
      // phi and its pre-activation via the model's adapter weight
      const Tensor& aw = model.adapter().weight().value;
      Tensor phi({B, cfg.adapt_dim});
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < cfg.adapt_dim; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < cfg.embed_dim; ++k)
            acc += aw(j, k) * psi(i, k);
          min_clear = std::min(min_clear, std::abs(acc));
          phi(i, j) = acc > 0.0 ? acc : 0.0;
        }
      // triplet structure on phi
      std::vector<std::vector<double>> dist(B, std::vector<double>(B, 0.0));
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = i + 1; j < B; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < cfg.adapt_dim; ++k) {
            const double c = phi(i, k) - phi(j, k);
            s += c * c;
          }
          dist[i][j] = dist[j][i] = std::sqrt(s);
          min_clear = std::min(min_clear, dist[i][j]);
        }
      for (std::size_t a = 0; a < B; ++a) {
        std::vector<double> pos, neg;
        for (std::size_t j = 0; j < B; ++j) {
          if (j == a) continue;
          (labels[j] == labels[a] ? pos : neg).push_back(dist[a][j]);
        }
        std::sort(pos.begin(), pos.end());
        std::sort(neg.begin(), neg.end());
        if (pos.size() >= 2)
          min_clear =
              std::min(min_clear, pos[pos.size() - 1] - pos[pos.size() - 2]);
        if (neg.size() >= 2) min_clear = std::min(min_clear, neg[1] - neg[0]);
        min_clear = std::min(
            min_clear, std::abs(cfg.triplet_margin + pos.back() - neg.front()));
      }
      // dichotomy ties and hinge margins
      int violating_label_sum = 0;
      bool any_violating = false;
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        double s = model.dichotomizer().bias().value(0);
        for (std::size_t j = 0; j < cfg.adapt_dim; ++j) {
          const double pq = phi(pairs.q[p], j), pg = phi(pairs.g[p], j);
          const double uj = std::abs(pq - pg);
          // both-dead ReLU coordinates are stable zeros (pre-activations
          // already cleared), not dichotomy kinks
          if (!(pq == 0.0 && pg == 0.0))
            min_clear = std::min(min_clear, uj);
          s += model.dichotomizer().weight().value(j) * uj;
        }
        const double margin = 1.0 - pairs.y[p] * s;
        min_clear = std::min(min_clear, std::abs(margin));
        if (margin > 0.0) {
          violating_label_sum += pairs.y[p];
          any_violating = true;
        }
      }
      // degenerate for the check: hinge bias gradient exactly cancels
      if (any_violating && violating_label_sum == 0) min_clear = 0.0;
    }
    if (min_clear < kKinkClearance) continue;

    compute_joint_loss(model, x, labels, &pairs);
    std::vector<std::pair<Tensor*, Tensor>> snap;
    for (auto& [name, slot] : model.named_params()) {
      if (name.rfind("mahalanobis", 0) == 0) continue;  // not in this mode
      snap.emplace_back(&slot->value, slot->grad);
    }
    std::vector<GradTarget> targets;
    for (auto& [value, grad] : snap) targets.push_back({value, &grad});
    auto f = [&]() { return joint_loss_value(model, x, labels, &pairs); };
    return finite_diff_gradcheck(f, targets, kEps);
  }
  throw NumericError("check_pipeline: no kink-free configuration found");
}

}  // namespace gradsuite_detail

// Runs every backward pass through central-difference verification at
// kink-free points. Tolerance 1e-4 (1e-3 for batchnorm).
inline std::vector<OpGradReport> run_gradient_suite(std::uint64_t seed,
                                                    std::size_t trials = 20) {
  using namespace gradsuite_detail;
  struct Entry {
    const char* name;
    double (*fn)(SeededRng&);
    double tol;
  };
  const Entry entries[] = {
      {"linear", check_linear, 1e-4},
      {"relu", check_relu, 1e-4},
      {"softmax_cross_entropy", check_softmax_ce, 1e-4},
      {"batchnorm1d", check_batchnorm, 1e-3},
      {"dropout_fixed_mask", check_dropout_fixed_mask, 1e-4},
      {"dichotomy_transform", check_dichotomy, 1e-4},
      {"hinge", check_hinge, 1e-4},
      {"triplet_batch_hard", check_triplet, 1e-4},
      {"mahalanobis_pair_loss", check_mahalanobis_pair_loss, 1e-4},
      {"pipeline_total", check_pipeline, 1e-4},
  };
  std::vector<OpGradReport> out;
  for (const Entry& e : entries) {
    OpGradReport rep;
    rep.op = e.name;
    rep.tolerance = e.tol;
    SeededRng rng(seed ^ std::hash<std::string>{}(e.name));
    for (std::size_t t = 0; t < trials; ++t)
      rep.max_rel_error = std::max(rep.max_rel_error, e.fn(rng));
    rep.pass = rep.max_rel_error < e.tol;
    out.push_back(rep);
  }
  return out;
}

}  // namespace dsml
