#pragma once

#include <cmath>
#include <iostream>
#include <optional>
#include <vector>

#include "dsml/common.hpp"
#include "dsml/ops.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

enum class NormRegime { kSoftL2, kFixedNorm };

struct DichotomizerConfig {
  double C = 1.0;
  NormRegime regime = NormRegime::kSoftL2;
  double tau = 1.0;           // target norm in the fixed-norm regime
  bool batchnorm = false;     // BN over u before the linear score
  double dropout_p = 0.0;     // dropout over u (train mode only)
  bool calibrate_margins = true;  // rescale (w, b) on the first hinge batch
};

// w <- tau * w / ||w||
inline void fixed_norm_project(Tensor& w, double tau) {
  double norm = 0.0;
  for (double v : w.flat()) norm += v * v;
  norm = std::sqrt(norm);
  if (norm <= 0.0)
    throw NumericError("fixed_norm_project: zero weight vector; reinitialize");
  const double s = tau / norm;
  for (double& v : w.flat()) v *= s;
}

enum class WeightPolicy { kStrict, kPermissive };

// Eq.-4-style diagonal weighting: d^2 = sum_i w_i (x_i - y_i)^2.
inline double diag_mahalanobis_distance(const Tensor& x, const Tensor& y,
                                        const Tensor& w,
                                        WeightPolicy policy =
                                            WeightPolicy::kStrict) {
  if (!x.same_shape(y) || !x.same_shape(w))
    throw ShapeError("diag_mahalanobis_distance: shape mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double wi = w(i);
    if (wi < 0.0) {
      if (policy == WeightPolicy::kStrict)
        throw ValueError("diag_mahalanobis_distance: negative weight at "
                         "index " + std::to_string(i));
      std::cerr << "diag_mahalanobis_distance: negative weight at index " << i
                << ", using |w|\n";
      wi = -wi;
    }
    const double d = x(i) - y(i);
    d2 += wi * d * d;
  }
  return d2;
}

// The max-margin classifier over dissimilarity vectors.
// score: s = w . t(u) + b where t is the optional BN/dropout chain.
// Larger s means more within-class (u near the origin).
class Dichotomizer {
 public:
  Dichotomizer(std::size_t dim, const DichotomizerConfig& cfg)
      : cfg_(cfg),
        w_(Tensor::full({dim}, -cfg.tau / std::sqrt(static_cast<double>(dim)))),
        b_(Tensor::scalar(1.0)) {
    if (cfg.C <= 0.0) throw ValueError("Dichotomizer: C must be > 0");
    if (cfg.batchnorm) bn_.emplace(dim);
    if (cfg.dropout_p > 0.0) dropout_.emplace(cfg.dropout_p);
  }

  std::size_t dim() const { return w_.value.size(); }

  // Scores a batch of dissimilarity vectors. Caches the transformed inputs
  // for hinge_loss backward when mode == kTrain.
  Tensor score(const Tensor& u, Mode mode, SeededRng* rng = nullptr) {
    if (u.ndim() != 2 || u.cols() != dim())
      throw ShapeError("Dichotomizer::score: input " + u.shape_str() +
                       " does not match weight dim " + std::to_string(dim()));
    Tensor t = u;
    if (bn_) t = bn_->forward(t, mode);
    if (dropout_ && mode == Mode::kTrain) {
      if (rng == nullptr)
        throw ValueError("Dichotomizer::score: dropout requires an rng in "
                         "train mode");
      t = dropout_->forward(t, mode, *rng);
    }
    if (mode == Mode::kTrain) t_cache_ = t;
    const std::size_t B = t.rows(), n = dim();
    Tensor s({B});
    for (std::size_t i = 0; i < B; ++i) {
      double acc = b_.value(0);
      const double* ti = t.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) acc += w_.value(j) * ti[j];
      s(i) = acc;
    }
    return s;
  }

  static int predict(double s) { return s >= 0.0 ? +1 : -1; }

  // Eq. 6: L = 1/2 ||w||^2 + C * sum_n max(0, 1 - y_n (w.u_n + b)).
  // In the fixed-norm regime the norm term is dropped (a projection enforces
  // ||w|| = tau after the optimizer step instead).
  // Accumulates weight*grad into w, b (and BN params when enabled); when
  // grad_u is non-null it receives weight*dL/du (overwritten, not added).
  double hinge_loss(const Tensor& u, const std::vector<int>& y, Mode mode,
                    SeededRng* rng = nullptr, Tensor* grad_u = nullptr,
                    double weight = 1.0) {
    if (y.size() != u.rows())
      throw ShapeError("Dichotomizer::hinge_loss: labels/batch mismatch");
    for (int yi : y)
      if (yi != 1 && yi != -1)
        throw ValueError("Dichotomizer::hinge_loss: labels must be +1/-1");

    if (cfg_.calibrate_margins && !calibrated_ && mode == Mode::kTrain &&
        weight != 0.0)
      calibrate(u, y);

    const Tensor s = score(u, mode, rng);
    const std::size_t B = u.rows(), n = dim();
    const bool with_grads = mode == Mode::kTrain;

    double loss = 0.0;
    if (cfg_.regime == NormRegime::kSoftL2) {
      double nrm2 = 0.0;
      for (double v : w_.value.flat()) nrm2 += v * v;
      loss += 0.5 * nrm2;
      if (with_grads)
        for (std::size_t j = 0; j < n; ++j)
          w_.grad(j) += weight * w_.value(j);
    }

    // dL/ds_i = -C*y_i for violating pairs
    Tensor grad_t({B, n});
    for (std::size_t i = 0; i < B; ++i) {
      const double margin = 1.0 - static_cast<double>(y[i]) * s(i);
      if (margin > 0.0) {
        loss += cfg_.C * margin;
        if (!with_grads) continue;
        const double gs = -cfg_.C * static_cast<double>(y[i]) * weight;
        b_.grad(0) += gs;
        const double* ti = t_cache_.data() + i * n;
        double* gti = grad_t.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          w_.grad(j) += gs * ti[j];
          gti[j] = gs * w_.value(j);
        }
      }
    }

    if (grad_u != nullptr) {
      if (!with_grads)
        throw ValueError("Dichotomizer::hinge_loss: grad_u requires train "
                         "mode");
      Tensor g = grad_t;
      if (dropout_) g = dropout_->backward(g);
      if (bn_) g = bn_->backward(g);
      *grad_u = std::move(g);
    }
    return loss;
  }

  // Applies the fixed-norm projection if configured; call after each
  // optimizer step that touched w.
  void maybe_project() {
    if (cfg_.regime == NormRegime::kFixedNorm)
      fixed_norm_project(w_.value, cfg_.tau);
  }

  ParamSlot& weight() { return w_; }
  ParamSlot& bias() { return b_; }
  std::optional<BatchNorm1d>& bn() { return bn_; }
  const DichotomizerConfig& config() const { return cfg_; }
  bool calibrated() const { return calibrated_; }
  void set_calibrated(bool v) { calibrated_ = v; }

 private:
  // One-time rescale of (w, b) so the class-conditional mean scores of the
  // first training batch sit at +-1; removes the all-positives-violate
  // transient that otherwise collapses phi through the u-gradients.
  void calibrate(const Tensor& u, const std::vector<int>& y) {
    calibrated_ = true;
    const std::size_t B = u.rows(), n = dim();
    double mp = 0.0, mn = 0.0;
    std::size_t cp = 0, cn = 0;
    for (std::size_t i = 0; i < B; ++i) {
      double raw = 0.0;
      const double* ui = u.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) raw += w_.value(j) * ui[j];
      if (y[i] > 0) {
        mp += raw;
        ++cp;
      } else {
        mn += raw;
        ++cn;
      }
    }
    if (cp == 0 || cn == 0) return;
    mp /= static_cast<double>(cp);
    mn /= static_cast<double>(cn);
    if (mp - mn <= 1e-12) return;  // no separation signal; keep init
    const double alpha = 2.0 / (mp - mn);
    for (double& v : w_.value.flat()) v *= alpha;
    b_.value(0) = 1.0 - alpha * mp;
    if (cfg_.regime == NormRegime::kFixedNorm)
      fixed_norm_project(w_.value, cfg_.tau);
  }

  DichotomizerConfig cfg_;
  ParamSlot w_;  // n
  ParamSlot b_;  // scalar
  std::optional<BatchNorm1d> bn_;
  std::optional<Dropout> dropout_;
  Tensor t_cache_;
  bool calibrated_ = false;
};

// Full-matrix Mahalanobis metric: d^2(x, y) = ||L (x - y)||^2, equivalently
// (x-y)^T M (x-y) with M = L^T L. theta is a trainable decision threshold
// on the squared distance.
class MahalanobisMetric {
 public:
  explicit MahalanobisMetric(std::size_t dim)
      : l_(Tensor::zeros({dim, dim})), theta_(Tensor::scalar(1.0)) {
    for (std::size_t i = 0; i < dim; ++i) l_.value(i, i) = 1.0;
  }

  std::size_t dim() const { return l_.value.rows(); }

  double distance2(const Tensor& x, const Tensor& y) const {
    if (x.numel() != dim() || y.numel() != dim())
      throw ShapeError("MahalanobisMetric::distance2: dim mismatch");
    const std::size_t n = dim();
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        acc += l_.value(i, j) * (x(j) - y(j));
      d2 += acc * acc;
    }
    return d2;
  }

  // Hinge on the thresholded squared distance, mean over pairs:
  //   mean_i max(0, 1 - y_i (theta - d2_i)).
  // Accumulates weight-scaled grads into L and theta; when grad_q/grad_g are
  // non-null they receive the weight-scaled gradients (overwritten).
  double pair_loss(const Tensor& phi_q, const Tensor& phi_g,
                   const std::vector<int>& y, Tensor* grad_q = nullptr,
                   Tensor* grad_g = nullptr, double weight = 1.0) {
    if (!phi_q.same_shape(phi_g))
      throw ShapeError("MahalanobisMetric::pair_loss: shape mismatch");
    if (y.size() != phi_q.rows())
      throw ShapeError("MahalanobisMetric::pair_loss: labels/batch mismatch");
    const std::size_t B = phi_q.rows(), n = dim();
    if (phi_q.cols() != n)
      throw ShapeError("MahalanobisMetric::pair_loss: dim mismatch");
    if (grad_q) *grad_q = Tensor::zeros(phi_q.shape());
    if (grad_g) *grad_g = Tensor::zeros(phi_g.shape());

    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(B);
    std::vector<double> delta(n), ld(n);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        delta[j] = phi_q(i, j) - phi_g(i, j);
      double d2 = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += l_.value(r, c) * delta[c];
        ld[r] = acc;
        d2 += acc * acc;
      }
      const double yi = static_cast<double>(y[i]);
      const double margin = 1.0 - yi * (theta_.value(0) - d2);
      if (margin <= 0.0) continue;
      loss += margin * inv_b;
      // d margin / d theta = -y; d margin / d d2 = +y
      theta_.grad(0) += -yi * inv_b * weight;
      const double c2 = yi * inv_b * weight;
      for (std::size_t r = 0; r < n; ++r) {
        const double f = 2.0 * c2 * ld[r];
        for (std::size_t c = 0; c < n; ++c)
          l_.grad(r, c) += f * delta[c];
      }
      if (grad_q || grad_g) {
        // d d2 / d delta = 2 L^T L delta
        for (std::size_t c = 0; c < n; ++c) {
          double acc = 0.0;
          for (std::size_t r = 0; r < n; ++r) acc += l_.value(r, c) * ld[r];
          const double gd = 2.0 * c2 * acc;
          if (grad_q) (*grad_q)(i, c) += gd;
          if (grad_g) (*grad_g)(i, c) -= gd;
        }
      }
    }
    return loss;
  }

  ParamSlot& l_mat() { return l_; }
  ParamSlot& threshold() { return theta_; }

 private:
  ParamSlot l_;      // n x n
  ParamSlot theta_;  // scalar
};

}  // namespace dsml
