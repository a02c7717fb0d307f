#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "dsml/common.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

// Glorot-uniform init in +-sqrt(6/(fan_in+fan_out)).
inline Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in,
                             SeededRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_out, fan_in});
  for (double& v : w.flat()) v = rng.uniform(-a, a);
  return w;
}

// Fully connected layer: out[i,j] = sum_k W[j,k] x[i,k] + b[j].
// backward() accumulates into the param grads and returns grad wrt x.
class Linear {
 public:
  Linear(std::size_t in_dim, std::size_t out_dim, bool bias, SeededRng& rng)
      : w_(glorot_uniform(out_dim, in_dim, rng)),
        b_(Tensor::zeros({out_dim})),
        has_bias_(bias) {}

  Tensor forward(const Tensor& x) {
    if (x.ndim() != 2 || x.cols() != in_dim())
      throw ShapeError("Linear::forward: input " + x.shape_str() +
                       " does not match weight " + w_.value.shape_str());
    x_cache_ = x;
    const std::size_t B = x.rows(), din = in_dim(), dout = out_dim();
    Tensor out({B, dout});
    for (std::size_t i = 0; i < B; ++i) {
      const double* xi = x.data() + i * din;
      double* oi = out.data() + i * dout;
      for (std::size_t j = 0; j < dout; ++j) {
        const double* wj = w_.value.data() + j * din;
        double acc = has_bias_ ? b_.value(j) : 0.0;
        for (std::size_t k = 0; k < din; ++k) acc += wj[k] * xi[k];
        oi[j] = acc;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out) {
    const std::size_t B = x_cache_.rows(), din = in_dim(), dout = out_dim();
    if (grad_out.ndim() != 2 || grad_out.rows() != B || grad_out.cols() != dout)
      throw ShapeError("Linear::backward: grad shape mismatch");
    Tensor grad_x({B, din});
    for (std::size_t i = 0; i < B; ++i) {
      const double* gi = grad_out.data() + i * dout;
      const double* xi = x_cache_.data() + i * din;
      double* gxi = grad_x.data() + i * din;
      for (std::size_t j = 0; j < dout; ++j) {
        const double g = gi[j];
        if (has_bias_) b_.grad(j) += g;
        double* gwj = w_.grad.data() + j * din;
        const double* wj = w_.value.data() + j * din;
        for (std::size_t k = 0; k < din; ++k) {
          gwj[k] += g * xi[k];
          gxi[k] += g * wj[k];
        }
      }
    }
    return grad_x;
  }

  std::size_t in_dim() const { return w_.value.cols(); }
  std::size_t out_dim() const { return w_.value.rows(); }
  bool has_bias() const { return has_bias_; }

  ParamSlot& weight() { return w_; }
  ParamSlot& bias() { return b_; }
  const ParamSlot& weight() const { return w_; }
  const ParamSlot& bias() const { return b_; }

 private:
  ParamSlot w_;  // out_dim x in_dim
  ParamSlot b_;  // out_dim
  bool has_bias_;
  Tensor x_cache_;
};

// Elementwise max(0, x); backward gates by (x > 0).
class Relu {
 public:
  Tensor forward(const Tensor& x) {
    x_cache_ = x;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      out(i) = x(i) > 0.0 ? x(i) : 0.0;
    return out;
  }

  Tensor backward(const Tensor& grad_out) {
    if (!grad_out.same_shape(x_cache_))
      throw ShapeError("Relu::backward: grad shape mismatch");
    Tensor grad_x(x_cache_.shape());
    for (std::size_t i = 0; i < grad_x.numel(); ++i)
      grad_x(i) = x_cache_(i) > 0.0 ? grad_out(i) : 0.0;
    return grad_x;
  }

 private:
  Tensor x_cache_;
};

struct CeResult {
  double loss = 0.0;
  Tensor grad_logits;  // (softmax - onehot)/B, scaled by the caller's weight
};

// Mean over the batch of -log softmax(logits)[label].
inline CeResult softmax_cross_entropy(const Tensor& logits,
                                      const std::vector<int>& labels,
                                      double weight = 1.0) {
  const std::size_t B = logits.rows(), K = logits.cols();
  if (labels.size() != B)
    throw ShapeError("softmax_cross_entropy: labels/batch mismatch");
  CeResult res;
  res.grad_logits = Tensor::zeros({B, K});
  for (std::size_t i = 0; i < B; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw ValueError("softmax_cross_entropy: label " + std::to_string(y) +
                       " out of range [0, " + std::to_string(K) + ")");
    const double* zi = logits.data() + i * K;
    double zmax = zi[0];
    for (std::size_t k = 1; k < K; ++k) zmax = std::max(zmax, zi[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(zi[k] - zmax);
    const double logdenom = std::log(denom);
    res.loss += -(zi[y] - zmax - logdenom);
    double* gi = res.grad_logits.data() + i * K;
    const double scale = weight / static_cast<double>(B);
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(zi[k] - zmax) / denom;
      gi[k] = scale * (p - (static_cast<std::size_t>(y) == k ? 1.0 : 0.0));
    }
  }
  res.loss /= static_cast<double>(B);
  return res;
}

// Per-feature batch normalization with running statistics.
// Train mode normalizes by batch mean/variance (variance floor eps),
// eval mode uses the running statistics.
class BatchNorm1d {
 public:
  explicit BatchNorm1d(std::size_t dim, double eps = 1e-5,
                       double momentum = 0.9)
      : gamma_(Tensor::full({dim}, 1.0)),
        beta_(Tensor::zeros({dim})),
        running_mean_(Tensor::zeros({dim})),
        running_var_(Tensor::full({dim}, 1.0)),
        eps_(eps),
        momentum_(momentum) {}

  Tensor forward(const Tensor& x, Mode mode) {
    const std::size_t d = dim();
    if (x.ndim() != 2 || x.cols() != d)
      throw ShapeError("BatchNorm1d::forward: input " + x.shape_str() +
                       " does not match dim " + std::to_string(d));
    const std::size_t B = x.rows();
    Tensor out({B, d});
    if (mode == Mode::kTrain) {
      if (B < 2)
        throw ValueError("BatchNorm1d: train mode requires batch size >= 2");
      mean_ = Tensor::zeros({d});
      inv_std_ = Tensor::zeros({d});
      for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < B; ++i) m += x(i, j);
        m /= static_cast<double>(B);
        double v = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
          const double c = x(i, j) - m;
          v += c * c;
        }
        v /= static_cast<double>(B);
        mean_(j) = m;
        inv_std_(j) = 1.0 / std::sqrt(v + eps_);
        running_mean_(j) = momentum_ * running_mean_(j) + (1.0 - momentum_) * m;
        running_var_(j) = momentum_ * running_var_(j) + (1.0 - momentum_) * v;
      }
      x_hat_ = Tensor({B, d});
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          x_hat_(i, j) = (x(i, j) - mean_(j)) * inv_std_(j);
          out(i, j) = gamma_.value(j) * x_hat_(i, j) + beta_.value(j);
        }
    } else {
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double xh = (x(i, j) - running_mean_(j)) /
                            std::sqrt(running_var_(j) + eps_);
          out(i, j) = gamma_.value(j) * xh + beta_.value(j);
        }
    }
    return out;
  }

  // Backward for the most recent train-mode forward.
  Tensor backward(const Tensor& grad_out) {
    const std::size_t B = x_hat_.rows(), d = dim();
    if (!grad_out.same_shape(x_hat_))
      throw ShapeError("BatchNorm1d::backward: grad shape mismatch");
    Tensor grad_x({B, d});
    for (std::size_t j = 0; j < d; ++j) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double g = grad_out(i, j);
        sum_g += g;
        sum_gx += g * x_hat_(i, j);
      }
      beta_.grad(j) += sum_g;
      gamma_.grad(j) += sum_gx;
      const double gj = gamma_.value(j), inv = inv_std_(j);
      for (std::size_t i = 0; i < B; ++i) {
        const double g = grad_out(i, j);
        grad_x(i, j) = gj * inv / static_cast<double>(B) *
                       (static_cast<double>(B) * g - sum_g -
                        x_hat_(i, j) * sum_gx);
      }
    }
    return grad_x;
  }

  std::size_t dim() const { return gamma_.value.size(); }
  ParamSlot& gamma() { return gamma_; }
  ParamSlot& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  ParamSlot gamma_, beta_;
  Tensor running_mean_, running_var_;
  double eps_, momentum_;
  Tensor mean_, inv_std_, x_hat_;
};

// Inverted dropout: zero with probability p at train time, scale survivors
// by 1/(1-p); identity in eval mode.
class Dropout {
 public:
  explicit Dropout(double p) : p_(p) {
    if (p < 0.0 || p >= 1.0)
      throw ValueError("Dropout: p must be in [0, 1)");
  }

  Tensor forward(const Tensor& x, Mode mode, SeededRng& rng) {
    if (mode == Mode::kEval || p_ == 0.0) {
      mask_ = Tensor::full(x.shape(), 1.0);
      return x;
    }
    mask_ = Tensor(x.shape());
    const double keep = 1.0 - p_;
    for (std::size_t i = 0; i < mask_.numel(); ++i)
      mask_(i) = rng.uniform() < p_ ? 0.0 : 1.0 / keep;
    return apply_mask(x);
  }

  // Re-apply the cached mask (used by gradient checks on a fixed mask).
  Tensor forward_with_cached_mask(const Tensor& x) const {
    if (!mask_.same_shape(x))
      throw ShapeError("Dropout: cached mask shape mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out(i) = x(i) * mask_(i);
    return out;
  }

  Tensor backward(const Tensor& grad_out) const {
    return forward_with_cached_mask(grad_out);
  }

  double p() const { return p_; }
  const Tensor& mask() const { return mask_; }

 private:
  Tensor apply_mask(const Tensor& x) const {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out(i) = x(i) * mask_(i);
    return out;
  }

  double p_;
  Tensor mask_;
};

// buf <- momentum*buf + grad + weight_decay*value; value <- value - lr*buf
inline void sgd_momentum_step(ParamSlot& p, double lr, double momentum,
                              double weight_decay) {
  for (std::size_t i = 0; i < p.value.numel(); ++i) {
    p.momentum(i) = momentum * p.momentum(i) + p.grad(i) +
                    weight_decay * p.value(i);
    p.value(i) -= lr * p.momentum(i);
  }
}

// A (value, analytic gradient) pair to check. Works for ParamSlots and for
// cached input tensors alike.
struct GradTarget {
  Tensor* value;
  const Tensor* grad;
};

inline GradTarget grad_target(ParamSlot& p) { return {&p.value, &p.grad}; }

// Central-difference gradient check. `f` re-evaluates the scalar objective
// at the current parameter values; the analytic gradients must already be
// stored in the targets. Samples up to `samples_per_target` coordinates per
// target and returns the max relative error
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double finite_diff_gradcheck(const std::function<double()>& f,
                                    const std::vector<GradTarget>& targets,
                                    double eps = 1e-5,
                                    std::size_t samples_per_target = 0,
                                    SeededRng* rng = nullptr) {
  double max_err = 0.0;
  for (const GradTarget& t : targets) {
    const std::size_t n = t.value->numel();
    std::vector<std::size_t> coords;
    if (samples_per_target == 0 || samples_per_target >= n || rng == nullptr) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t s = 0; s < samples_per_target; ++s)
        coords.push_back(rng->index(n));
    }
    for (std::size_t c : coords) {
      const double orig = (*t.value)(c);
      (*t.value)(c) = orig + eps;
      const double fp = f();
      (*t.value)(c) = orig - eps;
      const double fm = f();
      (*t.value)(c) = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_gradcheck: objective is not finite");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = (*t.grad)(c);
      const double denom =
          std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      max_err = std::max(max_err, std::abs(analytic - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace dsml
