#pragma once

#include <vector>

#include "dsml/common.hpp"
#include "dsml/ops.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

struct BackboneConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden = {64};
  std::size_t embed_dim = 32;
};

// The trainable feature extractor: linear layers with ReLU between them,
// no activation after the last layer. psi = forward(x).
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, SeededRng& rng) : cfg_(cfg) {
    if (cfg.embed_dim < 2)
      throw ValueError("Backbone: embed_dim must be >= 2");
    std::size_t prev = cfg.input_dim;
    for (std::size_t h : cfg.hidden) {
      layers_.emplace_back(prev, h, /*bias=*/true, rng);
      prev = h;
    }
    layers_.emplace_back(prev, cfg.embed_dim, /*bias=*/true, rng);
    relus_.resize(cfg.hidden.size());
  }

  Tensor forward(const Tensor& x) {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      if (i + 1 < layers_.size()) h = relus_[i].forward(h);
    }
    return h;
  }

  Tensor backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (i + 1 < layers_.size()) g = relus_[i].backward(g);
      g = layers_[i].backward(g);
    }
    return g;
  }

  std::vector<ParamSlot*> params() {
    std::vector<ParamSlot*> out;
    for (Linear& l : layers_) {
      out.push_back(&l.weight());
      out.push_back(&l.bias());
    }
    return out;
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t embed_dim() const { return cfg_.embed_dim; }
  std::vector<Linear>& layers() { return layers_; }

 private:
  BackboneConfig cfg_;
  std::vector<Linear> layers_;
  std::vector<Relu> relus_;
};

// phi = ReLU(W1 psi), no bias: one linear weight per element pair, keeping
// the dissimilarity origin fixed.
class Adapter {
 public:
  Adapter(std::size_t embed_dim, std::size_t adapt_dim, SeededRng& rng)
      : lin_(embed_dim, adapt_dim, /*bias=*/false, rng) {}

  Tensor forward(const Tensor& psi) {
    return relu_.forward(lin_.forward(psi));
  }

  Tensor backward(const Tensor& grad_phi) {
    return lin_.backward(relu_.backward(grad_phi));
  }

  std::size_t out_dim() const { return lin_.out_dim(); }
  ParamSlot& weight() { return lin_.weight(); }

 private:
  Linear lin_;
  Relu relu_;
};

// K-class cross-entropy head for ID classification.
class CeHead {
 public:
  CeHead(std::size_t in_dim, std::size_t num_classes, SeededRng& rng)
      : lin_(in_dim, num_classes, /*bias=*/true, rng) {}

  // Returns L_ce; accumulates weight-scaled grads into the head params and
  // writes the weight-scaled gradient wrt the input features.
  double loss(const Tensor& features, const std::vector<int>& labels,
              Tensor* grad_features = nullptr, double weight = 1.0) {
    const Tensor logits = lin_.forward(features);
    CeResult ce = softmax_cross_entropy(logits, labels, weight);
    Tensor gx = lin_.backward(ce.grad_logits);
    if (grad_features != nullptr) *grad_features = std::move(gx);
    return ce.loss;
  }

  std::size_t num_classes() const { return lin_.out_dim(); }
  ParamSlot& weight() { return lin_.weight(); }
  ParamSlot& bias() { return lin_.bias(); }

 private:
  Linear lin_;
};

}  // namespace dsml
