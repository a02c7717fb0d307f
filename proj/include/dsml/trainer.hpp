#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsml/backbone.hpp"
#include "dsml/common.hpp"
#include "dsml/config.hpp"
#include "dsml/dataset.hpp"
#include "dsml/dichotomizer.hpp"
#include "dsml/ops.hpp"
#include "dsml/pairspace.hpp"
#include "dsml/tensor.hpp"

namespace dsml {

// P distinct classes, K samples each (with replacement when a class holds
// fewer than K), shuffled. Throws when the dataset has fewer than P classes.
inline std::vector<std::size_t> make_batch_pk(
    const std::vector<std::vector<std::size_t>>& by_class, std::size_t P,
    std::size_t K, SeededRng& rng) {
  const std::size_t C = by_class.size();
  if (C < P)
    throw DataError("make_batch_pk: dataset has " + std::to_string(C) +
                    " classes, need P=" + std::to_string(P));
  std::vector<std::size_t> classes(C);
  for (std::size_t i = 0; i < C; ++i) classes[i] = i;
  for (std::size_t i = 0; i < P; ++i) {
    const std::size_t j = i + rng.index(C - i);
    std::swap(classes[i], classes[j]);
  }
  std::vector<std::size_t> batch;
  batch.reserve(P * K);
  for (std::size_t p = 0; p < P; ++p) {
    const auto& pool = by_class[classes[p]];
    if (pool.empty()) throw DataError("make_batch_pk: empty class");
    if (pool.size() >= K) {
      std::vector<std::size_t> local(pool);
      for (std::size_t i = 0; i < K; ++i) {
        const std::size_t j = i + rng.index(local.size() - i);
        std::swap(local[i], local[j]);
        batch.push_back(local[i]);
      }
    } else {
      for (std::size_t i = 0; i < K; ++i)
        batch.push_back(pool[rng.index(pool.size())]);
    }
  }
  for (std::size_t i = 0; i + 1 < batch.size(); ++i) {
    const std::size_t j = i + rng.index(batch.size() - i);
    std::swap(batch[i], batch[j]);
  }
  return batch;
}

// Batch-hard triplet loss: mean over valid anchors of
//   max(0, m + d(a, hardest positive) - d(a, hardest negative)),
// d Euclidean. Accumulates weight-scaled gradients into grad (same shape as
// emb) when non-null. Throws when no anchor has both a positive and a
// negative.
inline double triplet_loss_batch_hard(const Tensor& emb,
                                      const std::vector<int>& labels,
                                      double margin, Tensor* grad = nullptr,
                                      double weight = 1.0) {
  const std::size_t B = emb.rows(), d = emb.cols();
  if (labels.size() != B)
    throw ShapeError("triplet_loss_batch_hard: labels/batch mismatch");

  std::vector<double> dist(B * B, 0.0);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = i + 1; j < B; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double c = emb(i, k) - emb(j, k);
        s += c * c;
      }
      dist[i * B + j] = dist[j * B + i] = std::sqrt(s);
    }

  struct AnchorPick {
    std::size_t a, p, n;
    double viol;  // m + d_ap - d_an, > 0
  };
  std::vector<AnchorPick> picks;
  std::size_t valid = 0;
  for (std::size_t a = 0; a < B; ++a) {
    long hp = -1, hn = -1;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hp < 0 || dist[a * B + j] > dist[a * B + hp]) hp = static_cast<long>(j);
      } else {
        if (hn < 0 || dist[a * B + j] < dist[a * B + hn]) hn = static_cast<long>(j);
      }
    }
    if (hp < 0 || hn < 0) continue;
    ++valid;
    const double viol = margin + dist[a * B + hp] - dist[a * B + hn];
    if (viol > 0.0)
      picks.push_back({a, static_cast<std::size_t>(hp),
                       static_cast<std::size_t>(hn), viol});
  }
  if (valid == 0)
    throw ValueError("triplet_loss_batch_hard: no valid anchor (need >= 2 "
                     "classes and a class with >= 2 samples)");

  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(valid);
  for (const AnchorPick& t : picks) loss += t.viol * inv;

  if (grad != nullptr) {
    if (!grad->same_shape(emb))
      throw ShapeError("triplet_loss_batch_hard: grad shape mismatch");
    for (const AnchorPick& t : picks) {
      const double dap = dist[t.a * B + t.p], dan = dist[t.a * B + t.n];
      const double c = weight * inv;
      if (dap > 1e-12) {
        for (std::size_t k = 0; k < d; ++k) {
          const double g = c * (emb(t.a, k) - emb(t.p, k)) / dap;
          (*grad)(t.a, k) += g;
          (*grad)(t.p, k) -= g;
        }
      }
      if (dan > 1e-12) {
        for (std::size_t k = 0; k < d; ++k) {
          const double g = c * (emb(t.a, k) - emb(t.n, k)) / dan;
          (*grad)(t.a, k) -= g;
          (*grad)(t.n, k) += g;
        }
      }
    }
  }
  return loss;
}

struct LossBreakdown {
  double ce = 0.0;
  double tri = 0.0;
  double hinge = 0.0;
  double total = 0.0;
};

// The complete trainable model: backbone f, adapter, CE head, dichotomizer
// and the full-matrix Mahalanobis baseline metric.
class Model {
 public:
  Model(const TrainConfig& cfg, std::size_t num_classes)
      : cfg_(cfg), num_classes_(num_classes) {
    cfg_.validate();
    if (num_classes < 2) throw DataError("Model: need at least 2 classes");
    SeededRng rng(cfg.seed);
    BackboneConfig bc{cfg.input_dim, cfg.hidden_dims, cfg.embed_dim};
    backbone_ = std::make_unique<Backbone>(bc, rng);
    adapter_ = std::make_unique<Adapter>(cfg.embed_dim, cfg.adapt_dim, rng);
    const std::size_t aux_dim =
        cfg.attach_enum() == AuxAttach::kPhi ? cfg.adapt_dim : cfg.embed_dim;
    head_ = std::make_unique<CeHead>(aux_dim, num_classes, rng);
    DichotomizerConfig dc;
    dc.C = cfg.hinge_c;
    dc.regime = cfg.regime_enum();
    dc.tau = cfg.fixed_norm_tau;
    dc.batchnorm = cfg.bn_on_u;
    dc.dropout_p = cfg.dropout_u;
    dc.calibrate_margins = cfg.calibrate_margins;
    dich_ = std::make_unique<Dichotomizer>(cfg.adapt_dim, dc);
    maha_ = std::make_unique<MahalanobisMetric>(cfg.adapt_dim);
  }

  const TrainConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return num_classes_; }

  Backbone& backbone() { return *backbone_; }
  Adapter& adapter() { return *adapter_; }
  CeHead& head() { return *head_; }
  Dichotomizer& dichotomizer() { return *dich_; }
  MahalanobisMetric& mahalanobis() { return *maha_; }

  Tensor embed(const Tensor& x) { return backbone_->forward(x); }
  Tensor adapt(const Tensor& psi) { return adapter_->forward(psi); }
  Tensor phi(const Tensor& x) { return adapt(embed(x)); }

  // Stable-ordered named parameters; the checkpoint and the optimizer both
  // iterate this order.
  std::vector<std::pair<std::string, ParamSlot*>> named_params() {
    std::vector<std::pair<std::string, ParamSlot*>> out;
    auto& layers = backbone_->layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.emplace_back("backbone.layer" + std::to_string(i) + ".weight",
                       &layers[i].weight());
      out.emplace_back("backbone.layer" + std::to_string(i) + ".bias",
                       &layers[i].bias());
    }
    out.emplace_back("adapter.weight", &adapter_->weight());
    out.emplace_back("head.weight", &head_->weight());
    out.emplace_back("head.bias", &head_->bias());
    out.emplace_back("dichotomizer.weight", &dich_->weight());
    out.emplace_back("dichotomizer.bias", &dich_->bias());
    if (dich_->bn()) {
      out.emplace_back("dichotomizer.bn.gamma", &dich_->bn()->gamma());
      out.emplace_back("dichotomizer.bn.beta", &dich_->bn()->beta());
    }
    out.emplace_back("mahalanobis.l", &maha_->l_mat());
    out.emplace_back("mahalanobis.theta", &maha_->threshold());
    return out;
  }

  // Non-parameter state that must survive a checkpoint round trip.
  std::vector<std::pair<std::string, Tensor*>> named_buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (dich_->bn()) {
      out.emplace_back("dichotomizer.bn.running_mean",
                       &dich_->bn()->running_mean());
      out.emplace_back("dichotomizer.bn.running_var",
                       &dich_->bn()->running_var());
    }
    return out;
  }

  // Parameters the optimizer may move in the given mode.
  std::vector<ParamSlot*> trainable_params() {
    std::vector<ParamSlot*> out;
    const TrainMode m = cfg_.mode_enum();
    if (m != TrainMode::kFrozenBackbone)
      for (ParamSlot* p : backbone_->params()) out.push_back(p);
    out.push_back(&adapter_->weight());
    out.push_back(&head_->weight());
    out.push_back(&head_->bias());
    if (m == TrainMode::kEnd2End || m == TrainMode::kFrozenBackbone) {
      out.push_back(&dich_->weight());
      out.push_back(&dich_->bias());
      if (dich_->bn()) {
        out.push_back(&dich_->bn()->gamma());
        out.push_back(&dich_->bn()->beta());
      }
    }
    if (m == TrainMode::kMahalanobisBaseline) {
      out.push_back(&maha_->l_mat());
      out.push_back(&maha_->threshold());
    }
    return out;
  }

 private:
  TrainConfig cfg_;
  std::size_t num_classes_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Adapter> adapter_;
  std::unique_ptr<CeHead> head_;
  std::unique_ptr<Dichotomizer> dich_;
  std::unique_ptr<MahalanobisMetric> maha_;
};

// Eq. 7 joint loss on a prepared batch, with the full backward pass through
// dichotomy transform, adapter and backbone. Gradients accumulate into the
// model's param slots (zeroed here first). The optimizer step is separate so
// the same path serves training and the gradient suite.
inline LossBreakdown compute_joint_loss(Model& model, const Tensor& x,
                                        const std::vector<int>& labels,
                                        const PairBatch* pairs,
                                        SeededRng* rng = nullptr) {
  const TrainConfig& cfg = model.config();
  const TrainMode mode = cfg.mode_enum();

  for (auto& [name, slot] : model.named_params()) slot->zero_grad();

  const Tensor psi = model.backbone().forward(x);
  const Tensor phi = model.adapter().forward(psi);
  const bool aux_on_phi = cfg.attach_enum() == AuxAttach::kPhi;
  const Tensor& aux = aux_on_phi ? phi : psi;

  LossBreakdown out;
  Tensor grad_aux = Tensor::zeros(aux.shape());

  {
    Tensor g_ce;
    out.ce = model.head().loss(aux, labels, &g_ce, cfg.lambda_ce);
    for (std::size_t i = 0; i < grad_aux.numel(); ++i) grad_aux(i) += g_ce(i);
  }
  out.tri = triplet_loss_batch_hard(aux, labels, cfg.triplet_margin,
                                    &grad_aux, cfg.lambda_tri);

  Tensor grad_phi = Tensor::zeros(phi.shape());
  if (aux_on_phi)
    for (std::size_t i = 0; i < grad_phi.numel(); ++i)
      grad_phi(i) += grad_aux(i);

  if (mode != TrainMode::kEuclidBaseline) {
    if (pairs == nullptr)
      throw ValueError("compute_joint_loss: this mode requires pairs");
    const Tensor phi_q = gather_rows(phi, pairs->q);
    const Tensor phi_g = gather_rows(phi, pairs->g);
    Tensor grad_q = Tensor::zeros(phi_q.shape());
    Tensor grad_g = Tensor::zeros(phi_g.shape());
    if (mode == TrainMode::kMahalanobisBaseline) {
      out.hinge = model.mahalanobis().pair_loss(phi_q, phi_g, pairs->y,
                                                &grad_q, &grad_g,
                                                cfg.lambda_hinge);
    } else {
      const Tensor u = dichotomy_transform(phi_q, phi_g);
      Tensor grad_u;
      out.hinge = model.dichotomizer().hinge_loss(u, pairs->y, Mode::kTrain,
                                                  rng, &grad_u,
                                                  cfg.lambda_hinge);
      dichotomy_backward(phi_q, phi_g, grad_u, grad_q, grad_g);
    }
    scatter_add_rows(grad_phi, pairs->q, grad_q);
    scatter_add_rows(grad_phi, pairs->g, grad_g);
  }

  Tensor grad_psi = model.adapter().backward(grad_phi);
  if (!aux_on_phi)
    for (std::size_t i = 0; i < grad_psi.numel(); ++i)
      grad_psi(i) += grad_aux(i);
  model.backbone().backward(grad_psi);

  out.total = cfg.lambda_ce * out.ce + cfg.lambda_tri * out.tri +
              cfg.lambda_hinge * out.hinge;
  return out;
}

// Value-only evaluation of the same objective (no gradients, no state
// mutation beyond layer caches); used by the gradient suite.
inline double joint_loss_value(Model& model, const Tensor& x,
                               const std::vector<int>& labels,
                               const PairBatch* pairs) {
  const TrainConfig& cfg = model.config();
  const TrainMode mode = cfg.mode_enum();
  const Tensor psi = model.backbone().forward(x);
  const Tensor phi = model.adapter().forward(psi);
  const bool aux_on_phi = cfg.attach_enum() == AuxAttach::kPhi;
  const Tensor& aux = aux_on_phi ? phi : psi;
  double total = cfg.lambda_ce * model.head().loss(aux, labels) +
                 cfg.lambda_tri *
                     triplet_loss_batch_hard(aux, labels, cfg.triplet_margin);
  if (mode != TrainMode::kEuclidBaseline) {
    const Tensor phi_q = gather_rows(phi, pairs->q);
    const Tensor phi_g = gather_rows(phi, pairs->g);
    if (mode == TrainMode::kMahalanobisBaseline) {
      total += cfg.lambda_hinge *
               model.mahalanobis().pair_loss(phi_q, phi_g, pairs->y);
    } else {
      const Tensor u = dichotomy_transform(phi_q, phi_g);
      total += cfg.lambda_hinge *
               model.dichotomizer().hinge_loss(u, pairs->y, Mode::kEval);
    }
  }
  return total;
}

// One Algorithm-1 step on a PK batch: embeddings, adapted embeddings,
// balanced pairs, dichotomy transform, Eq. 7 joint loss, one SGD step.
inline LossBreakdown train_step(Model& model, const Dataset& data,
                                const std::vector<std::vector<std::size_t>>&
                                    by_class,
                                SeededRng& rng) {
  const TrainConfig& cfg = model.config();
  const TrainMode mode = cfg.mode_enum();

  const std::vector<std::size_t> idx =
      make_batch_pk(by_class, cfg.batch_p, cfg.batch_k, rng);
  const Tensor x = gather_rows(data.features, idx);
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[idx[i]];

  std::optional<PairBatch> pairs;
  if (mode != TrainMode::kEuclidBaseline)
    pairs = sample_balanced_pairs(labels, cfg.pairs_per_batch, rng);

  const LossBreakdown out =
      compute_joint_loss(model, x, labels, pairs ? &*pairs : nullptr, &rng);

  for (ParamSlot* p : model.trainable_params())
    sgd_momentum_step(*p, cfg.lr, cfg.momentum, cfg.weight_decay);
  if (mode == TrainMode::kEnd2End || mode == TrainMode::kFrozenBackbone)
    model.dichotomizer().maybe_project();

  if (!std::isfinite(out.total))
    throw NumericError("train_step: non-finite loss");
  return out;
}

struct LossRow {
  std::size_t epoch = 0;
  LossBreakdown mean;
};

// ---------------------------------------------------------------------------
// Checkpoint: versioned binary snapshot of config + every tensor + rng state.
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_json;
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;

  TrainConfig config() const {
    return train_config_from_json(nlohmann::json::parse(config_json));
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline Checkpoint snapshot_model(Model& model, std::uint64_t epoch,
                                 const std::string& rng_state) {
  Checkpoint ck;
  ck.config_json = to_json(model.config()).dump();
  ck.epoch = epoch;
  ck.rng_state = rng_state;
  for (auto& [name, slot] : model.named_params())
    ck.tensors.emplace_back(name, slot->value);
  for (auto& [name, buf] : model.named_buffers())
    ck.tensors.emplace_back(name, *buf);
  return ck;
}

// Loads checkpoint tensors into the model by name; every model tensor must
// be matched, shape-checked.
inline void load_into_model(const Checkpoint& ck, Model& model) {
  auto restore = [&ck](const std::string& name, Tensor& dst) {
    const Tensor* src = ck.find(name);
    if (src == nullptr)
      throw DataError("checkpoint: missing tensor " + name);
    if (!src->same_shape(dst))
      throw DataError("checkpoint: shape mismatch for " + name + ": " +
                      src->shape_str() + " vs " + dst.shape_str());
    dst = *src;
  };
  for (auto& [name, slot] : model.named_params()) restore(name, slot->value);
  for (auto& [name, buf] : model.named_buffers()) restore(name, *buf);
  // a restored dichotomizer is already scale-calibrated
  model.dichotomizer().set_calibrated(true);
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRow> log;
  bool aborted = false;
  std::string abort_reason;
};

// Algorithm-1 training loop. Deterministic given (dataset, config): model
// init draws from seed, the batch/pair stream draws from seed+1. On a
// non-finite loss the last end-of-epoch checkpoint is returned with
// aborted=true.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         const Checkpoint* init_from = nullptr) {
  cfg.validate();
  Model model(cfg, data.num_classes());
  if (init_from != nullptr) load_into_model(*init_from, model);

  SeededRng rng(cfg.seed + 1);
  const auto by_class = data.indices_by_class();
  const std::size_t steps =
      std::max<std::size_t>(1, data.size() / (cfg.batch_p * cfg.batch_k));

  TrainResult res;
  res.checkpoint = snapshot_model(model, 0, rng.state());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossBreakdown sum;
    for (std::size_t s = 0; s < steps; ++s) {
      LossBreakdown lb;
      try {
        lb = train_step(model, data, by_class, rng);
      } catch (const NumericError& e) {
        res.aborted = true;
        res.abort_reason = e.what();
        return res;
      }
      sum.ce += lb.ce;
      sum.tri += lb.tri;
      sum.hinge += lb.hinge;
      sum.total += lb.total;
    }
    LossRow row;
    row.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(steps);
    row.mean = {sum.ce * inv, sum.tri * inv, sum.hinge * inv, sum.total * inv};
    res.log.push_back(row);
    res.checkpoint = snapshot_model(model, epoch, rng.state());
  }
  return res;
}

// Rebuilds the trained model a checkpoint describes; the class count comes
// from the stored CE head shape.
inline std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck) {
  const Tensor* head_w = ck.find("head.weight");
  if (head_w == nullptr || head_w->ndim() != 2)
    throw DataError("checkpoint: missing or malformed head.weight");
  auto model = std::make_unique<Model>(ck.config(), head_w->rows());
  load_into_model(ck, *model);
  return model;
}

}  // namespace dsml
