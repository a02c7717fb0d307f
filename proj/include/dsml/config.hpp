#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsml/common.hpp"
#include "dsml/dichotomizer.hpp"

namespace dsml {

enum class TrainMode {
  kEnd2End,
  kFrozenBackbone,
  kEuclidBaseline,
  kMahalanobisBaseline,
};

enum class AuxAttach { kPhi, kPsi };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kEnd2End: return "end2end";
    case TrainMode::kFrozenBackbone: return "frozen_backbone";
    case TrainMode::kEuclidBaseline: return "euclid_baseline";
    case TrainMode::kMahalanobisBaseline: return "mahalanobis_baseline";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "end2end") return TrainMode::kEnd2End;
  if (s == "frozen_backbone") return TrainMode::kFrozenBackbone;
  if (s == "euclid_baseline") return TrainMode::kEuclidBaseline;
  if (s == "mahalanobis_baseline") return TrainMode::kMahalanobisBaseline;
  throw DataError("unknown mode: " + s);
}

inline std::string to_string(NormRegime r) {
  return r == NormRegime::kSoftL2 ? "soft_l2" : "fixed_norm";
}

inline NormRegime norm_regime_from_string(const std::string& s) {
  if (s == "soft_l2") return NormRegime::kSoftL2;
  if (s == "fixed_norm") return NormRegime::kFixedNorm;
  throw DataError("unknown norm_regime: " + s);
}

// Full run recipe. Flat keys, mirrored one-to-one in the JSON config file.
struct TrainConfig {
  TrainMode mode = TrainMode::kEnd2End;
  std::size_t epochs = 50;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_p = 8;   // classes per batch
  std::size_t batch_k = 4;   // samples per class
  std::size_t pairs_per_batch = 64;
  double triplet_margin = 0.2;
  double hinge_c = 1.0;
  std::string norm_regime = "soft_l2";
  double fixed_norm_tau = 1.0;
  double lambda_ce = 1.0;
  double lambda_tri = 1.0;
  double lambda_hinge = 1.0;
  std::uint64_t seed = 42;
  // architecture
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims = {64};
  std::size_t embed_dim = 32;
  std::size_t adapt_dim = 32;
  bool bn_on_u = false;
  double dropout_u = 0.0;
  bool calibrate_margins = true;
  std::string attach_aux = "phi";  // "phi" | "psi"

  void validate() const {
    if (batch_p < 2 || batch_k < 2)
      throw DataError("config: batch_p and batch_k must be >= 2");
    if (lr <= 0.0 || momentum < 0.0)
      throw DataError("config: lr must be > 0 and momentum >= 0");
    if (hinge_c <= 0.0) throw DataError("config: hinge_c must be > 0");
    if (pairs_per_batch == 0 || pairs_per_batch % 2 != 0)
      throw DataError("config: pairs_per_batch must be a positive even "
                      "number");
    if (attach_aux != "phi" && attach_aux != "psi")
      throw DataError("config: attach_aux must be 'phi' or 'psi'");
    norm_regime_from_string(norm_regime);
    if (dropout_u < 0.0 || dropout_u >= 1.0)
      throw DataError("config: dropout_u must be in [0, 1)");
    if (embed_dim < 2) throw DataError("config: embed_dim must be >= 2");
  }

  TrainMode mode_enum() const { return mode; }
  NormRegime regime_enum() const { return norm_regime_from_string(norm_regime); }
  AuxAttach attach_enum() const {
    return attach_aux == "psi" ? AuxAttach::kPsi : AuxAttach::kPhi;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"mode", to_string(c.mode)},
      {"epochs", c.epochs},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"batch_p", c.batch_p},
      {"batch_k", c.batch_k},
      {"pairs_per_batch", c.pairs_per_batch},
      {"triplet_margin", c.triplet_margin},
      {"hinge_c", c.hinge_c},
      {"norm_regime", c.norm_regime},
      {"fixed_norm_tau", c.fixed_norm_tau},
      {"lambda_ce", c.lambda_ce},
      {"lambda_tri", c.lambda_tri},
      {"lambda_hinge", c.lambda_hinge},
      {"seed", c.seed},
      {"input_dim", c.input_dim},
      {"hidden_dims", c.hidden_dims},
      {"embed_dim", c.embed_dim},
      {"adapt_dim", c.adapt_dim},
      {"bn_on_u", c.bn_on_u},
      {"dropout_u", c.dropout_u},
      {"calibrate_margins", c.calibrate_margins},
      {"attach_aux", c.attach_aux},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode"));
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("epochs", c.epochs);
    get("lr", c.lr);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("batch_p", c.batch_p);
    get("batch_k", c.batch_k);
    get("pairs_per_batch", c.pairs_per_batch);
    get("triplet_margin", c.triplet_margin);
    get("hinge_c", c.hinge_c);
    get("norm_regime", c.norm_regime);
    get("fixed_norm_tau", c.fixed_norm_tau);
    get("lambda_ce", c.lambda_ce);
    get("lambda_tri", c.lambda_tri);
    get("lambda_hinge", c.lambda_hinge);
    get("seed", c.seed);
    get("input_dim", c.input_dim);
    get("hidden_dims", c.hidden_dims);
    get("embed_dim", c.embed_dim);
    get("adapt_dim", c.adapt_dim);
    get("bn_on_u", c.bn_on_u);
    get("dropout_u", c.dropout_u);
    get("calibrate_margins", c.calibrate_margins);
    get("attach_aux", c.attach_aux);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// synthetic(K_classes, n_per_class, dim, within_std, between_sep, seed)
struct SyntheticSpec {
  std::size_t num_classes = 30;
  std::size_t per_class = 20;
  std::size_t dim = 32;
  double within_std = 1.0;
  double between_sep = 4.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_classes < 2) throw DataError("synthetic: num_classes must be >= 2");
    if (per_class < 2) throw DataError("synthetic: per_class must be >= 2");
    if (within_std <= 0.0) throw DataError("synthetic: within_std must be > 0");
    if (dim == 0) throw DataError("synthetic: dim must be >= 1");
  }
};

struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" | "csv"
  std::string csv_path;
  std::string label_column = "label";
  SyntheticSpec synthetic;
  double holdout_fraction = 1.0 / 3.0;  // open-set split, by class

  void validate() const {
    if (source != "synthetic" && source != "csv")
      throw DataError("dataset: source must be 'synthetic' or 'csv'");
    if (source == "csv" && csv_path.empty())
      throw DataError("dataset: csv source requires csv_path");
    if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0)
      throw DataError("dataset: holdout_fraction must be in (0, 1)");
    if (source == "synthetic") synthetic.validate();
  }
};

inline nlohmann::json to_json(const DatasetSpec& d) {
  return nlohmann::json{
      {"source", d.source},
      {"csv_path", d.csv_path},
      {"label_column", d.label_column},
      {"synthetic_classes", d.synthetic.num_classes},
      {"synthetic_per_class", d.synthetic.per_class},
      {"synthetic_dim", d.synthetic.dim},
      {"synthetic_within_std", d.synthetic.within_std},
      {"synthetic_between_sep", d.synthetic.between_sep},
      {"synthetic_seed", d.synthetic.seed},
      {"holdout_fraction", d.holdout_fraction},
  };
}

inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec d;
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("source", d.source);
    get("csv_path", d.csv_path);
    get("label_column", d.label_column);
    get("synthetic_classes", d.synthetic.num_classes);
    get("synthetic_per_class", d.synthetic.per_class);
    get("synthetic_dim", d.synthetic.dim);
    get("synthetic_within_std", d.synthetic.within_std);
    get("synthetic_between_sep", d.synthetic.between_sep);
    get("synthetic_seed", d.synthetic.seed);
    get("holdout_fraction", d.holdout_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset spec: ") + e.what());
  }
  d.validate();
  return d;
}

inline constexpr const char* kToolVersion = "dsml 1.0.0";

}  // namespace dsml
