// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//
// The directional experiments (C5-C8) run on the calibrated synthetic
// dataset: 30 classes x 20 samples, dim 32, between-class separation 4,
// within-class std 1, split 20 train / 10 held-out test classes, five seeds,
// identical backbone/budget/seed for every compared pipeline.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>

#include "dsml/checkpoint_io.hpp"
#include "dsml/common.hpp"
#include "dsml/dataset.hpp"
#include "dsml/dichotomizer.hpp"
#include "dsml/evaluator.hpp"
#include "dsml/gradsuite.hpp"
#include "dsml/pairspace.hpp"
#include "dsml/trainer.hpp"

using namespace dsml;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void acceptance_line(const char* id, const char* what, bool pass) {
  std::printf("[ACCEPT] %s %s: %s\n", id, what, pass ? "PASS" : "FAIL");
  std::fflush(stdout);
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

// The calibrated desk-scale experiment configuration shared by C5-C8:
// single-linear-layer backbone, margin-calibrated dichotomizer, hinge weight
// 1/pairs_per_batch, budget at the joint method's convergence.
TrainConfig experiment_config(TrainMode mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 120;
  cfg.lr = 0.01;
  cfg.momentum = 0.9;
  cfg.batch_p = 8;
  cfg.batch_k = 4;
  cfg.pairs_per_batch = 64;
  cfg.triplet_margin = 0.2;
  cfg.hinge_c = 1.0;
  cfg.lambda_hinge = 1.0 / 64.0;
  cfg.input_dim = 32;
  cfg.hidden_dims = {};
  cfg.embed_dim = 32;
  cfg.adapt_dim = 32;
  cfg.seed = seed;
  return cfg;
}

DatasetSpec experiment_data(std::uint64_t seed) {
  DatasetSpec ds;
  ds.synthetic.num_classes = 30;
  ds.synthetic.per_class = 20;
  ds.synthetic.dim = 32;
  ds.synthetic.between_sep = 4.0;
  ds.synthetic.within_std = 1.0;
  ds.synthetic.seed = seed;
  ds.holdout_fraction = 1.0 / 3.0;
  return ds;
}

SplitDataset experiment_split(std::uint64_t seed) {
  const DatasetSpec spec = experiment_data(seed);
  return split_by_class(generate_synthetic(spec.synthetic),
                        spec.holdout_fraction, seed);
}

// Length of the refinement stage that trains adapter + classifier heads on
// top of an already-trained, frozen backbone.
constexpr std::size_t kFrozenStageEpochs = 20;

double run_r1(const Dataset& train_set, const Dataset& test_set,
              TrainMode mode, std::uint64_t seed, Scorer scorer,
              const Checkpoint* init_from = nullptr) {
  TrainConfig cfg = experiment_config(mode, seed);
  if (mode == TrainMode::kFrozenBackbone) cfg.epochs = kFrozenStageEpochs;
  const TrainResult res = train(train_set, cfg, init_from);
  EXPECT_FALSE(res.aborted) << res.abort_reason;
  auto model = model_from_checkpoint(res.checkpoint);
  return recall_at_k(*model, test_set, {1}, scorer).recall_at.at(1);
}

}  // namespace

TEST(Acceptance, C01_PairCombinatorics) {
  const auto t0 = Clock::now();
  bool pass = true;
  for (std::uint64_t K = 1; K <= 20; ++K)
    for (std::uint64_t R = 1; R <= 20; ++R) {
      const PairCount c = count_pairs(K, R);
      if (c.positives + c.negatives != c.total) pass = false;
      if (c.total != (K * R) * (K * R - 1) / 2) pass = false;
    }
  for (std::uint64_t K = 1; K <= 6; ++K)
    for (std::uint64_t R = 1; R <= 6; ++R) {
      if (K * R < 2) continue;
      std::vector<int> labels;
      for (std::uint64_t k = 0; k < K; ++k)
        for (std::uint64_t r = 0; r < R; ++r)
          labels.push_back(static_cast<int>(k));
      const PairBatch all = enumerate_all_pairs(labels);
      std::uint64_t pos = 0;
      for (int y : all.y)
        if (y > 0) ++pos;
      const PairCount c = count_pairs(K, R);
      if (c.total != all.size() || c.positives != pos ||
          c.negatives != all.size() - pos)
        pass = false;
    }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 1.0;
  acceptance_line("C1", "pair combinatorics identity", pass);
  EXPECT_TRUE(pass) << "elapsed " << elapsed << " s";
}

TEST(Acceptance, C02_GradientSuite) {
  const auto t0 = Clock::now();
  const auto reports = run_gradient_suite(42, 20);
  bool pass = true;
  for (const OpGradReport& r : reports) {
    std::printf("         %-24s max_rel_error %.3e (tol %.0e)\n",
                r.op.c_str(), r.max_rel_error, r.tolerance);
    pass = pass && r.pass;
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 120.0;
  acceptance_line("C2", "gradient suite", pass);
  EXPECT_TRUE(pass) << "elapsed " << elapsed << " s";
}

TEST(Acceptance, C03_ExactIdentities) {
  bool pass = true;
  SeededRng rng(7);

  // diagonal-vs-full Mahalanobis identity at 1e-12
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 8;
    Tensor x({n}), y({n}), w({n});
    for (std::size_t i = 0; i < n; ++i) {
      x(i) = rng.uniform(-3, 3);
      y(i) = rng.uniform(-3, 3);
      w(i) = rng.uniform(0, 4);
    }
    MahalanobisMetric maha(n);
    maha.l_mat().value.fill(0.0);
    for (std::size_t i = 0; i < n; ++i)
      maha.l_mat().value(i, i) = std::sqrt(w(i));
    if (std::abs(diag_mahalanobis_distance(x, y, w) - maha.distance2(x, y)) >
        1e-12)
      pass = false;
  }

  // hinge closed forms, exact
  {
    DichotomizerConfig dc;
    dc.calibrate_margins = false;
    Dichotomizer dich(4, dc);
    dich.weight().value.fill(0.0);
    dich.bias().value(0) = 0.0;
    Tensor u({5, 4});
    for (double& v : u.flat()) v = rng.uniform(0, 1);
    if (dich.hinge_loss(u, {1, -1, 1, -1, 1}, Mode::kEval) != 5.0)
      pass = false;  // C * N * 1 with C = 1

    Dichotomizer sat(2, dc);
    sat.weight().value = Tensor::vec({-2.0, -1.0});
    sat.bias().value(0) = 4.0;
    Tensor u2({2, 2});
    u2(1, 0) = 4.0;
    u2(1, 1) = 4.0;  // negative pair far out: s = 4 - 12 = -8
    if (sat.hinge_loss(u2, {1, -1}, Mode::kEval) != 0.5 * (4.0 + 1.0))
      pass = false;  // exactly 1/2 ||W_c||^2
  }

  // Eq. 7 additivity at 1e-12 under non-trivial lambda weights
  {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.per_class = 4;
    spec.dim = 8;
    spec.seed = 3;
    const Dataset ds = generate_synthetic(spec);
    TrainConfig cfg;
    cfg.input_dim = 8;
    cfg.hidden_dims = {10};
    cfg.embed_dim = 6;
    cfg.adapt_dim = 6;
    cfg.batch_p = 3;
    cfg.batch_k = 2;
    cfg.pairs_per_batch = 8;
    cfg.lambda_ce = 0.37;
    cfg.lambda_tri = 1.91;
    cfg.lambda_hinge = 0.013;
    cfg.seed = 3;
    Model model(cfg, ds.num_classes());
    SeededRng step_rng(4);
    for (int step = 0; step < 5; ++step) {
      const LossBreakdown lb =
          train_step(model, ds, ds.indices_by_class(), step_rng);
      if (std::abs(lb.total - (0.37 * lb.ce + 1.91 * lb.tri +
                               0.013 * lb.hinge)) > 1e-12)
        pass = false;
    }
  }

  acceptance_line("C3", "exact identities", pass);
  EXPECT_TRUE(pass);
}

TEST(Acceptance, C04_DichotomyPropertySuite) {
  SeededRng rng(11);
  bool pass = true;
  for (int trial = 0; trial < 10000; ++trial) {
    Tensor a({1, 6}), b({1, 6}), c({1, 6});
    for (double& v : a.flat()) v = rng.uniform(-4, 4);
    for (double& v : b.flat()) v = rng.uniform(-4, 4);
    for (double& v : c.flat()) v = rng.uniform(-4, 4);
    const Tensor uab = dichotomy_transform(a, b);
    const Tensor uba = dichotomy_transform(b, a);
    const Tensor uac = dichotomy_transform(a, c);
    const Tensor ubc = dichotomy_transform(b, c);
    if (!bit_equal(uab, uba)) pass = false;
    bool all_zero = true;
    for (std::size_t i = 0; i < 6; ++i) {
      if (uab(i) < 0.0) pass = false;
      if (uab(i) != 0.0) all_zero = false;
      if (uac(i) > uab(i) + ubc(i) + 1e-15) pass = false;
    }
    if (all_zero != bit_equal(a, b)) pass = false;
  }
  // identity of indiscernibles, equal branch
  Tensor same({1, 6});
  for (double& v : same.flat()) v = rng.uniform(-4, 4);
  const Tensor u0 = dichotomy_transform(same, same);
  for (std::size_t i = 0; i < 6; ++i)
    if (u0(i) != 0.0) pass = false;

  acceptance_line("C4", "dichotomy property suite", pass);
  EXPECT_TRUE(pass);
}

TEST(Acceptance, C05_EndToEndDirectional) {
  const auto t0 = Clock::now();
  std::vector<double> dissim, euclid;
  for (std::uint64_t seed : kSeeds) {
    const SplitDataset split = experiment_split(seed);
    const double r1d = run_r1(split.train, split.test, TrainMode::kEnd2End,
                              seed, Scorer::kDissimSvm);
    const double r1e = run_r1(split.train, split.test,
                              TrainMode::kEuclidBaseline, seed,
                              Scorer::kEuclid);
    dissim.push_back(r1d);
    euclid.push_back(r1e);
    std::printf("         seed %llu: dissim %.4f  euclid %.4f\n",
                static_cast<unsigned long long>(seed), r1d, r1e);
  }
  const double md = median(dissim), me = median(euclid);
  const double elapsed = seconds_since(t0);
  std::printf("         medians: dissim %.4f  euclid %.4f  (%.0f s)\n", md,
              me, elapsed);
  const bool pass = md >= me && elapsed < 600.0;
  acceptance_line("C5", "end-to-end directional claim", pass);
  EXPECT_TRUE(pass);
}

TEST(Acceptance, C06_FrozenBackboneDirectional) {
  std::vector<double> dissim_frozen, euclid_base;
  for (std::uint64_t seed : kSeeds) {
    const SplitDataset split = experiment_split(seed);
    const TrainConfig base_cfg =
        experiment_config(TrainMode::kEuclidBaseline, seed);
    const TrainResult base = train(split.train, base_cfg);
    ASSERT_FALSE(base.aborted);
    auto base_model = model_from_checkpoint(base.checkpoint);
    const double r1e =
        recall_at_k(*base_model, split.test, {1}, Scorer::kEuclid)
            .recall_at.at(1);

    const double r1d =
        run_r1(split.train, split.test, TrainMode::kFrozenBackbone, seed,
               Scorer::kDissimSvm, &base.checkpoint);
    dissim_frozen.push_back(r1d);
    euclid_base.push_back(r1e);
    std::printf("         seed %llu: frozen-dissim %.4f  euclid %.4f\n",
                static_cast<unsigned long long>(seed), r1d, r1e);
  }
  const double md = median(dissim_frozen), me = median(euclid_base);
  std::printf("         medians: frozen-dissim %.4f  euclid %.4f\n", md, me);
  const bool pass = md >= me;
  acceptance_line("C6", "frozen-backbone directional claim", pass);
  EXPECT_TRUE(pass);
}

TEST(Acceptance, C07_DataSizeDirectional) {
  const auto t0 = Clock::now();
  const DatasetSpec data = experiment_data(1);
  const TrainConfig dissim_cfg = experiment_config(TrainMode::kEnd2End, 1);
  const TrainConfig euclid_cfg =
      experiment_config(TrainMode::kEuclidBaseline, 1);
  const AblationResult ab = ablate_datasize(
      data, dissim_cfg, euclid_cfg, {1.0, 0.5, 0.25},
      {kSeeds[0], kSeeds[1], kSeeds[2], kSeeds[3], kSeeds[4]});
  bool pass = true;
  for (const AblationRow& row : ab.rows) {
    std::printf(
        "         fraction %.2f: dissim %.4f  euclid %.4f  delta %+.4f\n",
        row.fraction, row.dissim_median, row.euclid_median, row.delta_median);
    if (!(row.delta_median > 0.0)) pass = false;
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 1200.0;
  acceptance_line("C7", "data-size directional claim", pass);
  EXPECT_TRUE(pass) << "elapsed " << elapsed << " s";
}

TEST(Acceptance, C08_MahalanobisAblationDirection) {
  std::vector<double> dissim, maha;
  for (std::uint64_t seed : kSeeds) {
    const SplitDataset split = experiment_split(seed);
    const double r1d = run_r1(split.train, split.test, TrainMode::kEnd2End,
                              seed, Scorer::kDissimSvm);
    const double r1m =
        run_r1(split.train, split.test, TrainMode::kMahalanobisBaseline, seed,
               Scorer::kMahalanobis);
    dissim.push_back(r1d);
    maha.push_back(r1m);
    std::printf("         seed %llu: dissim %.4f  mahalanobis %.4f\n",
                static_cast<unsigned long long>(seed), r1d, r1m);
  }
  const double md = median(dissim), mm = median(maha);
  std::printf("         medians: dissim %.4f  mahalanobis %.4f\n", md, mm);
  const bool pass = md >= mm;
  acceptance_line("C8", "mahalanobis ablation direction", pass);
  EXPECT_TRUE(pass);
}

TEST(Acceptance, C09_DeterminismAndPersistence) {
  bool pass = true;
  const SplitDataset split = experiment_split(3);
  TrainConfig cfg = experiment_config(TrainMode::kEnd2End, 3);
  cfg.epochs = 5;

  const TrainResult a = train(split.train, cfg);
  const TrainResult b = train(split.train, cfg);
  if (serialize_checkpoint(a.checkpoint) != serialize_checkpoint(b.checkpoint))
    pass = false;
  if (a.log.size() != b.log.size()) pass = false;
  for (std::size_t i = 0; i < a.log.size() && pass; ++i)
    if (a.log[i].mean.total != b.log[i].mean.total ||
        a.log[i].mean.ce != b.log[i].mean.ce ||
        a.log[i].mean.tri != b.log[i].mean.tri ||
        a.log[i].mean.hinge != b.log[i].mean.hinge)
      pass = false;

  // checkpoint round trip reproduces the retrieval result exactly
  auto direct = model_from_checkpoint(a.checkpoint);
  const RetrievalResult before =
      recall_at_k(*direct, split.test, {1, 2, 4, 8}, Scorer::kDissimSvm);
  const std::string path =
      (std::filesystem::temp_directory_path() / "dsml_accept_ckpt.dsmm")
          .string();
  save_checkpoint(a.checkpoint, path);
  const Checkpoint loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  auto reloaded = model_from_checkpoint(loaded);
  const RetrievalResult after =
      recall_at_k(*reloaded, split.test, {1, 2, 4, 8}, Scorer::kDissimSvm);
  if (before.recall_at != after.recall_at) pass = false;
  if (before.first_correct_rank != after.first_correct_rank) pass = false;

  acceptance_line("C9", "determinism and persistence", pass);
  EXPECT_TRUE(pass);
}

TEST(Acceptance, C10_EvaluatorOracleEquivalence) {
  // 12-point handcrafted set, all three scorers vs a brute-force oracle
  bool pass = true;
  Dataset ds;
  ds.features = Tensor({12, 2});
  const double xs[12] = {0.0, 0.4, 0.8, 1.2, 4.0, 4.3,
                         4.6, 4.9, 8.0, 8.2, 8.4, 8.6};
  SeededRng rng(17);
  for (int i = 0; i < 12; ++i) {
    ds.features(i, 0) = xs[i] + rng.uniform(-0.3, 0.3);
    ds.features(i, 1) = rng.uniform(-1, 1);
  }
  ds.labels = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
  ds.label_names = {"a", "b", "c"};

  TrainConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {};
  cfg.embed_dim = 2;
  cfg.adapt_dim = 2;
  Model model(cfg, 3);
  auto& layer = model.backbone().layers()[0];
  layer.weight().value = Tensor({2, 2}, {1, 0, 0, 1});
  layer.bias().value.fill(0.0);
  model.adapter().weight().value = Tensor({2, 2}, {1, 0, 0, 1});
  model.dichotomizer().weight().value = Tensor::vec({-1.0, -0.5});
  model.dichotomizer().bias().value(0) = 1.0;
  model.mahalanobis().l_mat().value = Tensor({2, 2}, {1.2, 0.3, 0.0, 0.8});

  const Tensor phi = model.phi(ds.features);
  auto rank_oracle = [&](Scorer scorer, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < 12; ++q) {
      std::vector<std::pair<double, std::size_t>> keyed;
      for (std::size_t g = 0; g < 12; ++g) {
        if (g == q) continue;
        double key = 0.0;
        if (scorer == Scorer::kEuclid) {
          for (std::size_t j = 0; j < 2; ++j) {
            const double c = phi(q, j) - phi(g, j);
            key += c * c;
          }
        } else if (scorer == Scorer::kDissimSvm) {
          double s = model.dichotomizer().bias().value(0);
          for (std::size_t j = 0; j < 2; ++j)
            s += model.dichotomizer().weight().value(j) *
                 std::abs(phi(q, j) - phi(g, j));
          key = -s;
        } else {
          Tensor xq({2}), xg({2});
          for (std::size_t j = 0; j < 2; ++j) {
            xq(j) = phi(q, j);
            xg(j) = phi(g, j);
          }
          key = model.mahalanobis().distance2(xq, xg);
        }
        keyed.emplace_back(key, g);
      }
      std::sort(keyed.begin(), keyed.end());
      for (std::size_t i = 0; i < std::min(k, keyed.size()); ++i)
        if (ds.labels[keyed[i].second] == ds.labels[q]) {
          ++hits;
          break;
        }
    }
    return static_cast<double>(hits) / 12.0;
  };

  for (Scorer scorer :
       {Scorer::kEuclid, Scorer::kDissimSvm, Scorer::kMahalanobis}) {
    const RetrievalResult r =
        recall_at_k(model, ds, {1, 2, 4}, scorer);
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{4}})
      if (r.recall_at.at(k) != rank_oracle(scorer, k)) pass = false;
    // monotone in K on a fuller cutoff sweep
    double prev = 0.0;
    const RetrievalResult sweep =
        recall_at_k(model, ds, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, scorer);
    for (const auto& [k, v] : sweep.recall_at) {
      if (v + 1e-15 < prev) pass = false;
      prev = v;
    }
  }
  acceptance_line("C10", "evaluator oracle equivalence", pass);
  EXPECT_TRUE(pass);
}
