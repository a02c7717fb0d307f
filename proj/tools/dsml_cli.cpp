// Command-line front end: train / eval / ablate / pairs / gradcheck / project.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dsml/checkpoint_io.hpp"
#include "dsml/config.hpp"
#include "dsml/dataio.hpp"
#include "dsml/dataset.hpp"
#include "dsml/evaluator.hpp"
#include "dsml/gradsuite.hpp"
#include "dsml/pairspace.hpp"
#include "dsml/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw dsml::DataError("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw dsml::DataError("config parse error in " + path + ": " + e.what());
  }
  return j;
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw dsml::DataError("cannot create out dir " + dir + ": " +
                                ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

struct ResolvedRun {
  dsml::TrainConfig train;
  dsml::DatasetSpec data;
};

// The manifest next to a checkpoint records the dataset that produced it.
json manifest_dataset_near(const std::string& ckpt_path) {
  const fs::path manifest = fs::path(ckpt_path).parent_path() / "manifest.json";
  std::ifstream f(manifest);
  if (!f) return json::object();
  try {
    json m;
    f >> m;
    if (m.contains("dataset")) return m.at("dataset");
  } catch (const json::exception&) {
  }
  return json::object();
}

ResolvedRun resolve_run(const CommonOpts& opts, const json& overrides) {
  json j = load_config_file(opts.config_path);
  for (auto& [k, v] : overrides.items()) j[k] = v;
  ResolvedRun run;
  run.train = dsml::train_config_from_json(j);
  run.data = dsml::dataset_spec_from_json(j);
  if (opts.seed) {
    run.train.seed = *opts.seed;
    run.data.synthetic.seed = *opts.seed;
  }
  return run;
}

// Dataset + open-set split as the trainer sees them. The split seed is the
// run seed so both pipelines of a comparison see identical subsets.
dsml::SplitDataset load_split(const ResolvedRun& run) {
  dsml::Dataset full = dsml::load_dataset(run.data);
  return dsml::split_by_class(full, run.data.holdout_fraction,
                              run.train.seed);
}

int cmd_train(const CommonOpts& opts, const json& overrides,
              const std::string& init_from) {
  ResolvedRun run = resolve_run(opts, overrides);
  ensure_out_dir(opts.out_dir);
  dsml::SplitDataset split = load_split(run);

  std::optional<dsml::Checkpoint> init;
  if (!init_from.empty()) init = dsml::load_checkpoint(init_from);

  dsml::TrainResult res =
      dsml::train(split.train, run.train, init ? &*init : nullptr);

  const std::string ckpt_path = join(opts.out_dir, "checkpoint.dsmm");
  const std::string log_path = join(opts.out_dir, "loss_log.csv");
  const std::string manifest_path = join(opts.out_dir, "manifest.json");
  dsml::save_checkpoint(res.checkpoint, ckpt_path);
  dsml::write_loss_log_csv(res.log, log_path);
  dsml::write_json(dsml::make_manifest(run.train, run.data,
                                       {ckpt_path, log_path},
                                       run.train.seed),
                   manifest_path);
  if (res.aborted) {
    std::cerr << "training aborted: " << res.abort_reason
              << " (last good checkpoint written)\n";
    return 3;
  }
  std::cout << "trained " << dsml::to_string(run.train.mode_enum()) << " for "
            << run.train.epochs << " epochs; checkpoint: " << ckpt_path
            << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const json& overrides,
             const std::string& ckpt_path, const std::string& scorer_name,
             const std::vector<std::size_t>& ks) {
  dsml::Checkpoint ck = dsml::load_checkpoint(ckpt_path);
  auto model = dsml::model_from_checkpoint(ck);

  // dataset comes from the checkpoint's manifest unless overridden
  json stored = json::parse(ck.config_json);
  for (auto& [k, v] : manifest_dataset_near(ckpt_path).items()) stored[k] = v;
  json j = load_config_file(opts.config_path);
  for (auto& [k, v] : j.items()) stored[k] = v;
  for (auto& [k, v] : overrides.items()) stored[k] = v;
  ResolvedRun run;
  run.train = dsml::train_config_from_json(stored);
  run.data = dsml::dataset_spec_from_json(stored);
  if (opts.seed) {
    run.train.seed = *opts.seed;
    run.data.synthetic.seed = *opts.seed;
  }
  dsml::SplitDataset split = load_split(run);

  const dsml::Scorer scorer = dsml::scorer_from_string(scorer_name);
  dsml::RetrievalResult r = dsml::recall_at_k(*model, split.test, ks, scorer);

  ensure_out_dir(opts.out_dir);
  const std::string json_path = join(opts.out_dir, "retrieval.json");
  const std::string csv_path = join(opts.out_dir, "retrieval.csv");
  dsml::write_json(dsml::retrieval_to_json(r, run.train.seed), json_path);
  dsml::write_retrieval_csv(r, csv_path);
  dsml::write_json(dsml::make_manifest(run.train, run.data,
                                       {json_path, csv_path}, run.train.seed),
                   join(opts.out_dir, "manifest.json"));
  std::cout << dsml::retrieval_to_json(r, run.train.seed).dump(2) << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const json& overrides,
               const std::vector<double>& fractions,
               const std::vector<std::uint64_t>& seeds) {
  ResolvedRun run = resolve_run(opts, overrides);
  ensure_out_dir(opts.out_dir);

  dsml::TrainConfig dissim_cfg = run.train;
  dissim_cfg.mode = dsml::TrainMode::kEnd2End;
  dsml::TrainConfig euclid_cfg = run.train;
  euclid_cfg.mode = dsml::TrainMode::kEuclidBaseline;

  std::vector<std::string> warnings;
  dsml::AblationResult ab = dsml::ablate_datasize(
      run.data, dissim_cfg, euclid_cfg, fractions, seeds, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

  const std::string rows_path = join(opts.out_dir, "ablation.csv");
  const std::string cells_path = join(opts.out_dir, "ablation_cells.csv");
  dsml::write_ablation_csv(ab, rows_path);
  dsml::write_ablation_cells_csv(ab, cells_path);
  dsml::write_json(dsml::make_manifest(dissim_cfg, run.data,
                                       {rows_path, cells_path},
                                       run.train.seed),
                   join(opts.out_dir, "manifest.json"));
  for (const dsml::AblationRow& r : ab.rows)
    std::printf("fraction %.2f: dissim %.4f  euclid %.4f  delta %+.4f\n",
                r.fraction, r.dissim_median, r.euclid_median, r.delta_median);
  return 0;
}

int cmd_pairs(std::uint64_t classes, std::uint64_t refs) {
  const dsml::PairCount c = dsml::count_pairs(classes, refs);
  std::cout << json{{"total", c.total},
                    {"positives", c.positives},
                    {"negatives", c.negatives}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials) {
  const auto reports = dsml::run_gradient_suite(seed, trials);
  bool all_pass = true;
  for (const dsml::OpGradReport& r : reports) {
    std::printf("%-24s max_rel_error %.3e  tol %.0e  %s\n", r.op.c_str(),
                r.max_rel_error, r.tolerance, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 3;
}

// Figure-1-style exports: (a) embeddings, (b) dissimilarity vectors of the
// given checkpoint, (c) dissimilarity vectors of an end-to-end checkpoint.
int cmd_project(const CommonOpts& opts, const json& overrides,
                const std::string& ckpt_path,
                const std::string& end2end_ckpt_path,
                std::size_t max_pairs) {
  dsml::Checkpoint ck = dsml::load_checkpoint(ckpt_path);
  auto model = dsml::model_from_checkpoint(ck);

  json stored = json::parse(ck.config_json);
  for (auto& [k, v] : manifest_dataset_near(ckpt_path).items()) stored[k] = v;
  json file_cfg = load_config_file(opts.config_path);
  for (auto& [k, v] : file_cfg.items()) stored[k] = v;
  for (auto& [k, v] : overrides.items()) stored[k] = v;
  ResolvedRun run;
  run.train = dsml::train_config_from_json(stored);
  run.data = dsml::dataset_spec_from_json(stored);
  if (opts.seed) {
    run.train.seed = *opts.seed;
    run.data.synthetic.seed = *opts.seed;
  }
  dsml::SplitDataset split = load_split(run);
  const dsml::Dataset& test = split.test;

  ensure_out_dir(opts.out_dir);
  std::vector<std::string> artifacts;

  auto project_embeddings = [&](dsml::Model& m, const std::string& path) {
    const dsml::Tensor phi = m.phi(test.features);
    dsml::ProjectionExport p = dsml::pca_project_2d(phi);
    for (std::size_t i = 0; i < test.size(); ++i) {
      p.kinds.push_back("embedding");
      p.labels.push_back(test.label_names[test.labels[i]]);
    }
    dsml::write_projection_csv(p, path);
    artifacts.push_back(path);
  };

  auto project_dissim = [&](dsml::Model& m, const std::string& path) {
    const dsml::Tensor phi = m.phi(test.features);
    dsml::SeededRng rng(run.train.seed + 17);
    dsml::PairBatch pairs = dsml::sample_balanced_pairs(
        test.labels, std::min<std::size_t>(max_pairs, 2000) & ~1ULL, rng);
    const dsml::Tensor u = dsml::dichotomy_transform(
        dsml::gather_rows(phi, pairs.q), dsml::gather_rows(phi, pairs.g));
    dsml::ProjectionExport p = dsml::pca_project_2d(u);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      p.kinds.push_back(pairs.y[i] > 0 ? "within" : "between");
      p.labels.push_back(pairs.y[i] > 0 ? "u_plus" : "u_minus");
    }
    dsml::write_projection_csv(p, path);
    artifacts.push_back(path);
  };

  project_embeddings(*model, join(opts.out_dir, "projection_embeddings.csv"));
  project_dissim(*model, join(opts.out_dir, "projection_dissim.csv"));
  if (!end2end_ckpt_path.empty()) {
    dsml::Checkpoint ck2 = dsml::load_checkpoint(end2end_ckpt_path);
    auto model2 = dsml::model_from_checkpoint(ck2);
    project_dissim(*model2,
                   join(opts.out_dir, "projection_dissim_end2end.csv"));
  }
  dsml::write_json(dsml::make_manifest(run.train, run.data, artifacts,
                                       run.train.seed),
                   join(opts.out_dir, "manifest.json"));
  std::cout << "wrote " << artifacts.size() << " projection file(s) to "
            << opts.out_dir << "\n";
  return 0;
}

// Flag overrides shared by train/eval/ablate/project.
void add_override_flags(CLI::App* cmd, std::shared_ptr<json> overrides) {
  auto add_num = [cmd, overrides](const std::string& name) {
    cmd->add_option_function<double>(
        "--" + name,
        [overrides, name](double v) { (*overrides)[name] = v; });
  };
  auto add_int = [cmd, overrides](const std::string& name) {
    cmd->add_option_function<std::uint64_t>(
        "--" + name,
        [overrides, name](std::uint64_t v) { (*overrides)[name] = v; });
  };
  auto add_str = [cmd, overrides](const std::string& name) {
    cmd->add_option_function<std::string>(
        "--" + name,
        [overrides, name](const std::string& v) { (*overrides)[name] = v; });
  };
  add_str("mode");
  add_int("epochs");
  add_num("lr");
  add_num("momentum");
  add_num("weight_decay");
  add_int("batch_p");
  add_int("batch_k");
  add_int("pairs_per_batch");
  add_num("triplet_margin");
  add_num("hinge_c");
  add_str("norm_regime");
  add_num("fixed_norm_tau");
  add_num("lambda_ce");
  add_num("lambda_tri");
  add_num("lambda_hinge");
  add_int("input_dim");
  add_int("embed_dim");
  add_int("adapt_dim");
  add_str("attach_aux");
  add_num("dropout_u");
  add_str("source");
  add_str("csv_path");
  add_str("label_column");
  add_int("synthetic_classes");
  add_int("synthetic_per_class");
  add_int("synthetic_dim");
  add_num("synthetic_within_std");
  add_num("synthetic_between_sep");
  add_int("synthetic_seed");
  add_num("holdout_fraction");
  cmd->add_option_function<bool>(
      "--bn_on_u", [overrides](bool v) { (*overrides)["bn_on_u"] = v; });
  cmd->add_option_function<bool>(
      "--calibrate_margins",
      [overrides](bool v) { (*overrides)["calibrate_margins"] = v; });
  // comma-separated list; "none" (or empty) selects a single linear layer
  cmd->add_option_function<std::string>(
      "--hidden_dims", [overrides](const std::string& v) {
        std::vector<std::uint64_t> dims;
        if (v != "none" && !v.empty()) {
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ','))
            dims.push_back(std::stoull(item));
        }
        (*overrides)["hidden_dims"] = dims;
      });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metric learning in the dissimilarity space"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto overrides = std::make_shared<json>(json::object());

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--out-dir", opts.out_dir, "output directory");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&opts](std::uint64_t s) { opts.seed = s; },
        "run seed (overrides config)");
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string init_from;
  add_common(train_cmd);
  add_override_flags(train_cmd, overrides);
  train_cmd->add_option("--init-from", init_from,
                        "checkpoint to initialize parameters from");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "open-set retrieval evaluation");
  std::string ckpt_path, scorer_name = "dissim_svm";
  std::vector<std::size_t> ks = {1, 2, 4, 8};
  add_common(eval_cmd);
  add_override_flags(eval_cmd, overrides);
  eval_cmd->add_option("--checkpoint", ckpt_path, "trained checkpoint")
      ->required();
  eval_cmd->add_option("--scorer", scorer_name,
                       "euclid | dissim_svm | mahalanobis");
  eval_cmd->add_option("--ks", ks, "recall cutoffs")->delimiter(',');

  // ablate
  auto* ablate_cmd =
      app.add_subcommand("ablate", "data-size ablation (dissim vs euclid)");
  std::vector<double> fractions = {1.0, 0.5, 0.25};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  add_common(ablate_cmd);
  add_override_flags(ablate_cmd, overrides);
  ablate_cmd->add_option("--fractions", fractions, "training-data fractions")
      ->delimiter(',');
  ablate_cmd->add_option("--seeds", seeds, "run seeds")->delimiter(',');

  // pairs
  auto* pairs_cmd =
      app.add_subcommand("pairs", "pair-count combinatorics as JSON");
  std::uint64_t classes = 0, refs = 0;
  pairs_cmd->add_option("--classes", classes, "number of classes K")
      ->required();
  pairs_cmd->add_option("--refs", refs, "references per class R")->required();

  // gradcheck
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t grad_seed = 42;
  std::size_t grad_trials = 20;
  grad_cmd->add_option("--seed", grad_seed, "suite seed");
  grad_cmd->add_option("--trials", grad_trials, "trials per op");

  // project
  auto* project_cmd = app.add_subcommand(
      "project", "Figure-1-style 2-d PCA exports of embeddings and "
                 "dissimilarity vectors");
  std::string project_ckpt, project_e2e_ckpt;
  std::size_t max_pairs = 2000;
  add_common(project_cmd);
  add_override_flags(project_cmd, overrides);
  project_cmd->add_option("--checkpoint", project_ckpt, "baseline checkpoint")
      ->required();
  project_cmd->add_option("--end2end-checkpoint", project_e2e_ckpt,
                          "end-to-end checkpoint for the third export");
  project_cmd->add_option("--max-pairs", max_pairs,
                          "pair sample size for the dissimilarity exports");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(opts, *overrides, init_from);
    if (eval_cmd->parsed())
      return cmd_eval(opts, *overrides, ckpt_path, scorer_name, ks);
    if (ablate_cmd->parsed())
      return cmd_ablate(opts, *overrides, fractions, seeds);
    if (pairs_cmd->parsed()) return cmd_pairs(classes, refs);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_seed, grad_trials);
    if (project_cmd->parsed())
      return cmd_project(opts, *overrides, project_ckpt, project_e2e_ckpt,
                         max_pairs);
  } catch (const dsml::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const dsml::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
