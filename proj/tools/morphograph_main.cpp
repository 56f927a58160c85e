// morphograph: synthetic knee-joint severity pipeline
//
// Stages: gen-data -> build-graphs -> train-graph -> {train-vision,
// train-mmf, train-mmf-mim} -> eval / export-embeddings. Every stage writes
// its outputs plus a config.json echo under --out; identical config+seed
// reproduces identical bytes.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "morpho/config.hpp"
#include "morpho/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct FlagValues {
  std::string config, out, data_dir, graphs_dir, checkpoint, graph_checkpoint;
  std::string split = "test", which = "z_rep";
  std::uint64_t seed = 42;
  int steps = 1500, batch = 16, eval_every = 50, eval_batch = 64;
  int train_n = 600, val_n = 200, test_n = 200, num_classes = 3, distractors = 4;
  int n_per_bone = 32, k = 4;
  double lr = 1e-3, noise = 0.15, temperature = 0.07, lambda_ce = 0.8, lambda_info = 0.2;
  double tau0 = 0.0, growth = 1.5;
};

void add_common_flags(CLI::App* sub, FlagValues& fl) {
  sub->add_option("--config", fl.config, "JSON config file; flags override it")->capture_default_str();
  sub->add_option("--out", fl.out, "Output directory (default out/<command>)");
  sub->add_option("--seed", fl.seed, "Run seed; env MORPHOGRAPH_SEED is the lowest-priority source")
      ->capture_default_str();
  sub->add_option("--data-dir", fl.data_dir, "Dataset directory (default data)");
  sub->add_option("--graphs-dir", fl.graphs_dir, "Graph cache directory (default graphs)");
}

void add_data_flags(CLI::App* sub, FlagValues& fl) {
  sub->add_option("--train-samples", fl.train_n, "Training split size")->capture_default_str();
  sub->add_option("--val-samples", fl.val_n, "Validation split size")->capture_default_str();
  sub->add_option("--test-samples", fl.test_n, "Test split size")->capture_default_str();
  sub->add_option("--num-classes", fl.num_classes, "Severity grades C")->capture_default_str();
  sub->add_option("--noise-level", fl.noise, "Gaussian pixel noise sigma")->capture_default_str();
  sub->add_option("--distractors", fl.distractors, "Decoy masks per sample")->capture_default_str();
}

void add_graph_flags(CLI::App* sub, FlagValues& fl) {
  sub->add_option("--n-per-bone", fl.n_per_bone, "Contour samples per bone")->capture_default_str();
  sub->add_option("--k", fl.k, "Nearest neighbors per node")->capture_default_str();
  sub->add_option("--tau0", fl.tau0, "Initial edge radius in px; 0 = 1.5 x median NN distance")
      ->capture_default_str();
  sub->add_option("--growth", fl.growth, "Radius growth factor for connectivity")->capture_default_str();
}

void add_train_flags(CLI::App* sub, FlagValues& fl) {
  sub->add_option("--steps", fl.steps, "Optimizer steps (also the r(e) horizon E)")->capture_default_str();
  sub->add_option("--batch", fl.batch, "Batch size")->capture_default_str();
  sub->add_option("--lr", fl.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--eval-every", fl.eval_every, "Validation cadence in steps")->capture_default_str();
  sub->add_option("--eval-batch", fl.eval_batch, "Evaluation batch size")->capture_default_str();
}

void add_mim_flags(CLI::App* sub, FlagValues& fl) {
  sub->add_option("--temperature", fl.temperature, "InfoNCE temperature")->capture_default_str();
  sub->add_option("--lambda-ce", fl.lambda_ce, "Cross-entropy weight")->capture_default_str();
  sub->add_option("--lambda-info", fl.lambda_info, "Alignment (InfoNCE + MSE) weight")
      ->capture_default_str();
}

morpho::RunConfig resolve_config(const CLI::App* sub, const FlagValues& fl, const std::string& command) {
  auto cfg = morpho::load_run_config(fl.config);
  auto given = [sub](const char* name) {
    const auto* opt = sub->get_option_no_throw(name);
    return opt && opt->count() > 0;
  };
  if (given("--seed")) cfg.seed = fl.seed;
  if (given("--data-dir")) cfg.data_dir = fl.data_dir;
  if (given("--graphs-dir")) cfg.graphs_dir = fl.graphs_dir;
  if (given("--train-samples")) cfg.data.train_samples = fl.train_n;
  if (given("--val-samples")) cfg.data.val_samples = fl.val_n;
  if (given("--test-samples")) cfg.data.test_samples = fl.test_n;
  if (given("--num-classes")) cfg.data.num_classes = fl.num_classes;
  if (given("--noise-level")) cfg.data.noise_level = fl.noise;
  if (given("--distractors")) cfg.data.distractors = fl.distractors;
  if (given("--n-per-bone")) cfg.graph.n_per_bone = fl.n_per_bone;
  if (given("--k")) cfg.graph.k = fl.k;
  if (given("--tau0")) cfg.graph.tau0 = fl.tau0;
  if (given("--growth")) cfg.graph.growth = fl.growth;
  if (given("--steps")) cfg.steps = fl.steps;
  if (given("--batch")) cfg.batch = fl.batch;
  if (given("--lr")) cfg.adam.lr = fl.lr;
  if (given("--eval-every")) cfg.eval_every = fl.eval_every;
  if (given("--eval-batch")) cfg.eval_batch = fl.eval_batch;
  if (given("--temperature")) cfg.mim.temperature = fl.temperature;
  if (given("--lambda-ce")) cfg.mim.lambda_ce = fl.lambda_ce;
  if (given("--lambda-info")) cfg.mim.lambda_info = fl.lambda_info;
  if (given("--out")) cfg.out_dir = fl.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "out/" + command;
  return cfg;
}

morpho::TrainerConfig trainer_config(const morpho::RunConfig& cfg) {
  morpho::TrainerConfig tc;
  tc.steps = cfg.steps;
  tc.batch = cfg.batch;
  tc.eval_every = cfg.eval_every;
  tc.eval_batch = cfg.eval_batch;
  tc.adam = cfg.adam;
  tc.mim = cfg.mim;
  tc.mim.total_steps = cfg.steps;
  tc.seed = cfg.seed;
  return tc;
}

nlohmann::json load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  nlohmann::json j;
  f >> j;
  return j;
}

int run_training(morpho::ExperimentKind kind, const morpho::RunConfig& cfg,
                 const std::string& graph_checkpoint) {
  morpho::ExperimentPaths paths{cfg.data_dir, cfg.graphs_dir, cfg.out_dir, graph_checkpoint};
  morpho::echo_config(cfg, cfg.out_dir);
  auto result = morpho::run_experiment(kind, paths, trainer_config(cfg));
  std::printf("%s: best val acc %.4f | test acc %.4f macro_f1 %.4f -> %s\n", morpho::kind_name(kind),
              result.best_val_acc, result.test_report.accuracy, result.test_report.macro_f1,
              cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morphograph: joint-morphology graphs + radiograph fusion on synthetic knees"};
  app.require_subcommand(1);

  FlagValues fl;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset into --out");
  add_common_flags(gen, fl);
  add_data_flags(gen, fl);

  auto* build = app.add_subcommand("build-graphs",
                                   "Select masks via templates and cache joint graphs into --out");
  add_common_flags(build, fl);
  add_graph_flags(build, fl);

  auto* tgraph = app.add_subcommand("train-graph", "Train the standalone graph classifier");
  add_common_flags(tgraph, fl);
  add_train_flags(tgraph, fl);

  auto* tvision = app.add_subcommand("train-vision", "Train the vision-only baseline");
  add_common_flags(tvision, fl);
  add_train_flags(tvision, fl);

  auto* tmmf = app.add_subcommand("train-mmf", "Train classic multimodal fusion (frozen graph encoder)");
  add_common_flags(tmmf, fl);
  add_train_flags(tmmf, fl);
  add_mim_flags(tmmf, fl);
  tmmf->add_option("--graph-checkpoint", fl.graph_checkpoint, "Frozen graph encoder checkpoint");

  auto* tmim = app.add_subcommand("train-mmf-mim",
                                  "Train multimodal fusion with mutual-information maximization");
  add_common_flags(tmim, fl);
  add_train_flags(tmim, fl);
  add_mim_flags(tmim, fl);
  tmim->add_option("--graph-checkpoint", fl.graph_checkpoint, "Frozen graph encoder checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a saved checkpoint on a split");
  add_common_flags(eval, fl);
  eval->add_option("--checkpoint", fl.checkpoint, "Checkpoint JSON")->required();
  eval->add_option("--split", fl.split, "train|val|test")->capture_default_str();
  eval->add_option("--eval-batch", fl.eval_batch, "Evaluation batch size")->capture_default_str();

  auto* exp = app.add_subcommand("export-embeddings", "Export an embedding table as CSV");
  add_common_flags(exp, fl);
  exp->add_option("--checkpoint", fl.checkpoint, "Checkpoint JSON")->required();
  exp->add_option("--split", fl.split, "train|val|test")->capture_default_str();
  exp->add_option("--which", fl.which, "z_graph|z_vision|z_trans|z_rep")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const auto cfg = resolve_config(sub, fl, name);

    if (sub == gen) {
      morpho::GeneratorConfig gc = cfg.data;
      gc.seed = cfg.seed;
      morpho::generate_dataset(gc, cfg.out_dir);
      morpho::echo_config(cfg, cfg.out_dir);
      std::printf("gen-data: %d samples -> %s\n", gc.train_samples + gc.val_samples + gc.test_samples,
                  cfg.out_dir.c_str());
      return 0;
    }
    if (sub == build) {
      auto ds = morpho::Dataset::load(cfg.data_dir);
      morpho::build_graph_cache(ds, cfg.out_dir, cfg.graph);
      morpho::echo_config(cfg, cfg.out_dir);
      std::printf("build-graphs: %zu graphs -> %s\n", ds.rows.size(), cfg.out_dir.c_str());
      return 0;
    }
    if (sub == tgraph) return run_training(morpho::ExperimentKind::graph, cfg, "");
    if (sub == tvision) return run_training(morpho::ExperimentKind::vision, cfg, "");
    if (sub == tmmf) return run_training(morpho::ExperimentKind::mmf_classic, cfg, fl.graph_checkpoint);
    if (sub == tmim) return run_training(morpho::ExperimentKind::mmf_mim, cfg, fl.graph_checkpoint);
    if (sub == eval) {
      auto rep = morpho::evaluate_checkpoint(load_checkpoint(fl.checkpoint), cfg.data_dir, cfg.graphs_dir,
                                             fl.split, cfg.eval_batch);
      morpho::echo_config(cfg, cfg.out_dir);
      morpho::write_eval_report(rep, (fs::path(cfg.out_dir) / "eval_report.json").string());
      std::printf("eval[%s]: acc %.4f macro_f1 %.4f -> %s\n", fl.split.c_str(), rep.accuracy, rep.macro_f1,
                  cfg.out_dir.c_str());
      return 0;
    }
    if (sub == exp) {
      morpho::echo_config(cfg, cfg.out_dir);
      const auto out_csv =
          (fs::path(cfg.out_dir) / ("embeddings_" + fl.which + "_" + fl.split + ".csv")).string();
      morpho::export_embeddings(load_checkpoint(fl.checkpoint), cfg.data_dir, cfg.graphs_dir, fl.split,
                                fl.which, out_csv);
      std::printf("export-embeddings: %s -> %s\n", fl.which.c_str(), out_csv.c_str());
      return 0;
    }
    throw std::logic_error("unhandled subcommand " + name);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "morphograph: %s\n", e.what());
    return 1;
  }
}
