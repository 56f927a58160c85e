#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "morpho/adam.hpp"
#include "morpho/dataset.hpp"
#include "morpho/fusion.hpp"
#include "morpho/morphograph.hpp"
#include "morpho/vision.hpp"

namespace morpho {

// ---------------------------------------------------------------------------
// training records
// ---------------------------------------------------------------------------

struct TrainRecord {
  int step = 0;
  double loss_total = 0.0, loss_ce = 0.0, loss_infonce = 0.0, loss_mse = 0.0;
  double mask_ratio = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;  // present on eval steps
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_records_csv(const std::vector<TrainRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("records: cannot write " + path);
  f << "step,loss_total,loss_ce,loss_infonce,loss_mse,mask_ratio,train_acc,val_acc\n";
  for (const auto& r : records) {
    f << r.step << ',' << detail::fmt_double(r.loss_total) << ',' << detail::fmt_double(r.loss_ce) << ','
      << detail::fmt_double(r.loss_infonce) << ',' << detail::fmt_double(r.loss_mse) << ','
      << detail::fmt_double(r.mask_ratio) << ',' << detail::fmt_double(r.train_acc) << ',';
    if (r.val_acc) f << detail::fmt_double(*r.val_acc);
    f << '\n';
  }
}

// ---------------------------------------------------------------------------
// evaluation report
// ---------------------------------------------------------------------------

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<long long>> confusion;  // [true][pred]
  std::string split;
};

inline EvalReport make_eval_report(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                   int num_classes, std::string split) {
  if (y_true.size() != y_pred.size() || y_true.empty())
    throw std::invalid_argument("eval: prediction/label count mismatch or empty");
  EvalReport rep;
  rep.split = std::move(split);
  rep.confusion.assign(static_cast<std::size_t>(num_classes),
                       std::vector<long long>(static_cast<std::size_t>(num_classes), 0));
  long long correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++rep.confusion[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
    correct += y_true[i] == y_pred[i];
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
  double f1_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    long long tp = rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    long long fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += rep.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      fn += rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
    }
    const double prec = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    f1_sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  rep.macro_f1 = f1_sum / num_classes;
  return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  return {{"accuracy", rep.accuracy},
          {"macro_f1", rep.macro_f1},
          {"confusion", rep.confusion},
          {"split", rep.split}};
}

inline void write_eval_report(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  f << eval_report_to_json(rep).dump(2) << "\n";
}

// argmax with ties to the lowest index
inline std::vector<int> argmax_rows(const TensorPtr& logits) {
  const int B = logits->dim(0), C = logits->dim(1);
  std::vector<int> out(static_cast<std::size_t>(B));
  for (int r = 0; r < B; ++r) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (logits->at(r, c) > logits->at(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

inline double batch_accuracy(const TensorPtr& logits, const std::vector<int>& labels) {
  const auto pred = argmax_rows(logits);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// deterministic epoch sampler: reshuffles on every wrap, batches stay full
// ---------------------------------------------------------------------------

class BatchSampler {
 public:
  BatchSampler(std::vector<int> indices, std::uint64_t seed)
      : indices_(std::move(indices)), rng_(mix_seed(seed, 0xba7c4u)) {
    if (indices_.empty()) throw std::invalid_argument("sampler: empty index set");
    rng_.shuffle(indices_);
  }

  std::vector<int> next(int batch) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(batch));
    while (static_cast<int>(out.size()) < batch) {
      if (pos_ == indices_.size()) {
        rng_.shuffle(indices_);
        pos_ = 0;
      }
      out.push_back(indices_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<int> indices_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// experiment harness
// ---------------------------------------------------------------------------

enum class ExperimentKind { graph, vision, mmf_classic, mmf_mim };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::graph: return "graph";
    case ExperimentKind::vision: return "vision";
    case ExperimentKind::mmf_classic: return "mmf_classic";
    default: return "mmf_mim";
  }
}

struct TrainerConfig {
  int steps = 1500;
  int batch = 16;
  int eval_every = 50;
  int eval_batch = 64;
  AdamConfig adam;
  MIMConfig mim;
  std::uint64_t seed = 42;
};

struct ExperimentPaths {
  std::string data_dir;
  std::string graphs_dir;
  std::string out_dir;
  std::string graph_checkpoint;  // required for mmf_* kinds
};

struct ExperimentResult {
  nlohmann::json checkpoint;
  std::vector<TrainRecord> records;
  EvalReport test_report;
  double best_val_acc = 0.0;
};

namespace detail {

struct StepOutcome {
  double loss_total = 0.0, loss_ce = 0.0, loss_infonce = 0.0, loss_mse = 0.0;
  double mask_ratio = 0.0, train_acc = 0.0;
};

// Shared optimization loop: per-step hook, periodic validation, strict-best
// checkpoint snapshot restored at the end (ties keep the earliest step).
inline std::pair<std::vector<TrainRecord>, double> run_loop(
    const TrainerConfig& cfg, const NamedParams& trainable, Adam& adam,
    const std::function<StepOutcome(int)>& train_step, const std::function<double()>& val_accuracy) {
  std::vector<TrainRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.steps));
  double best_val = -1.0;
  auto best_snapshot = snapshot_values(trainable);
  for (int e = 0; e < cfg.steps; ++e) {
    adam.zero_grad();
    const auto out = train_step(e);
    adam.step();
    TrainRecord rec;
    rec.step = e;
    rec.loss_total = out.loss_total;
    rec.loss_ce = out.loss_ce;
    rec.loss_infonce = out.loss_infonce;
    rec.loss_mse = out.loss_mse;
    rec.mask_ratio = out.mask_ratio;
    rec.train_acc = out.train_acc;
    if ((e + 1) % cfg.eval_every == 0 || e == cfg.steps - 1) {
      const double acc = val_accuracy();
      rec.val_acc = acc;
      if (acc > best_val) {
        best_val = acc;
        best_snapshot = snapshot_values(trainable);
      }
    }
    records.push_back(std::move(rec));
  }
  restore_values(trainable, best_snapshot);
  return {std::move(records), best_val};
}

}  // namespace detail

// Precomputed per-row model inputs for one dataset.
struct LoadedData {
  Dataset ds;
  std::vector<GrayImage> images;   // populated when images are needed
  std::vector<JointGraph> graphs;  // populated when graphs are needed
  std::vector<int> labels;
  int num_classes = 0;

  static LoadedData load(const std::string& data_dir, const std::string& graphs_dir, bool want_images,
                         bool want_graphs) {
    LoadedData d{Dataset::load(data_dir), {}, {}, {}, 0};
    d.num_classes = d.ds.num_classes();
    for (const auto& r : d.ds.rows) d.labels.push_back(r.label);
    if (want_images) {
      d.images.reserve(d.ds.rows.size());
      for (int i = 0; i < static_cast<int>(d.ds.rows.size()); ++i) d.images.push_back(d.ds.image(i));
    }
    if (want_graphs) d.graphs = load_graph_cache(d.ds, graphs_dir);
    return d;
  }

  std::vector<int> batch_labels(const std::vector<int>& rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(labels[static_cast<std::size_t>(r)]);
    return out;
  }

  std::vector<const JointGraph*> batch_graphs(const std::vector<int>& rows) const {
    std::vector<const JointGraph*> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(&graphs[static_cast<std::size_t>(r)]);
    return out;
  }
};

// Frozen graph embeddings for every dataset row, computed once per run.
inline std::vector<std::vector<double>> precompute_graph_embeddings(const LoadedData& data,
                                                                    const MorphoGraphModel& model,
                                                                    int chunk = 64) {
  std::vector<std::vector<double>> out(data.ds.rows.size());
  for (int start = 0; start < static_cast<int>(data.ds.rows.size()); start += chunk) {
    const int end = std::min(start + chunk, static_cast<int>(data.ds.rows.size()));
    std::vector<int> rows;
    for (int i = start; i < end; ++i) rows.push_back(i);
    Tape t;
    t.recording = false;
    auto fwd = morphograph_forward(t, make_graph_batch(data.batch_graphs(rows)), model);
    for (int i = start; i < end; ++i) {
      const double* row = fwd.z_graph->values.data() +
                          static_cast<std::size_t>(i - start) * MorphoGraphModel::kEmbedDim;
      out[static_cast<std::size_t>(i)].assign(row, row + MorphoGraphModel::kEmbedDim);
    }
  }
  return out;
}

inline TensorPtr embeddings_to_tensor(const std::vector<std::vector<double>>& z,
                                      const std::vector<int>& rows) {
  const int d = static_cast<int>(z[static_cast<std::size_t>(rows[0])].size());
  auto t = Tensor::make({static_cast<int>(rows.size()), d});
  for (std::size_t b = 0; b < rows.size(); ++b)
    std::copy(z[static_cast<std::size_t>(rows[b])].begin(), z[static_cast<std::size_t>(rows[b])].end(),
              t->values.begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(d)));
  return t;
}

// ---------------------------------------------------------------------------
// per-kind evaluation over a split
// ---------------------------------------------------------------------------

inline EvalReport evaluate_graph_model(const MorphoGraphModel& model, const LoadedData& data,
                                       const std::string& split, int eval_batch = 64) {
  const auto idx = data.ds.split_indices(split);
  if (idx.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
  std::vector<int> y_true, y_pred;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(eval_batch)) {
    std::vector<int> rows(idx.begin() + static_cast<std::ptrdiff_t>(start),
                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + static_cast<std::size_t>(eval_batch))));
    Tape t;
    t.recording = false;
    auto fwd = morphograph_forward(t, make_graph_batch(data.batch_graphs(rows)), model);
    auto pred = argmax_rows(fwd.logits);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      y_true.push_back(data.labels[static_cast<std::size_t>(rows[i])]);
      y_pred.push_back(pred[i]);
    }
  }
  return make_eval_report(y_true, y_pred, data.num_classes, split);
}

inline EvalReport evaluate_vision_model(const VisionModel& model, const LoadedData& data,
                                        const std::string& split, int eval_batch = 64) {
  const auto idx = data.ds.split_indices(split);
  if (idx.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
  std::vector<int> y_true, y_pred;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(eval_batch)) {
    std::vector<int> rows(idx.begin() + static_cast<std::ptrdiff_t>(start),
                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + static_cast<std::size_t>(eval_batch))));
    Tape t;
    t.recording = false;
    auto fwd = vision_forward(t, images_to_tensor(data.images, rows), model);
    auto pred = argmax_rows(fwd.logits);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      y_true.push_back(data.labels[static_cast<std::size_t>(rows[i])]);
      y_pred.push_back(pred[i]);
    }
  }
  return make_eval_report(y_true, y_pred, data.num_classes, split);
}

inline EvalReport evaluate_fusion_model(const VisionModel& vision, const FusionModel& fusion,
                                        const std::vector<std::vector<double>>& z_graph,
                                        const LoadedData& data, const std::string& split,
                                        int eval_batch = 64) {
  const auto idx = data.ds.split_indices(split);
  if (idx.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
  std::vector<int> y_true, y_pred;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(eval_batch)) {
    std::vector<int> rows(idx.begin() + static_cast<std::ptrdiff_t>(start),
                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + static_cast<std::size_t>(eval_batch))));
    Tape t;
    t.recording = false;
    auto out = multimodal_forward(t, images_to_tensor(data.images, rows), embeddings_to_tensor(z_graph, rows),
                                  data.batch_labels(rows), vision, fusion, FusionMode::classic, 0, {});
    auto pred = argmax_rows(out.logits);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      y_true.push_back(data.labels[static_cast<std::size_t>(rows[i])]);
      y_pred.push_back(pred[i]);
    }
  }
  return make_eval_report(y_true, y_pred, data.num_classes, split);
}

// ---------------------------------------------------------------------------
// run_experiment: train one configuration, select the best-validation
// checkpoint, evaluate once on test, emit all artifacts
// ---------------------------------------------------------------------------

inline ExperimentResult run_experiment(ExperimentKind kind, const ExperimentPaths& paths,
                                       const TrainerConfig& cfg) {
  namespace fs = std::filesystem;
  const bool want_images = kind != ExperimentKind::graph;
  const bool want_graphs = kind == ExperimentKind::graph;
  auto data = LoadedData::load(paths.data_dir, paths.graphs_dir, want_images, want_graphs);
  const int C = data.num_classes;

  ExperimentResult result;
  BatchSampler sampler(data.ds.split_indices("train"), cfg.seed);

  if (kind == ExperimentKind::graph) {
    auto model = MorphoGraphModel::init(C, cfg.seed);
    auto params = model.named_params();
    Adam adam(params, cfg.adam);
    auto train_step = [&](int) {
      const auto rows = sampler.next(cfg.batch);
      const auto labels = data.batch_labels(rows);
      Tape t;
      auto fwd = morphograph_forward(t, make_graph_batch(data.batch_graphs(rows)), model);
      auto loss = softmax_cross_entropy(t, fwd.logits, labels);
      t.backward(loss);
      detail::StepOutcome out;
      out.loss_total = out.loss_ce = loss->values[0];
      out.train_acc = batch_accuracy(fwd.logits, labels);
      return out;
    };
    auto val = [&] { return evaluate_graph_model(model, data, "val", cfg.eval_batch).accuracy; };
    auto [records, best] = detail::run_loop(cfg, params, adam, train_step, val);
    result.records = std::move(records);
    result.best_val_acc = best;
    result.checkpoint = morphograph_checkpoint(model);
    result.test_report = evaluate_graph_model(model, data, "test", cfg.eval_batch);
  } else if (kind == ExperimentKind::vision) {
    auto model = VisionModel::init(C, cfg.seed);
    auto params = model.named_params();
    Adam adam(params, cfg.adam);
    auto train_step = [&](int) {
      const auto rows = sampler.next(cfg.batch);
      const auto labels = data.batch_labels(rows);
      Tape t;
      auto fwd = vision_forward(t, images_to_tensor(data.images, rows), model);
      auto loss = softmax_cross_entropy(t, fwd.logits, labels);
      t.backward(loss);
      detail::StepOutcome out;
      out.loss_total = out.loss_ce = loss->values[0];
      out.train_acc = batch_accuracy(fwd.logits, labels);
      return out;
    };
    auto val = [&] { return evaluate_vision_model(model, data, "val", cfg.eval_batch).accuracy; };
    auto [records, best] = detail::run_loop(cfg, params, adam, train_step, val);
    result.records = std::move(records);
    result.best_val_acc = best;
    result.checkpoint = vision_checkpoint(model);
    result.test_report = evaluate_vision_model(model, data, "test", cfg.eval_batch);
  } else {
    if (paths.graph_checkpoint.empty() || !fs::exists(paths.graph_checkpoint))
      throw std::runtime_error("run_experiment: " + std::string(kind_name(kind)) +
                               " needs a frozen graph encoder; train one with train-graph and pass "
                               "--graph-checkpoint");
    nlohmann::json graph_ckpt;
    {
      std::ifstream f(paths.graph_checkpoint);
      f >> graph_ckpt;
    }
    auto graph_model = morphograph_from_checkpoint(graph_ckpt);
    if (graph_model.num_classes != C)
      throw std::runtime_error("run_experiment: graph checkpoint was trained for " +
                               std::to_string(graph_model.num_classes) + " classes, dataset has " +
                               std::to_string(C));
    set_trainable(graph_model.named_params(), false);
    auto graph_data = LoadedData::load(paths.data_dir, paths.graphs_dir, false, true);
    const auto z_graph = precompute_graph_embeddings(graph_data, graph_model);

    auto vision = VisionModel::init(C, mix_seed(cfg.seed, 0x115u));
    auto fusion = FusionModel::init(C, mix_seed(cfg.seed, 0x116u));
    NamedParams params;
    for (auto& [n, p] : vision.named_params()) params.emplace_back("vision." + n, p);
    for (auto& [n, p] : fusion.named_params()) params.emplace_back("fusion." + n, p);
    Adam adam(params, cfg.adam);
    const FusionMode mode = kind == ExperimentKind::mmf_mim ? FusionMode::mim : FusionMode::classic;
    MIMConfig mim = cfg.mim;
    mim.total_steps = cfg.steps;
    auto train_step = [&](int e) {
      const auto rows = sampler.next(cfg.batch);
      const auto labels = data.batch_labels(rows);
      Tape t;
      auto out = multimodal_forward(t, images_to_tensor(data.images, rows),
                                    embeddings_to_tensor(z_graph, rows), labels, vision, fusion, mode, e,
                                    mim);
      t.backward(out.loss_total);
      detail::StepOutcome so;
      so.loss_total = out.loss_total->values[0];
      so.loss_ce = out.loss_ce->values[0];
      so.loss_infonce = out.loss_infonce ? out.loss_infonce->values[0] : 0.0;
      so.loss_mse = out.loss_mse ? out.loss_mse->values[0] : 0.0;
      so.mask_ratio = out.r;
      so.train_acc = batch_accuracy(out.logits, labels);
      return so;
    };
    auto val = [&] {
      return evaluate_fusion_model(vision, fusion, z_graph, data, "val", cfg.eval_batch).accuracy;
    };
    auto [records, best] = detail::run_loop(cfg, params, adam, train_step, val);
    result.records = std::move(records);
    result.best_val_acc = best;
    result.checkpoint = fusion_checkpoint(kind_name(kind), graph_ckpt, vision, fusion);
    result.test_report = evaluate_fusion_model(vision, fusion, z_graph, data, "test", cfg.eval_batch);
  }

  if (!paths.out_dir.empty()) {
    fs::create_directories(paths.out_dir);
    {
      std::ofstream f(fs::path(paths.out_dir) / "checkpoint.json");
      f << result.checkpoint.dump() << "\n";
    }
    write_records_csv(result.records, (fs::path(paths.out_dir) / "train_records.csv").string());
    write_eval_report(result.test_report, (fs::path(paths.out_dir) / "eval_report.json").string());
  }
  return result;
}

// ---------------------------------------------------------------------------
// evaluate / export from a saved checkpoint
// ---------------------------------------------------------------------------

inline EvalReport evaluate_checkpoint(const nlohmann::json& ckpt, const std::string& data_dir,
                                      const std::string& graphs_dir, const std::string& split,
                                      int eval_batch = 64) {
  const auto kind = ckpt.at("kind").get<std::string>();
  if (kind == "graph") {
    auto data = LoadedData::load(data_dir, graphs_dir, false, true);
    return evaluate_graph_model(morphograph_from_checkpoint(ckpt), data, split, eval_batch);
  }
  if (kind == "vision") {
    auto data = LoadedData::load(data_dir, graphs_dir, true, false);
    return evaluate_vision_model(vision_from_checkpoint(ckpt), data, split, eval_batch);
  }
  auto bundle = fusion_from_checkpoint(ckpt);
  auto data = LoadedData::load(data_dir, graphs_dir, true, true);
  const auto z_graph = precompute_graph_embeddings(data, bundle.graph);
  return evaluate_fusion_model(bundle.vision, bundle.fusion, z_graph, data, split, eval_batch);
}

// CSV with header sample_id,label,e0..e{d-1}; one row per sample of the split.
inline void export_embeddings(const nlohmann::json& ckpt, const std::string& data_dir,
                              const std::string& graphs_dir, const std::string& split,
                              const std::string& which, const std::string& out_path, int chunk = 64) {
  const auto kind = ckpt.at("kind").get<std::string>();
  const bool is_fusion = kind == "mmf_classic" || kind == "mmf_mim";
  const std::string valid = is_fusion ? "z_graph, z_vision, z_trans, z_rep"
                            : kind == "graph" ? "z_graph"
                                              : "z_vision";
  auto fail_unknown = [&] {
    throw std::invalid_argument("export_embeddings: unknown embedding '" + which + "' for a " + kind +
                                " checkpoint; valid names: " + valid);
  };

  std::optional<MorphoGraphModel> graph_model;
  std::optional<VisionModel> vision_model;
  std::optional<FusionModel> fusion_model;
  if (kind == "graph") {
    if (which != "z_graph") fail_unknown();
    graph_model = morphograph_from_checkpoint(ckpt);
  } else if (kind == "vision") {
    if (which != "z_vision") fail_unknown();
    vision_model = vision_from_checkpoint(ckpt);
  } else if (is_fusion) {
    if (which != "z_graph" && which != "z_vision" && which != "z_trans" && which != "z_rep") fail_unknown();
    auto bundle = fusion_from_checkpoint(ckpt);
    graph_model = std::move(bundle.graph);
    vision_model = std::move(bundle.vision);
    fusion_model = std::move(bundle.fusion);
  } else {
    throw std::runtime_error("export_embeddings: unsupported checkpoint kind " + kind);
  }

  const bool want_graphs = which == "z_graph";
  auto data = LoadedData::load(data_dir, graphs_dir, !want_graphs, want_graphs);
  const auto idx = data.ds.split_indices(split);
  if (idx.empty()) throw std::invalid_argument("export_embeddings: split '" + split + "' is empty");

  std::vector<std::vector<double>> zg_all;
  if (which == "z_rep") {
    auto gdata = LoadedData::load(data_dir, graphs_dir, false, true);
    zg_all = precompute_graph_embeddings(gdata, *graph_model);
  }

  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("export_embeddings: cannot write " + out_path);
  bool header_done = false;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(chunk)) {
    std::vector<int> rows(idx.begin() + static_cast<std::ptrdiff_t>(start),
                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + static_cast<std::size_t>(chunk))));
    Tape t;
    t.recording = false;
    TensorPtr z;
    if (which == "z_graph") {
      z = morphograph_forward(t, make_graph_batch(data.batch_graphs(rows)), *graph_model).z_graph;
    } else {
      auto vf = vision_forward(t, images_to_tensor(data.images, rows), *vision_model);
      if (which == "z_vision") {
        z = vf.z_vision;
      } else {
        auto z_trans = linear(t, relu(t, linear(t, vf.z_vision, fusion_model->t1)), fusion_model->t2);
        if (which == "z_trans") {
          z = z_trans;
        } else {
          auto merged = concat_cols(t, embeddings_to_tensor(zg_all, rows), z_trans);
          z = linear(t, relu(t, linear(t, merged, fusion_model->m1)), fusion_model->m2);
        }
      }
    }
    if (!header_done) {
      f << "sample_id,label";
      for (int c = 0; c < z->dim(1); ++c) f << ",e" << c;
      f << "\n";
      header_done = true;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      f << rows[i] << ',' << data.labels[static_cast<std::size_t>(rows[i])];
      for (int c = 0; c < z->dim(1); ++c) f << ',' << detail::fmt_double(z->at(static_cast<int>(i), c));
      f << '\n';
    }
  }
}

}  // namespace morpho
