#pragma once

#include <numeric>
#include <vector>

#include "morpho/morphograph.hpp"
#include "morpho/params.hpp"
#include "morpho/vision.hpp"

namespace morpho {

// Translation head T (256 -> 128), fusion network over [z_graph || z_trans]
// (256 -> 128), and the severity classifier. Both heads are two-layer
// perceptrons with a ReLU between.
struct FusionModel {
  static constexpr int kGraphDim = MorphoGraphModel::kEmbedDim;   // 128
  static constexpr int kVisionDim = VisionModel::kEmbedDim;       // 256

  Linear t1, t2;  // t_head: 256 -> 256 -> 128
  Linear m1, m2;  // merge: 256 -> 256 -> 128
  Linear cls;     // 128 -> C
  int num_classes = 0;

  static FusionModel init(int num_classes, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xf051u));
    FusionModel m;
    m.num_classes = num_classes;
    m.t1 = make_linear(rng, kVisionDim, 256);
    m.t2 = make_linear(rng, 256, kGraphDim);
    m.m1 = make_linear(rng, 2 * kGraphDim, 256);
    m.m2 = make_linear(rng, 256, kGraphDim);
    m.cls = make_linear(rng, kGraphDim, num_classes, 0.1);
    return m;
  }

  NamedParams named_params() const {
    NamedParams out;
    collect_linear(out, "t_head.l1", t1);
    collect_linear(out, "t_head.l2", t2);
    collect_linear(out, "merge.l1", m1);
    collect_linear(out, "merge.l2", m2);
    collect_linear(out, "classifier", cls);
    return out;
  }
};

struct MIMConfig {
  double temperature = 0.07;
  double lambda_ce = 0.8;
  double lambda_info = 0.2;
  int total_steps = 1500;  // E, the r(e) schedule horizon
};

// r(e) = max(0, 1 - e/E)
inline double mask_ratio(int e, int E) {
  if (E < 1) throw std::invalid_argument("mask_ratio: total steps must be >= 1");
  if (e < 0) throw std::invalid_argument("mask_ratio: step must be >= 0");
  return std::max(0.0, 1.0 - static_cast<double>(e) / static_cast<double>(E));
}

// r * z_graph + (1 - r) * z_trans. z_graph enters frozen, so gradient flows
// through z_trans only.
inline TensorPtr combined_embedding(Tape& tape, const TensorPtr& z_graph, const TensorPtr& z_trans,
                                    double r) {
  detail::require_same_shape(z_graph, z_trans, "combined_embedding");
  if (r < 0.0 || r > 1.0)
    throw std::invalid_argument("combined_embedding: blend ratio " + std::to_string(r) + " outside [0,1]");
  return add(tape, scale(tape, z_graph, r), scale(tape, z_trans, 1.0 - r));
}

// mean over batch and dimensions of the squared difference
inline TensorPtr mse_alignment_loss(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  detail::require_same_shape(a, b, "mse_alignment_loss");
  auto d = sub(tape, a, b);
  return mean_all(tape, mul(tape, d, d));
}

// InfoNCE over matched rows: positives on the diagonal of the cosine
// similarity matrix, the batch's graph embeddings as the negatives pool.
// Exactly softmax cross-entropy on S/tau with labels 0..N-1.
inline TensorPtr infonce_loss(Tape& tape, const TensorPtr& z_trans, const TensorPtr& z_graph,
                              double temperature) {
  detail::require_same_shape(z_trans, z_graph, "infonce_loss");
  const int n = z_trans->dim(0);
  if (n < 2) throw std::invalid_argument("infonce_loss: need at least 2 rows for negatives");
  if (temperature <= 0.0) throw std::invalid_argument("infonce_loss: temperature must be positive");
  auto sim = cosine_similarity_matrix(tape, z_trans, z_graph);
  std::vector<int> diag(static_cast<std::size_t>(n));
  std::iota(diag.begin(), diag.end(), 0);
  return softmax_cross_entropy(tape, scale(tape, sim, 1.0 / temperature), diag);
}

inline double total_loss(double ce, double infonce, double mse, const MIMConfig& cfg) {
  return cfg.lambda_ce * ce + cfg.lambda_info * (infonce + mse);
}

inline TensorPtr total_loss(Tape& tape, const TensorPtr& ce, const TensorPtr& infonce, const TensorPtr& mse,
                            const MIMConfig& cfg) {
  return add(tape, scale(tape, ce, cfg.lambda_ce),
             scale(tape, add(tape, infonce, mse), cfg.lambda_info));
}

enum class FusionMode { classic, mim };

struct MultimodalOut {
  TensorPtr logits;
  TensorPtr z_vision, z_trans, z_rep;
  TensorPtr loss_total, loss_ce;
  TensorPtr loss_infonce, loss_mse;  // null outside active mim mode
  double r = 0.0;
};

// Full multimodal forward. z_graph_batch comes from the frozen graph encoder
// and is treated as constant data. In classic mode the objective is the
// cross-entropy alone; mim mode adds the adaptive-mask MSE and InfoNCE terms
// under Eq.-style weighting. With lambda_info == 0 the mim objective
// degenerates to the classic one exactly (same code path, so training records
// and parameter updates match classic bit for bit).
inline MultimodalOut multimodal_forward(Tape& tape, const TensorPtr& images, const TensorPtr& z_graph_batch,
                                        const std::vector<int>& labels, const VisionModel& vision,
                                        const FusionModel& fusion, FusionMode mode, int step,
                                        const MIMConfig& cfg) {
  if (images->dim(0) != z_graph_batch->dim(0) ||
      images->dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("multimodal_forward: batch misalignment: " + std::to_string(images->dim(0)) +
                                " images, " + std::to_string(z_graph_batch->dim(0)) + " graph embeddings, " +
                                std::to_string(labels.size()) + " labels");
  MultimodalOut out;
  auto vf = vision_forward(tape, images, vision);
  out.z_vision = vf.z_vision;
  out.z_trans = linear(tape, relu(tape, linear(tape, vf.z_vision, fusion.t1)), fusion.t2);
  auto merged = concat_cols(tape, z_graph_batch, out.z_trans);
  out.z_rep = linear(tape, relu(tape, linear(tape, merged, fusion.m1)), fusion.m2);
  out.logits = linear(tape, out.z_rep, fusion.cls);
  out.loss_ce = softmax_cross_entropy(tape, out.logits, labels);

  const bool mim_active = mode == FusionMode::mim && cfg.lambda_info != 0.0;
  if (mim_active) {
    out.r = mask_ratio(step, cfg.total_steps);
    auto z_combined = combined_embedding(tape, z_graph_batch, out.z_trans, out.r);
    out.loss_mse = mse_alignment_loss(tape, z_graph_batch, z_combined);
    out.loss_infonce = infonce_loss(tape, out.z_trans, z_graph_batch, cfg.temperature);
    out.loss_total = total_loss(tape, out.loss_ce, out.loss_infonce, out.loss_mse, cfg);
  } else {
    out.loss_total = out.loss_ce;
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint: embeds the frozen graph checkpoint verbatim so a fusion bundle
// is self-contained and the freezing contract is byte-checkable
// ---------------------------------------------------------------------------

inline nlohmann::json fusion_checkpoint(const std::string& kind, const nlohmann::json& graph_ckpt,
                                        const VisionModel& vision, const FusionModel& fusion) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = kind;  // "mmf_classic" | "mmf_mim"
  j["dims"] = {{"num_classes", fusion.num_classes},
               {"graph_dim", FusionModel::kGraphDim},
               {"vision_dim", FusionModel::kVisionDim}};
  j["graph_checkpoint"] = graph_ckpt;
  j["vision_params"] = params_to_json(vision.named_params());
  j["fusion_params"] = params_to_json(fusion.named_params());
  return j;
}

struct FusionBundle {
  MorphoGraphModel graph;
  VisionModel vision;
  FusionModel fusion;
  std::string kind;
};

inline FusionBundle fusion_from_checkpoint(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw std::runtime_error("fusion checkpoint: unsupported version");
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "mmf_classic" && kind != "mmf_mim")
    throw std::runtime_error("fusion checkpoint: kind is " + kind);
  FusionBundle b;
  b.kind = kind;
  const int C = j.at("dims").at("num_classes").get<int>();
  b.graph = morphograph_from_checkpoint(j.at("graph_checkpoint"));
  b.vision = VisionModel::init(C, 0);
  params_from_json(j.at("vision_params"), b.vision.named_params());
  b.fusion = FusionModel::init(C, 0);
  params_from_json(j.at("fusion_params"), b.fusion.named_params());
  return b;
}

}  // namespace morpho
