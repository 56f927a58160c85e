#pragma once

#include <string>
#include <vector>

#include "morpho/graph_build.hpp"
#include "morpho/params.hpp"

namespace morpho {

// One EdgeConv block: phi realized as Linear(2*d_in -> d_out), ReLU,
// Linear(d_out -> d_out), followed by GraphNorm affine parameters.
struct EdgeConvLayer {
  Linear phi1, phi2;
  TensorPtr gamma, beta;
  int d_in = 0, d_out = 0;
};

// Three EdgeConv layers (3 -> 16 -> 32 -> 64, widths doubling after the
// stem), mean||max readout to a 128-d embedding, linear classification head.
struct MorphoGraphModel {
  static constexpr int kFeatDim = 3;
  static constexpr int kEmbedDim = 128;

  std::vector<EdgeConvLayer> layers;
  Linear classifier;
  int num_classes = 0;

  static MorphoGraphModel init(int num_classes, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6721u));
    MorphoGraphModel m;
    m.num_classes = num_classes;
    const int widths[4] = {kFeatDim, 16, 32, 64};
    for (int i = 0; i < 3; ++i) {
      EdgeConvLayer l;
      l.d_in = widths[i];
      l.d_out = widths[i + 1];
      l.phi1 = make_linear(rng, 2 * l.d_in, l.d_out);
      l.phi2 = make_linear(rng, l.d_out, l.d_out);
      l.gamma = Tensor::make({l.d_out}, true);
      std::fill(l.gamma->values.begin(), l.gamma->values.end(), 1.0);
      l.beta = Tensor::make({l.d_out}, true);
      m.layers.push_back(std::move(l));
    }
    m.classifier = make_linear(rng, kEmbedDim, num_classes, 0.1);
    return m;
  }

  NamedParams named_params() const {
    NamedParams out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "edgeconv" + std::to_string(i + 1);
      collect_linear(out, p + ".phi1", layers[i].phi1);
      collect_linear(out, p + ".phi2", layers[i].phi2);
      out.emplace_back(p + ".gamma", layers[i].gamma);
      out.emplace_back(p + ".beta", layers[i].beta);
    }
    collect_linear(out, "classifier", classifier);
    return out;
  }
};

// A batch of joint graphs collated into one node matrix with per-node graph
// ids and the directed expansion of every undirected edge.
struct GraphBatch {
  TensorPtr x;  // [total_nodes x 3]
  std::vector<int> edge_src, edge_dst;
  std::vector<int> graph_id;
  int num_graphs = 0;
};

inline GraphBatch make_graph_batch(const std::vector<const JointGraph*>& graphs) {
  GraphBatch b;
  b.num_graphs = static_cast<int>(graphs.size());
  int total = 0;
  for (const auto* g : graphs) total += g->num_nodes();
  b.x = Tensor::make({total, MorphoGraphModel::kFeatDim});
  int offset = 0;
  for (int gi = 0; gi < b.num_graphs; ++gi) {
    const auto& g = *graphs[static_cast<std::size_t>(gi)];
    for (int i = 0; i < g.num_nodes(); ++i) {
      for (int f = 0; f < 3; ++f)
        b.x->values[static_cast<std::size_t>(offset + i) * 3 + f] = g.nodes[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)];
      b.graph_id.push_back(gi);
    }
    for (const auto& [u, v] : g.edges) {
      b.edge_src.push_back(offset + u);
      b.edge_dst.push_back(offset + v);
      b.edge_src.push_back(offset + v);
      b.edge_dst.push_back(offset + u);
    }
    offset += g.num_nodes();
  }
  return b;
}

// x_i' = max_{j in N(i)} phi([x_i, x_j - x_i]) over the directed edge
// expansion; the max is a segment_max keyed by destination node.
inline TensorPtr edgeconv_layer(Tape& tape, const TensorPtr& x, const std::vector<int>& edge_src,
                                const std::vector<int>& edge_dst, const EdgeConvLayer& layer) {
  const int n = x->dim(0);
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  for (int d : edge_dst) ++degree[static_cast<std::size_t>(d)];
  for (int i = 0; i < n; ++i)
    if (degree[static_cast<std::size_t>(i)] == 0)
      throw std::invalid_argument("edgeconv_layer: node " + std::to_string(i) + " has no neighbors");
  auto xd = gather_rows(tape, x, edge_dst);
  auto xs = gather_rows(tape, x, edge_src);
  auto ef = concat_cols(tape, xd, sub(tape, xs, xd));
  auto h = linear(tape, relu(tape, linear(tape, ef, layer.phi1)), layer.phi2);
  return segment_max(tape, h, edge_dst, n);
}

// Per-graph, per-feature (x - mu) / (sigma + eps) with learnable affine;
// sigma is the population std over that graph's nodes.
inline TensorPtr graph_norm(Tape& tape, const TensorPtr& x, const std::vector<int>& graph_id,
                            int num_graphs, const TensorPtr& gamma, const TensorPtr& beta,
                            double eps = 1e-5) {
  auto mu = segment_mean(tape, x, graph_id, num_graphs);
  auto xc = sub(tape, x, gather_rows(tape, mu, graph_id));
  auto var = segment_mean(tape, mul(tape, xc, xc), graph_id, num_graphs);
  auto sd = gather_rows(tape, sqrt_elem(tape, var), graph_id);
  auto normed = divide(tape, xc, add_const(tape, sd, eps));
  return add_rowvec(tape, mul_rowvec(tape, normed, gamma), beta);
}

// mean || max pooling per graph
inline TensorPtr graph_readout(Tape& tape, const TensorPtr& x, const std::vector<int>& graph_id,
                               int num_graphs) {
  return concat_cols(tape, segment_mean(tape, x, graph_id, num_graphs),
                     segment_max(tape, x, graph_id, num_graphs));
}

struct GraphForward {
  TensorPtr logits;
  TensorPtr z_graph;
};

inline GraphForward morphograph_forward(Tape& tape, const GraphBatch& batch, const MorphoGraphModel& model) {
  TensorPtr h = batch.x;
  for (const auto& layer : model.layers) {
    h = edgeconv_layer(tape, h, batch.edge_src, batch.edge_dst, layer);
    h = graph_norm(tape, h, batch.graph_id, batch.num_graphs, layer.gamma, layer.beta);
    h = relu(tape, h);
  }
  auto z = graph_readout(tape, h, batch.graph_id, batch.num_graphs);
  return {linear(tape, z, model.classifier), z};
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

inline nlohmann::json morphograph_checkpoint(const MorphoGraphModel& model) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "graph";
  j["dims"] = {{"num_classes", model.num_classes},
               {"feat_dim", MorphoGraphModel::kFeatDim},
               {"widths", {16, 32, 64}},
               {"embed_dim", MorphoGraphModel::kEmbedDim}};
  j["params"] = params_to_json(model.named_params());
  return j;
}

inline MorphoGraphModel morphograph_from_checkpoint(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw std::runtime_error("graph checkpoint: unsupported version");
  if (j.at("kind").get<std::string>() != "graph")
    throw std::runtime_error("graph checkpoint: kind is " + j.at("kind").get<std::string>());
  auto model = MorphoGraphModel::init(j.at("dims").at("num_classes").get<int>(), 0);
  params_from_json(j.at("params"), model.named_params());
  return model;
}

}  // namespace morpho
