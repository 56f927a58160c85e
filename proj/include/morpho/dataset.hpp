#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morpho/graph_build.hpp"
#include "morpho/synth.hpp"
#include "morpho/tensor.hpp"

namespace morpho {

struct ManifestRow {
  std::string image, mask_u, mask_l;
  std::vector<std::string> candidates;
  int label = 0;
  std::string split;
};

// A generated dataset on disk: JSON-lines manifest plus PGM rasters, all
// paths relative to the dataset root.
struct Dataset {
  std::string root;
  std::vector<ManifestRow> rows;

  static Dataset load(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.root = dir;
    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw std::runtime_error("dataset: cannot open manifest.jsonl under " + dir);
    std::string line;
    while (std::getline(manifest, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      ManifestRow row;
      row.image = j.at("image").get<std::string>();
      row.mask_u = j.at("mask_u").get<std::string>();
      row.mask_l = j.at("mask_l").get<std::string>();
      for (const auto& c : j.at("candidates")) row.candidates.push_back(c.get<std::string>());
      row.label = j.at("label").get<int>();
      row.split = j.at("split").get<std::string>();
      ds.rows.push_back(std::move(row));
    }
    if (ds.rows.empty()) throw std::runtime_error("dataset: empty manifest in " + dir);
    return ds;
  }

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(root) / rel).string();
  }

  std::vector<int> split_indices(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(rows.size()); ++i)
      if (rows[static_cast<std::size_t>(i)].split == split) out.push_back(i);
    return out;
  }

  int num_classes() const {
    int c = 0;
    for (const auto& r : rows) c = std::max(c, r.label + 1);
    return c;
  }

  GrayImage image(int row) const { return load_image_pgm(resolve(rows[static_cast<std::size_t>(row)].image)); }
  BinaryMask mask_u(int row) const { return load_mask_pgm(resolve(rows[static_cast<std::size_t>(row)].mask_u)); }
  BinaryMask mask_l(int row) const { return load_mask_pgm(resolve(rows[static_cast<std::size_t>(row)].mask_l)); }

  std::vector<BinaryMask> candidates(int row) const {
    std::vector<BinaryMask> out;
    for (const auto& rel : rows[static_cast<std::size_t>(row)].candidates) out.push_back(load_mask_pgm(resolve(rel)));
    return out;
  }

  BinaryMask template_u() const { return load_mask_pgm(resolve("templates/template_u.pgm")); }
  BinaryMask template_l() const { return load_mask_pgm(resolve("templates/template_l.pgm")); }
};

// Graphs are cached one JSON file per manifest row: <graphs_dir>/g_000042.json.
inline std::string graph_path(const std::string& graphs_dir, int row) {
  char name[32];
  std::snprintf(name, sizeof(name), "g_%06d.json", row);
  return (std::filesystem::path(graphs_dir) / name).string();
}

// Runs the mask-selection + graph-construction pipeline for every manifest
// row and caches the result. Selection goes through the candidate pool and
// the dataset templates, exercising the same path a SAM-backed front end
// would feed.
inline void build_graph_cache(const Dataset& ds, const std::string& graphs_dir,
                              const GraphBuildConfig& cfg) {
  std::filesystem::create_directories(graphs_dir);
  const auto tu = ds.template_u();
  const auto tl = ds.template_l();
  for (int i = 0; i < static_cast<int>(ds.rows.size()); ++i) {
    const auto pool = ds.candidates(i);
    const auto* mu = select_mask(pool, tu).second;
    const auto* ml = select_mask(pool, tl).second;
    save_graph_json(build_joint_graph(*mu, *ml, cfg), graph_path(graphs_dir, i));
  }
}

inline std::vector<JointGraph> load_graph_cache(const Dataset& ds, const std::string& graphs_dir) {
  std::vector<JointGraph> out;
  out.reserve(ds.rows.size());
  for (int i = 0; i < static_cast<int>(ds.rows.size()); ++i) {
    const auto path = graph_path(graphs_dir, i);
    if (!std::filesystem::exists(path))
      throw std::runtime_error("graphs: missing " + path + "; run build-graphs first");
    out.push_back(load_graph_json(path));
  }
  return out;
}

// [B x 1 x side x side] tensor from preloaded images
inline TensorPtr images_to_tensor(const std::vector<GrayImage>& images, const std::vector<int>& rows) {
  const int B = static_cast<int>(rows.size());
  const int side = images[static_cast<std::size_t>(rows[0])].height;
  auto t = Tensor::make({B, 1, side, side});
  for (int b = 0; b < B; ++b) {
    const auto& img = images[static_cast<std::size_t>(rows[static_cast<std::size_t>(b)])];
    std::copy(img.pix.begin(), img.pix.end(), t->values.begin() + static_cast<std::ptrdiff_t>(b) * side * side);
  }
  return t;
}

}  // namespace morpho
