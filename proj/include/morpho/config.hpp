#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morpho/adam.hpp"
#include "morpho/fusion.hpp"
#include "morpho/graph_build.hpp"
#include "morpho/synth.hpp"

namespace morpho {

// Effective configuration of one CLI invocation. Assembled as
// defaults <- MORPHOGRAPH_SEED env <- config file <- flags (rightmost wins)
// and echoed verbatim into every output directory.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir;  // empty resolves to out/<command> in the CLI
  std::string data_dir = "data";
  std::string graphs_dir = "graphs";
  GeneratorConfig data;
  GraphBuildConfig graph;
  MIMConfig mim;
  AdamConfig adam;
  int batch = 16;
  int steps = 1500;
  int eval_every = 50;
  int eval_batch = 64;
};

namespace config_detail {

inline int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline void reject_unknown(const nlohmann::json& obj, const std::vector<std::string>& known,
                           const std::string& prefix) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) != known.end()) continue;
    std::string best;
    int best_d = 4;  // suggest only near misses
    for (const auto& k : known) {
      const int d = levenshtein(it.key(), k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    std::string msg = "config: unknown key \"" + prefix + it.key() + "\"";
    if (!best.empty()) msg += "; did you mean \"" + prefix + best + "\"?";
    throw std::invalid_argument(msg);
  }
}

inline void get_int(const nlohmann::json& obj, const char* key, int& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_number_integer())
    throw std::invalid_argument("config: " + prefix + key + ": expected integer");
  out = obj.at(key).get<int>();
}

inline void get_u64(const nlohmann::json& obj, const char* key, std::uint64_t& out,
                    const std::string& prefix) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_number_integer())
    throw std::invalid_argument("config: " + prefix + key + ": expected integer");
  out = obj.at(key).get<std::uint64_t>();
}

inline void get_double(const nlohmann::json& obj, const char* key, double& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_number())
    throw std::invalid_argument("config: " + prefix + key + ": expected number");
  out = obj.at(key).get<double>();
}

inline void get_string(const nlohmann::json& obj, const char* key, std::string& out,
                       const std::string& prefix) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_string())
    throw std::invalid_argument("config: " + prefix + key + ": expected string");
  out = obj.at(key).get<std::string>();
}

}  // namespace config_detail

inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  namespace cd = config_detail;
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  cd::reject_unknown(j, {"seed", "out_dir", "data", "graph", "mim", "optim"}, "");
  cd::get_u64(j, "seed", cfg.seed, "");
  cd::get_string(j, "out_dir", cfg.out_dir, "");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (!d.is_object()) throw std::invalid_argument("config: data: expected object");
    cd::reject_unknown(d, {"dir", "train", "val", "test", "num_classes", "noise_level", "distractors"},
                       "data.");
    cd::get_string(d, "dir", cfg.data_dir, "data.");
    cd::get_int(d, "train", cfg.data.train_samples, "data.");
    cd::get_int(d, "val", cfg.data.val_samples, "data.");
    cd::get_int(d, "test", cfg.data.test_samples, "data.");
    cd::get_int(d, "num_classes", cfg.data.num_classes, "data.");
    cd::get_double(d, "noise_level", cfg.data.noise_level, "data.");
    cd::get_int(d, "distractors", cfg.data.distractors, "data.");
  }
  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    if (!g.is_object()) throw std::invalid_argument("config: graph: expected object");
    cd::reject_unknown(g, {"dir", "n_per_bone", "k", "tau0", "growth"}, "graph.");
    cd::get_string(g, "dir", cfg.graphs_dir, "graph.");
    cd::get_int(g, "n_per_bone", cfg.graph.n_per_bone, "graph.");
    cd::get_int(g, "k", cfg.graph.k, "graph.");
    cd::get_double(g, "tau0", cfg.graph.tau0, "graph.");
    cd::get_double(g, "growth", cfg.graph.growth, "graph.");
  }
  if (j.contains("mim")) {
    const auto& m = j.at("mim");
    if (!m.is_object()) throw std::invalid_argument("config: mim: expected object");
    cd::reject_unknown(m, {"temperature", "lambda_ce", "lambda_info"}, "mim.");
    cd::get_double(m, "temperature", cfg.mim.temperature, "mim.");
    cd::get_double(m, "lambda_ce", cfg.mim.lambda_ce, "mim.");
    cd::get_double(m, "lambda_info", cfg.mim.lambda_info, "mim.");
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    if (!o.is_object()) throw std::invalid_argument("config: optim: expected object");
    cd::reject_unknown(o, {"lr", "beta1", "beta2", "eps", "batch", "steps", "eval_every", "eval_batch"},
                       "optim.");
    cd::get_double(o, "lr", cfg.adam.lr, "optim.");
    cd::get_double(o, "beta1", cfg.adam.beta1, "optim.");
    cd::get_double(o, "beta2", cfg.adam.beta2, "optim.");
    cd::get_double(o, "eps", cfg.adam.eps, "optim.");
    cd::get_int(o, "batch", cfg.batch, "optim.");
    cd::get_int(o, "steps", cfg.steps, "optim.");
    cd::get_int(o, "eval_every", cfg.eval_every, "optim.");
    cd::get_int(o, "eval_batch", cfg.eval_batch, "optim.");
  }
}

// Defaults, with MORPHOGRAPH_SEED as the lowest-priority seed source.
inline RunConfig default_run_config() {
  RunConfig cfg;
  if (const char* env = std::getenv("MORPHOGRAPH_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') cfg.seed = v;
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& file) {
  RunConfig cfg = default_run_config();
  if (!file.empty()) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("config: cannot open " + file);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("config: " + file + " is not well-formed JSON: " + e.what());
    }
    apply_config_json(cfg, j);
  }
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"out_dir", cfg.out_dir},
          {"data",
           {{"dir", cfg.data_dir},
            {"train", cfg.data.train_samples},
            {"val", cfg.data.val_samples},
            {"test", cfg.data.test_samples},
            {"num_classes", cfg.data.num_classes},
            {"noise_level", cfg.data.noise_level},
            {"distractors", cfg.data.distractors}}},
          {"graph",
           {{"dir", cfg.graphs_dir},
            {"n_per_bone", cfg.graph.n_per_bone},
            {"k", cfg.graph.k},
            {"tau0", cfg.graph.tau0},
            {"growth", cfg.graph.growth}}},
          {"mim",
           {{"temperature", cfg.mim.temperature},
            {"lambda_ce", cfg.mim.lambda_ce},
            {"lambda_info", cfg.mim.lambda_info}}},
          {"optim",
           {{"lr", cfg.adam.lr},
            {"beta1", cfg.adam.beta1},
            {"beta2", cfg.adam.beta2},
            {"eps", cfg.adam.eps},
            {"batch", cfg.batch},
            {"steps", cfg.steps},
            {"eval_every", cfg.eval_every},
            {"eval_batch", cfg.eval_batch}}}};
}

inline void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(std::filesystem::path(out_dir) / "config.json");
  if (!f) throw std::runtime_error("config: cannot echo into " + out_dir);
  f << run_config_to_json(cfg).dump(2) << "\n";
}

}  // namespace morpho
