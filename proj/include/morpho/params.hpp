#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "morpho/ops.hpp"
#include "morpho/rng.hpp"
#include "morpho/tensor.hpp"

namespace morpho {

using NamedParams = std::vector<std::pair<std::string, TensorPtr>>;

// y = x . w + b with w stored [in x out]
struct Linear {
  TensorPtr w, b;
  int in = 0, out = 0;
};

// He-style init, bias zero. `w_mult` shrinks classifier heads so step-0
// logits stay near zero.
inline Linear make_linear(Rng& rng, int in, int out, double w_mult = 1.0) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = Tensor::make({in, out}, true);
  const double s = std::sqrt(2.0 / in) * w_mult;
  for (auto& v : l.w->values) v = rng.normal() * s;
  l.b = Tensor::make({out}, true);
  return l;
}

inline TensorPtr linear(Tape& tape, const TensorPtr& x, const Linear& l) {
  return add_rowvec(tape, matmul(tape, x, l.w), l.b);
}

inline void collect_linear(NamedParams& out, const std::string& prefix, const Linear& l) {
  out.emplace_back(prefix + ".w", l.w);
  out.emplace_back(prefix + ".b", l.b);
}

inline void set_trainable(const NamedParams& params, bool trainable) {
  for (const auto& [name, t] : params) {
    t->requires_grad = trainable;
    t->needs_grad = trainable;
  }
}

// ---------------------------------------------------------------------------
// checkpoint parameter block: {"name": {"shape": [...], "values": [...]}}
// ---------------------------------------------------------------------------

inline nlohmann::json params_to_json(const NamedParams& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    j[name] = {{"shape", t->shape}, {"values", t->values}};
  }
  return j;
}

inline void params_from_json(const nlohmann::json& j, const NamedParams& params) {
  for (const auto& [name, t] : params) {
    if (!j.contains(name)) throw std::runtime_error("checkpoint: missing parameter " + name);
    const auto& entry = j.at(name);
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != t->shape)
      throw std::runtime_error("checkpoint: parameter " + name + " has shape " + shape_str(shape) +
                               ", expected " + shape_str(t->shape));
    const auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != t->values.size())
      throw std::runtime_error("checkpoint: parameter " + name + " has wrong value count");
    t->values = values;
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(params.begin(), params.end(),
                                   [&](const auto& p) { return p.first == it.key(); });
    if (!known) throw std::runtime_error("checkpoint: unknown parameter " + it.key());
  }
}

// deep value snapshot, for best-checkpoint tracking
inline std::vector<std::vector<double>> snapshot_values(const NamedParams& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t->values);
  return out;
}

inline void restore_values(const NamedParams& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second->values = snap[i];
}

}  // namespace morpho
