#pragma once

#include <vector>

#include "morpho/params.hpp"

namespace morpho {

// Compact trainable CNN over 64x64 single-channel images in [0,1]: four
// conv(valid) -> relu -> maxpool(2) blocks with channels 1->8->16->32->64,
// global average pool, linear projection to the 256-d z_vision, and an
// auxiliary linear classifier for the vision-only baseline.
struct VisionModel {
  static constexpr int kImageSide = 64;
  static constexpr int kEmbedDim = 256;

  TensorPtr conv1, conv2, conv3, conv4;  // [F x C x kh x kw], no conv bias
  Linear proj, cls;
  int num_classes = 0;

  static VisionModel init(int num_classes, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x714eu));
    VisionModel m;
    m.num_classes = num_classes;
    auto kernel = [&rng](std::vector<int> shape) {
      auto t = Tensor::make(shape, true);
      const int fan_in = shape[1] * shape[2] * shape[3];
      const double s = std::sqrt(2.0 / fan_in);
      for (auto& v : t->values) v = rng.normal() * s;
      return t;
    };
    m.conv1 = kernel({8, 1, 5, 5});    // 64 -> 60 -> 30
    m.conv2 = kernel({16, 8, 3, 3});   // 30 -> 28 -> 14
    m.conv3 = kernel({32, 16, 3, 3});  // 14 -> 12 -> 6
    m.conv4 = kernel({64, 32, 3, 3});  // 6 -> 4 -> 2
    m.proj = make_linear(rng, 64, kEmbedDim);
    m.cls = make_linear(rng, kEmbedDim, num_classes, 0.1);
    return m;
  }

  NamedParams named_params() const {
    NamedParams out;
    out.emplace_back("conv1.w", conv1);
    out.emplace_back("conv2.w", conv2);
    out.emplace_back("conv3.w", conv3);
    out.emplace_back("conv4.w", conv4);
    collect_linear(out, "proj", proj);
    collect_linear(out, "cls", cls);
    return out;
  }
};

struct VisionForward {
  TensorPtr z_vision;  // [B x 256]
  TensorPtr logits;    // [B x C], auxiliary head
};

inline VisionForward vision_forward(Tape& tape, const TensorPtr& images, const VisionModel& model) {
  if (images->ndim() != 4 || images->dim(1) != 1 || images->dim(2) != VisionModel::kImageSide ||
      images->dim(3) != VisionModel::kImageSide)
    throw std::invalid_argument("vision_forward: expected Bx1x64x64 images, got " + shape_str(images->shape));
  auto h = maxpool2d(tape, relu(tape, conv2d(tape, images, model.conv1)), 2);
  h = maxpool2d(tape, relu(tape, conv2d(tape, h, model.conv2)), 2);
  h = maxpool2d(tape, relu(tape, conv2d(tape, h, model.conv3)), 2);
  h = maxpool2d(tape, relu(tape, conv2d(tape, h, model.conv4)), 2);
  auto z = linear(tape, spatial_mean(tape, h), model.proj);
  return {z, linear(tape, z, model.cls)};
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

inline nlohmann::json vision_checkpoint(const VisionModel& model) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "vision";
  j["dims"] = {{"num_classes", model.num_classes},
               {"image_side", VisionModel::kImageSide},
               {"embed_dim", VisionModel::kEmbedDim},
               {"channels", {8, 16, 32, 64}}};
  j["params"] = params_to_json(model.named_params());
  return j;
}

inline VisionModel vision_from_checkpoint(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw std::runtime_error("vision checkpoint: unsupported version");
  if (j.at("kind").get<std::string>() != "vision")
    throw std::runtime_error("vision checkpoint: kind is " + j.at("kind").get<std::string>());
  auto model = VisionModel::init(j.at("dims").at("num_classes").get<int>(), 0);
  params_from_json(j.at("params"), model.named_params());
  return model;
}

}  // namespace morpho
