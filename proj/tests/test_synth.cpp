#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "morpho/contour.hpp"
#include "morpho/synth.hpp"

using namespace morpho;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(GenerateSample, DeterministicBytes) {
  GeneratorConfig cfg;
  cfg.noise_level = 0.0;
  auto a = generate_sample(1, cfg, 3, 17);
  auto b = generate_sample(1, cfg, 3, 17);
  EXPECT_EQ(a.image.pix, b.image.pix);
  EXPECT_EQ(a.mask_u, b.mask_u);
  EXPECT_EQ(a.mask_l, b.mask_l);
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i) EXPECT_EQ(a.candidates[i], b.candidates[i]);
  EXPECT_EQ(a.gap, b.gap);

  // noise is deterministic too
  cfg.noise_level = 0.15;
  EXPECT_EQ(generate_sample(2, cfg, 1, 5).image.pix, generate_sample(2, cfg, 1, 5).image.pix);
}

TEST(GenerateSample, InvalidGradeThrows) {
  GeneratorConfig cfg;
  EXPECT_THROW(generate_sample(3, cfg, 0, 0), std::invalid_argument);
  EXPECT_THROW(generate_sample(-1, cfg, 0, 0), std::invalid_argument);
}

TEST(GenerateSample, GapShrinksWithGrade) {
  GeneratorConfig cfg;
  double mean_low = 0.0, mean_high = 0.0;
  for (int i = 0; i < 100; ++i) {
    mean_low += generate_sample(0, cfg, 9, i).gap;
    mean_high += generate_sample(cfg.num_classes - 1, cfg, 9, i).gap;
  }
  EXPECT_GT(mean_low / 100.0, mean_high / 100.0);
}

TEST(GenerateSample, MasksAlwaysDisjointAndNonEmpty) {
  GeneratorConfig cfg;
  for (int i = 0; i < 60; ++i) {
    auto s = generate_sample(i % cfg.num_classes, cfg, 11, i);
    EXPECT_FALSE(s.mask_u.empty());
    EXPECT_FALSE(s.mask_l.empty());
    for (std::size_t p = 0; p < s.mask_u.bits.size(); ++p)
      EXPECT_FALSE(s.mask_u.bits[p] && s.mask_l.bits[p]) << "overlap in sample " << i;
  }
}

TEST(GenerateSample, TrueMasksAreSingleComponents) {
  GeneratorConfig cfg;
  for (int i = 0; i < 60; ++i) {
    auto s = generate_sample(i % cfg.num_classes, cfg, 12, i);
    bool multi_u = false, multi_l = false;
    detail::largest_component(s.mask_u, multi_u);
    detail::largest_component(s.mask_l, multi_l);
    EXPECT_FALSE(multi_u) << "fragmented femur in sample " << i;
    EXPECT_FALSE(multi_l) << "fragmented tibia in sample " << i;
  }
}

TEST(GenerateSample, BonesBrighterThanBackground) {
  GeneratorConfig cfg;
  for (int i = 0; i < 50; ++i) {
    auto s = generate_sample(i % cfg.num_classes, cfg, 13, i);
    double inside = 0.0, outside = 0.0;
    int n_in = 0, n_out = 0;
    for (int r = 0; r < s.image.height; ++r)
      for (int c = 0; c < s.image.width; ++c) {
        if (s.mask_u.at(r, c) || s.mask_l.at(r, c)) {
          inside += s.image.at(r, c);
          ++n_in;
        } else {
          outside += s.image.at(r, c);
          ++n_out;
        }
      }
    EXPECT_GT(inside / n_in, outside / n_out);
  }
}

TEST(GenerateSample, PointwiseSignalWithoutNoise) {
  GeneratorConfig cfg;
  cfg.noise_level = 0.0;
  auto s = generate_sample(0, cfg, 15, 3);
  double min_in = 1.0, max_out = 0.0;
  for (int r = 0; r < s.image.height; ++r)
    for (int c = 0; c < s.image.width; ++c) {
      const bool in = s.mask_u.at(r, c) || s.mask_l.at(r, c);
      if (in) min_in = std::min(min_in, s.image.at(r, c));
      else max_out = std::max(max_out, s.image.at(r, c));
    }
  EXPECT_GE(min_in, max_out);
}

TEST(GenerateSample, LabelRecoverableFromGapAlone) {
  GeneratorConfig cfg;
  cfg.noise_level = 0.0;
  int correct = 0, total = 0;
  for (int g = 0; g < cfg.num_classes; ++g)
    for (int i = 0; i < 40; ++i) {
      auto s = generate_sample(g, cfg, 17, i);
      correct += synth_detail::grade_from_gap(s.gap, cfg.num_classes) == g;
      ++total;
    }
  EXPECT_GE(static_cast<double>(correct) / total, 0.95);
}

TEST(Templates, WellFormedAndDeterministic) {
  GeneratorConfig cfg;
  auto [tu, tl] = template_masks(cfg);
  EXPECT_FALSE(tu.empty());
  EXPECT_FALSE(tl.empty());
  for (std::size_t p = 0; p < tu.bits.size(); ++p) EXPECT_FALSE(tu.bits[p] && tl.bits[p]);
  auto [tu2, tl2] = template_masks(cfg);
  EXPECT_EQ(tu, tu2);
  EXPECT_EQ(tl, tl2);
}

TEST(Templates, SelectionMarginOverDistractors) {
  GeneratorConfig cfg;
  auto [tu, tl] = template_masks(cfg);
  int ok = 0, total = 0;
  for (int i = 0; i < 100; ++i) {
    auto s = generate_sample(i % cfg.num_classes, cfg, 19, i);
    const double true_iou = iou(tu, s.mask_u);
    bool beats_all = true;
    for (int ci = 0; ci < static_cast<int>(s.candidates.size()); ++ci) {
      if (ci == s.true_u_index) continue;
      if (iou(tu, s.candidates[static_cast<std::size_t>(ci)]) >= true_iou) beats_all = false;
    }
    ok += beats_all;
    ++total;
  }
  EXPECT_GE(static_cast<double>(ok) / total, 0.95);
}

TEST(Templates, SelectMaskRecoversTrueMasks) {
  GeneratorConfig cfg;
  auto [tu, tl] = template_masks(cfg);
  int ok_u = 0, ok_l = 0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    auto s = generate_sample(i % cfg.num_classes, cfg, 23, i);
    ok_u += *select_mask(s.candidates, tu).second == s.mask_u;
    ok_l += *select_mask(s.candidates, tl).second == s.mask_l;
  }
  EXPECT_GE(ok_u, 99);
  EXPECT_GE(ok_l, 99);
}

TEST(GenerateDataset, ManifestContractAndReproducibility) {
  GeneratorConfig cfg;
  cfg.train_samples = 12;
  cfg.val_samples = 6;
  cfg.test_samples = 6;
  const auto dir = fs::temp_directory_path() / "morpho_synth_ds";
  fs::remove_all(dir);
  generate_dataset(cfg, dir.string());

  std::ifstream manifest(dir / "manifest.jsonl");
  ASSERT_TRUE(manifest.good());
  std::string line;
  int rows = 0;
  std::map<std::string, std::map<int, int>> class_counts;
  while (std::getline(manifest, line)) {
    auto row = nlohmann::json::parse(line);
    ++class_counts[row.at("split").get<std::string>()][row.at("label").get<int>()];
    // all paths resolve and load
    EXPECT_TRUE(fs::exists(dir / row.at("image").get<std::string>()));
    auto mu = load_mask_pgm((dir / row.at("mask_u").get<std::string>()).string());
    EXPECT_FALSE(mu.empty());
    for (const auto& c : row.at("candidates")) EXPECT_TRUE(fs::exists(dir / c.get<std::string>()));
    ++rows;
  }
  EXPECT_EQ(rows, 24);
  for (int g = 0; g < 3; ++g) {
    EXPECT_EQ(class_counts["train"][g], 4);
    EXPECT_EQ(class_counts["val"][g], 2);
    EXPECT_EQ(class_counts["test"][g], 2);
  }
  EXPECT_TRUE(fs::exists(dir / "templates" / "template_u.pgm"));

  // byte-identical rerun
  const std::string manifest_before = slurp(dir / "manifest.jsonl");
  const std::string image_before = slurp(dir / "images" / "000000.pgm");
  const auto dir2 = fs::temp_directory_path() / "morpho_synth_ds2";
  fs::remove_all(dir2);
  generate_dataset(cfg, dir2.string());
  EXPECT_EQ(manifest_before, slurp(dir2 / "manifest.jsonl"));
  EXPECT_EQ(image_before, slurp(dir2 / "images" / "000000.pgm"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(GenerateDataset, TinySplitRejected) {
  GeneratorConfig cfg;
  cfg.train_samples = 2;  // below one per class
  EXPECT_THROW(generate_dataset(cfg, (fs::temp_directory_path() / "morpho_reject").string()),
               std::invalid_argument);
}

TEST(ImagePgm, RoundTripWithinQuantization) {
  GeneratorConfig cfg;
  auto s = generate_sample(0, cfg, 29, 0);
  const auto path = fs::temp_directory_path() / "morpho_img_roundtrip.pgm";
  save_image_pgm(s.image, path.string());
  auto img = load_image_pgm(path.string());
  ASSERT_EQ(img.pix.size(), s.image.pix.size());
  for (std::size_t i = 0; i < img.pix.size(); ++i) EXPECT_NEAR(img.pix[i], s.image.pix[i], 0.5 / 255.0 + 1e-12);
  // a second save of the loaded image is byte-stable
  const auto path2 = fs::temp_directory_path() / "morpho_img_roundtrip2.pgm";
  save_image_pgm(img, path2.string());
  EXPECT_EQ(slurp(path), slurp(path2));
  fs::remove(path);
  fs::remove(path2);
}
