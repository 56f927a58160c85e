#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morpho/mask.hpp"
#include "morpho/rng.hpp"

namespace morpho {

struct GrayImage {
  int height = 0, width = 0;
  std::vector<double> pix;  // [0,1]
  GrayImage() = default;
  GrayImage(int h, int w) : height(h), width(w), pix(static_cast<std::size_t>(h) * w, 0.0) {}
  double& at(int r, int c) { return pix[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return pix[static_cast<std::size_t>(r) * width + c]; }
};

struct GeneratorConfig {
  int num_classes = 3;
  int train_samples = 600;
  int val_samples = 200;
  int test_samples = 200;
  double noise_level = 0.15;
  int distractors = 4;
  std::uint64_t seed = 42;
};

// One synthetic knee: radiograph-like image, true femur/tibia masks, a
// shuffled candidate pool (true masks plus shifted/eroded decoys), severity
// label, and the generative joint-space gap that carries the label.
struct SynthSample {
  GrayImage image;
  BinaryMask mask_u, mask_l;
  std::vector<BinaryMask> candidates;
  int label = 0;
  double gap = 0.0;
  int true_u_index = -1, true_l_index = -1;
  std::uint64_t rng_seed = 0;
};

namespace synth_detail {

constexpr int kSide = 64;
constexpr double kGapMin = 2.0;
constexpr double kGapMax = 13.0;
constexpr double kGapMargin = 0.4;

// Higher grade, narrower joint space. Bands are disjoint so a threshold rule
// on the true gap recovers the grade exactly.
inline std::pair<double, double> gap_band(int grade, int num_classes) {
  const double w = (kGapMax - kGapMin) / num_classes;
  const double lo = kGapMin + (num_classes - 1 - grade) * w + kGapMargin;
  const double hi = kGapMin + (num_classes - grade) * w - kGapMargin;
  return {lo, hi};
}

inline int grade_from_gap(double gap, int num_classes) {
  const double w = (kGapMax - kGapMin) / num_classes;
  int band = static_cast<int>(std::floor((gap - kGapMin) / w));
  band = std::max(0, std::min(num_classes - 1, band));
  return num_classes - 1 - band;
}

inline BinaryMask shift_mask(const BinaryMask& m, int dr, int dc) {
  BinaryMask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c)) out.set(r + dr, c + dc);
  return out;
}

inline BinaryMask erode_mask(const BinaryMask& m) {
  BinaryMask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c) && m.at(r - 1, c) && m.at(r + 1, c) && m.at(r, c - 1) && m.at(r, c + 1))
        out.set(r, c);
  return out;
}

inline BinaryMask dilate_mask(const BinaryMask& m) {
  BinaryMask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c) || m.at(r - 1, c) || m.at(r + 1, c) || m.at(r, c - 1) || m.at(r, c + 1))
        out.set(r, c);
  return out;
}

inline void fill_disc(BinaryMask& m, double cy, double cx, double radius) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int r1 = std::min(m.height - 1, static_cast<int>(std::ceil(cy + radius)));
  for (int r = r0; r <= r1; ++r)
    for (int c = std::max(0, static_cast<int>(std::floor(cx - radius)));
         c <= std::min(m.width - 1, static_cast<int>(std::ceil(cx + radius))); ++c)
      if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius) m.set(r, c);
}

}  // namespace synth_detail

// Deterministic parametric knee generator. Geometry carries the grade via the
// joint-space gap; osteophyte-like marginal bumps appear in the upper half of
// the grade range; the image adds grade-correlated sclerotic mottling plus
// nuisance gain/offset and pixel noise so the vision path stays informative
// but weaker than the explicit geometry.
inline SynthSample generate_sample(int grade, const GeneratorConfig& cfg, std::uint64_t stream, int index) {
  namespace sd = synth_detail;
  if (grade < 0 || grade >= cfg.num_classes)
    throw std::invalid_argument("generate_sample: grade " + std::to_string(grade) + " outside [0," +
                                std::to_string(cfg.num_classes) + ")");
  const int S = sd::kSide;
  SynthSample out;
  out.label = grade;
  out.rng_seed = mix_seed(cfg.seed, stream, static_cast<std::uint64_t>(index));
  Rng rng(out.rng_seed);

  const auto [gap_lo, gap_hi] = sd::gap_band(grade, cfg.num_classes);
  const double gap = rng.uniform(gap_lo, gap_hi);
  out.gap = gap;
  const double joint_y = 32.0 + rng.uniform(-3.0, 3.0);
  const double x0 = 4.0 + rng.uniform(0.0, 3.0);
  const double x1 = 59.0 - rng.uniform(0.0, 3.0);
  const double xm = 0.5 * (x0 + x1);
  const double xr = 0.5 * (x1 - x0);

  const double thick_u = rng.uniform(13.0, 17.0);
  const double thick_l = rng.uniform(13.0, 17.0);
  const double curv_u = rng.uniform(1.5, 4.0);  // femoral condyle convexity
  const double curv_l = rng.uniform(0.5, 2.0);  // flatter tibial plateau
  double amp_u1 = rng.uniform(0.4, 1.4), ph_u1 = rng.uniform(0.0, 6.283);
  double amp_u2 = rng.uniform(0.2, 0.8), ph_u2 = rng.uniform(0.0, 6.283);
  double amp_l1 = rng.uniform(0.4, 1.4), ph_l1 = rng.uniform(0.0, 6.283);
  double amp_l2 = rng.uniform(0.2, 0.8), ph_l2 = rng.uniform(0.0, 6.283);

  auto wobble = [&](double x, double a1, double p1, double a2, double p2) {
    return a1 * std::sin(2.0 * M_PI * x / S + p1) + a2 * std::sin(4.0 * M_PI * x / S + p2);
  };

  out.mask_u = BinaryMask(S, S);
  out.mask_l = BinaryMask(S, S);
  const double yu_base = joint_y - 0.5 * gap;
  const double yl_base = joint_y + 0.5 * gap;
  for (int c = static_cast<int>(std::ceil(x0)); c <= static_cast<int>(std::floor(x1)); ++c) {
    const double rel = (c - xm) / xr;
    // facing edges deviate away from the joint line, never into the gap
    const double shape_u = std::max(0.0, curv_u * rel * rel + wobble(c, amp_u1, ph_u1, amp_u2, ph_u2));
    const double shape_l = std::max(0.0, curv_l * rel * rel + wobble(c, amp_l1, ph_l1, amp_l2, ph_l2));
    const double yu_bot = yu_base - shape_u;
    const double yu_top = std::max(2.0, yu_bot - thick_u - wobble(c, amp_u2, ph_u2, amp_u1, ph_u1));
    const double yl_top = yl_base + shape_l;
    const double yl_bot = std::min(static_cast<double>(S) - 3.0,
                                   yl_top + thick_l + wobble(c, amp_l2, ph_l2, amp_l1, ph_l1));
    for (int r = static_cast<int>(std::ceil(yu_top)); r <= static_cast<int>(std::floor(yu_bot)); ++r)
      out.mask_u.set(r, c);
    for (int r = static_cast<int>(std::ceil(yl_top)); r <= static_cast<int>(std::floor(yl_bot)); ++r)
      out.mask_l.set(r, c);
  }

  // osteophyte-like marginal bumps from mid-severity upward. Centers sit on
  // the exact filled joint-facing edge (wobble included) tucked slightly
  // inside the bone, and the radius stays below a third of the gap, so the
  // bumps bulge without detaching or bridging.
  if (2 * grade >= cfg.num_classes) {
    const double radius = std::min(2.2, 0.3 * gap);
    for (double cx : {x0 + 1.5, x1 - 1.5}) {
      const double rel = (cx - xm) / xr;
      const double shape_u = std::max(0.0, curv_u * rel * rel + wobble(cx, amp_u1, ph_u1, amp_u2, ph_u2));
      const double shape_l = std::max(0.0, curv_l * rel * rel + wobble(cx, amp_l1, ph_l1, amp_l2, ph_l2));
      sd::fill_disc(out.mask_u, yu_base - shape_u - 0.4 * radius, cx, radius);
      sd::fill_disc(out.mask_l, yl_base + shape_l + 0.4 * radius, cx, radius);
    }
  }

  // radiograph-like rendering. The joint space is filled with soft-tissue
  // intensity sitting just below the darkest bone pixel: the gap stays
  // readable from pixels only as a low-contrast band under noise, so the
  // image carries the grade signal weakly while the mask geometry carries it
  // exactly.
  out.image = GrayImage(S, S);
  const double bg = 0.12;
  const double fill_u = rng.uniform(0.50, 0.68);
  const double fill_l = rng.uniform(0.50, 0.68);
  const double tissue = std::min(fill_u, fill_l) - 0.135 - rng.uniform(0.0, 0.06);
  double wave_a[3], wave_b[3], wave_p[3];
  for (int i = 0; i < 3; ++i) {
    wave_a[i] = rng.uniform(-1.0, 1.0);
    wave_b[i] = rng.uniform(-1.0, 1.0);
    wave_p[i] = rng.uniform(0.0, 6.283);
  }
  std::vector<int> u_bottom(static_cast<std::size_t>(S), -1), l_top(static_cast<std::size_t>(S), -1);
  for (int c = 0; c < S; ++c)
    for (int r = 0; r < S; ++r) {
      if (out.mask_u.at(r, c)) u_bottom[static_cast<std::size_t>(c)] = r;
      if (out.mask_l.at(r, c) && l_top[static_cast<std::size_t>(c)] < 0) l_top[static_cast<std::size_t>(c)] = r;
    }
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      double tex = 0.0;
      for (int i = 0; i < 3; ++i)
        tex += std::sin((wave_a[i] * r + wave_b[i] * c) * (0.1 + 0.05 * i) + wave_p[i]);
      double v = bg + 0.015 * tex;
      const bool in_band = u_bottom[static_cast<std::size_t>(c)] >= 0 && l_top[static_cast<std::size_t>(c)] >= 0 &&
                           r > u_bottom[static_cast<std::size_t>(c)] && r < l_top[static_cast<std::size_t>(c)];
      if (in_band) v = tissue + 0.015 * tex;
      if (out.mask_u.at(r, c) || out.mask_l.at(r, c)) {
        const double fill = out.mask_u.at(r, c) ? fill_u : fill_l;
        v = fill + 0.03 * tex - 0.002 * std::abs(r - joint_y);
      }
      out.image.at(r, c) = v;
    }

  // grade-correlated sclerotic mottling near the joint margins
  const int patches = grade * 2 + rng.uniform_int(0, 1);
  for (int p = 0; p < patches; ++p) {
    const double px = rng.uniform(x0 + 2.0, x1 - 2.0);
    const bool upper = rng.uniform() < 0.5;
    const double py = upper ? yu_base - rng.uniform(1.0, 4.0) : yl_base + rng.uniform(1.0, 4.0);
    const double pr = rng.uniform(1.0, 2.5);
    const double gain = rng.uniform(0.10, 0.20);
    const auto& bone = upper ? out.mask_u : out.mask_l;
    for (int r = static_cast<int>(py - pr); r <= static_cast<int>(py + pr); ++r)
      for (int c = static_cast<int>(px - pr); c <= static_cast<int>(px + pr); ++c) {
        if (r < 0 || r >= S || c < 0 || c >= S || !bone.at(r, c)) continue;
        if ((r - py) * (r - py) + (c - px) * (c - px) <= pr * pr) out.image.at(r, c) += gain;
      }
  }

  // nuisance gain/offset, pixel noise, clamp
  const double gain = rng.uniform(0.85, 1.15);
  const double offset = rng.uniform(-0.04, 0.04);
  for (auto& v : out.image.pix) {
    v = v * gain + offset + cfg.noise_level * rng.normal();
    v = std::min(1.0, std::max(0.0, v));
  }

  // candidate pool: the two true masks plus shifted, eroded decoys. Shifts
  // start at 10 px, beyond any natural placement jitter, so a decoy can never
  // out-align the true mask against the templates.
  std::vector<BinaryMask> pool = {out.mask_u, out.mask_l};
  for (int d = 0; d < cfg.distractors; ++d) {
    const BinaryMask& base = d % 2 == 0 ? out.mask_u : out.mask_l;
    BinaryMask decoy;
    do {
      const int dr = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform_int(10, 16);
      const int dc = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform_int(10, 16);
      decoy = sd::erode_mask(sd::shift_mask(base, dr, dc));
      if (rng.uniform() < 0.5) decoy = sd::erode_mask(decoy);
    } while (decoy.empty());
    pool.push_back(std::move(decoy));
  }
  std::vector<int> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  out.candidates.reserve(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == 0) out.true_u_index = static_cast<int>(i);
    if (order[i] == 1) out.true_l_index = static_cast<int>(i);
    out.candidates.push_back(pool[static_cast<std::size_t>(order[i])]);
  }
  return out;
}

// Pixel-majority templates over 50 samples cycling through every grade.
inline std::pair<BinaryMask, BinaryMask> template_masks(const GeneratorConfig& cfg) {
  namespace sd = synth_detail;
  const int n = 50;
  std::vector<int> votes_u(static_cast<std::size_t>(sd::kSide) * sd::kSide, 0);
  std::vector<int> votes_l(votes_u.size(), 0);
  for (int i = 0; i < n; ++i) {
    auto s = generate_sample(i % cfg.num_classes, cfg, 0x7e3914u, i);
    for (std::size_t p = 0; p < votes_u.size(); ++p) {
      votes_u[p] += s.mask_u.bits[p] != 0;
      votes_l[p] += s.mask_l.bits[p] != 0;
    }
  }
  BinaryMask tu(sd::kSide, sd::kSide), tl(sd::kSide, sd::kSide);
  for (std::size_t p = 0; p < votes_u.size(); ++p) {
    tu.bits[p] = votes_u[p] * 2 >= n ? 1 : 0;
    tl.bits[p] = votes_l[p] * 2 >= n ? 1 : 0;
  }
  return {tu, tl};
}

// ---------------------------------------------------------------------------
// dataset on disk: PGM rasters + JSON-lines manifest
// ---------------------------------------------------------------------------

inline void save_image_pgm(const GrayImage& img, const std::string& path) {
  std::vector<std::uint8_t> gray(img.pix.size());
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    gray[i] = static_cast<std::uint8_t>(std::lround(std::min(1.0, std::max(0.0, img.pix[i])) * 255.0));
  write_pgm(path, img.height, img.width, gray);
}

inline GrayImage load_image_pgm(const std::string& path) {
  int h = 0, w = 0;
  auto gray = read_pgm(path, h, w);
  GrayImage img(h, w);
  for (std::size_t i = 0; i < gray.size(); ++i) img.pix[i] = gray[i] / 255.0;
  return img;
}

// Writes images/, masks/, candidates/, templates/ and manifest.jsonl with one
// row per sample: {"image","mask_u","mask_l","candidates","label","split"}.
// Splits are class-balanced within one sample by construction.
inline void generate_dataset(const GeneratorConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  if (cfg.train_samples < cfg.num_classes || cfg.val_samples < cfg.num_classes ||
      cfg.test_samples < cfg.num_classes)
    throw std::invalid_argument("generate_dataset: every split needs at least one sample per class");
  fs::create_directories(dir);
  for (const char* sub : {"images", "masks", "candidates", "templates"}) fs::create_directories(fs::path(dir) / sub);

  auto [tu, tl] = template_masks(cfg);
  save_mask_pgm(tu, (fs::path(dir) / "templates" / "template_u.pgm").string());
  save_mask_pgm(tl, (fs::path(dir) / "templates" / "template_l.pgm").string());

  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("generate_dataset: cannot write manifest in " + dir);

  const std::array<std::pair<const char*, int>, 3> splits = {
      {{"train", cfg.train_samples}, {"val", cfg.val_samples}, {"test", cfg.test_samples}}};
  int global = 0;
  for (std::size_t si = 0; si < splits.size(); ++si) {
    const auto& [split, count] = splits[si];
    for (int i = 0; i < count; ++i, ++global) {
      const int grade = i % cfg.num_classes;
      auto s = generate_sample(grade, cfg, si + 1, i);
      char id[16];
      std::snprintf(id, sizeof(id), "%06d", global);
      const std::string img_rel = std::string("images/") + id + ".pgm";
      const std::string mu_rel = std::string("masks/") + id + "_u.pgm";
      const std::string ml_rel = std::string("masks/") + id + "_l.pgm";
      save_image_pgm(s.image, (fs::path(dir) / img_rel).string());
      save_mask_pgm(s.mask_u, (fs::path(dir) / mu_rel).string());
      save_mask_pgm(s.mask_l, (fs::path(dir) / ml_rel).string());
      nlohmann::json row;
      row["image"] = img_rel;
      row["mask_u"] = mu_rel;
      row["mask_l"] = ml_rel;
      auto& cand = row["candidates"] = nlohmann::json::array();
      for (std::size_t ci = 0; ci < s.candidates.size(); ++ci) {
        const std::string c_rel = std::string("candidates/") + id + "_" + std::to_string(ci) + ".pgm";
        save_mask_pgm(s.candidates[ci], (fs::path(dir) / c_rel).string());
        cand.push_back(c_rel);
      }
      row["label"] = s.label;
      row["split"] = split;
      manifest << row.dump() << "\n";
    }
  }
}

}  // namespace morpho
