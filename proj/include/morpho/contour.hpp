#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <queue>
#include <stdexcept>
#include <vector>

#include "morpho/mask.hpp"

namespace morpho {

// Ordered closed outer boundary. Points are (x, y) pixel coordinates with x
// along columns and y along rows; sub-pixel values appear after sampling.
struct Contour {
  std::vector<std::array<double, 2>> points;

  double perimeter() const {
    double p = 0.0;
    const std::size_t n = points.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = points[i];
      const auto& b = points[(i + 1) % n];
      p += std::hypot(b[0] - a[0], b[1] - a[1]);
    }
    return p;
  }
};

namespace detail {

// Moore ring, clockwise from West. Consecutive ring cells are 4-adjacent,
// which guarantees every traced pixel is entered past a 4-adjacent
// background cell.
inline constexpr int kRing[8][2] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1},
                                    {0, 1},  {1, 1},   {1, 0},  {1, -1}};

inline int ring_index(int dr, int dc) {
  for (int i = 0; i < 8; ++i)
    if (kRing[i][0] == dr && kRing[i][1] == dc) return i;
  throw std::logic_error("ring_index: not a Moore neighbor");
}

// Largest 8-connected foreground component (ties keep the first in row-major
// order). Returns component mask and whether others were discarded.
inline BinaryMask largest_component(const BinaryMask& mask, bool& multiple) {
  std::vector<int> label(mask.bits.size(), -1);
  int n_labels = 0;
  std::vector<long long> sizes;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c) || label[static_cast<std::size_t>(r) * mask.width + c] >= 0) continue;
      const int id = n_labels++;
      sizes.push_back(0);
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      label[static_cast<std::size_t>(r) * mask.width + c] = id;
      while (!q.empty()) {
        auto [cr, cc] = q.front();
        q.pop();
        ++sizes[static_cast<std::size_t>(id)];
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = cr + dr, nc = cc + dc;
            if (!mask.at(nr, nc)) continue;
            auto& l = label[static_cast<std::size_t>(nr) * mask.width + nc];
            if (l < 0) {
              l = id;
              q.push({nr, nc});
            }
          }
      }
    }
  multiple = n_labels > 1;
  int best = 0;
  for (int i = 1; i < n_labels; ++i)
    if (sizes[static_cast<std::size_t>(i)] > sizes[static_cast<std::size_t>(best)]) best = i;
  BinaryMask out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) out.bits[i] = label[i] == best ? 1 : 0;
  return out;
}

}  // namespace detail

// Moore-neighbor boundary trace of the outer contour. Multi-component masks
// fall back to the largest component with a warning on stderr. The emitted
// walk is the full boundary cycle: thin (1-px) parts legitimately revisit
// pixels on the way back.
inline Contour trace_boundary(const BinaryMask& input) {
  if (input.empty()) throw std::invalid_argument("trace_boundary: empty mask");
  bool multiple = false;
  const BinaryMask mask = detail::largest_component(input, multiple);
  if (multiple)
    std::fprintf(stderr, "trace_boundary: mask has multiple components, tracing the largest\n");

  int sr = -1, sc = -1;
  for (int r = 0; r < mask.height && sr < 0; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        sr = r;
        sc = c;
        break;
      }

  // Walk states are (pixel, backtrack). The first repeated state closes the
  // boundary cycle; anything pushed before the cycle start is lead-in.
  std::vector<std::array<int, 2>> pix;
  std::map<std::array<int, 4>, std::size_t> seen;
  int cr = sr, cc = sc, br = sr, bc = sc - 1;
  pix.push_back({cr, cc});
  seen[{cr, cc, br, bc}] = 0;
  std::size_t cycle_start = 0;
  const std::size_t limit = 4 * mask.bits.size() + 8;
  for (std::size_t step = 0; step < limit; ++step) {
    const int from = detail::ring_index(br - cr, bc - cc);
    int nr = -1, nc = -1, pr = br, pc = bc;
    bool found = false;
    for (int i = 1; i <= 8; ++i) {
      const int idx = (from + i) % 8;
      const int qr = cr + detail::kRing[idx][0];
      const int qc = cc + detail::kRing[idx][1];
      if (mask.at(qr, qc)) {
        nr = qr;
        nc = qc;
        found = true;
        break;
      }
      pr = qr;
      pc = qc;
    }
    if (!found) {
      // isolated pixel
      Contour c;
      c.points.push_back({static_cast<double>(sc), static_cast<double>(sr)});
      return c;
    }
    const std::array<int, 4> key = {nr, nc, pr, pc};
    auto it = seen.find(key);
    if (it != seen.end()) {
      cycle_start = it->second;
      break;
    }
    seen[key] = pix.size();
    pix.push_back({nr, nc});
    cr = nr;
    cc = nc;
    br = pr;
    bc = pc;
  }

  std::vector<std::array<int, 2>> cyc(pix.begin() + static_cast<std::ptrdiff_t>(cycle_start), pix.end());

  // counter-clockwise in math axes (y up); image rows grow downward, so the
  // image-coordinate shoelace sum flips sign
  double area2 = 0.0;
  for (std::size_t i = 0; i < cyc.size(); ++i) {
    const auto& a = cyc[i];
    const auto& b = cyc[(i + 1) % cyc.size()];
    area2 += static_cast<double>(a[1]) * b[0] - static_cast<double>(b[1]) * a[0];
  }
  if (area2 > 0.0) std::reverse(cyc.begin() + 1, cyc.end());

  Contour out;
  out.points.reserve(cyc.size());
  for (const auto& p : cyc) out.points.push_back({static_cast<double>(p[1]), static_cast<double>(p[0])});
  return out;
}

// n points at arc lengths {i * P / n} along the closed contour, walking from
// the topmost-then-leftmost point so the sampling is canonical.
inline std::vector<std::array<double, 2>> uniform_sample(const Contour& contour, int n) {
  if (n < 3) throw std::invalid_argument("uniform_sample: need n >= 3, got " + std::to_string(n));
  const std::size_t m = contour.points.size();
  if (m == 0) throw std::invalid_argument("uniform_sample: empty contour");
  const double perimeter = contour.perimeter();
  if (perimeter <= 0.0) throw std::invalid_argument("uniform_sample: contour perimeter must be positive");

  std::size_t start = 0;
  for (std::size_t i = 1; i < m; ++i) {
    const auto& p = contour.points[i];
    const auto& s = contour.points[start];
    if (p[1] < s[1] || (p[1] == s[1] && p[0] < s[0])) start = i;
  }

  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& a = contour.points[(start + j) % m];
    const auto& b = contour.points[(start + j + 1) % m];
    cum[j + 1] = cum[j] + std::hypot(b[0] - a[0], b[1] - a[1]);
  }

  std::vector<std::array<double, 2>> samples;
  samples.reserve(static_cast<std::size_t>(n));
  std::size_t seg = 0;
  for (int i = 0; i < n; ++i) {
    const double target = perimeter * i / n;
    while (seg + 1 < m && cum[seg + 1] < target) ++seg;
    const auto& a = contour.points[(start + seg) % m];
    const auto& b = contour.points[(start + seg + 1) % m];
    const double len = cum[seg + 1] - cum[seg];
    const double lam = len > 0.0 ? (target - cum[seg]) / len : 0.0;
    samples.push_back({a[0] + lam * (b[0] - a[0]), a[1] + lam * (b[1] - a[1])});
  }
  return samples;
}

}  // namespace morpho
