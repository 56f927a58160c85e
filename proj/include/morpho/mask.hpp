#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace morpho {

// 2-D boolean pixel grid, row-major. Persisted as binary PGM (P5, maxval
// 255); any stored value >= 128 reads back as foreground.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  bool at(int r, int c) const {
    return r >= 0 && r < height && c >= 0 && c < width &&
           bits[static_cast<std::size_t>(r) * width + c] != 0;
  }
  void set(int r, int c, bool v = true) {
    if (r < 0 || r >= height || c < 0 || c >= width) return;
    bits[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0;
  }

  long long count() const {
    long long n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool empty() const { return count() == 0; }

  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && bits == o.bits;
  }
};

// |a AND b| / |a OR b|
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("iou: mask dimensions differ: " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool fa = a.bits[i] != 0, fb = b.bits[i] != 0;
    inter += fa && fb;
    uni += fa || fb;
  }
  if (uni == 0) throw std::invalid_argument("iou: both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// argmax over candidates of IoU with the template; ties go to the lowest
// index, which keeps selection deterministic.
inline std::pair<int, const BinaryMask*> select_mask(const std::vector<BinaryMask>& candidates,
                                                     const BinaryMask& templ) {
  if (candidates.empty()) throw std::invalid_argument("select_mask: no candidates");
  int best = 0;
  double best_iou = -1.0;
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const double v = iou(candidates[static_cast<std::size_t>(i)], templ);
    if (v > best_iou) {
      best_iou = v;
      best = i;
    }
  }
  return {best, &candidates[static_cast<std::size_t>(best)]};
}

// ---------------------------------------------------------------------------
// PGM (P5) round trip, shared by masks and grayscale images
// ---------------------------------------------------------------------------

inline void write_pgm(const std::string& path, int height, int width,
                      const std::vector<std::uint8_t>& gray) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

inline std::vector<std::uint8_t> read_pgm(const std::string& path, int& height, int& width) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: " + path + " is not binary PGM (P5)");
  auto skip_ws_and_comments = [&f] {
    while (true) {
      const int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
  };
  int maxval = 0;
  skip_ws_and_comments();
  f >> width;
  skip_ws_and_comments();
  f >> height;
  skip_ws_and_comments();
  f >> maxval;
  if (maxval != 255) throw std::runtime_error("read_pgm: " + path + " maxval must be 255");
  f.get();  // single whitespace after header
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(height) * width);
  f.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!f) throw std::runtime_error("read_pgm: truncated data in " + path);
  return gray;
}

inline void save_mask_pgm(const BinaryMask& m, const std::string& path) {
  std::vector<std::uint8_t> gray(m.bits.size());
  for (std::size_t i = 0; i < m.bits.size(); ++i) gray[i] = m.bits[i] ? 255 : 0;
  write_pgm(path, m.height, m.width, gray);
}

inline BinaryMask load_mask_pgm(const std::string& path) {
  int h = 0, w = 0;
  auto gray = read_pgm(path, h, w);
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < gray.size(); ++i) m.bits[i] = gray[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace morpho
