#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spms {

/// First-order square lattice over width*height pixels, row-major node ids.
/// Edges connect pixels at L1 distance 1; free (non-periodic) boundaries.
/// Immutable after construction.
class LatticeGraph {
 public:
  LatticeGraph(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1)
      throw std::invalid_argument("lattice dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int node_count() const { return width_ * height_; }
  int edge_count() const { return 2 * width_ * height_ - width_ - height_; }

  int node_id(int x, int y) const { return y * width_ + x; }
  std::pair<int, int> coords(int v) const { return {v % width_, v / width_}; }

  /// Existing neighbors of v in fixed N,E,S,W order; v is never its own
  /// neighbor.
  std::vector<int> neighbors(int v) const {
    check_node(v);
    auto [x, y] = coords(v);
    std::vector<int> out;
    out.reserve(4);
    if (y > 0) out.push_back(node_id(x, y - 1));
    if (x < width_ - 1) out.push_back(node_id(x + 1, y));
    if (y < height_ - 1) out.push_back(node_id(x, y + 1));
    if (x > 0) out.push_back(node_id(x - 1, y));
    return out;
  }

  /// Undirected edge list, each edge once as (u, v) with u < v.
  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(edge_count());
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        int v = node_id(x, y);
        if (x < width_ - 1) out.emplace_back(v, node_id(x + 1, y));
        if (y < height_ - 1) out.emplace_back(v, node_id(x, y + 1));
      }
    return out;
  }

  void check_node(int v) const {
    if (v < 0 || v >= node_count())
      throw std::invalid_argument("node id out of range");
  }

 private:
  int width_;
  int height_;
};

inline LatticeGraph build_lattice(int width, int height) {
  return LatticeGraph(width, height);
}

/// Grid of small integer region labels plus a label -> model order mapping.
/// Used to describe ground-truth configurations for simulation studies.
struct RegionMask {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // row-major, one per pixel
  std::unordered_map<int, int> order_of_label;

  int label_at(int v) const { return labels.at(static_cast<size_t>(v)); }
};

/// Parses a plain-text grid: one row per line, whitespace-separated integer
/// labels, '#' comment lines ignored.
inline RegionMask load_region_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mask file " + path);
  RegionMask mask;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int label;
    int count = 0;
    while (ss >> label) {
      mask.labels.push_back(label);
      ++count;
    }
    if (count == 0) continue;
    if (mask.width == 0)
      mask.width = count;
    else if (count != mask.width)
      throw std::runtime_error(path + ": ragged mask rows");
    ++mask.height;
  }
  if (mask.width == 0) throw std::runtime_error(path + ": empty mask");
  return mask;
}

inline void save_region_mask_grid(const RegionMask& mask,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x)
      out << (x ? " " : "") << mask.labels[static_cast<size_t>(y * mask.width + x)];
    out << "\n";
  }
}

/// Nearest-neighbor upscaling by an integer factor (used for the 100x100
/// variant of the default 20x20 mask).
inline RegionMask upscale_mask(const RegionMask& mask, int factor) {
  if (factor < 1) throw std::invalid_argument("upscale factor must be >= 1");
  RegionMask out;
  out.width = mask.width * factor;
  out.height = mask.height * factor;
  out.order_of_label = mask.order_of_label;
  out.labels.resize(static_cast<size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.labels[static_cast<size_t>(y * out.width + x)] =
          mask.labels[static_cast<size_t>((y / factor) * mask.width + x / factor)];
  return out;
}

/// Nearest-neighbor resampling to an arbitrary target size (each target
/// pixel takes the label of the proportionally mapped source pixel).
inline RegionMask resample_mask(const RegionMask& mask, int width, int height) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("target dimensions must be positive");
  RegionMask out;
  out.width = width;
  out.height = height;
  out.order_of_label = mask.order_of_label;
  out.labels.resize(static_cast<size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int sx = static_cast<int>(static_cast<long>(x) * mask.width / width);
      int sy = static_cast<int>(static_cast<long>(y) * mask.height / height);
      out.labels[static_cast<size_t>(y) * width + x] =
          mask.labels[static_cast<size_t>(sy) * mask.width + sx];
    }
  return out;
}

}  // namespace spms
