#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/csv.hpp"
#include "spms/lattice.hpp"

namespace spms {

/// One model-order index per lattice node (0-based indices into the model
/// family's order set).
struct ModelField {
  int width = 0;
  int height = 0;
  std::vector<int> orders;  // row-major

  ModelField() = default;
  ModelField(int w, int h, int fill = 0)
      : width(w), height(h),
        orders(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

  int size() const { return width * height; }
  int& operator[](int v) { return orders[static_cast<size_t>(v)]; }
  int operator[](int v) const { return orders[static_cast<size_t>(v)]; }
  bool operator==(const ModelField&) const = default;
};

/// Maps region labels through the mask's label -> order table.
inline ModelField ground_truth_field(const RegionMask& mask) {
  ModelField field(mask.width, mask.height);
  for (int v = 0; v < field.size(); ++v) {
    auto it = mask.order_of_label.find(mask.label_at(v));
    if (it == mask.order_of_label.end())
      throw std::invalid_argument("region label " +
                                  std::to_string(mask.label_at(v)) +
                                  " has no model-order mapping");
    field[v] = it->second;
  }
  return field;
}

/// Text-grid serialization, same format as RegionMask files.
inline void save_field_grid(const ModelField& field, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x)
      out << (x ? " " : "") << field[y * field.width + x];
    out << "\n";
  }
}

inline ModelField load_field_grid(const std::string& path) {
  RegionMask grid = load_region_mask(path);
  ModelField field(grid.width, grid.height);
  field.orders = grid.labels;
  return field;
}

/// CSV serialization with header `node,model`.
inline void save_field_csv(const ModelField& field, const std::string& path) {
  CsvWriter csv(path, "node,model");
  for (int v = 0; v < field.size(); ++v) csv.row(v, field[v]);
}

inline ModelField load_field_csv(const std::string& path, int width,
                                 int height) {
  auto rows = read_csv(path, "node,model");
  ModelField field(width, height);
  if (static_cast<int>(rows.size()) != field.size())
    throw std::invalid_argument(path + ": row count does not match lattice");
  for (const auto& r : rows)
    field[std::stoi(r.at(0))] = std::stoi(r.at(1));
  return field;
}

}  // namespace spms
