#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/csv.hpp"
#include "spms/field.hpp"
#include "spms/node_model.hpp"
#include "spms/pet/compartment_model.hpp"
#include "spms/rng.hpp"

namespace spms::pet {

/// Ground-truth micro-parameters per model order used in simulation studies.
struct TruthTable {
  std::vector<CompartmentParams> by_order;  // index = model order index

  const CompartmentParams& at(int m) const {
    return by_order.at(static_cast<size_t>(m));
  }
};

/// Simulates a dynamic PET image: per node, y_j = C_T(t_j) + e_j with
/// e_j ~ N(0, s * iota_j), the scale s chosen so the largest per-frame
/// variance over the whole image equals noise_level.
inline NodeDataImage simulate_pet_image(const ModelField& field,
                                        const TruthTable& truth,
                                        const PlasmaInput& input,
                                        const FrameSchedule& schedule,
                                        double noise_level,
                                        std::uint64_t seed) {
  if (noise_level <= 0.0)
    throw std::invalid_argument("noise level must be positive");
  int k = schedule.frame_count();
  // one clean curve per model order; each sequence is scaled so its highest
  // per-frame variance equals noise_level
  std::vector<std::vector<double>> curves;
  std::vector<double> scale;
  for (const auto& params : truth.by_order) {
    curves.push_back(tissue_curve(params, input, schedule));
    double max_iota = 0.0;
    for (int j = 0; j < k; ++j)
      max_iota = std::max(max_iota, curves.back()[static_cast<size_t>(j)] /
                                        schedule.duration(j));
    if (max_iota <= 0.0)
      throw std::invalid_argument("all-zero tissue curve; check truth table");
    scale.push_back(noise_level / max_iota);
  }

  NodeDataImage image(field.width, field.height, k);
  for (int v = 0; v < field.size(); ++v) {
    const auto& curve = curves.at(static_cast<size_t>(field[v]));
    double s = scale.at(static_cast<size_t>(field[v]));
    Rng rng = make_rng(seed, {stream::simulate, static_cast<std::uint64_t>(v)});
    auto out = image.node_mut(v);
    for (int j = 0; j < k; ++j) {
      double iota = curve[static_cast<size_t>(j)] / schedule.duration(j);
      std::normal_distribution<double> noise(0.0, std::sqrt(s * iota));
      out[static_cast<size_t>(j)] = curve[static_cast<size_t>(j)] + noise(rng);
    }
  }
  return image;
}

/// CSV image format: header `node,frame,value`, row-major by node.
inline void save_image_csv(const NodeDataImage& image, const std::string& path) {
  CsvWriter csv(path, "node,frame,value");
  for (int v = 0; v < image.node_count(); ++v) {
    auto data = image.node(v);
    for (int j = 0; j < image.frame_count; ++j)
      csv.row(v, j, data[static_cast<size_t>(j)]);
  }
}

inline NodeDataImage load_image_csv(const std::string& path, int width,
                                    int height, int frames) {
  auto rows = read_csv(path, "node,frame,value");
  NodeDataImage image(width, height, frames);
  if (rows.size() != static_cast<size_t>(width) * height * frames)
    throw std::invalid_argument(path + ": row count mismatch");
  for (const auto& r : rows)
    image.node_mut(std::stoi(r.at(0)))[static_cast<size_t>(std::stoi(r.at(1)))] =
        std::stod(r.at(2));
  return image;
}

/// Packed binary format: magic "PETI", u32 width, u32 height, u32 frames,
/// f64 values row-major by node. Bit-compatible with the CSV reader.
inline void save_image_binary(const NodeDataImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.write("PETI", 4);
  std::uint32_t dims[3] = {static_cast<std::uint32_t>(image.width),
                           static_cast<std::uint32_t>(image.height),
                           static_cast<std::uint32_t>(image.frame_count)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(image.values.data()),
            static_cast<std::streamsize>(image.values.size() * sizeof(double)));
}

inline NodeDataImage load_image_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PETI", 4) != 0)
    throw std::runtime_error(path + ": bad magic");
  std::uint32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  NodeDataImage image(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      static_cast<int>(dims[2]));
  in.read(reinterpret_cast<char*>(image.values.data()),
          static_cast<std::streamsize>(image.values.size() * sizeof(double)));
  if (!in) throw std::runtime_error(path + ": truncated image file");
  return image;
}

}  // namespace spms::pet
