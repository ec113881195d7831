#include "nsr/selection_map.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nsr {

std::size_t tile_count(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0) throw ParameterError("patch and stride must be positive");
  if (patch > extent) throw DimensionError("patch " + std::to_string(patch) + " exceeds image extent " +
                                           std::to_string(extent));
  return (extent - patch) / stride + 1;
}

SelectionMap export_selection_map(const Model<float>& model, const Image& image, const std::string& layer,
                                  std::size_t patch, std::size_t stride) {
  const auto names = model.sparse_layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    // layer_weights produces the diagnostic listing the valid names.
    layer_weights(model, Tensor<float>({1, model.config.in_channels, 1, 1}), layer);
  }
  Image src = image;
  if (model.config.in_channels == 1) src = to_luma(image);
  if (src.channels != model.config.in_channels) {
    throw DimensionError("image has " + std::to_string(src.channels) + " channels, model expects " +
                         std::to_string(model.config.in_channels));
  }
  Tensor<float> full = to_tensor(src);
  for (auto& v : full.data()) v /= 255.0f;

  SelectionMap map;
  map.layer = layer;
  map.tiles_x = tile_count(src.width, patch, stride);
  map.tiles_y = tile_count(src.height, patch, stride);
  map.d = model.config.sparsity->d;
  map.k = model.config.sparsity->k;
  map.rendered = Image(map.tiles_x, map.tiles_y, 1);
  const std::size_t c = full.c();
  for (std::size_t ty = 0; ty < map.tiles_y; ++ty) {
    for (std::size_t tx = 0; tx < map.tiles_x; ++tx) {
      Tensor<float> tile({1, c, patch, patch});
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < patch; ++y) {
          const float* row = &full(0, ch, ty * stride + y, tx * stride);
          std::copy(row, row + patch, &tile(0, ch, y, 0));
        }
      }
      auto w = layer_weights(model, tile, layer).front();
      // Render the group with the largest weight averaged over cardinal rows.
      std::vector<float> mean(map.k, 0.0f);
      for (std::size_t j = 0; j < map.d; ++j) {
        for (std::size_t i = 0; i < map.k; ++i) mean[i] += w(j, i);
      }
      const std::size_t best = argmax_lowest<float>(mean);
      const double level = map.k > 1 ? 255.0 * static_cast<double>(best) / static_cast<double>(map.k - 1) : 0.0;
      map.rendered.at(tx, ty) = static_cast<std::uint8_t>(std::lround(level));
      map.weights.push_back(std::move(w));
    }
  }
  return map;
}

std::string selection_csv(const SelectionMap& map) {
  std::ostringstream out;
  out << "tile_x,tile_y,cardinal,group,weight\n";
  char buf[64];
  for (std::size_t ty = 0; ty < map.tiles_y; ++ty) {
    for (std::size_t tx = 0; tx < map.tiles_x; ++tx) {
      const auto& w = map.at(tx, ty);
      for (std::size_t j = 0; j < map.d; ++j) {
        for (std::size_t i = 0; i < map.k; ++i) {
          std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(w(j, i)));
          out << tx << ',' << ty << ',' << j << ',' << i << ',' << buf << '\n';
        }
      }
    }
  }
  return out.str();
}

void write_selection_map(const SelectionMap& map, const std::string& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir) / stem;
  std::ofstream csv(base.string() + ".csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + base.string() + ".csv");
  csv << selection_csv(map);
  write_pnm(map.rendered, base.string() + ".pgm");
}

}  // namespace nsr
