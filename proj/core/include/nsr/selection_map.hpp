#pragma once

#include <string>
#include <vector>

#include "nsr/image.hpp"
#include "nsr/network.hpp"

namespace nsr {

/// Mixture weights of one sparse layer for every window of a sliding tiling.
struct SelectionMap {
  std::string layer;
  std::size_t tiles_x = 0;
  std::size_t tiles_y = 0;
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<SparsityWeights<float>> weights;  // row-major over (tile_y, tile_x)
  Image rendered;  // tiles_x x tiles_y gray; intensity 255 * argmax / (k - 1)

  const SparsityWeights<float>& at(std::size_t tx, std::size_t ty) const { return weights[ty * tiles_x + tx]; }
};

/// Number of window positions along an axis of length `extent`.
std::size_t tile_count(std::size_t extent, std::size_t patch, std::size_t stride);

/// Each patch x patch window (top-left corners stepped by `stride`) is run
/// through the model on its own, so the layer pools over exactly that window.
/// The image is converted to the model's channel count and scaled to 0..1.
SelectionMap export_selection_map(const Model<float>& model, const Image& image, const std::string& layer,
                                  std::size_t patch, std::size_t stride);

/// One row per (tile, cardinal, group); header tile_x,tile_y,cardinal,group,weight.
std::string selection_csv(const SelectionMap& map);

/// Writes <dir>/<stem>.csv and <dir>/<stem>.pgm.
void write_selection_map(const SelectionMap& map, const std::string& dir, const std::string& stem);

}  // namespace nsr
