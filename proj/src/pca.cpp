#include "slidekit/pca.hpp"

#include <algorithm>

namespace slidekit {

GrayImage component_heatmap(const Eigen::MatrixXd& scores, bool positive_only) {
  if (scores.size() == 0) throw std::invalid_argument("component_heatmap: empty grid");
  GrayImage out(static_cast<int>(scores.cols()), static_cast<int>(scores.rows()));
  auto value = [&](Eigen::Index r, Eigen::Index c) {
    const double v = scores(r, c);
    return positive_only ? std::max(v, 0.0) : v;
  };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (std::isnan(scores(r, c))) continue;
      lo = std::min(lo, value(r, c));
      hi = std::max(hi, value(r, c));
    }
  }
  if (!(hi > lo)) return out;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (std::isnan(scores(r, c))) continue;
      const double t = (value(r, c) - lo) / (hi - lo);
      out.at(static_cast<int>(c), static_cast<int>(r)) = static_cast<std::uint8_t>(std::lround(t * 255.0));
    }
  }
  return out;
}

Eigen::MatrixXd scores_to_grid(std::span<const TileCoord> coords, std::span<const double> values, int tile_size) {
  if (coords.size() != values.size()) throw std::invalid_argument("scores_to_grid: size mismatch");
  if (tile_size < 1) throw std::invalid_argument("scores_to_grid: tile_size must be >= 1");
  std::uint32_t max_x = 0, max_y = 0;
  for (const auto& c : coords) {
    max_x = std::max(max_x, c.x);
    max_y = std::max(max_y, c.y);
  }
  const auto ts = static_cast<std::uint32_t>(tile_size);
  Eigen::MatrixXd grid = Eigen::MatrixXd::Constant(coords.empty() ? 0 : max_y / ts + 1, coords.empty() ? 0 : max_x / ts + 1,
                                                   std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < coords.size(); ++i) grid(coords[i].y / ts, coords[i].x / ts) = values[i];
  return grid;
}

}  // namespace slidekit
