#include "slidekit/augment.hpp"

#include <vector>

#include "slidekit/random.hpp"

namespace slidekit {

ChannelImage reinhard_transfer_lab(const ChannelImage& lalphabeta, const StainStats& src, const StainStats& tgt) {
  ChannelImage out = lalphabeta;
  for (int c = 0; c < 3; ++c) {
    const double scale = tgt.std[c] / std::max(src.std[c], kTransferStdFloor);
    out.pixels.col(c) = ((lalphabeta.pixels.col(c).array() - src.mean[c]) * scale + tgt.mean[c]).matrix();
  }
  return out;
}

RgbImage reinhard_transfer(const RgbImage& img, const StainStats& src, const StainStats& tgt) {
  return to_rgb(reinhard_transfer_lab(convert_color(img, ColorSpace::LAlphaBeta), src, tgt), ColorSpace::LAlphaBeta);
}

RgbImage dihedral_augment(const RgbImage& img, int code) {
  if (img.width != img.height) throw Error("dihedral_augment: image must be square");
  if (code < 0 || code >= 8) throw Error("dihedral_augment: code must be in [0, 8)");
  const int n = img.width;
  const bool flip = code >= 4;
  const int turns = code % 4;
  RgbImage out(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Output pixel (x, y): undo the rotations, then the flip.
      int sx = x, sy = y;
      for (int t = 0; t < turns; ++t) {
        const int px = sy, py = n - 1 - sx;  // inverse of one clockwise turn
        sx = px;
        sy = py;
      }
      if (flip) sx = n - 1 - sx;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

int dihedral_compose(int a, int b) {
  const int fa = a / 4, ra = a % 4, fb = b / 4, rb = b % 4;
  // F R^r = R^-r F
  const int r = ((ra + (fa ? -rb : rb)) % 4 + 4) % 4;
  return (fa ^ fb) * 4 + r;
}

AugmentedView augment_view(const TileRef& tile, const TileSource& source, const StainStatsTable& stats,
                           std::uint64_t seed) {
  auto own = stats.find(tile.slide_id);
  if (own == stats.end()) throw Error("augment: no stain statistics for slide " + tile.slide_id);

  Rng rng(counter_hash(seed, fnv1a64(tile.slide_id) ^ mix64((static_cast<std::uint64_t>(tile.x) << 32) |
                                                            static_cast<std::uint32_t>(tile.y))));
  std::vector<const StainStats*> others;
  for (const auto& [id, s] : stats) {
    if (id != tile.slide_id) others.push_back(&s);
  }
  const StainStats& target = others.empty() ? own->second : *others[rng.index(others.size())];

  AugmentedView view;
  view.target_slide = target.slide_id;
  view.dihedral_code = static_cast<int>(rng.index(8));
  view.image = dihedral_augment(reinhard_transfer(source.read(tile), own->second, target), view.dihedral_code);
  return view;
}

}  // namespace slidekit
