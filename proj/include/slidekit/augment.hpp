#pragma once

#include <cstdint>
#include <string>

#include "slidekit/catalog.hpp"
#include "slidekit/features.hpp"

namespace slidekit {

inline constexpr double kTransferStdFloor = 1e-6;

// Reinhard transfer in l-alpha-beta space, before conversion back to RGB:
//   out = (x - src.mean) * tgt.std / max(src.std, eps) + tgt.mean
ChannelImage reinhard_transfer_lab(const ChannelImage& lalphabeta, const StainStats& src, const StainStats& tgt);

// Full transfer on an 8-bit image; output clamped to [0, 255].
RgbImage reinhard_transfer(const RgbImage& img, const StainStats& src, const StainStats& tgt);

// Element of D4: code = flip * 4 + quarter_turns. The horizontal flip (if
// any) is applied first, then quarter_turns clockwise rotations.
RgbImage dihedral_augment(const RgbImage& img, int code);

// dihedral(compose(a, b)) == dihedral(a) applied after dihedral(b).
int dihedral_compose(int a, int b);

struct AugmentedView {
  RgbImage image;
  std::string target_slide;
  int dihedral_code = 0;
};

// Reads the tile, transfers its slide's staining statistics to those of a
// seeded-random other slide, then applies a seeded-random dihedral code.
// No solarization. A single-slide table transfers to itself.
AugmentedView augment_view(const TileRef& tile, const TileSource& source, const StainStatsTable& stats,
                           std::uint64_t seed);

}  // namespace slidekit
