#include "slidekit/color.hpp"

#include "slidekit/stain.hpp"

namespace slidekit {

ChannelImage convert_color(const RgbImage& img, ColorSpace space) {
  ChannelImage out{img.width, img.height, rgb_unit_pixels<double>(img)};
  auto& px = out.pixels;
  switch (space) {
    case ColorSpace::RGB:
      px *= 255.0;
      break;
    case ColorSpace::LAB:
      for (Eigen::Index i = 0; i < px.rows(); ++i) px.row(i) = color::rgb_to_lab<double>(px.row(i).transpose()).transpose();
      break;
    case ColorSpace::HSV:
      for (Eigen::Index i = 0; i < px.rows(); ++i) px.row(i) = color::rgb_to_hsv<double>(px.row(i).transpose()).transpose();
      break;
    case ColorSpace::LAlphaBeta:
      for (Eigen::Index i = 0; i < px.rows(); ++i) {
        px.row(i) = color::rgb_to_lalphabeta<double>(px.row(i).transpose()).transpose();
      }
      break;
  }
  return out;
}

RgbImage to_rgb(const ChannelImage& img, ColorSpace space) {
  RgbImage out(img.width, img.height);
  for (Eigen::Index i = 0; i < img.pixels.rows(); ++i) {
    const Vec3<double> v = img.pixels.row(i).transpose();
    Vec3<double> rgb;
    switch (space) {
      case ColorSpace::RGB: rgb = v / 255.0; break;
      case ColorSpace::LAB: rgb = color::lab_to_rgb(v); break;
      case ColorSpace::HSV: rgb = color::hsv_to_rgb(v); break;
      case ColorSpace::LAlphaBeta: rgb = color::lalphabeta_to_rgb(v); break;
    }
    for (int c = 0; c < 3; ++c) out.pixels[static_cast<std::size_t>(i) * 3 + c] = to_byte(rgb[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------

StainMatrix StainMatrix::from_rows(const Mat3<double>& rows) {
  StainMatrix m;
  m.rows_ = rows;
  for (int r = 0; r < 3; ++r) {
    const double n = rows.row(r).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw Error("stain matrix row " + std::to_string(r) + " is zero or non-finite");
    m.rows_.row(r) /= n;
  }
  if (!(m.condition_number() < 1e6)) throw Error("stain matrix is singular or ill-conditioned");
  m.inverse_ = m.rows_.inverse();
  return m;
}

StainMatrix StainMatrix::hed_default() {
  static const StainMatrix m = from_rows((Mat3<double>() << 0.65, 0.70, 0.29,  //
                                          0.07, 0.99, 0.11,                     //
                                          0.27, 0.57, 0.78)
                                             .finished());
  return m;
}

double StainMatrix::condition_number() const {
  Eigen::JacobiSVD<Mat3<double>> svd(rows_);
  const auto& s = svd.singularValues();
  return s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
}

ChannelImage stain_deconvolve(const RgbImage& img, const StainMatrix& m, const DeconvolutionParams& p) {
  // Per-intensity OD lookup; every pixel value is one of 256 bytes.
  double od_lut[256];
  for (int v = 0; v < 256; ++v) od_lut[v] = optical_density(v, p);

  ChannelImage out{img.width, img.height, PixelMatrix<double>(static_cast<Eigen::Index>(img.pixel_count()), 3)};
  for (Eigen::Index i = 0; i < out.pixels.rows(); ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * 3;
    out.pixels(i, 0) = od_lut[img.pixels[base]];
    out.pixels(i, 1) = od_lut[img.pixels[base + 1]];
    out.pixels(i, 2) = od_lut[img.pixels[base + 2]];
  }
  out.pixels = out.pixels * m.inverse();
  return out;
}

ChannelImage stain_deconvolve(const ChannelImage& intensities, const StainMatrix& m, const DeconvolutionParams& p) {
  ChannelImage out{intensities.width, intensities.height,
                   intensities.pixels.unaryExpr([&](double v) { return optical_density(v, p); })};
  out.pixels = out.pixels * m.inverse();
  return out;
}

}  // namespace slidekit
