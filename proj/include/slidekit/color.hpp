#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "slidekit/image.hpp"

namespace slidekit {

enum class ColorSpace { RGB, LAB, HSV, LAlphaBeta };

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

// One row per pixel (row-major scan order), one column per channel.
template <typename Scalar>
using PixelMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

template <typename Scalar>
struct ChannelImageT {
  int width = 0;
  int height = 0;
  PixelMatrix<Scalar> pixels;
};

using ChannelImage = ChannelImageT<double>;

namespace color {

// sRGB primaries, D65. White is taken as the image of RGB (1,1,1) so that
// white maps to exactly L*=100, a*=b*=0.
template <typename Scalar>
const Mat3<Scalar>& rgb_to_xyz_matrix() {
  static const Mat3<Scalar> m = (Mat3<Scalar>() << 0.412453, 0.357580, 0.180423,  //
                                 0.212671, 0.715160, 0.072169,                    //
                                 0.019334, 0.119193, 0.950227)
                                    .finished();
  return m;
}

template <typename Scalar>
const Mat3<Scalar>& xyz_to_rgb_matrix() {
  static const Mat3<Scalar> m = rgb_to_xyz_matrix<Scalar>().inverse();
  return m;
}

template <typename Scalar>
const Vec3<Scalar>& d65_white() {
  static const Vec3<Scalar> w = rgb_to_xyz_matrix<Scalar>() * Vec3<Scalar>::Ones();
  return w;
}

template <typename Scalar>
Scalar srgb_to_linear(Scalar c) {
  return c <= Scalar(0.04045) ? c / Scalar(12.92) : std::pow((c + Scalar(0.055)) / Scalar(1.055), Scalar(2.4));
}

template <typename Scalar>
Scalar linear_to_srgb(Scalar c) {
  return c <= Scalar(0.0031308) ? c * Scalar(12.92) : Scalar(1.055) * std::pow(c, Scalar(1) / Scalar(2.4)) - Scalar(0.055);
}

template <typename Scalar>
Scalar lab_f(Scalar t) {
  constexpr double d = 6.0 / 29.0;
  return t > Scalar(d * d * d) ? std::cbrt(t) : t / Scalar(3 * d * d) + Scalar(4.0 / 29.0);
}

template <typename Scalar>
Scalar lab_f_inv(Scalar f) {
  constexpr double d = 6.0 / 29.0;
  return f > Scalar(d) ? f * f * f : Scalar(3 * d * d) * (f - Scalar(4.0 / 29.0));
}

// rgb in [0,1] -> (L*, a*, b*)
template <typename Scalar>
Vec3<Scalar> rgb_to_lab(const Vec3<Scalar>& rgb) {
  Vec3<Scalar> lin = rgb.unaryExpr([](Scalar c) { return srgb_to_linear(c); });
  Vec3<Scalar> xyz = (rgb_to_xyz_matrix<Scalar>() * lin).cwiseQuotient(d65_white<Scalar>());
  const Scalar fx = lab_f(xyz.x()), fy = lab_f(xyz.y()), fz = lab_f(xyz.z());
  return {Scalar(116) * fy - Scalar(16), Scalar(500) * (fx - fy), Scalar(200) * (fy - fz)};
}

template <typename Scalar>
Vec3<Scalar> lab_to_rgb(const Vec3<Scalar>& lab) {
  const Scalar fy = (lab.x() + Scalar(16)) / Scalar(116);
  const Scalar fx = fy + lab.y() / Scalar(500);
  const Scalar fz = fy - lab.z() / Scalar(200);
  Vec3<Scalar> xyz(lab_f_inv(fx), lab_f_inv(fy), lab_f_inv(fz));
  Vec3<Scalar> lin = xyz_to_rgb_matrix<Scalar>() * xyz.cwiseProduct(d65_white<Scalar>());
  return lin.unaryExpr([](Scalar c) { return linear_to_srgb(std::max(c, Scalar(0))); });
}

// rgb in [0,1] -> (H, S, V) with H in [0,1).
template <typename Scalar>
Vec3<Scalar> rgb_to_hsv(const Vec3<Scalar>& rgb) {
  const Scalar r = rgb.x(), g = rgb.y(), b = rgb.z();
  const Scalar mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const Scalar delta = mx - mn;
  const Scalar s = mx > Scalar(0) ? delta / mx : Scalar(0);
  Scalar h = 0;
  if (delta > Scalar(0)) {
    if (mx == r) {
      h = (g - b) / delta;
    } else if (mx == g) {
      h = Scalar(2) + (b - r) / delta;
    } else {
      h = Scalar(4) + (r - g) / delta;
    }
    h /= Scalar(6);
    if (h < Scalar(0)) h += Scalar(1);
    if (h >= Scalar(1)) h -= Scalar(1);
  }
  return {h, s, mx};
}

template <typename Scalar>
Vec3<Scalar> hsv_to_rgb(const Vec3<Scalar>& hsv) {
  const Scalar h6 = hsv.x() * Scalar(6), s = hsv.y(), v = hsv.z();
  const Scalar sector = std::floor(h6);
  const Scalar f = h6 - sector;
  const Scalar p = v * (Scalar(1) - s), q = v * (Scalar(1) - s * f), t = v * (Scalar(1) - s * (Scalar(1) - f));
  switch (static_cast<int>(sector) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Decorrelated log-LMS space used for Reinhard color transfer.
template <typename Scalar>
const Mat3<Scalar>& rgb_to_lms_matrix() {
  static const Mat3<Scalar> m = (Mat3<Scalar>() << 0.3811, 0.5783, 0.0402,  //
                                 0.1967, 0.7244, 0.0782,                    //
                                 0.0241, 0.1288, 0.8444)
                                    .finished();
  return m;
}

template <typename Scalar>
const Mat3<Scalar>& loglms_to_lalphabeta_matrix() {
  static const Mat3<Scalar> m =
      (Vec3<Scalar>(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0)).asDiagonal() *
       (Mat3<Scalar>() << 1, 1, 1, 1, 1, -2, 1, -1, 0).finished())
          .eval();
  return m;
}

// LMS values are floored before the log so black stays finite.
inline constexpr double kLmsFloor = 1e-4;

template <typename Scalar>
Vec3<Scalar> rgb_to_lalphabeta(const Vec3<Scalar>& rgb) {
  Vec3<Scalar> lms = rgb_to_lms_matrix<Scalar>() * rgb;
  Vec3<Scalar> log_lms = lms.unaryExpr([](Scalar c) { return std::log10(std::max(c, Scalar(kLmsFloor))); });
  return loglms_to_lalphabeta_matrix<Scalar>() * log_lms;
}

template <typename Scalar>
Vec3<Scalar> lalphabeta_to_rgb(const Vec3<Scalar>& lab) {
  static const Mat3<Scalar> to_log = loglms_to_lalphabeta_matrix<Scalar>().inverse();
  static const Mat3<Scalar> to_rgb = rgb_to_lms_matrix<Scalar>().inverse();
  Vec3<Scalar> lms = (to_log * lab).unaryExpr([](Scalar c) { return std::pow(Scalar(10), c); });
  return to_rgb * lms;
}

}  // namespace color

// Pixels of an 8-bit image as reals in [0,1].
template <typename Scalar = double>
PixelMatrix<Scalar> rgb_unit_pixels(const RgbImage& img) {
  PixelMatrix<Scalar> out(static_cast<Eigen::Index>(img.pixel_count()), 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (int c = 0; c < 3; ++c) out(i, c) = Scalar(img.pixels[static_cast<std::size_t>(i) * 3 + c]) / Scalar(255);
  return out;
}

// RGB output is scaled to [0,255]; the other spaces use their natural ranges.
ChannelImage convert_color(const RgbImage& img, ColorSpace space);

// Inverse conversion, rounded and clamped to 8 bits.
RgbImage to_rgb(const ChannelImage& img, ColorSpace space);

inline std::uint8_t to_byte(double v01) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v01 * 255.0), 0L, 255L));
}

}  // namespace slidekit
