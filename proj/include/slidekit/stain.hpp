#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "slidekit/color.hpp"
#include "slidekit/errors.hpp"

namespace slidekit {

// Rows are unit-norm optical-density vectors of Hematoxylin, Eosin and DAB.
class StainMatrix {
 public:
  // Normalizes each row; throws on a zero row or a near-singular matrix.
  static StainMatrix from_rows(const Mat3<double>& rows);

  // Standard H/E/DAB vectors for brightfield histology.
  static StainMatrix hed_default();

  const Mat3<double>& rows() const { return rows_; }
  const Mat3<double>& inverse() const { return inverse_; }
  double condition_number() const;

 private:
  StainMatrix() = default;
  Mat3<double> rows_;
  Mat3<double> inverse_;
};

struct DeconvolutionParams {
  double i0 = 255.0;
  double eps = 1.0;
};

// Beer-Lambert optical density of an 8-bit intensity.
inline double optical_density(double intensity, const DeconvolutionParams& p = {}) {
  return -std::log10((intensity + p.eps) / (p.i0 + p.eps));
}

// Concentrations c (row vector) per pixel: OD = c * M, so c = OD * M^-1.
// Not clipped; may be slightly negative.
ChannelImage stain_deconvolve(const RgbImage& img, const StainMatrix& m, const DeconvolutionParams& p = {});

// Same model on real-valued intensities in [0, I0] (no 8-bit quantization).
ChannelImage stain_deconvolve(const ChannelImage& intensities, const StainMatrix& m, const DeconvolutionParams& p = {});

// Forward model, real-valued intensities I_c = (I0+eps) 10^-(c*M)_c - eps.
template <typename Scalar>
Vec3<Scalar> stain_synthesize(const Vec3<Scalar>& concentrations, const StainMatrix& m,
                              const DeconvolutionParams& p = {}) {
  Vec3<Scalar> od = (concentrations.transpose() * m.rows().cast<Scalar>()).transpose();
  return od.unaryExpr([&](Scalar v) { return Scalar(p.i0 + p.eps) * std::pow(Scalar(10), -v) - Scalar(p.eps); });
}

}  // namespace slidekit
