#pragma once

// Random Fourier feature map phi with phi(x).phi(y) ~ exp(-|x-y|^2 / (2 sigma^2)),
// hence exp(x.y / sigma^2) ~ exp((|x|^2+|y|^2) / (2 sigma^2)) phi(x).phi(y).

#include "rfadoc/types.hpp"

#include <cmath>
#include <random>

namespace rfadoc {

struct FeatureMapSpec {
  int input_dim = 1;          // d_k
  int num_base_features = 1;  // D; phi has 2D outputs
  double bandwidth = 1.0;     // sigma_k
  std::uint64_t seed = 0;

  bool operator==(const FeatureMapSpec&) const = default;
};

inline void validate(const FeatureMapSpec& spec) {
  require(spec.input_dim >= 1, "feature map: input_dim must be >= 1");
  require(spec.num_base_features >= 1, "feature map: num_base_features must be >= 1");
  require(spec.bandwidth > 0.0 && std::isfinite(spec.bandwidth),
          "feature map: bandwidth must be > 0");
}

template <typename Scalar>
struct FeatureMap {
  FeatureMapSpec spec;
  Matrix<Scalar> projection;  // D x d_k, i.i.d. N(0, 1/sigma^2)

  int input_dim() const { return spec.input_dim; }
  int base_features() const { return spec.num_base_features; }
  int output_dim() const { return 2 * spec.num_base_features; }
};

/// Draws the projection in double precision so that float and double maps
/// built from the same spec agree up to rounding.
template <typename Scalar = double>
FeatureMap<Scalar> sample_feature_map(const FeatureMapSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / spec.bandwidth);
  Matrix<double> w(spec.num_base_features, spec.input_dim);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
  return FeatureMap<Scalar>{spec, w.cast<Scalar>()};
}

/// Row-wise feature map: each row of `x` (T x d_k) maps to a row of the
/// result (T x 2D), laid out as [sin(W x) , cos(W x)] / sqrt(D).
template <typename Scalar, typename Derived>
Matrix<Scalar> phi_rows(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<Derived>& x) {
  require_dims(x.cols() == map.input_dim(), "phi: input has wrong dimension");
  const Eigen::Index d = map.base_features();
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
  Matrix<Scalar> proj = x * map.projection.transpose();
  Matrix<Scalar> out(x.rows(), 2 * d);
  out.leftCols(d) = proj.array().sin() * scale;
  out.rightCols(d) = proj.array().cos() * scale;
  return out;
}

template <typename Scalar, typename Derived>
Vector<Scalar> phi(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<Derived>& x) {
  require_dims(x.size() == map.input_dim(), "phi: input has wrong dimension");
  for (Eigen::Index i = 0; i < x.size(); ++i)
    require(std::isfinite(static_cast<double>(x(i))), "phi: non-finite input");
  return phi_rows(map, x.transpose()).transpose();
}

/// Backpropagates d(phi) through phi_rows; returns d(x).
template <typename Scalar, typename DX, typename DG>
Matrix<Scalar> phi_rows_backward(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<DX>& x,
                                 const Eigen::MatrixBase<DG>& grad_features) {
  const Eigen::Index d = map.base_features();
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
  Matrix<Scalar> proj = x * map.projection.transpose();
  Matrix<Scalar> dproj =
      scale * (proj.array().cos() * grad_features.leftCols(d).array() -
               proj.array().sin() * grad_features.rightCols(d).array());
  return dproj * map.projection;
}

/// Unbiased estimate of the Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)).
template <typename Scalar, typename DX, typename DY>
Scalar kernel_estimate(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<DX>& x,
                       const Eigen::MatrixBase<DY>& y) {
  require_dims(x.size() == y.size(), "kernel_estimate: x and y differ in length");
  return phi(map, x).dot(phi(map, y));
}

/// Estimate of exp(x.y / sigma^2).
template <typename Scalar, typename DX, typename DY>
Scalar exp_dot_estimate(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<DX>& x,
                        const Eigen::MatrixBase<DY>& y) {
  const Scalar s2 = Scalar(map.spec.bandwidth * map.spec.bandwidth);
  const Scalar pre = std::exp((x.squaredNorm() + y.squaredNorm()) / (Scalar(2) * s2));
  return pre * kernel_estimate(map, x, y);
}

}  // namespace rfadoc
