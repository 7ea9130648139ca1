#pragma once

// Superquadric primitives with linear taper, their implicit inside-outside
// function, and rigid poses. The kernels in `sq` are templated on the scalar
// so the same code serves plain evaluation and ceres::Jet differentiation.

#include "editvae/core.hpp"

#include <ceres/jet.h>

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace editvae {

namespace sq {

// Packed layouts used by the differentiable kernels.
//   primitive: (alpha_x, alpha_y, alpha_z, eps1, eps2, k1, k2)
//   pose:      (qw, qx, qy, qz, tx, ty, tz)
inline constexpr int kPrimitiveSize = 7;
inline constexpr int kPoseSize = 7;

inline double value_of(double x) { return x; }
template <typename T, int N>
double value_of(const ceres::Jet<T, N>& x) {
  return x.a;
}

/// sgn(c)|c|^e for a constant base.
template <typename T>
T signed_pow(double base, const T& e) {
  using std::exp;
  if (base == 0.0) return T(0.0);
  const T mag = exp(e * std::log(std::abs(base)));
  return base < 0.0 ? T(-mag) : mag;
}

/// |x|^e, zero when |x| underflows.
template <typename T>
T abs_pow(const T& x, const T& e) {
  using std::abs;
  using std::exp;
  using std::log;
  const T ax = abs(x);
  if (value_of(ax) < 1e-300) return T(0.0);
  return exp(e * log(ax));
}

template <typename T>
void taper(const T* prim, const T* in, T* out) {
  const T s = in[2] / prim[2];
  out[0] = (T(1.0) + prim[5] * s) * in[0];
  out[1] = (T(1.0) + prim[6] * s) * in[1];
  out[2] = in[2];
}

template <typename T>
T guard_away_from_zero(const T& f) {
  constexpr double kMin = 1e-6;
  const double v = value_of(f);
  if (std::abs(v) >= kMin) return f;
  return T(v < 0.0 ? -kMin : kMin);
}

template <typename T>
void untaper(const T* prim, const T* in, T* out) {
  const T s = in[2] / prim[2];
  out[0] = in[0] / guard_away_from_zero(T(1.0) + prim[5] * s);
  out[1] = in[1] / guard_away_from_zero(T(1.0) + prim[6] * s);
  out[2] = in[2];
}

/// Tapered surface point r(eta, omega) in the canonical frame.
template <typename T>
void surface_point(const T* prim, double eta, double omega, T* out) {
  const T ce = signed_pow(std::cos(eta), prim[3]);
  const T se = signed_pow(std::sin(eta), prim[3]);
  const T cw = signed_pow(std::cos(omega), prim[4]);
  const T sw = signed_pow(std::sin(omega), prim[4]);
  const T raw[3] = {prim[0] * ce * cw, prim[1] * ce * sw, prim[2] * se};
  taper(prim, raw, out);
}

/// Inside-outside function F on a pre-taper canonical point.
template <typename T>
T inside_outside(const T* prim, const T* p) {
  const T e1 = prim[3];
  const T e2 = prim[4];
  const T xy = abs_pow(T(p[0] / prim[0]), T(2.0 / e2)) +
               abs_pow(T(p[1] / prim[1]), T(2.0 / e2));
  return abs_pow(xy, T(e2 / e1)) + abs_pow(T(p[2] / prim[2]), T(2.0 / e1));
}

template <typename T>
void rotate(const T* q, const T* v, T* out) {
  const T& w = q[0];
  const T& x = q[1];
  const T& y = q[2];
  const T& z = q[3];
  out[0] = (T(1.0) - T(2.0) * (y * y + z * z)) * v[0] + T(2.0) * (x * y - w * z) * v[1] +
           T(2.0) * (x * z + w * y) * v[2];
  out[1] = T(2.0) * (x * y + w * z) * v[0] + (T(1.0) - T(2.0) * (x * x + z * z)) * v[1] +
           T(2.0) * (y * z - w * x) * v[2];
  out[2] = T(2.0) * (x * z - w * y) * v[0] + T(2.0) * (y * z + w * x) * v[1] +
           (T(1.0) - T(2.0) * (x * x + y * y)) * v[2];
}

template <typename T>
void inverse_rotate(const T* q, const T* v, T* out) {
  const T conj[4] = {q[0], -q[1], -q[2], -q[3]};
  rotate(conj, v, out);
}

template <typename T>
void transform_point(const T* pose, const T* in, T* out) {
  rotate(pose, in, out);
  out[0] += pose[4];
  out[1] += pose[5];
  out[2] += pose[6];
}

template <typename T>
void inverse_transform_point(const T* pose, const T* in, T* out) {
  const T d[3] = {in[0] - pose[4], in[1] - pose[5], in[2] - pose[6]};
  inverse_rotate(pose, d, out);
}

/// H(p) = F(K^-1(T^-1(p)))^eps1 for a world-frame point.
template <typename T>
T smoothed_indicator(const T* prim, const T* pose, const T* p_world) {
  T local[3];
  T pre[3];
  inverse_transform_point(pose, p_world, local);
  untaper(prim, local, pre);
  return abs_pow(inside_outside(prim, pre), prim[3]);
}

}  // namespace sq

struct SuperquadricParams {
  Eigen::Vector3d alpha{1.0, 1.0, 1.0};
  Eigen::Vector2d epsilon{1.0, 1.0};
  Eigen::Vector2d taper{0.0, 0.0};

  static constexpr double kMinEpsilon = 0.1;
  static constexpr double kMaxEpsilon = 1.9;
  static constexpr double kMaxTaper = 0.9;

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (!(alpha[i] > 0.0) || !std::isfinite(alpha[i]))
        throw DomainError("superquadric alpha must be positive and finite");
    }
    for (int i = 0; i < 2; ++i) {
      if (!(epsilon[i] >= kMinEpsilon && epsilon[i] <= kMaxEpsilon))
        throw DomainError("superquadric epsilon outside [0.1, 1.9]");
      if (!(std::abs(taper[i]) <= kMaxTaper))
        throw DomainError("superquadric taper outside [-0.9, 0.9]");
    }
  }

  std::array<double, sq::kPrimitiveSize> packed() const {
    return {alpha[0], alpha[1], alpha[2], epsilon[0], epsilon[1], taper[0], taper[1]};
  }

  static SuperquadricParams unpack(std::span<const double> v) {
    require_dims(v.size() == sq::kPrimitiveSize, "primitive vector must have 7 entries");
    SuperquadricParams p;
    p.alpha = {v[0], v[1], v[2]};
    p.epsilon = {v[3], v[4]};
    p.taper = {v[5], v[6]};
    return p;
  }
};

/// Rigid map x -> R(q) x + t with q = (w, x, y, z).
struct Pose {
  Eigen::Vector4d q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d t{0.0, 0.0, 0.0};

  static constexpr double kUnitTolerance = 1e-6;

  static Pose normalized(const Eigen::Vector4d& q, const Eigen::Vector3d& t) {
    const double n = q.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) throw DomainError("quaternion has near-zero norm");
    return Pose{q / n, t};
  }

  void validate() const {
    if (!(std::abs(q.norm() - 1.0) <= kUnitTolerance))
      throw DomainError("pose quaternion is not unit length");
  }

  std::array<double, sq::kPoseSize> packed() const {
    return {q[0], q[1], q[2], q[3], t[0], t[1], t[2]};
  }

  static Pose unpack(std::span<const double> v) {
    require_dims(v.size() == sq::kPoseSize, "pose vector must have 7 entries");
    return Pose{{v[0], v[1], v[2], v[3]}, {v[4], v[5], v[6]}};
  }
};

/// N x 3 cloud of finite points, N >= 1.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(Matrix points) : points_(std::move(points)) {
    require_dims(points_.cols() == 3, "point cloud must have 3 columns");
    if (points_.rows() < 1) throw DomainError("point cloud must contain at least one point");
    if (!points_.allFinite()) throw DomainError("point cloud contains non-finite coordinates");
  }

  Index size() const { return points_.rows(); }
  bool empty() const { return points_.rows() == 0; }
  const Matrix& points() const { return points_; }
  Eigen::Vector3d point(Index i) const { return points_.row(i).transpose(); }

 private:
  Matrix points_{0, 3};
};

enum class SamplingScheme { grid, random };

/// (eta, omega) parameter pairs covering the superquadric parameter domain.
inline std::vector<std::array<double, 2>> sample_angles(int count, SamplingScheme scheme,
                                                        std::uint64_t seed) {
  if (count < 1) throw DomainError("sample count must be positive");
  constexpr double pi = std::numbers::pi;
  std::vector<std::array<double, 2>> out;
  out.reserve(count);
  if (scheme == SamplingScheme::grid) {
    const int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(double(count)))));
    const int cols = (count + rows - 1) / rows;
    for (int i = 0; i < rows && int(out.size()) < count; ++i) {
      const double eta = -pi / 2 + pi * (i + 0.5) / rows;
      for (int j = 0; j < cols && int(out.size()) < count; ++j)
        out.push_back({eta, -pi + 2.0 * pi * j / cols});
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> eta(-pi / 2, pi / 2);
    std::uniform_real_distribution<double> omega(-pi, pi);
    for (int i = 0; i < count; ++i) {
      const double e = eta(rng);
      out.push_back({e, omega(rng)});
    }
  }
  return out;
}

inline Matrix surface_points(const SuperquadricParams& params,
                             std::span<const std::array<double, 2>> angles) {
  const auto prim = params.packed();
  Matrix out(static_cast<Index>(angles.size()), 3);
  for (Index i = 0; i < out.rows(); ++i)
    sq::surface_point(prim.data(), angles[i][0], angles[i][1], &out(i, 0));
  return out;
}

inline PointCloud sample_superquadric(const SuperquadricParams& params, int count,
                                      SamplingScheme scheme, std::uint64_t seed) {
  params.validate();
  const auto angles = sample_angles(count, scheme, seed);
  return PointCloud(surface_points(params, angles));
}

inline PointCloud apply_taper(const SuperquadricParams& params, const PointCloud& pts) {
  const auto prim = params.packed();
  Matrix out(pts.size(), 3);
  for (Index i = 0; i < pts.size(); ++i) sq::taper(prim.data(), &pts.points()(i, 0), &out(i, 0));
  return PointCloud(std::move(out));
}

inline double inside_outside(const SuperquadricParams& params, const Eigen::Vector3d& p) {
  const auto prim = params.packed();
  return sq::inside_outside(prim.data(), p.data());
}

inline double smoothed_indicator(const SuperquadricParams& params, const Pose& pose,
                                 const Eigen::Vector3d& p_world) {
  const auto prim = params.packed();
  const auto packed_pose = pose.packed();
  return sq::smoothed_indicator(prim.data(), packed_pose.data(), p_world.data());
}

inline Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& q) {
  const double n = q.norm();
  if (!(n > 1e-12)) throw DomainError("quaternion has near-zero norm");
  if (std::abs(n - 1.0) > Pose::kUnitTolerance) throw DomainError("quaternion is not unit length");
  Eigen::Matrix3d r;
  for (int c = 0; c < 3; ++c) {
    double e[3] = {0.0, 0.0, 0.0};
    e[c] = 1.0;
    double col[3];
    sq::rotate(q.data(), e, col);
    r.col(c) = Eigen::Vector3d(col[0], col[1], col[2]);
  }
  return r;
}

enum class PoseDirection { forward, inverse };

inline PointCloud apply_pose(const Pose& pose, const PointCloud& pts, PoseDirection direction) {
  pose.validate();
  const auto packed = pose.packed();
  Matrix out(pts.size(), 3);
  for (Index i = 0; i < pts.size(); ++i) {
    if (direction == PoseDirection::forward)
      sq::transform_point(packed.data(), &pts.points()(i, 0), &out(i, 0));
    else
      sq::inverse_transform_point(packed.data(), &pts.points()(i, 0), &out(i, 0));
  }
  return PointCloud(std::move(out));
}

}  // namespace editvae
