#pragma once

// se(3)/SE(3) primitives. Twists are ordered [rho; phi] (translation first)
// and every perturbation in the library is a left perturbation,
// T = exp(xi^) * T_mean.

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "posecov/errors.hpp"

namespace posecov {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix4 = Eigen::Matrix4d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// 4x4 Lie-algebra element [phi^ rho; 0 0].
using WedgeMatrix = Matrix4;
/// 6x6 adjoint-algebra element [phi^ rho^; 0 phi^].
using CurlyWedgeMatrix = Matrix6;
/// 6x6 adjoint of a pose, [R t^R; 0 R].
using AdjointMatrix = Matrix6;

/// Below this rotation angle exp/log/left-Jacobian use 4th-order Taylor series.
inline constexpr double kSmallAngle = 1e-6;
/// Logarithms of rotations within this distance of pi are rejected.
inline constexpr double kNearPiMargin = 1e-6;
/// Long composition chains project the rotation back onto SO(3) this often.
inline constexpr int kRenormalizeEvery = 100;
/// Tolerance on ||R^T R - I||_F for a rotation to be accepted as-is.
inline constexpr double kOrthonormalTol = 1e-9;

/// Tangent vector of SE(3): translational part rho (m) then rotational part
/// phi (rad, axis-angle).
class Twist {
 public:
  Twist() : v_(Vector6::Zero()) {}
  explicit Twist(const Vector6& v) : v_(v) {}
  Twist(const Vector3& rho, const Vector3& phi) {
    v_ << rho, phi;
  }

  static Twist zero() { return Twist(); }

  Vector3 rho() const { return v_.head<3>(); }
  Vector3 phi() const { return v_.tail<3>(); }
  const Vector6& vec() const { return v_; }
  double operator[](int i) const { return v_[i]; }

  bool is_finite() const { return v_.allFinite(); }
  double norm() const { return v_.norm(); }

  friend Twist operator+(const Twist& a, const Twist& b) {
    return Twist(Vector6(a.v_ + b.v_));
  }
  friend Twist operator-(const Twist& a, const Twist& b) {
    return Twist(Vector6(a.v_ - b.v_));
  }
  friend Twist operator*(double s, const Twist& a) {
    return Twist(Vector6(s * a.v_));
  }

 private:
  Vector6 v_;
};

inline Matrix3 skew(const Vector3& v) {
  Matrix3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Vector3 unskew(const Matrix3& m) {
  return Vector3(m(2, 1), m(0, 2), m(1, 0));
}

/// Rigid transform with rotation in SO(3).
class Pose {
 public:
  Pose() : rotation_(Matrix3::Identity()), translation_(Vector3::Zero()) {}

  /// Validates that `rotation` is orthonormal with det +1 within
  /// kOrthonormalTol; throws InvalidArgument otherwise.
  Pose(const Matrix3& rotation, const Vector3& translation)
      : rotation_(rotation), translation_(translation) {
    if (!rotation.allFinite() || !translation.allFinite()) {
      throw InvalidArgument("pose has non-finite entries");
    }
    const double err = orthonormality_error();
    if (err >= kOrthonormalTol || rotation.determinant() < 0.0) {
      throw InvalidArgument("rotation is not in SO(3) (||R^T R - I||_F = " +
                            std::to_string(err) + ")");
    }
  }

  static Pose identity() { return Pose(); }

  /// Skips the SO(3) check. For results of group operations on valid poses.
  static Pose trusted(const Matrix3& rotation, const Vector3& translation) {
    Pose p;
    p.rotation_ = rotation;
    p.translation_ = translation;
    return p;
  }

  /// Nearest rotation in the Frobenius sense (polar decomposition).
  static Pose projected(const Matrix3& rotation, const Vector3& translation) {
    return trusted(project_to_so3(rotation), translation);
  }

  static Pose from_matrix(const Matrix4& m) {
    return Pose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
  }

  static Matrix3 project_to_so3(const Matrix3& m) {
    Eigen::JacobiSVD<Matrix3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix3 d = Matrix3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0
                  ? -1.0
                  : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
  }

  const Matrix3& rotation() const { return rotation_; }
  const Vector3& translation() const { return translation_; }

  Matrix4 matrix() const {
    Matrix4 m = Matrix4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Pose inverse() const {
    const Matrix3 rt = rotation_.transpose();
    return trusted(rt, -rt * translation_);
  }

  Pose operator*(const Pose& other) const {
    return trusted(rotation_ * other.rotation_,
                   rotation_ * other.translation_ + translation_);
  }

  Vector3 operator*(const Vector3& point) const {
    return rotation_ * point + translation_;
  }

  Pose renormalized() const { return projected(rotation_, translation_); }

  double orthonormality_error() const {
    return (rotation_.transpose() * rotation_ - Matrix3::Identity()).norm();
  }

 private:
  Matrix3 rotation_;
  Vector3 translation_;
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& a) { return a.inverse(); }

namespace detail {

inline void require_finite(const Twist& xi, const char* op) {
  if (!xi.is_finite()) {
    throw InvalidArgument(std::string(op) + ": twist has non-finite entries");
  }
}

// Closed-form and series branches are exposed separately so that tests can
// check their agreement at the switch threshold.

inline Matrix3 so3_exp_closed(const Vector3& phi) {
  const double theta = phi.norm();
  const Matrix3 w = skew(phi);
  const double half_sin = std::sin(0.5 * theta);
  const double a = std::sin(theta) / theta;
  const double b = 2.0 * half_sin * half_sin / (theta * theta);
  return Matrix3::Identity() + a * w + b * w * w;
}

inline Matrix3 so3_exp_taylor(const Vector3& phi) {
  const Matrix3 w = skew(phi);
  const Matrix3 w2 = w * w;
  return Matrix3::Identity() + w + w2 / 2.0 + w2 * w / 6.0 + w2 * w2 / 24.0;
}

inline Matrix3 so3_left_jacobian_closed(const Vector3& phi) {
  const double theta = phi.norm();
  const Matrix3 w = skew(phi);
  const double half_sin = std::sin(0.5 * theta);
  const double b = 2.0 * half_sin * half_sin / (theta * theta);
  const double c = (theta - std::sin(theta)) / (theta * theta * theta);
  return Matrix3::Identity() + b * w + c * w * w;
}

inline Matrix3 so3_left_jacobian_taylor(const Vector3& phi) {
  const Matrix3 w = skew(phi);
  const Matrix3 w2 = w * w;
  return Matrix3::Identity() + w / 2.0 + w2 / 6.0 + w2 * w / 24.0 +
         w2 * w2 / 120.0;
}

inline Matrix3 so3_left_jacobian_inverse_closed(const Vector3& phi) {
  const double theta = phi.norm();
  const Matrix3 w = skew(phi);
  const double half_sin = std::sin(0.5 * theta);
  // (1 - (theta/2) cot(theta/2)) / theta^2
  const double half_cot = theta * std::sin(theta) / (4.0 * half_sin * half_sin);
  const double c = (1.0 - half_cot) / (theta * theta);
  return Matrix3::Identity() - 0.5 * w + c * w * w;
}

inline Matrix3 so3_left_jacobian_inverse_taylor(const Vector3& phi) {
  const Matrix3 w = skew(phi);
  const Matrix3 w2 = w * w;
  return Matrix3::Identity() - 0.5 * w + w2 / 12.0 - w2 * w2 / 720.0;
}

/// Rotation vector from a rotation matrix; `closed` selects the branch.
inline Vector3 so3_log_branch(const Matrix3& r, bool closed) {
  const Vector3 v = 0.5 * unskew(r - r.transpose());  // sin(theta) * axis
  const double s = v.norm();
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);
  if (closed) return (theta / s) * v;
  return (1.0 + theta * theta / 6.0 + 7.0 * std::pow(theta, 4) / 360.0) * v;
}

}  // namespace detail

inline Matrix3 so3_exp(const Vector3& phi) {
  return phi.norm() < kSmallAngle ? detail::so3_exp_taylor(phi)
                                  : detail::so3_exp_closed(phi);
}

inline Matrix3 so3_left_jacobian(const Vector3& phi) {
  return phi.norm() < kSmallAngle ? detail::so3_left_jacobian_taylor(phi)
                                  : detail::so3_left_jacobian_closed(phi);
}

inline Matrix3 so3_left_jacobian_inverse(const Vector3& phi) {
  return phi.norm() < kSmallAngle
             ? detail::so3_left_jacobian_inverse_taylor(phi)
             : detail::so3_left_jacobian_inverse_closed(phi);
}

/// Rotation angle in [0, pi] extracted through atan2, which stays accurate at
/// both ends of the range.
inline double rotation_angle(const Matrix3& r) {
  const double s = 0.5 * unskew(r - r.transpose()).norm();
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::atan2(s, c);
}

/// Throws NearSingularity when the angle is within kNearPiMargin of pi.
inline Vector3 so3_log(const Matrix3& r) {
  const double theta = rotation_angle(r);
  if (theta > std::numbers::pi - kNearPiMargin) {
    throw NearSingularity("rotation angle " + std::to_string(theta) +
                          " rad is too close to pi for a unique logarithm");
  }
  return detail::so3_log_branch(r, theta >= kSmallAngle);
}

inline WedgeMatrix wedge(const Twist& xi) {
  detail::require_finite(xi, "wedge");
  WedgeMatrix m = WedgeMatrix::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.phi());
  m.topRightCorner<3, 1>() = xi.rho();
  return m;
}

inline Twist vee(const WedgeMatrix& m) {
  return Twist(Vector3(m.topRightCorner<3, 1>()),
               unskew(m.topLeftCorner<3, 3>()));
}

inline CurlyWedgeMatrix curly_wedge(const Twist& xi) {
  detail::require_finite(xi, "curly_wedge");
  CurlyWedgeMatrix m = CurlyWedgeMatrix::Zero();
  const Matrix3 phi_hat = skew(xi.phi());
  m.topLeftCorner<3, 3>() = phi_hat;
  m.topRightCorner<3, 3>() = skew(xi.rho());
  m.bottomRightCorner<3, 3>() = phi_hat;
  return m;
}

inline Pose exp_map(const Twist& xi) {
  detail::require_finite(xi, "exp_map");
  const Vector3 phi = xi.phi();
  return Pose::trusted(so3_exp(phi), so3_left_jacobian(phi) * xi.rho());
}

/// Inverse of exp_map with ||phi|| <= pi. Throws NearSingularity within
/// kNearPiMargin of pi.
inline Twist log_map(const Pose& t) {
  const Vector3 phi = so3_log(t.rotation());
  return Twist(Vector3(so3_left_jacobian_inverse(phi) * t.translation()), phi);
}

inline AdjointMatrix adjoint(const Pose& t) {
  AdjointMatrix ad = AdjointMatrix::Zero();
  ad.topLeftCorner<3, 3>() = t.rotation();
  ad.topRightCorner<3, 3>() = skew(t.translation()) * t.rotation();
  ad.bottomRightCorner<3, 3>() = t.rotation();
  return ad;
}

namespace detail {

// Coupling block Q of the SE(3) left Jacobian. The trigonometric
// coefficients cancel catastrophically well above kSmallAngle, so their
// series are used below 1e-2.
inline Matrix3 se3_q_block(const Vector3& rho, const Vector3& phi) {
  const double theta = phi.norm();
  const double t2 = theta * theta;
  double c1, c2, c3;
  if (theta < 1e-2) {
    c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    c1 = (theta - s) / (t2 * theta);
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta);
  }
  const Matrix3 p = skew(phi);
  const Matrix3 r = skew(rho);
  const Matrix3 prp = p * r * p;
  return 0.5 * r + c1 * (p * r + r * p + prp) +
         c2 * (p * p * r + r * p * p - 3.0 * prp) +
         c3 * (prp * p + p * prp);
}

}  // namespace detail

/// 6x6 left Jacobian: exp(xi + d) ~= exp(J(xi) d) exp(xi).
inline Matrix6 se3_left_jacobian(const Twist& xi) {
  const Matrix3 j = so3_left_jacobian(xi.phi());
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j;
  out.topRightCorner<3, 3>() = detail::se3_q_block(xi.rho(), xi.phi());
  out.bottomRightCorner<3, 3>() = j;
  return out;
}

inline Matrix6 se3_left_jacobian_inverse(const Twist& xi) {
  const Matrix3 j_inv = so3_left_jacobian_inverse(xi.phi());
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j_inv;
  out.topRightCorner<3, 3>() =
      -j_inv * detail::se3_q_block(xi.rho(), xi.phi()) * j_inv;
  out.bottomRightCorner<3, 3>() = j_inv;
  return out;
}

}  // namespace posecov
