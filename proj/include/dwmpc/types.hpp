#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dwmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Config or model files that fail validation. CLI maps this to exit code 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Linear algebra gone bad: singular interface system, indefinite factorization
// that regularization could not fix. CLI maps this to exit code 2.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

inline double angle_diff(double a, double b) { return wrap_angle(a - b); }

inline Mat2 rot2(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

// 90-degree CCW rotation; velocity of a point p under unit angular rate about the origin.
inline Vec2 perp(const Vec2& p) { return Vec2(-p.y(), p.x()); }

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace dwmpc
