#pragma once

#include <vector>

#include "dwmpc/model.hpp"
#include "dwmpc/types.hpp"

namespace dwmpc::model {

struct BodyKin {
  double angle = 0.0;
  Vec2 origin = Vec2::Zero();
  Vec2 com = Vec2::Zero();
  double omega = 0.0;
  Vec2 origin_vel = Vec2::Zero();
  Vec2 com_vel = Vec2::Zero();
};

void forward_kinematics(const ModelSpec& m, const Vec& q, std::vector<BodyKin>& kin);
void forward_kinematics(const ModelSpec& m, const Vec& q, const Vec& v,
                        std::vector<BodyKin>& kin);

// Reusable buffers for the articulated-body computations. All hot paths write
// into these instead of allocating.
struct DynWorkspace {
  std::vector<BodyKin> kin;
  Mat M;
  Vec bias;
  Eigen::LLT<Mat> llt;
  bool llt_ready = false;
  // composite-body accumulators, one slot per body
  std::vector<double> c_mass;
  std::vector<Vec2> c_moment;   // sum of m * com over the subtree, world frame
  std::vector<double> c_inertia;  // about the world origin
  std::vector<Vec2> c_force;    // backward pass: net force on subtree
  std::vector<double> c_torque;  // about the body origin
  Vec gen_force;

  explicit DynWorkspace(const ModelSpec& m);
  // Factors M on first use after compute(); reused by every solve at this q.
  const Eigen::LLT<Mat>& factor();
};

// CRB mass matrix and the bias term b(q, v) (Coriolis, centrifugal, gravity),
// both expressed so that M vdot + b = S u + J^T lambda.
void mass_matrix_and_bias(const ModelSpec& m, const GeneralizedState& st, DynWorkspace& ws);
void mass_matrix_and_bias(const ModelSpec& m, const GeneralizedState& st, Mat& M, Vec& b);

// Refreshes kinematics and the bias only; ws.M and its factorization are kept.
// Only valid while q matches the last mass_matrix_and_bias call.
void bias_only(const ModelSpec& m, const GeneralizedState& st, DynWorkspace& ws);

Vec2 contact_point(const ModelSpec& m, int contact, const std::vector<BodyKin>& kin);
Vec2 contact_point_vel(const ModelSpec& m, int contact, const std::vector<BodyKin>& kin);

// 2 x nv world-frame point Jacobian of a contact; kin must hold positions for q.
void contact_jacobian(const ModelSpec& m, int contact, const std::vector<BodyKin>& kin,
                      Eigen::Ref<Mat> J);
Mat contact_jacobian(const ModelSpec& m, const Vec& q, int contact);

// World-frame point Jacobian for an arbitrary point attached to `body`.
void point_jacobian(const ModelSpec& m, int body, const Vec2& world_point,
                    const std::vector<BodyKin>& kin, Eigen::Ref<Mat> J);

// Generalized force S u for the actuation layout [joint torques; wrench triples].
void apply_selector(const ModelSpec& m, Eigen::Ref<const Vec> u, Vec& out);

// One semi-implicit Euler step: v' = v - M^{-1}(b - S u - J^T lambda) dt,
// q' = q + v' dt. `lambda` is stacked (fx, fz) per contact; only contacts with
// stance[c] set transmit force. Angles of q' are wrapped.
GeneralizedState step_semi_implicit(const ModelSpec& m, const GeneralizedState& st,
                                    const Vec& u, const Vec& lambda,
                                    const std::vector<bool>& stance, double dt);

// Same step without the final angle wrap; finite differencing needs the
// unwrapped chart to stay smooth near +-pi.
void step_raw(const ModelSpec& m, const GeneralizedState& st, Eigen::Ref<const Vec> u,
              Eigen::Ref<const Vec> lambda,
              const std::vector<bool>& stance, double dt, DynWorkspace& ws, Vec& q_out,
              Vec& v_out);

void wrap_state(const ModelSpec& m, Vec& q);

}  // namespace dwmpc::model
