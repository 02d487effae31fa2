#pragma once

#include <vector>

#include "dwmpc/decomposition.hpp"
#include "dwmpc/dynamics.hpp"
#include "dwmpc/model.hpp"

namespace dwmpc::ocp {

using model::DecomposedModel;
using model::GeneralizedState;
using model::ModelSpec;

struct GaitParams {
  double duty = 1.0;   // stance fraction of the cycle; >= 1 means standing
  double cycle = 0.6;  // seconds
  std::vector<double> offsets;  // per foot, fraction of a cycle
  double apex = 0.08;  // swing height
  double v_cmd = 0.0;  // commanded forward speed
};

// Per-node, per-foot contact plan over one horizon window.
struct ContactSchedule {
  int n_feet = 0;
  int N = 0;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> stance;  // n_feet x (N+1)
  Mat anchor_x;  // foothold x while in stance
  Mat swing_z;   // height reference while in swing
  Mat swing_x;   // forward reference while in swing
  GaitParams params;
};

struct Reference {
  Mat v_ref, q_ref;  // nv x (N+1)
};

// Diagonal tracking and effort weights for one model. u covers the stacked
// [actuation; contact force] control.
struct Weights {
  Vec q, v, u;
  Vec q_term, v_term;
  double swing = 3000.0;
};

struct ConstraintSet {
  double mu = 0.7;
  double baumgarte_alpha = 10.0;
  double w_eq = 1e4;
  double w_ineq = 1e3;
  bool torque_limits = true;
  bool joint_limits = true;
};

// x = [v; q], u = [actuation; stacked (fx, fz) per contact].
struct OcpSpec {
  int N = 50;
  double dt = 0.01;
  Weights weights;
  ConstraintSet constraints;
  ContactSchedule schedule;
  Reference ref;
  int nv = 0, nu = 0, n_contacts = 0;

  int nx() const { return 2 * nv; }
  int nu_total() const { return nu + 2 * n_contacts; }
};

// Throws ConfigError on inconsistent dimensions, N < 2, non-positive dt,
// negative weights, or missing effort regularization on actuation channels.
void validate(const OcpSpec& spec, const ModelSpec& m);

struct Trajectory {
  Mat v, q;  // nv x (N+1)
  Mat u;     // nu_total x N

  void resize(const OcpSpec& spec) {
    v.setZero(spec.nv, spec.N + 1);
    q.setZero(spec.nv, spec.N + 1);
    u.setZero(spec.nu_total(), spec.N);
  }
};

// Stance flags from gait phase at absolute time t0 + k dt; currently-standing
// feet keep their measured foothold, future touchdowns are planned under the
// commanded base motion.
ContactSchedule make_gait(const GaitParams& p, int n_feet, int N, double dt, double t0,
                          const std::vector<double>& foot_x_now,
                          const std::vector<double>& foot_x_offset, double base_x0);

// Base ramp at the commanded speed, nominal joint posture everywhere.
Reference make_reference(const ModelSpec& m, int N, double dt, double base_x0, double v_cmd);

Weights default_weights(const ModelSpec& m);

// Everything the gait builder needs that depends on the model geometry.
std::vector<double> nominal_foot_offsets(const ModelSpec& m);

double stage_cost(const OcpSpec& spec, int k, const Vec& v, const Vec& q, const Vec& u);
double terminal_cost(const OcpSpec& spec, const Vec& v, const Vec& q);

// Quadratic swing-foot tracking; zero on stance nodes.
double swing_cost(const ModelSpec& m, const OcpSpec& spec, int k, const Vec& q);
double swing_cost(const ModelSpec& m, const OcpSpec& spec, int k,
                  const std::vector<model::BodyKin>& kin);

struct ConstraintValues {
  Vec eq;    // contact velocity rows, stance foot height, swing forces
  Vec ineq;  // feasible when <= 0: friction, torque box, joint boxes
};

int n_eq_rows(const OcpSpec& spec, int k);
int n_ineq_rows(const OcpSpec& spec, const ModelSpec& m, int k);

// Residuals at one node; kin must hold FK positions+velocities for (q, v).
void eval_constraints(const ModelSpec& m, const OcpSpec& spec, int k,
                      const std::vector<model::BodyKin>& kin, const Vec& v, const Vec& q,
                      const Vec& u, Eigen::Ref<Vec> eq, Eigen::Ref<Vec> ineq);
ConstraintValues eval_constraints(const ModelSpec& m, const OcpSpec& spec, int k, const Vec& v,
                                  const Vec& q, const Vec& u);

// Quadratic penalty value for one node's residuals.
double penalty_cost(const OcpSpec& spec, Eigen::Ref<const Vec> eq, Eigen::Ref<const Vec> ineq);

// Tracking + effort + swing + penalties over the whole horizon. Consensus
// terms are not part of this.
double total_objective(const ModelSpec& m, const OcpSpec& spec, const Trajectory& traj);

// Restriction of a centralized problem: base tracking scaled by the subsystem
// fraction, own joints/feet/channels at full weight. Restricted objectives sum
// back to the centralized one at consistent points.
OcpSpec restrict_to_subsystem(const OcpSpec& spec, const DecomposedModel& dm, int i);

// Reference rollout used as the default warm start: states from the reference,
// torques zero, stance forces sharing the weight.
Trajectory initial_trajectory(const ModelSpec& m, const OcpSpec& spec);

// Dynamics and constraint linearization of one node by central differences.
struct StageLin {
  Mat A, B;
  Vec d;  // defect f(x_k, u_k) - x_{k+1}, wrapped on angle rows
  Mat eq_jx, eq_ju;
  Vec eq_r;
  Mat ineq_jx, ineq_ju;
  Vec ineq_r;
};

// Centralized variant (plain semi-implicit step). fd_step is the central
// difference step. v_next/q_next define the defect.
void linearize_stage(const ModelSpec& m, const OcpSpec& spec, int k, const Vec& v, const Vec& q,
                     const Vec& u, const Vec& v_next, const Vec& q_next, double fd_step,
                     StageLin& out);

}  // namespace dwmpc::ocp
