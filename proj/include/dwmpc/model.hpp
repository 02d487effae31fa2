#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dwmpc/types.hpp"

namespace dwmpc::model {

// Planar rigid body. Frame convention: body 0 is the floating base; every other
// body's frame origin sits at the joint that attaches it to its parent.
struct BodySpec {
  std::string name;
  double mass = 0.0;
  double inertia = 0.0;  // about the COM
  Vec2 com = Vec2::Zero();  // in body frame
};

// Revolute joint driving body `child`, anchored at `anchor` in the parent frame.
// Joint angle 0 aligns the child frame with the parent frame.
struct JointSpec {
  std::string name;
  int parent = -1;
  int child = -1;
  Vec2 anchor = Vec2::Zero();
  double torque_limit = 1e9;
  double q_min = -1e9, q_max = 1e9;
  double v_max = 1e9;
  double q_nominal = 0.0;
};

struct ContactSpec {
  std::string name;
  int body = -1;
  Vec2 point = Vec2::Zero();  // in body frame
};

// Restriction of a model to one subsystem: which joints/contacts it owns and
// what fraction of the base inertia it carries.
struct SubsystemSpec {
  std::string name;
  double fraction = 1.0;
  std::vector<int> joints;
  std::vector<int> contacts;
  std::vector<int> wrench_channels;
};

// q = (base x, base z, base yaw, joint angles...). nv == nq; all angle
// coordinates live in (-pi, pi].
struct ModelSpec {
  std::string name;
  std::vector<BodySpec> bodies;
  std::vector<JointSpec> joints;
  std::vector<ContactSpec> contacts;
  std::vector<SubsystemSpec> subsystems;
  // Extra actuation triples (fx, fz, tau) acting directly on the base. Used by
  // fixtures whose dynamics must stay linear; 0 for articulated robots.
  int base_wrench_channels = 0;
  Vec2 gravity = Vec2(0.0, -9.81);

  int nq() const { return 3 + static_cast<int>(joints.size()); }
  int nv() const { return nq(); }
  int nu() const { return static_cast<int>(joints.size()) + 3 * base_wrench_channels; }
  int nx() const { return 2 * nv(); }
  int n_bodies() const { return static_cast<int>(bodies.size()); }
  int n_contacts() const { return static_cast<int>(contacts.size()); }
  int n_joints() const { return static_cast<int>(joints.size()); }

  // True for coordinates that are angles (base yaw and every joint).
  bool is_angle(int iq) const { return iq >= 2; }

  Vec nominal_q() const;
  Vec torque_limits() const;  // per control channel; wrench channels unbounded
};

struct GeneralizedState {
  Vec q, v;

  GeneralizedState() = default;
  GeneralizedState(Vec q_in, Vec v_in) : q(std::move(q_in)), v(std::move(v_in)) {}
  int nq() const { return static_cast<int>(q.size()); }
};

// Throws ConfigError on malformed topology: bad indices, non-tree parenting,
// non-positive masses, fractions not summing to 1, overlapping ownership.
void validate(const ModelSpec& m);

ModelSpec make_chain2();
ModelSpec make_quadruped2d();
ModelSpec make_quadmanip2d();

// Builtin lookup by name; throws ConfigError for unknown names.
ModelSpec make_builtin(const std::string& name);

ModelSpec model_from_json(const std::string& text);
std::string model_to_json(const ModelSpec& m);

}  // namespace dwmpc::model
