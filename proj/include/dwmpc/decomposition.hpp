#pragma once

#include <vector>

#include "dwmpc/dynamics.hpp"
#include "dwmpc/model.hpp"

namespace dwmpc::model {

// Unordered subsystem pair. Residuals and coupling are oriented a -> b:
// r = base_vel(a) - base_vel(b), and +F pushes subsystem a.
struct Interface {
  int a = 0, b = 0;
  std::string label() const { return std::to_string(a) + "-" + std::to_string(b); }
};

struct SubsystemModel {
  int id = 0;
  std::string name;
  double fraction = 1.0;
  ModelSpec spec;  // scaled base + owned joints/contacts; no nested subsystems
  std::vector<int> joint_map;    // subsystem joint -> full joint
  std::vector<int> contact_map;  // subsystem contact -> full contact
  std::vector<int> wrench_map;   // subsystem wrench channel -> full channel
  std::vector<int> q_map;        // subsystem coordinate -> full coordinate
  std::vector<int> u_map;        // subsystem control -> full control
  // Tree interfaces this subsystem touches, with its orientation sign.
  std::vector<int> incident;
  std::vector<double> inc_sign;
};

// The wrench coupling runs over a spanning star rooted at subsystem 0 so the
// interface operator stays positive definite; consensus residuals are tracked
// over every pair.
struct DecomposedModel {
  ModelSpec full;
  std::vector<SubsystemModel> subsystems;
  std::vector<Interface> tree;
  std::vector<Interface> pairs;

  int n_subsystems() const { return static_cast<int>(subsystems.size()); }
  int n_tree() const { return static_cast<int>(tree.size()); }
  int n_pairs() const { return static_cast<int>(pairs.size()); }
};

DecomposedModel decompose(const ModelSpec& full);
// Single subsystem owning everything; the centralized solver runs on this.
DecomposedModel decompose_trivial(const ModelSpec& full);

GeneralizedState restrict_state(const DecomposedModel& dm, int i, const GeneralizedState& full);
Vec restrict_control(const DecomposedModel& dm, int i, const Vec& u_full);
std::vector<bool> restrict_stance(const DecomposedModel& dm, int i,
                                  const std::vector<bool>& full);
// Base coordinates come from subsystem 0.
GeneralizedState stitch_state(const DecomposedModel& dm,
                              const std::vector<GeneralizedState>& subs);
Vec stitch_control(const DecomposedModel& dm, const std::vector<Vec>& subs);

// Post-step interface velocity defects of the uncoupled subsystem dynamics,
// one 3-vector per tree interface.
std::vector<Vec3> delta_v_total(const DecomposedModel& dm,
                                const std::vector<GeneralizedState>& states,
                                const std::vector<Vec>& controls,
                                const std::vector<std::vector<bool>>& stance, double dt);

// Interface wrenches that cancel those defects: applying +F_e to side a and
// -F_e to side b makes all post-step base velocities agree.
std::vector<Vec3> coupling_wrench(const DecomposedModel& dm,
                                  const std::vector<GeneralizedState>& states,
                                  const std::vector<Vec>& controls,
                                  const std::vector<std::vector<bool>>& stance, double dt);

// Coupled semi-implicit step of subsystem i; neighbors enter through the
// wrench only (their own states are left untouched).
GeneralizedState subsystem_step(const DecomposedModel& dm, int i,
                                const std::vector<GeneralizedState>& states,
                                const std::vector<Vec>& controls,
                                const std::vector<std::vector<bool>>& stance, double dt);

// Frozen neighbor-side quantities at one node: everything subsystem i needs to
// evaluate its coupled step repeatedly while only its own variables change.
struct NeighborCache {
  Mat g_others;    // 3E x 3E, E = tree interfaces
  Vec rhs_others;  // 3E, signed uncoupled base velocities of the neighbors
};

// Per-subsystem workspace for coupled step evaluations inside the solver's
// finite-difference loops.
class CouplingEvaluator {
 public:
  CouplingEvaluator(const DecomposedModel& dm, int sub_id);

  // Neighbor pass: fold every other subsystem's node values into the cache.
  void build_cache(const std::vector<GeneralizedState>& states, const std::vector<Vec>& controls,
                   const std::vector<std::vector<bool>>& stance, double dt, NeighborCache& nc);

  // Own pass. q_out is left unwrapped. Relies on the factorizations cached by
  // the previous call when reuse_factor is set (valid while q is unchanged).
  void step(const GeneralizedState& st, Eigen::Ref<const Vec> u_model,
            Eigen::Ref<const Vec> lambda,
            const std::vector<bool>& stance, double dt, const NeighborCache& nc, Vec& q_out,
            Vec& v_out, bool reuse_factor = false);

  // Own pass with the interface impulse pinned as data: no interface solve,
  // the impulse acts through the current inertia.
  void step_pinned(const GeneralizedState& st, Eigen::Ref<const Vec> u_model,
                   Eigen::Ref<const Vec> lambda, const std::vector<bool>& stance, double dt,
                   const Vec3& impulse, Vec& q_out, Vec& v_out, bool reuse_factor = false);

  // Signed base impulse the most recent step call applied to this subsystem.
  Vec3 own_impulse() const { return jtw_; }

  const DecomposedModel& decomposition() const { return *dm_; }
  // Kinematics of the most recent step call's evaluation point.
  const std::vector<BodyKin>& kin() const { return ws_.kin; }

 private:
  void local_vhat(const GeneralizedState& st, Eigen::Ref<const Vec> u_model,
                  Eigen::Ref<const Vec> lambda, const std::vector<bool>& stance, double dt,
                  bool reuse_factor);

  const DecomposedModel* dm_;
  int id_;
  DynWorkspace ws_;
  std::vector<DynWorkspace> neighbor_ws_;
  Mat x3_;  // M^{-1} restricted to the base columns
  Mat g_;
  Vec rhs_, z_, vhat_, dv_;
  Vec3 jtw_ = Vec3::Zero();
  Eigen::LLT<Mat> g_llt_;
};

}  // namespace dwmpc::model
