#pragma once

#include <string>
#include <vector>

#include "dwmpc/decomposition.hpp"
#include "dwmpc/ocp.hpp"

namespace dwmpc::sqp {

using model::DecomposedModel;
using model::GeneralizedState;
using model::ModelSpec;

// One node of the quadratic subproblem. R is stored without the Levenberg
// shift; regularization is applied inside the backward pass only.
struct StageData {
  Mat A, B;
  Vec d;
  Mat Q, R, S;  // S is nu x nx
  Vec qg, rg;
  Mat K;
  Vec kff;

  void resize(int nx, int nu) {
    A.setZero(nx, nx);
    B.setZero(nx, nu);
    d.setZero(nx);
    Q.setZero(nx, nx);
    R.setZero(nu, nu);
    S.setZero(nu, nx);
    qg.setZero(nx);
    rg.setZero(nu);
    K.setZero(nu, nx);
    kff.setZero(nu);
  }
};

struct SqpSettings {
  double fd_step = 1e-6;
  double reg_init = 1e-8;
  double reg_growth = 10.0;
  double reg_cap = 1e-2;
  double step_tol = 1e-6;  // relative to 1 + trajectory norm
  int max_iters = 30;
};

struct RiccatiResult {
  Mat dx;  // nx x (N+1)
  Mat du;  // nu x N
  double reg_used = 0.0;
  int retries = 0;
  // optimal value of the (unregularized) quadratic model at the step
  double model_decrease = 0.0;
};

// Exact LQ solve: backward recursion with Levenberg retries on the control
// Hessian, then a defect-closing forward rollout. Throws SolverError when the
// factorization still fails at the regularization cap.
void riccati_solve(std::vector<StageData>& stages, const Mat& qn, const Vec& qgn, const Vec& dx0,
                   const SqpSettings& s, RiccatiResult& out);

struct NewtonReport {
  double step_norm = 0.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  double max_eq_violation = 0.0;
  double max_ineq_violation = 0.0;
  double model_decrease = 0.0;
  double reg_used = 0.0;
  int riccati_retries = 0;
  double wall_s = 0.0;
  double cpu_s = 0.0;
  std::string to_json() const;
};

// Consensus coupling of one subproblem: neighbor base velocities frozen at the
// published iterate, scaled duals in canonical pair orientation, proximal
// damping around the subproblem's own previous iterate.
struct ConsensusTerms {
  double rho = 0.0;
  double sigma = 0.0;
  // Fraction of the Newton step each parallel sweep applies, 1 / subsystem
  // count. The parallel sweeps react to one another's stale iterates, and the
  // reaction loop rings at full steps; scaling the applied step is the same
  // as proportional proximal curvature and moves no fixed point.
  double step_scale = 1.0;
  bool include_terminal = false;
  struct PairTerm {
    double sign = 1.0;   // +1 when this subsystem is the pair's first member
    Mat neighbor_v;      // 3 x (N+1)
    Mat ybar;            // 3 x (N+1)
  };
  std::vector<PairTerm> pairs;
};

// Gauss-Newton solver for one subsystem's horizon problem (or the whole model
// through the trivial decomposition). Owns all per-node workspaces; repeated
// calls do not grow the heap.
class SubproblemSolver {
 public:
  SubproblemSolver(const DecomposedModel& dm, int sub_id, ocp::OcpSpec spec,
                   const SqpSettings& settings);

  // Swap in the next window's schedule and references (same dimensions).
  void set_spec(const ocp::OcpSpec& spec);
  const ocp::OcpSpec& spec() const { return spec_; }
  const ModelSpec& model_spec() const { return dm_->subsystems[id_].spec; }
  const SqpSettings& settings() const { return settings_; }

  // One full Gauss-Newton step in place. For coupled subproblems, snapshot and
  // full_schedule describe every subsystem at the published iterate.
  NewtonReport newton_step(ocp::Trajectory& traj, const GeneralizedState& x0,
                           const std::vector<ocp::Trajectory>* snapshot = nullptr,
                           const ocp::ContactSchedule* full_schedule = nullptr,
                           const ConsensusTerms* consensus = nullptr);

  // Assembled quadratic model at the given trajectory, without stepping.
  const std::vector<StageData>& transcribe(const ocp::Trajectory& traj,
                                           const std::vector<ocp::Trajectory>* snapshot = nullptr,
                                           const ocp::ContactSchedule* full_schedule = nullptr,
                                           const ConsensusTerms* consensus = nullptr);
  const Mat& terminal_hessian() const { return qn_; }
  const Vec& terminal_gradient() const { return qgn_; }

  long steps_taken() const { return steps_; }

 private:
  void assemble(const ocp::Trajectory& traj, const std::vector<ocp::Trajectory>* snapshot,
                const ocp::ContactSchedule* full_schedule, const ConsensusTerms* consensus);

  const DecomposedModel* dm_;
  int id_;
  ocp::OcpSpec spec_;
  SqpSettings settings_;
  model::CouplingEvaluator coupler_;
  model::NeighborCache cache_;
  std::vector<StageData> stages_;
  Mat qn_;
  Vec qgn_, dx0_;
  RiccatiResult ric_;
  long steps_ = 0;

  // transcription buffers
  std::vector<GeneralizedState> nb_states_;
  std::vector<Vec> nb_controls_;
  std::vector<std::vector<bool>> nb_stance_;
  std::vector<bool> own_stance_;
  Vec eval_out_, eval_plus_, eval_minus_;
  Vec vp_, qp_, up_, qraw_, vraw_;
  Vec3 impulse_ = Vec3::Zero();
  Mat jx_, ju_;  // fd jacobian columns: [v | q] and controls
  Mat foot_j_;
  Vec eq_, ineq_;
  std::vector<model::BodyKin> kin_;
  Vec eq_scan_, ineq_scan_;
};

struct SolveResult {
  bool converged = false;
  int iters = 0;
  double final_step_norm = 0.0;
  double objective = 0.0;
  std::vector<NewtonReport> reports;
};

// Whole-model SQP baseline on the trivial decomposition.
class CentralizedSolver {
 public:
  CentralizedSolver(const ModelSpec& m, const ocp::OcpSpec& spec, const SqpSettings& settings);
  CentralizedSolver(const CentralizedSolver&) = delete;
  CentralizedSolver& operator=(const CentralizedSolver&) = delete;

  void set_spec(const ocp::OcpSpec& spec) { sub_.set_spec(spec); }
  const ocp::OcpSpec& spec() const { return sub_.spec(); }

  NewtonReport newton_step(ocp::Trajectory& traj, const GeneralizedState& x0);
  // Iterates until the step norm drops below step_tol relative to the iterate
  // scale; returns the best iterate seen when the budget runs out.
  SolveResult solve(ocp::Trajectory& traj, const GeneralizedState& x0);
  long steps_taken() const { return sub_.steps_taken(); }

 private:
  DecomposedModel dm_;
  SqpSettings settings_;
  SubproblemSolver sub_;
};

}  // namespace dwmpc::sqp
