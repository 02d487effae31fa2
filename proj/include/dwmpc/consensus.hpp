#pragma once

#include <condition_variable>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <thread>
#include <vector>

#include "dwmpc/decomposition.hpp"
#include "dwmpc/ocp.hpp"
#include "dwmpc/sqp.hpp"

namespace dwmpc::consensus {

using model::DecomposedModel;
using model::GeneralizedState;

struct ConsensusSettings {
  double rho = 10.0;
  double sigma = 1e-3;
  double eps = 1e-3;
  int max_iters = 30;
  bool include_terminal = false;
};

// Duals and residuals live per unordered subsystem pair, oriented a -> b.
struct ConsensusState {
  ConsensusSettings cfg;
  std::vector<Mat> r;     // 3 x (N+1) per pair
  std::vector<Mat> ybar;  // same shape
  int n = 0;
  std::vector<double> history;                    // stopping norm per iteration
  std::vector<std::vector<double>> pair_history;  // per pair, same length
};

// Throws ConfigError unless rho > 0, sigma >= 0, eps > 0, max_iters >= 1.
ConsensusState make_state(const DecomposedModel& dm, int N, const ConsensusSettings& cfg);

// Everything a subsystem reads during one sweep: all predicted trajectories
// and the duals, frozen together at iteration n.
struct BusSnapshot {
  std::vector<ocp::Trajectory> traj;
  std::vector<Mat> ybar;
  int n = 0;
};

void publish(const std::vector<ocp::Trajectory>& traj, const ConsensusState& st,
             BusSnapshot& snap);

// Pure extraction of subsystem variables; base rows are copied to every
// subsystem. stitch is the left inverse, taking base rows from subsystem 0.
ocp::Trajectory map_subsystem(const DecomposedModel& dm, int i, const ocp::OcpSpec& full_spec,
                              const ocp::Trajectory& central);
std::vector<ocp::Trajectory> map_global(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                                        const ocp::Trajectory& central);
ocp::Trajectory stitch(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                       const std::vector<ocp::Trajectory>& subs);

// r_e = base velocity of pair.a minus base velocity of pair.b at every node.
void residuals(const DecomposedModel& dm, const std::vector<ocp::Trajectory>& traj,
               std::vector<Mat>& out);

// Norms aggregate the way the stopping rule does: every pair, nodes 0..N-1,
// the terminal node only when included.
double interface_norm(const Mat& r_e, bool include_terminal);
double residual_norm(const std::vector<Mat>& r, bool include_terminal);

// Quadratic coupling data for subsystem i against the published snapshot.
// Buffers in `out` are reused when the shapes already match.
void build_terms(const DecomposedModel& dm, int i, const BusSnapshot& snap,
                 const ConsensusSettings& cfg, sqp::ConsensusTerms& out);

// Restricted objective plus the rho coupling and sigma proximal values, the
// function whose quadratic model the transcription builds. prev centers the
// proximal term.
double augmented_objective(const DecomposedModel& dm, int i, const ocp::OcpSpec& sub_spec,
                           const ocp::Trajectory& own, const ocp::Trajectory& prev,
                           const BusSnapshot& snap, const ConsensusSettings& cfg);

// ybar += r at every node; appends the stopping and per-pair norms, bumps n.
void dual_update(ConsensusState& st, const std::vector<Mat>& r_new);

// Fork-join pool with a fixed slot assignment: task i runs on thread
// i % workers, so results never depend on completion order. workers == 1
// executes inline on the caller.
class WorkerPool {
 public:
  explicit WorkerPool(int workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int workers() const { return workers_; }
  // Blocks until fn(0..n-1) all returned. Every task runs even when one
  // throws; the lowest-index exception is rethrown afterwards.
  void run(int n, const std::function<void(int)>& fn);

 private:
  void worker_loop(int slot);

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_cv_, done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  int n_ = 0;
  long generation_ = 0;
  int remaining_ = 0;
  bool stop_ = false;
  std::vector<std::exception_ptr> errors_;
};

// Reusable buffers for one sweep; sized on first use.
struct IterationWorkspace {
  BusSnapshot snap;
  std::vector<sqp::ConsensusTerms> terms;
  std::vector<sqp::NewtonReport> reports;
};

// One sweep: publish, one Newton step per subsystem through the pool,
// residuals from the stepped trajectories, dual update. Returns the stopping
// norm just appended to the history.
double distributed_iteration(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                             std::vector<sqp::SubproblemSolver>& solvers,
                             std::vector<ocp::Trajectory>& traj,
                             const std::vector<GeneralizedState>& x0, ConsensusState& st,
                             WorkerPool& pool, IterationWorkspace& ws);

struct DistributedResult {
  bool converged = false;
  int iters = 0;
  std::vector<sqp::NewtonReport> reports;  // per subsystem, last sweep
};

// Sweeps until the residual norm drops below eps or the budget runs out.
// Trace rows `iter,interface,res_norm,subsys,solve_time_s` stream to `trace`
// when given, one row per interface and subsystem combination.
DistributedResult solve_distributed(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                                    std::vector<sqp::SubproblemSolver>& solvers,
                                    std::vector<ocp::Trajectory>& traj,
                                    const GeneralizedState& x0, ConsensusState& st,
                                    WorkerPool& pool, std::ostream* trace = nullptr);

}  // namespace dwmpc::consensus
