#include "dwmpc/consensus.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace dwmpc::consensus {

ConsensusState make_state(const DecomposedModel& dm, int N, const ConsensusSettings& cfg) {
  if (!(cfg.rho > 0.0)) throw ConfigError("consensus rho must be positive");
  if (!(cfg.sigma >= 0.0)) throw ConfigError("consensus sigma must be nonnegative");
  if (!(cfg.eps > 0.0)) throw ConfigError("consensus eps must be positive");
  if (cfg.max_iters < 1) throw ConfigError("consensus max_iters must be at least 1");
  ConsensusState st;
  st.cfg = cfg;
  st.r.assign(dm.n_pairs(), Mat::Zero(3, N + 1));
  st.ybar.assign(dm.n_pairs(), Mat::Zero(3, N + 1));
  st.pair_history.resize(dm.n_pairs());
  // closed-loop runs append one entry per tick; reserving keeps the hot path
  // allocation-free for any plausible run length
  st.history.reserve(1 << 14);
  for (auto& h : st.pair_history) h.reserve(1 << 14);
  return st;
}

void publish(const std::vector<ocp::Trajectory>& traj, const ConsensusState& st,
             BusSnapshot& snap) {
  snap.traj = traj;
  snap.ybar = st.ybar;
  snap.n = st.n;
}

ocp::Trajectory map_subsystem(const DecomposedModel& dm, int i, const ocp::OcpSpec& full_spec,
                              const ocp::Trajectory& central) {
  if (central.v.rows() != full_spec.nv || central.u.rows() != full_spec.nu_total())
    throw std::invalid_argument("trajectory does not match the centralized dimensions");
  const auto& sub = dm.subsystems[i];
  const int nv = sub.spec.nv();
  const int nu = sub.spec.nu();
  const int nc = sub.spec.n_contacts();
  ocp::Trajectory out;
  out.v.resize(nv, central.v.cols());
  out.q.resize(nv, central.q.cols());
  out.u.resize(nu + 2 * nc, central.u.cols());
  for (int r = 0; r < nv; ++r) {
    out.v.row(r) = central.v.row(sub.q_map[r]);
    out.q.row(r) = central.q.row(sub.q_map[r]);
  }
  for (int r = 0; r < nu; ++r) out.u.row(r) = central.u.row(sub.u_map[r]);
  for (int c = 0; c < nc; ++c) {
    out.u.row(nu + 2 * c) = central.u.row(full_spec.nu + 2 * sub.contact_map[c]);
    out.u.row(nu + 2 * c + 1) = central.u.row(full_spec.nu + 2 * sub.contact_map[c] + 1);
  }
  return out;
}

std::vector<ocp::Trajectory> map_global(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                                        const ocp::Trajectory& central) {
  std::vector<ocp::Trajectory> out;
  out.reserve(dm.n_subsystems());
  for (int i = 0; i < dm.n_subsystems(); ++i)
    out.push_back(map_subsystem(dm, i, full_spec, central));
  return out;
}

ocp::Trajectory stitch(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                       const std::vector<ocp::Trajectory>& subs) {
  if (static_cast<int>(subs.size()) != dm.n_subsystems())
    throw std::invalid_argument("subsystem count mismatch");
  ocp::Trajectory out;
  out.v.setZero(full_spec.nv, subs[0].v.cols());
  out.q.setZero(full_spec.nv, subs[0].q.cols());
  out.u.setZero(full_spec.nu_total(), subs[0].u.cols());
  for (int i = 0; i < dm.n_subsystems(); ++i) {
    const auto& sub = dm.subsystems[i];
    const int nv = sub.spec.nv();
    const int nu = sub.spec.nu();
    const int nc = sub.spec.n_contacts();
    for (int r = 0; r < nv; ++r) {
      if (i > 0 && sub.q_map[r] < 3) continue;  // base rows come from subsystem 0
      out.v.row(sub.q_map[r]) = subs[i].v.row(r);
      out.q.row(sub.q_map[r]) = subs[i].q.row(r);
    }
    for (int r = 0; r < nu; ++r) out.u.row(sub.u_map[r]) = subs[i].u.row(r);
    for (int c = 0; c < nc; ++c) {
      out.u.row(full_spec.nu + 2 * sub.contact_map[c]) = subs[i].u.row(nu + 2 * c);
      out.u.row(full_spec.nu + 2 * sub.contact_map[c] + 1) = subs[i].u.row(nu + 2 * c + 1);
    }
  }
  return out;
}

void residuals(const DecomposedModel& dm, const std::vector<ocp::Trajectory>& traj,
               std::vector<Mat>& out) {
  out.resize(dm.n_pairs());
  for (int e = 0; e < dm.n_pairs(); ++e)
    out[e] = traj[dm.pairs[e].a].v.topRows(3) - traj[dm.pairs[e].b].v.topRows(3);
}

namespace {

double interface_squared(const Mat& r_e, bool include_terminal) {
  const int n = static_cast<int>(r_e.cols()) - 1;
  double ss = r_e.leftCols(n).squaredNorm();
  if (include_terminal) ss += r_e.col(n).squaredNorm();
  return ss;
}

}  // namespace

double interface_norm(const Mat& r_e, bool include_terminal) {
  return std::sqrt(interface_squared(r_e, include_terminal));
}

double residual_norm(const std::vector<Mat>& r, bool include_terminal) {
  double ss = 0.0;
  for (const auto& r_e : r) ss += interface_squared(r_e, include_terminal);
  return std::sqrt(ss);
}

void build_terms(const DecomposedModel& dm, int i, const BusSnapshot& snap,
                 const ConsensusSettings& cfg, sqp::ConsensusTerms& out) {
  out.rho = cfg.rho;
  out.sigma = cfg.sigma;
  out.step_scale = 1.0 / static_cast<double>(dm.n_subsystems());
  out.include_terminal = cfg.include_terminal;
  int count = 0;
  for (const auto& p : dm.pairs)
    if (p.a == i || p.b == i) ++count;
  out.pairs.resize(count);
  int slot = 0;
  for (int e = 0; e < dm.n_pairs(); ++e) {
    const auto& p = dm.pairs[e];
    if (p.a != i && p.b != i) continue;
    auto& t = out.pairs[slot++];
    t.sign = (p.a == i) ? 1.0 : -1.0;
    const int other = (p.a == i) ? p.b : p.a;
    t.neighbor_v = snap.traj[other].v.topRows(3);
    t.ybar = snap.ybar[e];
  }
}

double augmented_objective(const DecomposedModel& dm, int i, const ocp::OcpSpec& sub_spec,
                           const ocp::Trajectory& own, const ocp::Trajectory& prev,
                           const BusSnapshot& snap, const ConsensusSettings& cfg) {
  double val = ocp::total_objective(dm.subsystems[i].spec, sub_spec, own);
  const int n = sub_spec.N;
  const int last = cfg.include_terminal ? n : n - 1;
  for (int e = 0; e < dm.n_pairs(); ++e) {
    const auto& p = dm.pairs[e];
    if (p.a != i && p.b != i) continue;
    const double s = (p.a == i) ? 1.0 : -1.0;
    const int other = (p.a == i) ? p.b : p.a;
    for (int k = 0; k <= last; ++k) {
      const Vec3 arg = s * (own.v.col(k).head<3>() - snap.traj[other].v.col(k).head<3>()) +
                       Vec3(snap.ybar[e].col(k));
      val += 0.5 * cfg.rho * arg.squaredNorm();
    }
  }
  for (int k = 0; k <= n; ++k)
    val += 0.5 * cfg.sigma *
           ((own.v.col(k) - prev.v.col(k)).squaredNorm() +
            (own.q.col(k) - prev.q.col(k)).squaredNorm());
  return val;
}

void dual_update(ConsensusState& st, const std::vector<Mat>& r_new) {
  if (r_new.size() != st.ybar.size()) throw std::invalid_argument("residual count mismatch");
  double ss = 0.0;
  for (size_t e = 0; e < r_new.size(); ++e) {
    st.ybar[e] += r_new[e];
    const double sq = interface_squared(r_new[e], st.cfg.include_terminal);
    st.pair_history[e].push_back(std::sqrt(sq));
    ss += sq;
  }
  if (&st.r != &r_new) st.r = r_new;
  st.history.push_back(std::sqrt(ss));
  ++st.n;
}

WorkerPool::WorkerPool(int workers) : workers_(workers) {
  if (workers < 1) throw ConfigError("worker count must be at least 1");
  if (workers_ == 1) return;
  threads_.reserve(workers_);
  for (int w = 0; w < workers_; ++w) threads_.emplace_back([this, w] { worker_loop(w); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::worker_loop(int slot) {
  long seen = 0;
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    start_cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
    if (stop_) return;
    seen = generation_;
    const int n = n_;
    const auto* fn = fn_;
    lk.unlock();
    for (int i = slot; i < n; i += workers_) {
      try {
        (*fn)(i);
      } catch (...) {
        errors_[i] = std::current_exception();
      }
    }
    lk.lock();
    if (--remaining_ == 0) done_cv_.notify_one();
  }
}

void WorkerPool::run(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  errors_.assign(n, nullptr);
  if (threads_.empty()) {
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors_[i] = std::current_exception();
      }
    }
  } else {
    std::unique_lock<std::mutex> lk(mu_);
    fn_ = &fn;
    n_ = n;
    remaining_ = workers_;
    ++generation_;
    start_cv_.notify_all();
    done_cv_.wait(lk, [&] { return remaining_ == 0; });
    fn_ = nullptr;
  }
  for (auto& e : errors_)
    if (e) std::rethrow_exception(e);
}

double distributed_iteration(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                             std::vector<sqp::SubproblemSolver>& solvers,
                             std::vector<ocp::Trajectory>& traj,
                             const std::vector<GeneralizedState>& x0, ConsensusState& st,
                             WorkerPool& pool, IterationWorkspace& ws) {
  const int s = dm.n_subsystems();
  if (static_cast<int>(solvers.size()) != s || static_cast<int>(traj.size()) != s ||
      static_cast<int>(x0.size()) != s)
    throw std::invalid_argument("subsystem count mismatch");
  publish(traj, st, ws.snap);
  if (static_cast<int>(ws.terms.size()) != s) ws.terms.resize(s);
  if (static_cast<int>(ws.reports.size()) != s) ws.reports.resize(s);
  for (int i = 0; i < s; ++i) build_terms(dm, i, ws.snap, st.cfg, ws.terms[i]);
  pool.run(s, [&](int i) {
    ws.reports[i] =
        solvers[i].newton_step(traj[i], x0[i], &ws.snap.traj, &full_spec.schedule, &ws.terms[i]);
  });
  residuals(dm, traj, st.r);
  dual_update(st, st.r);
  return st.history.back();
}

namespace {

double trajectory_norm(const ocp::Trajectory& t) {
  return std::sqrt(t.v.squaredNorm() + t.q.squaredNorm() + t.u.squaredNorm());
}

}  // namespace

DistributedResult solve_distributed(const DecomposedModel& dm, const ocp::OcpSpec& full_spec,
                                    std::vector<sqp::SubproblemSolver>& solvers,
                                    std::vector<ocp::Trajectory>& traj,
                                    const GeneralizedState& x0, ConsensusState& st,
                                    WorkerPool& pool, std::ostream* trace) {
  const int s = dm.n_subsystems();
  std::vector<GeneralizedState> x0s(s);
  for (int i = 0; i < s; ++i) x0s[i] = model::restrict_state(dm, i, x0);
  IterationWorkspace ws;
  DistributedResult res;
  std::vector<ocp::Trajectory> before;
  for (int it = 0; it < st.cfg.max_iters; ++it) {
    before = traj;
    const double norm = distributed_iteration(dm, full_spec, solvers, traj, x0s, st, pool, ws);
    res.iters = it + 1;
    if (trace) {
      char buf[192];
      for (int e = 0; e < dm.n_pairs(); ++e)
        for (int i = 0; i < s; ++i) {
          std::snprintf(buf, sizeof buf, "%d,%s,%.9e,%d,%.6e\n", st.n,
                        dm.pairs[e].label().c_str(), st.pair_history[e].back(), i,
                        ws.reports[i].wall_s);
          *trace << buf;
        }
    }
    // Residuals alone cannot detect convergence: on symmetric splits they
    // vanish identically while the sweeps are still moving, so the sweep must
    // also be stationary. The proving sweep's step is discarded the same way
    // the centralized solve discards its final noise step.
    bool stationary = true;
    for (int i = 0; i < s; ++i) {
      const double tol =
          solvers[i].settings().step_tol * (1.0 + trajectory_norm(before[i]));
      if (ws.reports[i].step_norm > tol) {
        stationary = false;
        break;
      }
    }
    if (norm < st.cfg.eps && stationary) {
      traj = before;
      res.converged = true;
      break;
    }
  }
  res.reports = ws.reports;
  return res;
}

}  // namespace dwmpc::consensus
