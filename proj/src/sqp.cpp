#include "dwmpc/sqp.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <limits>
#include <stdexcept>

namespace dwmpc::sqp {

namespace {

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

double wall_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

void riccati_solve(std::vector<StageData>& stages, const Mat& qn, const Vec& qgn, const Vec& dx0,
                   const SqpSettings& s, RiccatiResult& out) {
  const int n = static_cast<int>(stages.size());
  const int nx = static_cast<int>(qn.rows());
  const int nu = static_cast<int>(stages.front().R.rows());
  out.dx.resize(nx, n + 1);
  out.du.resize(nu, n);

  Mat p_mat(nx, nx), atp(nx, nx), btp(nu, nx), qxx(nx, nx), qux(nu, nx), quu(nu, nu);
  Mat quuk(nu, nx);
  Vec p_vec(nx), pd(nx), qx(nx), qu(nu), quk(nu);
  Eigen::LLT<Mat> llt(nu);

  double reg = s.reg_init;
  int retries = 0;
  for (;;) {
    p_mat = qn;
    p_vec = qgn;
    bool ok = true;
    for (int k = n - 1; k >= 0; --k) {
      StageData& st = stages[k];
      atp.noalias() = st.A.transpose() * p_mat;
      btp.noalias() = st.B.transpose() * p_mat;
      qxx = st.Q;
      qxx.noalias() += atp * st.A;
      qux = st.S;
      qux.noalias() += btp * st.A;
      quu = st.R;
      quu.noalias() += btp * st.B;
      quu.diagonal().array() += reg;
      pd = p_vec;
      pd.noalias() += p_mat * st.d;
      qx = st.qg;
      qx.noalias() += st.A.transpose() * pd;
      qu = st.rg;
      qu.noalias() += st.B.transpose() * pd;
      llt.compute(quu);
      if (llt.info() != Eigen::Success) {
        ok = false;
        break;
      }
      st.K = -llt.solve(qux);
      st.kff = -llt.solve(qu);
      quuk.noalias() = quu * st.K;
      quk.noalias() = quu * st.kff;
      p_mat = qxx;
      p_mat.noalias() += st.K.transpose() * quuk;
      p_mat.noalias() += st.K.transpose() * qux;
      p_mat.noalias() += qux.transpose() * st.K;
      p_mat = (0.5 * (p_mat + p_mat.transpose())).eval();
      p_vec = qx;
      p_vec.noalias() += st.K.transpose() * quk;
      p_vec.noalias() += st.K.transpose() * qu;
      p_vec.noalias() += qux.transpose() * st.kff;
    }
    if (ok) break;
    if (reg >= s.reg_cap)
      throw SolverError("control Hessian not positive definite at regularization cap " +
                        std::to_string(s.reg_cap));
    reg = std::min(std::max(reg * s.reg_growth, 1e-12), s.reg_cap);
    ++retries;
  }
  out.reg_used = reg;
  out.retries = retries;

  out.dx.col(0) = dx0;
  double md = 0.0;
  for (int k = 0; k < n; ++k) {
    const StageData& st = stages[k];
    out.du.col(k) = st.kff;
    out.du.col(k).noalias() += st.K * out.dx.col(k);
    const auto dxk = out.dx.col(k);
    const auto duk = out.du.col(k);
    md += st.qg.dot(dxk) + st.rg.dot(duk) + 0.5 * dxk.dot(st.Q * dxk) + duk.dot(st.S * dxk) +
          0.5 * duk.dot(st.R * duk);
    out.dx.col(k + 1) = st.d;
    out.dx.col(k + 1).noalias() += st.A * dxk;
    out.dx.col(k + 1).noalias() += st.B * duk;
  }
  md += qgn.dot(out.dx.col(n)) + 0.5 * out.dx.col(n).dot(qn * out.dx.col(n));
  out.model_decrease = md;
}

std::string NewtonReport::to_json() const {
  nlohmann::json j;
  j["step_norm"] = step_norm;
  j["objective_before"] = objective_before;
  j["objective_after"] = objective_after;
  j["max_eq_violation"] = max_eq_violation;
  j["max_ineq_violation"] = max_ineq_violation;
  j["model_decrease"] = model_decrease;
  j["reg_used"] = reg_used;
  j["riccati_retries"] = riccati_retries;
  j["wall_s"] = wall_s;
  j["cpu_s"] = cpu_s;
  return j.dump();
}

SubproblemSolver::SubproblemSolver(const DecomposedModel& dm, int sub_id, ocp::OcpSpec spec,
                                   const SqpSettings& settings)
    : dm_(&dm), id_(sub_id), spec_(std::move(spec)), settings_(settings), coupler_(dm, sub_id) {
  ocp::validate(spec_, model_spec());
  const ModelSpec& m = model_spec();
  const int nv = spec_.nv;
  const int nx = spec_.nx();
  const int nut = spec_.nu_total();

  stages_.resize(spec_.N);
  for (auto& st : stages_) st.resize(nx, nut);
  qn_.setZero(nx, nx);
  qgn_.setZero(nx);
  dx0_.setZero(nx);

  int rows_max = 2 * nv;
  for (int k = 0; k < spec_.N; ++k)
    rows_max = std::max(rows_max,
                        2 * nv + ocp::n_eq_rows(spec_, k) + ocp::n_ineq_rows(spec_, m, k));
  eval_out_.setZero(rows_max);
  eval_plus_.setZero(rows_max);
  eval_minus_.setZero(rows_max);
  jx_.setZero(rows_max, nx);
  ju_.setZero(rows_max, nut);
  vp_.setZero(nv);
  qp_.setZero(nv);
  up_.setZero(nut);
  qraw_.setZero(nv);
  vraw_.setZero(nv);
  foot_j_.setZero(2, nv);
  eq_.setZero(rows_max);
  ineq_.setZero(rows_max);
  own_stance_.assign(spec_.n_contacts, true);

  nb_states_.resize(dm.n_subsystems());
  nb_controls_.resize(dm.n_subsystems());
  nb_stance_.resize(dm.n_subsystems());
  for (int j = 0; j < dm.n_subsystems(); ++j) {
    const auto& sub = dm.subsystems[j];
    nb_states_[j].q.setZero(sub.spec.nv());
    nb_states_[j].v.setZero(sub.spec.nv());
    nb_controls_[j].setZero(sub.spec.nu() + 2 * sub.spec.n_contacts());
    nb_stance_[j].assign(sub.spec.n_contacts(), true);
  }
}

void SubproblemSolver::set_spec(const ocp::OcpSpec& spec) {
  if (spec.N != spec_.N || spec.nv != spec_.nv || spec.nu != spec_.nu ||
      spec.n_contacts != spec_.n_contacts)
    throw ConfigError("subproblem dimensions cannot change between solves");
  spec_ = spec;
}

void SubproblemSolver::assemble(const ocp::Trajectory& traj,
                                const std::vector<ocp::Trajectory>* snapshot,
                                const ocp::ContactSchedule* full_schedule,
                                const ConsensusTerms* consensus) {
  const ModelSpec& m = model_spec();
  const int nv = spec_.nv;
  const int nx = spec_.nx();
  const int nut = spec_.nu_total();
  const int nc = spec_.n_contacts;
  const double h = settings_.fd_step;
  const double dt = spec_.dt;
  const bool coupled = snapshot != nullptr && dm_->n_tree() > 0;
  const auto& ws = spec_.weights;

  for (int k = 0; k < spec_.N; ++k) {
    StageData& st = stages_[k];
    const int ne = ocp::n_eq_rows(spec_, k);
    const int ni = ocp::n_ineq_rows(spec_, m, k);
    const int rows = 2 * nv + ne + ni;

    for (int f = 0; f < nc; ++f) own_stance_[f] = spec_.schedule.stance(f, k);
    if (coupled) {
      for (int j = 0; j < dm_->n_subsystems(); ++j) {
        if (j == id_) continue;
        const auto& sub = dm_->subsystems[j];
        nb_states_[j].q = (*snapshot)[j].q.col(k);
        nb_states_[j].v = (*snapshot)[j].v.col(k);
        nb_controls_[j] = (*snapshot)[j].u.col(k);
        for (int c = 0; c < sub.spec.n_contacts(); ++c)
          nb_stance_[j][c] = full_schedule->stance(sub.contact_map[c], k);
      }
      coupler_.build_cache(nb_states_, nb_controls_, nb_stance_, dt, cache_);
    }

    vp_ = traj.v.col(k);
    qp_ = traj.q.col(k);
    up_ = traj.u.col(k);

    // The interface impulse is data in this quadratic model, not a function of
    // the decision variables: it is solved once at the iterate (against the
    // stale neighbors) and pinned through the differences. The scaled-mass
    // local model then keeps full authority over its base copy, which is what
    // the fraction-scaled tracking weights are calibrated against.
    if (coupled) {
      coupler_.step({qp_, vp_}, up_.head(spec_.nu), up_.tail(2 * nc), own_stance_, dt, cache_,
                    qraw_, vraw_, false);
      impulse_ = coupler_.own_impulse();
    } else {
      impulse_.setZero();
    }

    const auto eval = [&](const Vec& vv, const Vec& qq, const Vec& uu, Vec& outv, bool reuse) {
      const GeneralizedState pt{qq, vv};
      coupler_.step_pinned(pt, uu.head(spec_.nu), uu.tail(2 * nc), own_stance_, dt, impulse_,
                           qraw_, vraw_, reuse);
      ocp::eval_constraints(m, spec_, k, coupler_.kin(), vv, qq, uu, eq_.head(ne),
                            ineq_.head(ni));
      outv.segment(0, nv) = vraw_;
      outv.segment(nv, nv) = qraw_;
      outv.segment(2 * nv, ne) = eq_.head(ne);
      outv.segment(2 * nv + ne, ni) = ineq_.head(ni);
    };
    eval(vp_, qp_, up_, eval_out_, coupled);

    // tracking + effort blocks before the jacobians overwrite the buffers
    st.Q.setZero();
    st.R.setZero();
    st.S.setZero();
    st.Q.diagonal().head(nv) = ws.v;
    st.Q.diagonal().tail(nv) = ws.q;
    st.R.diagonal() = ws.u;
    for (int i = 0; i < nv; ++i) {
      st.qg[i] = ws.v[i] * (vp_[i] - spec_.ref.v_ref(i, k));
      double dq = qp_[i] - spec_.ref.q_ref(i, k);
      if (i >= 2) dq = wrap_angle(dq);
      st.qg[nv + i] = ws.q[i] * dq;
    }
    st.rg = ws.u.cwiseProduct(up_);

    // swing tracking, Gauss-Newton on the foot position residual
    for (int f = 0; f < nc; ++f) {
      if (own_stance_[f]) continue;
      model::contact_jacobian(m, f, coupler_.kin(), foot_j_);
      const Vec2 p = model::contact_point(m, f, coupler_.kin());
      const double rx = p.x() - spec_.schedule.swing_x(f, k);
      const double rz = p.y() - spec_.schedule.swing_z(f, k);
      const double w = ws.swing;
      st.Q.bottomRightCorner(nv, nv).noalias() +=
          w * (foot_j_.row(1).transpose() * foot_j_.row(1));
      st.Q.bottomRightCorner(nv, nv).noalias() +=
          0.5 * w * (foot_j_.row(0).transpose() * foot_j_.row(0));
      st.qg.tail(nv).noalias() += w * rz * foot_j_.row(1).transpose();
      st.qg.tail(nv).noalias() += 0.5 * w * rx * foot_j_.row(0).transpose();
    }

    // central differences over own variables; factor reuse while q is fixed
    for (int i = 0; i < nv; ++i) {
      vp_[i] += h;
      eval(vp_, qp_, up_, eval_plus_, true);
      vp_[i] -= 2.0 * h;
      eval(vp_, qp_, up_, eval_minus_, true);
      vp_[i] = traj.v(i, k);
      jx_.col(i).head(rows) = (eval_plus_.head(rows) - eval_minus_.head(rows)) / (2.0 * h);
    }
    for (int i = 0; i < nut; ++i) {
      up_[i] += h;
      eval(vp_, qp_, up_, eval_plus_, true);
      up_[i] -= 2.0 * h;
      eval(vp_, qp_, up_, eval_minus_, true);
      up_[i] = traj.u(i, k);
      ju_.col(i).head(rows) = (eval_plus_.head(rows) - eval_minus_.head(rows)) / (2.0 * h);
    }
    for (int i = 0; i < nv; ++i) {
      qp_[i] += h;
      eval(vp_, qp_, up_, eval_plus_, false);
      qp_[i] -= 2.0 * h;
      eval(vp_, qp_, up_, eval_minus_, false);
      qp_[i] = traj.q(i, k);
      jx_.col(nv + i).head(rows) = (eval_plus_.head(rows) - eval_minus_.head(rows)) / (2.0 * h);
    }

    st.A = jx_.topRows(2 * nv);
    st.B = ju_.topRows(2 * nv);
    st.d.head(nv) = eval_out_.segment(0, nv) - traj.v.col(k + 1);
    for (int i = 0; i < nv; ++i) {
      double dq = eval_out_[nv + i] - traj.q(i, k + 1);
      if (m.is_angle(i)) dq = wrap_angle(dq);
      st.d[nv + i] = dq;
    }

    // quadratic penalties fold into the cost blocks
    const double we = spec_.constraints.w_eq;
    const auto jxe = jx_.middleRows(2 * nv, ne);
    const auto jue = ju_.middleRows(2 * nv, ne);
    const auto re = eval_out_.segment(2 * nv, ne);
    st.Q.noalias() += we * (jxe.transpose() * jxe);
    st.R.noalias() += we * (jue.transpose() * jue);
    st.S.noalias() += we * (jue.transpose() * jxe);
    st.qg.noalias() += we * (jxe.transpose() * re);
    st.rg.noalias() += we * (jue.transpose() * re);

    const double wi = spec_.constraints.w_ineq;
    for (int r = 0; r < ni; ++r) {
      const double viol = eval_out_[2 * nv + ne + r];
      if (viol <= 0.0) continue;
      const auto jxr = jx_.row(2 * nv + ne + r);
      const auto jur = ju_.row(2 * nv + ne + r);
      st.Q.noalias() += wi * (jxr.transpose() * jxr);
      st.R.noalias() += wi * (jur.transpose() * jur);
      st.S.noalias() += wi * (jur.transpose() * jxr);
      st.qg.noalias() += wi * viol * jxr.transpose();
      st.rg.noalias() += wi * viol * jur.transpose();
    }

    if (consensus != nullptr) {
      for (const auto& pr : consensus->pairs) {
        st.Q.topLeftCorner<3, 3>().diagonal().array() += consensus->rho;
        const Vec3 arg = pr.sign * (vp_.head<3>() - pr.neighbor_v.col(k)) + pr.ybar.col(k);
        st.qg.head<3>() += consensus->rho * pr.sign * arg;
      }
      st.Q.diagonal().array() += consensus->sigma;
    }
  }

  qn_.setZero();
  qn_.diagonal().head(nv) = ws.v_term;
  qn_.diagonal().tail(nv) = ws.q_term;
  for (int i = 0; i < nv; ++i) {
    qgn_[i] = ws.v_term[i] * (traj.v(i, spec_.N) - spec_.ref.v_ref(i, spec_.N));
    double dq = traj.q(i, spec_.N) - spec_.ref.q_ref(i, spec_.N);
    if (i >= 2) dq = wrap_angle(dq);
    qgn_[nv + i] = ws.q_term[i] * dq;
  }
  if (consensus != nullptr) {
    if (consensus->include_terminal) {
      for (const auto& pr : consensus->pairs) {
        qn_.topLeftCorner<3, 3>().diagonal().array() += consensus->rho;
        const Vec3 arg =
            pr.sign * (traj.v.col(spec_.N).head<3>() - pr.neighbor_v.col(spec_.N)) +
            pr.ybar.col(spec_.N);
        qgn_.head<3>() += consensus->rho * pr.sign * arg;
      }
    }
    qn_.diagonal().array() += consensus->sigma;
  }
}

namespace {

// Objective plus worst residuals in one pass.
void scan_trajectory(const ModelSpec& m, const ocp::OcpSpec& spec, const ocp::Trajectory& traj,
                     std::vector<model::BodyKin>& kin, Vec& eq, Vec& ineq, double& obj,
                     double& max_eq, double& max_ineq) {
  obj = 0.0;
  max_eq = 0.0;
  max_ineq = 0.0;
  for (int k = 0; k < spec.N; ++k) {
    obj += ocp::stage_cost(spec, k, traj.v.col(k), traj.q.col(k), traj.u.col(k));
    model::forward_kinematics(m, traj.q.col(k), traj.v.col(k), kin);
    obj += ocp::swing_cost(m, spec, k, kin);
    const int ne = ocp::n_eq_rows(spec, k);
    const int ni = ocp::n_ineq_rows(spec, m, k);
    if (eq.size() < ne) eq.resize(ne);
    if (ineq.size() < ni) ineq.resize(ni);
    ocp::eval_constraints(m, spec, k, kin, traj.v.col(k), traj.q.col(k), traj.u.col(k),
                          eq.head(ne), ineq.head(ni));
    obj += ocp::penalty_cost(spec, eq.head(ne), ineq.head(ni));
    if (ne > 0) max_eq = std::max(max_eq, eq.head(ne).cwiseAbs().maxCoeff());
    if (ni > 0) max_ineq = std::max(max_ineq, ineq.head(ni).maxCoeff());
  }
  max_ineq = std::max(max_ineq, 0.0);
  obj += ocp::terminal_cost(spec, traj.v.col(spec.N), traj.q.col(spec.N));
}

}  // namespace

const std::vector<StageData>& SubproblemSolver::transcribe(
    const ocp::Trajectory& traj, const std::vector<ocp::Trajectory>* snapshot,
    const ocp::ContactSchedule* full_schedule, const ConsensusTerms* consensus) {
  if (dm_->n_tree() > 0 && snapshot == nullptr)
    throw std::logic_error("coupled subproblem transcribed without a neighbor snapshot");
  assemble(traj, snapshot, full_schedule, consensus);
  return stages_;
}

NewtonReport SubproblemSolver::newton_step(ocp::Trajectory& traj, const GeneralizedState& x0,
                                           const std::vector<ocp::Trajectory>* snapshot,
                                           const ocp::ContactSchedule* full_schedule,
                                           const ConsensusTerms* consensus) {
  const ModelSpec& m = model_spec();
  const int nv = spec_.nv;
  if (dm_->n_tree() > 0 && snapshot == nullptr)
    throw std::logic_error("coupled subproblem stepped without a neighbor snapshot");
  NewtonReport rep;
  const double w0 = wall_seconds();
  const double c0 = thread_cpu_seconds();

  double dummy_eq = 0.0, dummy_ineq = 0.0;
  scan_trajectory(m, spec_, traj, kin_, eq_scan_, ineq_scan_, rep.objective_before, dummy_eq,
                  dummy_ineq);

  assemble(traj, snapshot, full_schedule, consensus);

  dx0_.head(nv) = x0.v - traj.v.col(0);
  for (int i = 0; i < nv; ++i) {
    double dq = x0.q[i] - traj.q(i, 0);
    if (m.is_angle(i)) dq = wrap_angle(dq);
    dx0_[nv + i] = dq;
  }

  riccati_solve(stages_, qn_, qgn_, dx0_, settings_, ric_);
  rep.model_decrease = ric_.model_decrease;
  rep.reg_used = ric_.reg_used;
  rep.riccati_retries = ric_.retries;

  const double scale = consensus != nullptr ? consensus->step_scale : 1.0;
  for (int k = 0; k <= spec_.N; ++k) {
    traj.v.col(k) += scale * ric_.dx.col(k).head(nv);
    traj.q.col(k) += scale * ric_.dx.col(k).tail(nv);
    for (int i = 0; i < nv; ++i)
      if (m.is_angle(i)) traj.q(i, k) = wrap_angle(traj.q(i, k));
  }
  traj.u += scale * ric_.du;
  rep.step_norm = scale * std::sqrt(ric_.dx.squaredNorm() + ric_.du.squaredNorm());

  scan_trajectory(m, spec_, traj, kin_, eq_scan_, ineq_scan_, rep.objective_after,
                  rep.max_eq_violation, rep.max_ineq_violation);

  rep.wall_s = wall_seconds() - w0;
  rep.cpu_s = thread_cpu_seconds() - c0;
  ++steps_;
  return rep;
}

CentralizedSolver::CentralizedSolver(const ModelSpec& m, const ocp::OcpSpec& spec,
                                     const SqpSettings& settings)
    : dm_(model::decompose_trivial(m)), settings_(settings), sub_(dm_, 0, spec, settings) {}

NewtonReport CentralizedSolver::newton_step(ocp::Trajectory& traj, const GeneralizedState& x0) {
  return sub_.newton_step(traj, x0);
}

namespace {

double trajectory_norm(const ocp::Trajectory& t) {
  return std::sqrt(t.v.squaredNorm() + t.q.squaredNorm() + t.u.squaredNorm());
}

}  // namespace

SolveResult CentralizedSolver::solve(ocp::Trajectory& traj, const GeneralizedState& x0) {
  SolveResult res;
  double best = std::numeric_limits<double>::infinity();
  ocp::Trajectory best_traj = traj;
  ocp::Trajectory before = traj;
  for (int it = 0; it < settings_.max_iters; ++it) {
    before = traj;
    NewtonReport rep = sub_.newton_step(traj, x0);
    res.reports.push_back(rep);
    res.iters = it + 1;
    res.final_step_norm = rep.step_norm;
    // Step sizes bottom out at finite-difference noise amplified along
    // low-curvature directions, so convergence is judged relative to the
    // iterate scale and the final noise step is discarded.
    if (rep.step_norm <= settings_.step_tol * (1.0 + trajectory_norm(before))) {
      traj = before;
      res.converged = true;
      res.objective = rep.objective_before;
      return res;
    }
    if (rep.objective_after < best) {
      best = rep.objective_after;
      best_traj = traj;
    }
  }
  traj = best_traj;
  res.objective = best;
  return res;
}

}  // namespace dwmpc::sqp
