#include <doctest.h>

#include <cmath>

#include "dwmpc/decomposition.hpp"
#include "dwmpc/dynamics.hpp"
#include "dwmpc/model.hpp"
#include "dwmpc/ocp.hpp"
#include "dwmpc/sqp.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace dwmpc;
using testutil::Rng;
using testutil::runif;

namespace {

Mat random_psd(int n, double shift, Rng& rng) {
  Mat g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = runif(rng, -1.0, 1.0);
  Mat out = g * g.transpose();
  out.diagonal().array() += shift;
  return out;
}

std::vector<sqp::StageData> random_stages(int n, int nx, int nu, Rng& rng) {
  std::vector<sqp::StageData> stages(n);
  for (auto& st : stages) {
    st.resize(nx, nu);
    st.Q = random_psd(nx, 0.1, rng);
    st.R = random_psd(nu, 0.5, rng);
    for (int i = 0; i < nu; ++i)
      for (int j = 0; j < nx; ++j) st.S(i, j) = runif(rng, -0.1, 0.1);
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < nx; ++j) st.A(i, j) = runif(rng, -0.4, 0.4);
      st.A(i, i) += 1.0;
      for (int j = 0; j < nu; ++j) st.B(i, j) = runif(rng, -0.5, 0.5);
      st.d[i] = runif(rng, -0.2, 0.2);
      st.qg[i] = runif(rng, -1.0, 1.0);
    }
    for (int i = 0; i < nu; ++i) st.rg[i] = runif(rng, -1.0, 1.0);
  }
  return stages;
}

// Replaces the states of t with a forward rollout of its own controls, making
// the trajectory dynamically consistent so the transcription defects vanish.
void close_defects(const model::ModelSpec& m, const ocp::OcpSpec& spec,
                   const model::GeneralizedState& x0, ocp::Trajectory& t) {
  t.q.col(0) = x0.q;
  t.v.col(0) = x0.v;
  std::vector<bool> stance(spec.n_contacts);
  for (int k = 0; k < spec.N; ++k) {
    for (int f = 0; f < spec.n_contacts; ++f) stance[f] = spec.schedule.stance(f, k);
    const auto next = model::step_semi_implicit(
        m, {t.q.col(k), t.v.col(k)}, t.u.col(k).head(spec.nu),
        t.u.col(k).tail(2 * spec.n_contacts), stance, spec.dt);
    t.q.col(k + 1) = next.q;
    t.v.col(k + 1) = next.v;
  }
}

ocp::Trajectory rollout_trajectory(const model::ModelSpec& m, const ocp::OcpSpec& spec,
                                   const model::GeneralizedState& x0) {
  ocp::Trajectory t = ocp::initial_trajectory(m, spec);
  close_defects(m, spec, x0, t);
  return t;
}

}  // namespace

TEST_CASE("riccati recursion equals a dense KKT solve") {
  Rng rng(31);
  sqp::SqpSettings settings;
  settings.reg_init = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int nx = 6, nu = 3, n = 20;
    auto stages = random_stages(n, nx, nu, rng);
    const Mat qn = random_psd(nx, 0.1, rng);
    Vec qgn(nx), dx0(nx);
    for (int i = 0; i < nx; ++i) {
      qgn[i] = runif(rng, -1.0, 1.0);
      dx0[i] = runif(rng, -0.5, 0.5);
    }
    sqp::RiccatiResult ric;
    sqp::riccati_solve(stages, qn, qgn, dx0, settings, ric);
    const auto dense = oracle::dense_lq_solve(stages, qn, qgn, dx0, 0.0);
    const double scale = std::max(1.0, dense.dx.cwiseAbs().maxCoeff());
    CHECK((ric.dx - dense.dx).cwiseAbs().maxCoeff() < 1e-9 * scale);
    CHECK((ric.du - dense.du).cwiseAbs().maxCoeff() < 1e-9 * scale);
    CHECK(ric.retries == 0);
    CHECK(ric.reg_used == 0.0);

    // the dense optimum certifies the model decrease value
    double md = 0.0;
    for (int k = 0; k < n; ++k) {
      const auto dxk = dense.dx.col(k);
      const auto duk = dense.du.col(k);
      md += stages[k].qg.dot(dxk) + stages[k].rg.dot(duk) + 0.5 * dxk.dot(stages[k].Q * dxk) +
            duk.dot(stages[k].S * dxk) + 0.5 * duk.dot(stages[k].R * duk);
    }
    md += qgn.dot(dense.dx.col(n)) + 0.5 * dense.dx.col(n).dot(qn * dense.dx.col(n));
    CHECK(ric.model_decrease == doctest::Approx(md).epsilon(1e-9));
  }
}

TEST_CASE("riccati gains match a hand computation on a scalar problem") {
  // two-stage scalar chain: x' = a x + b u + d
  const double a = 1.1, b = 0.4, d = 0.05;
  const double q = 2.0, r = 0.5, qn = 3.0;
  const double qg0 = 0.3, rg0 = -0.2, qg1 = -0.1, rg1 = 0.4, qgn = 0.6;
  const double dx0 = 0.7;

  std::vector<sqp::StageData> stages(2);
  for (auto& st : stages) st.resize(1, 1);
  stages[0].A(0, 0) = a;
  stages[0].B(0, 0) = b;
  stages[0].d[0] = d;
  stages[0].Q(0, 0) = q;
  stages[0].R(0, 0) = r;
  stages[0].qg[0] = qg0;
  stages[0].rg[0] = rg0;
  stages[1] = stages[0];
  stages[1].qg[0] = qg1;
  stages[1].rg[0] = rg1;
  Mat qn_m(1, 1);
  qn_m(0, 0) = qn;
  Vec qgn_v(1), dx0_v(1);
  qgn_v[0] = qgn;
  dx0_v[0] = dx0;

  // backward pass by hand
  double p = qn, pv = qgn;
  double k1, c1, k0, c0;
  {
    const double quu = r + b * p * b;
    const double qux = a * p * b;
    const double qx = qg1 + a * (pv + p * d);
    const double qu = rg1 + b * (pv + p * d);
    k1 = -qux / quu;
    c1 = -qu / quu;
    const double pn = q + a * p * a - qux * qux / quu;
    pv = qx + k1 * quu * c1 + k1 * qu + qux * c1;
    p = pn;
  }
  {
    const double quu = r + b * p * b;
    const double qux = a * p * b;
    const double qu = rg0 + b * (pv + p * d);
    k0 = -qux / quu;
    c0 = -qu / quu;
  }
  const double du0 = c0 + k0 * dx0;
  const double dx1 = a * dx0 + b * du0 + d;
  const double du1 = c1 + k1 * dx1;
  const double dx2 = a * dx1 + b * du1 + d;

  sqp::SqpSettings settings;
  settings.reg_init = 0.0;
  sqp::RiccatiResult ric;
  sqp::riccati_solve(stages, qn_m, qgn_v, dx0_v, settings, ric);
  CHECK(ric.du(0, 0) == doctest::Approx(du0).epsilon(1e-14));
  CHECK(ric.du(0, 1) == doctest::Approx(du1).epsilon(1e-14));
  CHECK(ric.dx(0, 1) == doctest::Approx(dx1).epsilon(1e-14));
  CHECK(ric.dx(0, 2) == doctest::Approx(dx2).epsilon(1e-14));
}

TEST_CASE("regularization climbs on an indefinite control Hessian") {
  std::vector<sqp::StageData> stages(2);
  for (auto& st : stages) {
    st.resize(1, 1);
    st.A(0, 0) = 1.0;
    st.B(0, 0) = 0.0;  // control decoupled: Quu stays at R
    st.Q(0, 0) = 1.0;
    st.R(0, 0) = -3e-7;
  }
  Mat qn = Mat::Identity(1, 1);
  const Vec qgn = Vec::Zero(1), dx0 = Vec::Zero(1);

  sqp::SqpSettings settings;  // reg ladder 1e-8, 1e-7, 1e-6
  sqp::RiccatiResult ric;
  sqp::riccati_solve(stages, qn, qgn, dx0, settings, ric);
  CHECK(ric.retries == 2);
  CHECK(ric.reg_used == doctest::Approx(1e-6).epsilon(1e-12));

  for (auto& st : stages) st.R(0, 0) = -1.0;
  CHECK_THROWS_AS(sqp::riccati_solve(stages, qn, qgn, dx0, settings, ric), SolverError);
}

TEST_CASE("one newton step solves the free-floating block problem exactly") {
  const auto m = model::make_chain2();
  const auto spec = testutil::standing_spec(m, 20);
  sqp::SqpSettings settings;
  settings.reg_init = 0.0;  // strictly convex; keep the step unbiased

  model::GeneralizedState x0;
  x0.q = Vec(3);
  x0.v = Vec(3);
  x0.q << 0.2, 1.2, 0.3;
  x0.v << 0.5, -0.3, 0.2;

  // independent path: reference linearization plus analytic cost blocks,
  // solved densely as one KKT system
  const auto base = ocp::initial_trajectory(m, spec);
  std::vector<sqp::StageData> stages(spec.N);
  ocp::StageLin lin;
  for (int k = 0; k < spec.N; ++k) {
    auto& st = stages[k];
    st.resize(spec.nx(), spec.nu_total());
    ocp::linearize_stage(m, spec, k, base.v.col(k), base.q.col(k), base.u.col(k),
                         base.v.col(k + 1), base.q.col(k + 1), 1e-6, lin);
    st.A = lin.A;
    st.B = lin.B;
    st.d = lin.d;
    st.Q.diagonal().head(3) = spec.weights.v;
    st.Q.diagonal().tail(3) = spec.weights.q;
    st.R.diagonal() = spec.weights.u;
    for (int i = 0; i < 3; ++i) {
      st.qg[i] = spec.weights.v[i] * (base.v(i, k) - spec.ref.v_ref(i, k));
      st.qg[3 + i] = spec.weights.q[i] * (base.q(i, k) - spec.ref.q_ref(i, k));
    }
    st.rg = spec.weights.u.cwiseProduct(base.u.col(k));
  }
  Mat qn = Mat::Zero(6, 6);
  qn.diagonal().head(3) = spec.weights.v_term;
  qn.diagonal().tail(3) = spec.weights.q_term;
  Vec qgn(6), dx0(6);
  for (int i = 0; i < 3; ++i) {
    qgn[i] = spec.weights.v_term[i] * (base.v(i, spec.N) - spec.ref.v_ref(i, spec.N));
    qgn[3 + i] = spec.weights.q_term[i] * (base.q(i, spec.N) - spec.ref.q_ref(i, spec.N));
    dx0[i] = x0.v[i] - base.v(i, 0);
    dx0[3 + i] = x0.q[i] - base.q(i, 0);
  }
  const auto dense = oracle::dense_lq_solve(stages, qn, qgn, dx0, 0.0);

  sqp::CentralizedSolver solver(m, spec, settings);
  ocp::Trajectory traj = base;
  const auto rep1 = solver.newton_step(traj, x0);
  for (int k = 0; k <= spec.N; ++k) {
    const Vec dv = dense.dx.col(k).head(3), dq = dense.dx.col(k).tail(3);
    CHECK((traj.v.col(k) - (base.v.col(k) + dv)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((traj.q.col(k) - (base.q.col(k) + dq)).cwiseAbs().maxCoeff() < 1e-8);
  }
  for (int k = 0; k < spec.N; ++k)
    CHECK((traj.u.col(k) - (base.u.col(k) + dense.du.col(k))).cwiseAbs().maxCoeff() < 1e-8);

  // the reported model decrease agrees with the dense optimum's objective
  double md = 0.0;
  for (int k = 0; k < spec.N; ++k) {
    const auto dxk = dense.dx.col(k);
    const auto duk = dense.du.col(k);
    md += stages[k].qg.dot(dxk) + stages[k].rg.dot(duk) + 0.5 * dxk.dot(stages[k].Q * dxk) +
          duk.dot(stages[k].S * dxk) + 0.5 * duk.dot(stages[k].R * duk);
  }
  md += qgn.dot(dense.dx.col(spec.N)) + 0.5 * dense.dx.col(spec.N).dot(qn * dense.dx.col(spec.N));
  CHECK(rep1.model_decrease == doctest::Approx(md).epsilon(1e-6));

  // linear-quadratic problem: the second step is finite-difference noise
  // amplified along the lightly weighted force-split direction
  const auto rep2 = solver.newton_step(traj, x0);
  CHECK(rep2.step_norm <= 1e-4);

  ocp::Trajectory traj2 = base;
  sqp::CentralizedSolver solver2(m, spec, settings);
  const auto res = solver2.solve(traj2, x0);
  CHECK(res.converged);
  CHECK(res.iters <= 2);
  // convergence keeps the pre-noise iterate, so the one-step optimum survives
  for (int k = 0; k < spec.N; ++k)
    CHECK((traj2.u.col(k) - (base.u.col(k) + dense.du.col(k))).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("transcribed gradients match finite differences of the node cost") {
  const auto m = model::make_quadruped2d();
  const auto spec = testutil::make_spec(m, testutil::trot_params(m, 0.3));
  const auto dm = model::decompose_trivial(m);
  sqp::SubproblemSolver solver(dm, 0, spec, {});

  Rng rng(11);
  ocp::Trajectory traj = ocp::initial_trajectory(m, spec);
  for (int k = 0; k <= spec.N; ++k)
    for (int i = 0; i < spec.nv; ++i) {
      traj.q(i, k) += runif(rng, -0.02, 0.02);
      traj.v(i, k) += runif(rng, -0.2, 0.2);
    }
  for (int k = 0; k < spec.N; ++k)
    for (int i = 0; i < spec.nu_total(); ++i) traj.u(i, k) += runif(rng, -1.0, 1.0);

  const auto& stages = solver.transcribe(traj);
  const double h = 1e-6;
  for (int k : {10, 40}) {
    const auto cv = ocp::eval_constraints(m, spec, k, traj.v.col(k), traj.q.col(k), traj.u.col(k));
    for (int i = 0; i < cv.ineq.size(); ++i) REQUIRE(std::abs(cv.ineq[i]) > 1e-4);

    const auto cost = [&](const Vec& vv, const Vec& qq, const Vec& uu) {
      const auto c = ocp::eval_constraints(m, spec, k, vv, qq, uu);
      return ocp::stage_cost(spec, k, vv, qq, uu) + ocp::swing_cost(m, spec, k, qq) +
             ocp::penalty_cost(spec, c.eq, c.ineq);
    };
    Vec gx(spec.nx()), gu(spec.nu_total());
    Vec vp = traj.v.col(k), qp = traj.q.col(k), up = traj.u.col(k);
    for (int i = 0; i < spec.nv; ++i) {
      vp[i] += h;
      const double cp = cost(vp, qp, up);
      vp[i] -= 2 * h;
      const double cm = cost(vp, qp, up);
      vp[i] = traj.v(i, k);
      gx[i] = (cp - cm) / (2 * h);
      qp[i] += h;
      const double cqp = cost(vp, qp, up);
      qp[i] -= 2 * h;
      const double cqm = cost(vp, qp, up);
      qp[i] = traj.q(i, k);
      gx[spec.nv + i] = (cqp - cqm) / (2 * h);
    }
    for (int i = 0; i < spec.nu_total(); ++i) {
      up[i] += h;
      const double cp = cost(vp, qp, up);
      up[i] -= 2 * h;
      const double cm = cost(vp, qp, up);
      up[i] = traj.u(i, k);
      gu[i] = (cp - cm) / (2 * h);
    }
    const double sx = 1.0 + stages[k].qg.cwiseAbs().maxCoeff();
    const double su = 1.0 + stages[k].rg.cwiseAbs().maxCoeff();
    CHECK((gx - stages[k].qg).cwiseAbs().maxCoeff() <= 1e-7 * sx);
    CHECK((gu - stages[k].rg).cwiseAbs().maxCoeff() <= 1e-7 * su);
  }
}

TEST_CASE("coupled subproblem dynamics match differences of the coupled step") {
  for (const bool with_arm : {false, true}) {
    CAPTURE(with_arm);
  const auto m = with_arm ? model::make_quadmanip2d() : model::make_quadruped2d();
  const auto full_spec = testutil::make_spec(m, testutil::trot_params(m, 0.3));
  const auto dm = model::decompose(m);

  Rng rng(17);
  ocp::Trajectory full_traj = ocp::initial_trajectory(m, full_spec);
  for (int k = 0; k <= full_spec.N; ++k)
    for (int i = 0; i < full_spec.nv; ++i) {
      full_traj.q(i, k) += runif(rng, -0.05, 0.05);
      full_traj.v(i, k) += runif(rng, -0.3, 0.3);
    }
  for (int k = 0; k < full_spec.N; ++k)
    for (int i = 0; i < full_spec.nu_total(); ++i) full_traj.u(i, k) += runif(rng, -2.0, 2.0);

  std::vector<ocp::Trajectory> snapshot;
  for (int i = 0; i < dm.n_subsystems(); ++i)
    snapshot.push_back(testutil::restrict_trajectory(dm, i, full_spec, full_traj));

  const int k = 10;
  for (int sub = 0; sub < dm.n_subsystems(); ++sub) {
    const auto sub_spec = ocp::restrict_to_subsystem(full_spec, dm, sub);
    sqp::SubproblemSolver solver(dm, sub, sub_spec, {});
    const auto& stages =
        solver.transcribe(snapshot[sub], &snapshot, &full_spec.schedule, nullptr);

    // finite differences of the coupled step, neighbors frozen at the snapshot
    std::vector<model::GeneralizedState> states;
    std::vector<Vec> controls;
    std::vector<std::vector<bool>> stance;
    for (int j = 0; j < dm.n_subsystems(); ++j) {
      states.push_back({snapshot[j].q.col(k), snapshot[j].v.col(k)});
      controls.push_back(snapshot[j].u.col(k));
      std::vector<bool> sj(dm.subsystems[j].spec.n_contacts());
      for (size_t c = 0; c < sj.size(); ++c)
        sj[c] = full_spec.schedule.stance(dm.subsystems[j].contact_map[c], k);
      stance.push_back(sj);
    }
    const int nv = sub_spec.nv, nut = sub_spec.nu_total();
    const double h = 1e-4;
    Mat a_fd(2 * nv, 2 * nv), b_fd(2 * nv, nut);
    const auto fd_col = [&](auto&& mutate_plus, auto&& mutate_minus) {
      mutate_plus();
      const auto sp = model::subsystem_step(dm, sub, states, controls, stance, full_spec.dt);
      mutate_minus();
      const auto sm = model::subsystem_step(dm, sub, states, controls, stance, full_spec.dt);
      Vec col(2 * nv);
      col.head(nv) = (sp.v - sm.v) / (2 * h);
      col.tail(nv) = (sp.q - sm.q) / (2 * h);
      return col;
    };
    for (int i = 0; i < nv; ++i) {
      a_fd.col(i) = fd_col([&] { states[sub].v[i] += h; }, [&] { states[sub].v[i] -= 2 * h; });
      states[sub].v[i] += h;
      a_fd.col(nv + i) =
          fd_col([&] { states[sub].q[i] += h; }, [&] { states[sub].q[i] -= 2 * h; });
      states[sub].q[i] += h;
    }
    for (int i = 0; i < nut; ++i) {
      b_fd.col(i) =
          fd_col([&] { controls[sub][i] += h; }, [&] { controls[sub][i] -= 2 * h; });
      controls[sub][i] += h;
    }
    CHECK((stages[k].A - a_fd).cwiseAbs().maxCoeff() < 5e-5);
    CHECK((stages[k].B - b_fd).cwiseAbs().maxCoeff() < 5e-5);
  }
  }
}

TEST_CASE("quadratic model decrease is nonpositive on defect-free trajectories") {
  for (const char* name : {"quadruped2d", "quadmanip2d"}) {
    const auto m = model::make_builtin(name);
    // trot horizons kept short: the open-loop reference torques are unstable
    for (bool trot : {false, true}) {
      const auto spec = trot ? testutil::make_spec(m, testutil::trot_params(m, 0.3), 20)
                             : testutil::standing_spec(m);
      model::GeneralizedState x0{spec.ref.q_ref.col(0), spec.ref.v_ref.col(0)};
      ocp::Trajectory traj = rollout_trajectory(m, spec, x0);

      sqp::CentralizedSolver solver(m, spec, {});
      const auto rep = solver.newton_step(traj, x0);
      CHECK(rep.model_decrease <= 1e-10);
    }
  }

  // near a solution the decrease sits at the rounding floor; the sign check
  // is only meaningful when the trajectory is dynamically consistent
  {
    const auto m = model::make_quadruped2d();
    const auto spec = testutil::standing_spec(m);
    model::GeneralizedState x0{spec.ref.q_ref.col(0), spec.ref.v_ref.col(0)};
    sqp::CentralizedSolver solver(m, spec, {});
    ocp::Trajectory traj = ocp::initial_trajectory(m, spec);
    REQUIRE(solver.solve(traj, x0).converged);
    close_defects(m, spec, x0, traj);
    const auto rep = solver.newton_step(traj, x0);
    CHECK(rep.model_decrease <= 1e-10);
  }

  // coupled version: the restriction of a whole-model rollout is defect-free
  // for every subsystem under the interface wrenches
  const auto m = model::make_quadruped2d();
  const auto spec = testutil::standing_spec(m);
  const auto dm = model::decompose(m);
  model::GeneralizedState x0{spec.ref.q_ref.col(0), spec.ref.v_ref.col(0)};
  const ocp::Trajectory traj = rollout_trajectory(m, spec, x0);
  std::vector<ocp::Trajectory> snapshot;
  for (int i = 0; i < dm.n_subsystems(); ++i)
    snapshot.push_back(testutil::restrict_trajectory(dm, i, spec, traj));
  for (int i = 0; i < dm.n_subsystems(); ++i) {
    const auto sub_spec = ocp::restrict_to_subsystem(spec, dm, i);
    sqp::SubproblemSolver solver(dm, i, sub_spec, {});
    ocp::Trajectory sub_traj = snapshot[i];
    model::GeneralizedState sub_x0{sub_traj.q.col(0), sub_traj.v.col(0)};
    const auto rep = solver.newton_step(sub_traj, sub_x0, &snapshot, &spec.schedule, nullptr);
    CHECK(rep.model_decrease <= 1e-8);
  }
}

TEST_CASE("standing solve converges to a feasible gravity-supported posture") {
  const auto m = model::make_quadruped2d();
  const auto spec = testutil::standing_spec(m);
  sqp::CentralizedSolver solver(m, spec, {});
  ocp::Trajectory traj = ocp::initial_trajectory(m, spec);
  model::GeneralizedState x0{spec.ref.q_ref.col(0), spec.ref.v_ref.col(0)};

  const auto res = solver.solve(traj, x0);
  CHECK(res.converged);
  CHECK(res.iters <= 30);
  // quadratic penalties leave a small equality residual at the optimum
  CHECK(res.reports.back().max_eq_violation < 1e-4);
  CHECK(res.reports.back().max_ineq_violation < 1e-8);
  const Vec q_nom = m.nominal_q();
  for (int k = 0; k <= spec.N; ++k) CHECK(std::abs(traj.q(1, k) - q_nom[1]) < 5e-3);

  // gravity support: total vertical contact force carries the weight, exactly
  // on average over the horizon, per node once the entry transient settles
  double mass = 0.0;
  for (const auto& b : m.bodies) mass += b.mass;
  const double weight = -mass * m.gravity.y();
  double fz_sum = 0.0;
  for (int k = 0; k < spec.N; ++k) {
    double fz = 0.0;
    for (int f = 0; f < spec.n_contacts; ++f) fz += traj.u(spec.nu + 2 * f + 1, k);
    fz_sum += fz;
    if (k >= 10 && k <= 40) CHECK(fz == doctest::Approx(weight).epsilon(0.02));
  }
  CHECK(fz_sum / spec.N == doctest::Approx(weight).epsilon(0.01));
}

TEST_CASE("trotting solve keeps swing forces at zero and normal forces positive") {
  const auto m = model::make_quadruped2d();
  const auto spec = testutil::make_spec(m, testutil::trot_params(m, 0.3));
  sqp::CentralizedSolver solver(m, spec, {});
  ocp::Trajectory traj = ocp::initial_trajectory(m, spec);
  model::GeneralizedState x0{spec.ref.q_ref.col(0), spec.ref.v_ref.col(0)};

  const auto res = solver.solve(traj, x0);
  CHECK(res.converged);
  for (int k = 0; k < spec.N; ++k)
    for (int f = 0; f < spec.n_contacts; ++f) {
      const double fx = traj.u(spec.nu + 2 * f, k), fz = traj.u(spec.nu + 2 * f + 1, k);
      if (spec.schedule.stance(f, k)) {
        CHECK(fz > -1e-4);
        CHECK(std::abs(fx) <= spec.constraints.mu * fz + 1e-3);
      } else {
        CHECK(std::abs(fx) <= 1e-4);
        CHECK(std::abs(fz) <= 1e-4);
      }
    }
}

TEST_CASE("tight torque limits saturate instead of tracking") {
  auto m = model::make_quadmanip2d();
  auto spec = testutil::standing_spec(m);
  // command a fast arm swing; only the shoulder can produce it
  const int shoulder = 4;  // joints: two legs, then the arm
  REQUIRE(m.joints[shoulder].name == "shoulder");
  for (int k = 0; k <= spec.N; ++k)
    spec.ref.q_ref(3 + shoulder, k) += 1.2 * std::min(1.0, 4.0 * k * spec.dt);

  ocp::Trajectory traj = ocp::initial_trajectory(m, spec);
  model::GeneralizedState x0{m.nominal_q(), Vec::Zero(m.nv())};
  sqp::CentralizedSolver free_solver(m, spec, {});
  REQUIRE(free_solver.solve(traj, x0).converged);
  const double t_free = traj.u.row(shoulder).cwiseAbs().maxCoeff();
  REQUIRE(t_free > 1.0);

  auto m_tight = m;
  m_tight.joints[shoulder].torque_limit = 0.5 * t_free;
  sqp::CentralizedSolver tight_solver(m_tight, spec, {});
  ocp::Trajectory traj2 = ocp::initial_trajectory(m_tight, spec);
  REQUIRE(tight_solver.solve(traj2, x0).converged);
  const double t_tight = traj2.u.row(shoulder).cwiseAbs().maxCoeff();
  CHECK(t_tight >= 0.5 * t_free - 1e-3);
  CHECK(t_tight <= 0.5 * t_free * 1.03);
}

TEST_CASE("empty consensus terms do not perturb the step") {
  const auto m = model::make_quadruped2d();
  const auto spec = testutil::standing_spec(m);
  const auto dm = model::decompose_trivial(m);
  model::GeneralizedState x0{spec.ref.q_ref.col(0), spec.ref.v_ref.col(0)};

  sqp::SubproblemSolver plain(dm, 0, spec, {});
  sqp::SubproblemSolver with_terms(dm, 0, spec, {});
  ocp::Trajectory ta = ocp::initial_trajectory(m, spec);
  ocp::Trajectory tb = ta;
  sqp::ConsensusTerms ct;
  ct.rho = 10.0;
  ct.sigma = 0.0;  // no pairs and no damping: the subproblem is untouched
  plain.newton_step(ta, x0);
  with_terms.newton_step(tb, x0, nullptr, nullptr, &ct);
  CHECK((ta.v - tb.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ta.q - tb.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ta.u - tb.u).cwiseAbs().maxCoeff() == 0.0);
}
