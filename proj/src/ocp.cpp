#include "dwmpc/ocp.hpp"

#include <cmath>

namespace dwmpc::ocp {

namespace {

double fracf(double x) { return x - std::floor(x); }

double smoothstep(double s) { return s * s * (3.0 - 2.0 * s); }

bool limited(double lim) { return lim < 1e8; }

}  // namespace

void validate(const OcpSpec& spec, const ModelSpec& m) {
  if (spec.N < 2) throw ConfigError("horizon must have at least 2 nodes");
  if (!(spec.dt > 0.0)) throw ConfigError("ocp dt must be positive");
  if (spec.nv != m.nv() || spec.nu != m.nu() || spec.n_contacts != m.n_contacts())
    throw ConfigError("ocp dimensions do not match the model");
  const auto& w = spec.weights;
  if (w.q.size() != spec.nv || w.v.size() != spec.nv || w.q_term.size() != spec.nv ||
      w.v_term.size() != spec.nv || w.u.size() != spec.nu_total())
    throw ConfigError("weight vectors have wrong sizes");
  if (w.q.minCoeff() < 0 || w.v.minCoeff() < 0 || w.q_term.minCoeff() < 0 ||
      w.v_term.minCoeff() < 0 || w.u.minCoeff() < 0 || w.swing < 0)
    throw ConfigError("weights must be nonnegative");
  for (int i = 0; i < spec.nu; ++i)
    if (!(w.u[i] > 0.0)) throw ConfigError("actuation channels need positive effort weight");
  const auto& s = spec.schedule;
  if (s.n_feet != spec.n_contacts || s.N != spec.N || s.stance.rows() != s.n_feet ||
      s.stance.cols() != spec.N + 1)
    throw ConfigError("contact schedule does not match the horizon");
  if (spec.ref.v_ref.rows() != spec.nv || spec.ref.v_ref.cols() != spec.N + 1 ||
      spec.ref.q_ref.rows() != spec.nv || spec.ref.q_ref.cols() != spec.N + 1)
    throw ConfigError("reference does not match the horizon");
  const auto& c = spec.constraints;
  if (!(c.mu > 0.0) || c.baumgarte_alpha < 0.0 || !(c.w_eq > 0.0) || !(c.w_ineq > 0.0))
    throw ConfigError("constraint parameters out of range");
}

ContactSchedule make_gait(const GaitParams& p, int n_feet, int N, double dt, double t0,
                          const std::vector<double>& foot_x_now,
                          const std::vector<double>& foot_x_offset, double base_x0) {
  if (static_cast<int>(foot_x_now.size()) != n_feet ||
      static_cast<int>(foot_x_offset.size()) != n_feet)
    throw ConfigError("gait builder needs one foothold and offset per foot");
  if (!(p.cycle > 0.0) || !(p.duty > 0.0)) throw ConfigError("gait cycle and duty must be positive");
  ContactSchedule s;
  s.n_feet = n_feet;
  s.N = N;
  s.params = p;
  s.stance.setConstant(n_feet, N + 1, true);
  s.anchor_x.setZero(n_feet, N + 1);
  s.swing_z.setZero(n_feet, N + 1);
  s.swing_x.setZero(n_feet, N + 1);

  const auto base_x = [&](double t) { return base_x0 + p.v_cmd * (t - t0); };
  for (int f = 0; f < n_feet; ++f) {
    const double off = f < static_cast<int>(p.offsets.size()) ? p.offsets[f] : 0.0;
    for (int k = 0; k <= N; ++k) {
      const double t = t0 + k * dt;
      if (p.duty >= 1.0) {
        s.anchor_x(f, k) = foot_x_now[f];
        continue;
      }
      // boundaries land exactly on grid nodes; the nudge keeps the rounding
      // side of phase == duty consistent across cycles
      const double phase = fracf(t / p.cycle + off + 1e-9);
      const bool stance = phase < p.duty;
      s.stance(f, k) = stance;
      if (stance) {
        const double t_start = t - phase * p.cycle;
        s.anchor_x(f, k) =
            t_start <= t0 + 1e-12 ? foot_x_now[f] : base_x(t_start) + foot_x_offset[f];
      } else {
        const double sw = (phase - p.duty) / (1.0 - p.duty);
        const double t_lift = t - (phase - p.duty) * p.cycle;
        const double t_prev_start = t_lift - p.duty * p.cycle;
        const double x_lift =
            t_prev_start <= t0 + 1e-12 ? foot_x_now[f] : base_x(t_prev_start) + foot_x_offset[f];
        const double t_down = t + (1.0 - phase) * p.cycle;
        const double x_down = base_x(t_down) + foot_x_offset[f];
        s.swing_x(f, k) = x_lift + smoothstep(sw) * (x_down - x_lift);
        const double sp = std::sin(M_PI * sw);
        s.swing_z(f, k) = p.apex * sp * sp;
      }
    }
  }
  return s;
}

Reference make_reference(const ModelSpec& m, int N, double dt, double base_x0, double v_cmd) {
  Reference r;
  const Vec q_nom = m.nominal_q();
  r.q_ref.setZero(m.nv(), N + 1);
  r.v_ref.setZero(m.nv(), N + 1);
  for (int k = 0; k <= N; ++k) {
    r.q_ref.col(k) = q_nom;
    r.q_ref(0, k) = base_x0 + v_cmd * k * dt;
    r.v_ref(0, k) = v_cmd;
  }
  return r;
}

Weights default_weights(const ModelSpec& m) {
  Weights w;
  const int nv = m.nv();
  w.q = Vec::Constant(nv, 15.0);
  w.q[0] = 5.0;
  w.q[1] = 400.0;
  w.q[2] = 300.0;
  w.v = Vec::Constant(nv, 0.05);
  w.v[0] = 15.0;
  w.v[1] = 10.0;
  w.v[2] = 5.0;
  w.u = Vec::Constant(m.nu() + 2 * m.n_contacts(), 2e-3);
  w.u.tail(2 * m.n_contacts()).setConstant(1e-6);
  w.q_term = 10.0 * w.q;
  w.v_term = 10.0 * w.v;
  w.swing = 3000.0;
  return w;
}

std::vector<double> nominal_foot_offsets(const ModelSpec& m) {
  std::vector<model::BodyKin> kin;
  const Vec q = m.nominal_q();
  model::forward_kinematics(m, q, kin);
  std::vector<double> off(m.n_contacts());
  for (int c = 0; c < m.n_contacts(); ++c)
    off[c] = model::contact_point(m, c, kin).x() - q[0];
  return off;
}

double stage_cost(const OcpSpec& spec, int k, const Vec& v, const Vec& q, const Vec& u) {
  double c = 0.0;
  for (int i = 0; i < spec.nv; ++i) {
    const double dv = v[i] - spec.ref.v_ref(i, k);
    c += 0.5 * spec.weights.v[i] * dv * dv;
    double dq = q[i] - spec.ref.q_ref(i, k);
    if (i >= 2) dq = wrap_angle(dq);
    c += 0.5 * spec.weights.q[i] * dq * dq;
  }
  for (int i = 0; i < u.size(); ++i) c += 0.5 * spec.weights.u[i] * u[i] * u[i];
  return c;
}

double terminal_cost(const OcpSpec& spec, const Vec& v, const Vec& q) {
  double c = 0.0;
  for (int i = 0; i < spec.nv; ++i) {
    const double dv = v[i] - spec.ref.v_ref(i, spec.N);
    c += 0.5 * spec.weights.v_term[i] * dv * dv;
    double dq = q[i] - spec.ref.q_ref(i, spec.N);
    if (i >= 2) dq = wrap_angle(dq);
    c += 0.5 * spec.weights.q_term[i] * dq * dq;
  }
  return c;
}

// Swing tracking drives height fully and forward progress at half weight.
static constexpr double kSwingXFactor = 0.5;

double swing_cost(const ModelSpec& m, const OcpSpec& spec, int k,
                  const std::vector<model::BodyKin>& kin) {
  double c = 0.0;
  for (int f = 0; f < spec.n_contacts; ++f) {
    if (spec.schedule.stance(f, k)) continue;
    const Vec2 p = model::contact_point(m, f, kin);
    const double dz = p.y() - spec.schedule.swing_z(f, k);
    const double dx = p.x() - spec.schedule.swing_x(f, k);
    c += 0.5 * spec.weights.swing * (dz * dz + kSwingXFactor * dx * dx);
  }
  return c;
}

double swing_cost(const ModelSpec& m, const OcpSpec& spec, int k, const Vec& q) {
  std::vector<model::BodyKin> kin;
  model::forward_kinematics(m, q, kin);
  return swing_cost(m, spec, k, kin);
}

int n_eq_rows(const OcpSpec& spec, int k) {
  int n = 0;
  for (int f = 0; f < spec.n_contacts; ++f) n += spec.schedule.stance(f, k) ? 3 : 2;
  return n;
}

int n_ineq_rows(const OcpSpec& spec, const ModelSpec& m, int k) {
  int n = 0;
  for (int f = 0; f < spec.n_contacts; ++f)
    if (spec.schedule.stance(f, k)) n += 3;
  if (spec.constraints.torque_limits) {
    const Vec lim = m.torque_limits();
    for (int i = 0; i < spec.nu; ++i)
      if (limited(lim[i])) n += 2;
  }
  if (spec.constraints.joint_limits) {
    for (const auto& jt : m.joints) {
      if (limited(jt.q_max) || limited(-jt.q_min)) n += 2;
      if (limited(jt.v_max)) n += 2;
    }
  }
  return n;
}

void eval_constraints(const ModelSpec& m, const OcpSpec& spec, int k,
                      const std::vector<model::BodyKin>& kin, const Vec& v, const Vec& q,
                      const Vec& u, Eigen::Ref<Vec> eq, Eigen::Ref<Vec> ineq) {
  const auto& cs = spec.constraints;
  int ie = 0, ii = 0;
  for (int f = 0; f < spec.n_contacts; ++f) {
    if (spec.schedule.stance(f, k)) {
      const Vec2 p = model::contact_point(m, f, kin);
      const Vec2 pv = model::contact_point_vel(m, f, kin);
      eq[ie++] = pv.x() + cs.baumgarte_alpha * (p.x() - spec.schedule.anchor_x(f, k));
      eq[ie++] = pv.y() + cs.baumgarte_alpha * p.y();
      eq[ie++] = p.y();
      const double fx = u[spec.nu + 2 * f], fz = u[spec.nu + 2 * f + 1];
      ineq[ii++] = fx - cs.mu * fz;
      ineq[ii++] = -fx - cs.mu * fz;
      ineq[ii++] = -fz;
    } else {
      eq[ie++] = u[spec.nu + 2 * f];
      eq[ie++] = u[spec.nu + 2 * f + 1];
    }
  }
  if (cs.torque_limits) {
    const Vec lim = m.torque_limits();
    for (int i = 0; i < spec.nu; ++i) {
      if (!limited(lim[i])) continue;
      ineq[ii++] = u[i] - lim[i];
      ineq[ii++] = -u[i] - lim[i];
    }
  }
  if (cs.joint_limits) {
    for (int j = 0; j < m.n_joints(); ++j) {
      const auto& jt = m.joints[j];
      if (limited(jt.q_max) || limited(-jt.q_min)) {
        ineq[ii++] = q[3 + j] - jt.q_max;
        ineq[ii++] = jt.q_min - q[3 + j];
      }
      if (limited(jt.v_max)) {
        ineq[ii++] = v[3 + j] - jt.v_max;
        ineq[ii++] = -v[3 + j] - jt.v_max;
      }
    }
  }
}

ConstraintValues eval_constraints(const ModelSpec& m, const OcpSpec& spec, int k, const Vec& v,
                                  const Vec& q, const Vec& u) {
  ConstraintValues out;
  out.eq.resize(n_eq_rows(spec, k));
  out.ineq.resize(n_ineq_rows(spec, m, k));
  std::vector<model::BodyKin> kin;
  model::forward_kinematics(m, q, v, kin);
  eval_constraints(m, spec, k, kin, v, q, u, out.eq, out.ineq);
  return out;
}

double penalty_cost(const OcpSpec& spec, Eigen::Ref<const Vec> eq, Eigen::Ref<const Vec> ineq) {
  double c = 0.0;
  for (int i = 0; i < eq.size(); ++i) c += 0.5 * spec.constraints.w_eq * eq[i] * eq[i];
  for (int i = 0; i < ineq.size(); ++i) {
    const double r = std::max(0.0, ineq[i]);
    c += 0.5 * spec.constraints.w_ineq * r * r;
  }
  return c;
}

double total_objective(const ModelSpec& m, const OcpSpec& spec, const Trajectory& traj) {
  double c = 0.0;
  std::vector<model::BodyKin> kin;
  Vec eq, ineq;
  for (int k = 0; k < spec.N; ++k) {
    c += stage_cost(spec, k, traj.v.col(k), traj.q.col(k), traj.u.col(k));
    model::forward_kinematics(m, traj.q.col(k), traj.v.col(k), kin);
    c += swing_cost(m, spec, k, kin);
    eq.resize(n_eq_rows(spec, k));
    ineq.resize(n_ineq_rows(spec, m, k));
    eval_constraints(m, spec, k, kin, traj.v.col(k), traj.q.col(k), traj.u.col(k), eq, ineq);
    c += penalty_cost(spec, eq, ineq);
  }
  c += terminal_cost(spec, traj.v.col(spec.N), traj.q.col(spec.N));
  return c;
}

OcpSpec restrict_to_subsystem(const OcpSpec& spec, const DecomposedModel& dm, int i) {
  const auto& sub = dm.subsystems[i];
  OcpSpec s;
  s.N = spec.N;
  s.dt = spec.dt;
  s.constraints = spec.constraints;
  s.nv = sub.spec.nv();
  s.nu = sub.spec.nu();
  s.n_contacts = sub.spec.n_contacts();

  const int nv = s.nv;
  s.weights.q.resize(nv);
  s.weights.v.resize(nv);
  s.weights.q_term.resize(nv);
  s.weights.v_term.resize(nv);
  for (int r = 0; r < nv; ++r) {
    const int rf = sub.q_map[r];
    const double scale = r < 3 ? sub.fraction : 1.0;
    s.weights.q[r] = scale * spec.weights.q[rf];
    s.weights.v[r] = scale * spec.weights.v[rf];
    s.weights.q_term[r] = scale * spec.weights.q_term[rf];
    s.weights.v_term[r] = scale * spec.weights.v_term[rf];
  }
  s.weights.u.resize(s.nu_total());
  for (int r = 0; r < s.nu; ++r) s.weights.u[r] = spec.weights.u[sub.u_map[r]];
  for (int c = 0; c < s.n_contacts; ++c) {
    s.weights.u[s.nu + 2 * c] = spec.weights.u[spec.nu + 2 * sub.contact_map[c]];
    s.weights.u[s.nu + 2 * c + 1] = spec.weights.u[spec.nu + 2 * sub.contact_map[c] + 1];
  }
  s.weights.swing = spec.weights.swing;

  s.schedule.n_feet = s.n_contacts;
  s.schedule.N = spec.N;
  s.schedule.params = spec.schedule.params;
  s.schedule.stance.resize(s.n_contacts, spec.N + 1);
  s.schedule.anchor_x.resize(s.n_contacts, spec.N + 1);
  s.schedule.swing_z.resize(s.n_contacts, spec.N + 1);
  s.schedule.swing_x.resize(s.n_contacts, spec.N + 1);
  for (int c = 0; c < s.n_contacts; ++c) {
    const int cf = sub.contact_map[c];
    s.schedule.stance.row(c) = spec.schedule.stance.row(cf);
    s.schedule.anchor_x.row(c) = spec.schedule.anchor_x.row(cf);
    s.schedule.swing_z.row(c) = spec.schedule.swing_z.row(cf);
    s.schedule.swing_x.row(c) = spec.schedule.swing_x.row(cf);
  }

  s.ref.v_ref.resize(nv, spec.N + 1);
  s.ref.q_ref.resize(nv, spec.N + 1);
  for (int r = 0; r < nv; ++r) {
    s.ref.v_ref.row(r) = spec.ref.v_ref.row(sub.q_map[r]);
    s.ref.q_ref.row(r) = spec.ref.q_ref.row(sub.q_map[r]);
  }
  validate(s, sub.spec);
  return s;
}

Trajectory initial_trajectory(const ModelSpec& m, const OcpSpec& spec) {
  Trajectory t;
  t.resize(spec);
  t.v = spec.ref.v_ref;
  t.q = spec.ref.q_ref;
  double mass = 0.0;
  for (const auto& b : m.bodies) mass += b.mass;
  const double weight = -mass * m.gravity.y();
  for (int k = 0; k < spec.N; ++k) {
    int n_stance = 0;
    for (int f = 0; f < spec.n_contacts; ++f)
      if (spec.schedule.stance(f, k)) ++n_stance;
    if (n_stance == 0) continue;
    for (int f = 0; f < spec.n_contacts; ++f)
      if (spec.schedule.stance(f, k)) t.u(spec.nu + 2 * f + 1, k) = weight / n_stance;
  }
  return t;
}

namespace {

// Shared central-difference driver: eval writes [v'; q'_raw; eq; ineq].
template <typename F>
void fd_jacobian(F&& eval, const Vec& v0, const Vec& q0, const Vec& u0, double h, Mat& jx_v,
                 Mat& jx_q, Mat& ju, Vec& plus, Vec& minus) {
  Vec v = v0, q = q0, u = u0;
  for (int i = 0; i < v0.size(); ++i) {
    v[i] = v0[i] + h;
    eval(v, q, u, plus, true);
    v[i] = v0[i] - h;
    eval(v, q, u, minus, true);
    v[i] = v0[i];
    jx_v.col(i) = (plus - minus) / (2.0 * h);
  }
  for (int i = 0; i < u0.size(); ++i) {
    u[i] = u0[i] + h;
    eval(v, q, u, plus, true);
    u[i] = u0[i] - h;
    eval(v, q, u, minus, true);
    u[i] = u0[i];
    ju.col(i) = (plus - minus) / (2.0 * h);
  }
  for (int i = 0; i < q0.size(); ++i) {
    q[i] = q0[i] + h;
    eval(v, q, u, plus, false);
    q[i] = q0[i] - h;
    eval(v, q, u, minus, false);
    q[i] = q0[i];
    jx_q.col(i) = (plus - minus) / (2.0 * h);
  }
}

}  // namespace

void linearize_stage(const ModelSpec& m, const OcpSpec& spec, int k, const Vec& v, const Vec& q,
                     const Vec& u, const Vec& v_next, const Vec& q_next, double fd_step,
                     StageLin& out) {
  const int nv = spec.nv;
  const int nx = spec.nx();
  const int nu = spec.nu_total();
  const int ne = n_eq_rows(spec, k);
  const int ni = n_ineq_rows(spec, m, k);
  const int rows = 2 * nv + ne + ni;

  model::DynWorkspace ws(m);
  std::vector<bool> stance(spec.n_contacts);
  for (int f = 0; f < spec.n_contacts; ++f) stance[f] = spec.schedule.stance(f, k);

  Vec qo(nv), vo(nv);
  Vec eq(ne), ineq(ni);
  const auto eval = [&](const Vec& vv, const Vec& qq, const Vec& uu, Vec& outv,
                        bool q_unchanged) {
    (void)q_unchanged;
    const model::GeneralizedState st{qq, vv};
    model::step_raw(m, st, uu.head(spec.nu), uu.tail(2 * spec.n_contacts), stance, spec.dt, ws,
                    qo, vo);
    eval_constraints(m, spec, k, ws.kin, vv, qq, uu, eq, ineq);
    outv.segment(0, nv) = vo;
    outv.segment(nv, nv) = qo;
    outv.segment(2 * nv, ne) = eq;
    outv.segment(2 * nv + ne, ni) = ineq;
  };

  Mat jv(rows, nv), jq(rows, nv), ju(rows, nu);
  Vec plus(rows), minus(rows), base(rows);
  fd_jacobian(eval, v, q, u, fd_step, jv, jq, ju, plus, minus);
  eval(v, q, u, base, false);

  out.A.resize(nx, nx);
  out.B.resize(nx, nu);
  out.A.block(0, 0, 2 * nv, nv) = jv.topRows(2 * nv);
  out.A.block(0, nv, 2 * nv, nv) = jq.topRows(2 * nv);
  out.B = ju.topRows(2 * nv);
  out.d.resize(nx);
  out.d.head(nv) = base.segment(0, nv) - v_next;
  for (int i = 0; i < nv; ++i) {
    double dq = base[nv + i] - q_next[i];
    if (i >= 2) dq = wrap_angle(dq);
    out.d[nv + i] = dq;
  }
  out.eq_jx.resize(ne, nx);
  out.eq_jx.block(0, 0, ne, nv) = jv.middleRows(2 * nv, ne);
  out.eq_jx.block(0, nv, ne, nv) = jq.middleRows(2 * nv, ne);
  out.eq_ju = ju.middleRows(2 * nv, ne);
  out.eq_r = base.segment(2 * nv, ne);
  out.ineq_jx.resize(ni, nx);
  out.ineq_jx.block(0, 0, ni, nv) = jv.bottomRows(ni);
  out.ineq_jx.block(0, nv, ni, nv) = jq.bottomRows(ni);
  out.ineq_ju = ju.bottomRows(ni);
  out.ineq_r = base.segment(2 * nv + ne, ni);
}

}  // namespace dwmpc::ocp
