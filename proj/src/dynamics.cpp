#include "dwmpc/dynamics.hpp"

namespace dwmpc::model {

void forward_kinematics(const ModelSpec& m, const Vec& q, std::vector<BodyKin>& kin) {
  kin.resize(m.n_bodies());
  kin[0].angle = q[2];
  kin[0].origin = Vec2(q[0], q[1]);
  kin[0].com = kin[0].origin + rot2(kin[0].angle) * m.bodies[0].com;
  for (int j = 0; j < m.n_joints(); ++j) {
    const auto& jt = m.joints[j];
    const BodyKin& p = kin[jt.parent];
    BodyKin& c = kin[jt.child];
    c.angle = p.angle + q[3 + j];
    c.origin = p.origin + rot2(p.angle) * jt.anchor;
    c.com = c.origin + rot2(c.angle) * m.bodies[jt.child].com;
  }
}

void forward_kinematics(const ModelSpec& m, const Vec& q, const Vec& v,
                        std::vector<BodyKin>& kin) {
  forward_kinematics(m, q, kin);
  kin[0].omega = v[2];
  kin[0].origin_vel = Vec2(v[0], v[1]);
  kin[0].com_vel = kin[0].origin_vel + kin[0].omega * perp(kin[0].com - kin[0].origin);
  for (int j = 0; j < m.n_joints(); ++j) {
    const auto& jt = m.joints[j];
    const BodyKin& p = kin[jt.parent];
    BodyKin& c = kin[jt.child];
    c.omega = p.omega + v[3 + j];
    c.origin_vel = p.origin_vel + p.omega * perp(c.origin - p.origin);
    c.com_vel = c.origin_vel + c.omega * perp(c.com - c.origin);
  }
}

DynWorkspace::DynWorkspace(const ModelSpec& m)
    : kin(m.n_bodies()),
      M(m.nv(), m.nv()),
      bias(m.nv()),
      llt(m.nv()),
      c_mass(m.n_bodies()),
      c_moment(m.n_bodies()),
      c_inertia(m.n_bodies()),
      c_force(m.n_bodies()),
      c_torque(m.n_bodies()),
      gen_force(m.nv()) {}

const Eigen::LLT<Mat>& DynWorkspace::factor() {
  if (!llt_ready) {
    llt.compute(M);
    if (llt.info() != Eigen::Success) throw NumericError("mass matrix not positive definite");
    llt_ready = true;
  }
  return llt;
}

namespace {

// Unit-rate velocity field of coordinate i evaluated at the world origin:
// pair (omega, v_origin).
struct Subspace {
  double w;
  Vec2 v;
};

Subspace coord_subspace(const ModelSpec& m, int iq, const std::vector<BodyKin>& kin) {
  if (iq == 0) return {0.0, Vec2(1.0, 0.0)};
  if (iq == 1) return {0.0, Vec2(0.0, 1.0)};
  if (iq == 2) return {1.0, -perp(kin[0].origin)};
  // Joint axis through the child body's origin (== the joint anchor).
  return {1.0, -perp(kin[m.joints[iq - 3].child].origin)};
}

// Zero-acceleration sweep: with qddot = 0 every body keeps its angular rate,
// so origin accelerations are pure centripetal terms. Needs ws.kin with
// velocities.
void compute_bias(const ModelSpec& m, DynWorkspace& ws) {
  const int nb = m.n_bodies();
  ws.c_force[0] = Vec2::Zero();  // holds origin accelerations during this pass
  std::vector<Vec2>& acc = ws.c_force;
  for (int j = 0; j < m.n_joints(); ++j) {
    const auto& jt = m.joints[j];
    acc[jt.child] = acc[jt.parent] - ws.kin[jt.parent].omega * ws.kin[jt.parent].omega *
                                         (ws.kin[jt.child].origin - ws.kin[jt.parent].origin);
  }
  for (int b = 0; b < nb; ++b) {
    const Vec2 com_acc =
        acc[b] - ws.kin[b].omega * ws.kin[b].omega * (ws.kin[b].com - ws.kin[b].origin);
    const Vec2 f = m.bodies[b].mass * (com_acc - m.gravity);
    ws.c_torque[b] = cross2(ws.kin[b].com - ws.kin[b].origin, f);
    acc[b] = f;  // now holds the net inertial force of body b
  }
  for (int b = nb - 1; b >= 1; --b) {
    const int parent = m.joints[b - 1].parent;
    acc[parent] += acc[b];
    ws.c_torque[parent] +=
        ws.c_torque[b] + cross2(ws.kin[b].origin - ws.kin[parent].origin, acc[b]);
  }
  ws.bias[0] = acc[0].x();
  ws.bias[1] = acc[0].y();
  ws.bias[2] = ws.c_torque[0];
  for (int j = 0; j < m.n_joints(); ++j) ws.bias[3 + j] = ws.c_torque[m.joints[j].child];
}

}  // namespace

void mass_matrix_and_bias(const ModelSpec& m, const GeneralizedState& st, DynWorkspace& ws) {
  const int nb = m.n_bodies();
  forward_kinematics(m, st.q, st.v, ws.kin);
  ws.llt_ready = false;

  // Composite rigid-body pass: subtree mass, first moment about the world
  // origin, and rotational inertia about the world origin.
  for (int b = 0; b < nb; ++b) {
    const auto& body = m.bodies[b];
    const Vec2& p = ws.kin[b].com;
    ws.c_mass[b] = body.mass;
    ws.c_moment[b] = body.mass * p;
    ws.c_inertia[b] = body.inertia + body.mass * p.squaredNorm();
  }
  for (int b = nb - 1; b >= 1; --b) {
    const int parent = m.joints[b - 1].parent;
    ws.c_mass[parent] += ws.c_mass[b];
    ws.c_moment[parent] += ws.c_moment[b];
    ws.c_inertia[parent] += ws.c_inertia[b];
  }

  Mat& M = ws.M;
  M.setZero();
  // Momentum generated by unit motion of coordinate iq, using the composite of
  // the shallower subtree that coordinate moves: force f and torque n about O.
  auto momentum = [&](int body, const Subspace& s, double& n, Vec2& f) {
    f = ws.c_mass[body] * s.v + s.w * perp(ws.c_moment[body]);
    n = ws.c_inertia[body] * s.w + cross2(ws.c_moment[body], s.v);
  };
  for (int j = 0; j < m.n_joints(); ++j) {
    const int col = 3 + j;
    const Subspace sj = coord_subspace(m, col, ws.kin);
    double n;
    Vec2 f;
    momentum(m.joints[j].child, sj, n, f);
    M(col, col) = sj.w * n + sj.v.dot(f);
    for (int b = m.joints[j].parent; b != 0; b = m.joints[b - 1].parent) {
      const int row = 3 + (b - 1);
      const Subspace si = coord_subspace(m, row, ws.kin);
      M(row, col) = si.w * n + si.v.dot(f);
      M(col, row) = M(row, col);
    }
    for (int row = 0; row < 3; ++row) {
      const Subspace si = coord_subspace(m, row, ws.kin);
      M(row, col) = si.w * n + si.v.dot(f);
      M(col, row) = M(row, col);
    }
  }
  for (int col = 0; col < 3; ++col) {
    const Subspace sj = coord_subspace(m, col, ws.kin);
    double n;
    Vec2 f;
    momentum(0, sj, n, f);
    for (int row = 0; row <= col; ++row) {
      const Subspace si = coord_subspace(m, row, ws.kin);
      M(row, col) = si.w * n + si.v.dot(f);
      M(col, row) = M(row, col);
    }
  }

  compute_bias(m, ws);
}

void bias_only(const ModelSpec& m, const GeneralizedState& st, DynWorkspace& ws) {
  forward_kinematics(m, st.q, st.v, ws.kin);
  compute_bias(m, ws);
}

void mass_matrix_and_bias(const ModelSpec& m, const GeneralizedState& st, Mat& M, Vec& b) {
  DynWorkspace ws(m);
  mass_matrix_and_bias(m, st, ws);
  M = ws.M;
  b = ws.bias;
}

Vec2 contact_point(const ModelSpec& m, int contact, const std::vector<BodyKin>& kin) {
  const auto& c = m.contacts[contact];
  return kin[c.body].origin + rot2(kin[c.body].angle) * c.point;
}

Vec2 contact_point_vel(const ModelSpec& m, int contact, const std::vector<BodyKin>& kin) {
  const auto& c = m.contacts[contact];
  const BodyKin& k = kin[c.body];
  return k.origin_vel + k.omega * perp(rot2(k.angle) * c.point);
}

void point_jacobian(const ModelSpec& m, int body, const Vec2& world_point,
                    const std::vector<BodyKin>& kin, Eigen::Ref<Mat> J) {
  J.setZero();
  J(0, 0) = 1.0;
  J(1, 1) = 1.0;
  J.col(2) = perp(world_point - kin[0].origin);
  for (int b = body; b != 0; b = m.joints[b - 1].parent) {
    const int j = b - 1;
    J.col(3 + j) = perp(world_point - kin[b].origin);
  }
}

void contact_jacobian(const ModelSpec& m, int contact, const std::vector<BodyKin>& kin,
                      Eigen::Ref<Mat> J) {
  point_jacobian(m, m.contacts[contact].body, contact_point(m, contact, kin), kin, J);
}

Mat contact_jacobian(const ModelSpec& m, const Vec& q, int contact) {
  std::vector<BodyKin> kin;
  forward_kinematics(m, q, kin);
  Mat J(2, m.nv());
  contact_jacobian(m, contact, kin, J);
  return J;
}

void apply_selector(const ModelSpec& m, Eigen::Ref<const Vec> u, Vec& out) {
  const int nj = m.n_joints();
  for (int j = 0; j < nj; ++j) out[3 + j] += u[j];
  for (int c = 0; c < m.base_wrench_channels; ++c) {
    out[0] += u[nj + 3 * c];
    out[1] += u[nj + 3 * c + 1];
    out[2] += u[nj + 3 * c + 2];
  }
}

namespace {

// Accumulates J_p^T f for a force applied at a world point on `body`.
void add_point_force(const ModelSpec& m, int body, const Vec2& point, const Vec2& f,
                     const std::vector<BodyKin>& kin, Vec& out) {
  out[0] += f.x();
  out[1] += f.y();
  out[2] += cross2(point - kin[0].origin, f);
  for (int b = body; b != 0; b = m.joints[b - 1].parent)
    out[3 + (b - 1)] += cross2(point - kin[b].origin, f);
}

}  // namespace

void step_raw(const ModelSpec& m, const GeneralizedState& st, Eigen::Ref<const Vec> u,
              Eigen::Ref<const Vec> lambda,
              const std::vector<bool>& stance, double dt, DynWorkspace& ws, Vec& q_out,
              Vec& v_out) {
  mass_matrix_and_bias(m, st, ws);
  ws.gen_force = -ws.bias;
  apply_selector(m, u, ws.gen_force);
  for (int c = 0; c < m.n_contacts(); ++c) {
    if (!stance[c]) continue;
    add_point_force(m, m.contacts[c].body, contact_point(m, c, ws.kin),
                    Vec2(lambda[2 * c], lambda[2 * c + 1]), ws.kin, ws.gen_force);
  }
  v_out = st.v + dt * ws.factor().solve(ws.gen_force);
  q_out = st.q + dt * v_out;
}

void wrap_state(const ModelSpec& m, Vec& q) {
  for (int i = 2; i < q.size(); ++i) q[i] = wrap_angle(q[i]);
}

GeneralizedState step_semi_implicit(const ModelSpec& m, const GeneralizedState& st, const Vec& u,
                                    const Vec& lambda, const std::vector<bool>& stance,
                                    double dt) {
  DynWorkspace ws(m);
  GeneralizedState out;
  step_raw(m, st, u, lambda, stance, dt, ws, out.q, out.v);
  wrap_state(m, out.q);
  return out;
}

}  // namespace dwmpc::model
