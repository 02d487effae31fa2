#include "dwmpc/decomposition.hpp"

#include <numeric>

namespace dwmpc::model {

namespace {

SubsystemModel make_subsystem(const ModelSpec& full, int id) {
  const SubsystemSpec& ss = full.subsystems[id];
  SubsystemModel sub;
  sub.id = id;
  sub.name = ss.name;
  sub.fraction = ss.fraction;
  sub.joint_map = ss.joints;
  sub.contact_map = ss.contacts;
  sub.wrench_map = ss.wrench_channels;

  ModelSpec& spec = sub.spec;
  spec.name = full.name + ":" + ss.name;
  spec.gravity = full.gravity;
  BodySpec base = full.bodies[0];
  base.mass *= ss.fraction;
  base.inertia *= ss.fraction;
  spec.bodies.push_back(base);
  spec.base_wrench_channels = static_cast<int>(ss.wrench_channels.size());

  std::vector<int> body_map(full.n_bodies(), -1);
  body_map[0] = 0;
  for (int jf : ss.joints) {
    JointSpec jt = full.joints[jf];
    spec.bodies.push_back(full.bodies[jt.child]);
    body_map[jt.child] = spec.n_bodies() - 1;
    jt.parent = body_map[jt.parent];
    jt.child = spec.n_bodies() - 1;
    spec.joints.push_back(jt);
  }
  for (int cf : ss.contacts) {
    ContactSpec c = full.contacts[cf];
    c.body = body_map[c.body];
    spec.contacts.push_back(c);
  }
  validate(spec);

  sub.q_map.resize(spec.nq());
  std::iota(sub.q_map.begin(), sub.q_map.begin() + 3, 0);
  for (int sj = 0; sj < spec.n_joints(); ++sj) sub.q_map[3 + sj] = 3 + sub.joint_map[sj];
  sub.u_map.resize(spec.nu());
  for (int sj = 0; sj < spec.n_joints(); ++sj) sub.u_map[sj] = sub.joint_map[sj];
  for (int sc = 0; sc < spec.base_wrench_channels; ++sc)
    for (int k = 0; k < 3; ++k)
      sub.u_map[spec.n_joints() + 3 * sc + k] = full.n_joints() + 3 * sub.wrench_map[sc] + k;
  return sub;
}

}  // namespace

DecomposedModel decompose(const ModelSpec& full) {
  validate(full);
  if (full.subsystems.empty()) throw ConfigError("model declares no subsystems");
  DecomposedModel dm;
  dm.full = full;
  const int n = static_cast<int>(full.subsystems.size());
  for (int i = 0; i < n; ++i) dm.subsystems.push_back(make_subsystem(full, i));
  for (int j = 1; j < n; ++j) {
    dm.tree.push_back({0, j});
    dm.subsystems[0].incident.push_back(j - 1);
    dm.subsystems[0].inc_sign.push_back(1.0);
    dm.subsystems[j].incident.push_back(j - 1);
    dm.subsystems[j].inc_sign.push_back(-1.0);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) dm.pairs.push_back({i, j});
  return dm;
}

DecomposedModel decompose_trivial(const ModelSpec& full) {
  ModelSpec m = full;
  m.subsystems.clear();
  SubsystemSpec all;
  all.name = "all";
  all.fraction = 1.0;
  all.joints.resize(full.n_joints());
  std::iota(all.joints.begin(), all.joints.end(), 0);
  all.contacts.resize(full.n_contacts());
  std::iota(all.contacts.begin(), all.contacts.end(), 0);
  all.wrench_channels.resize(full.base_wrench_channels);
  std::iota(all.wrench_channels.begin(), all.wrench_channels.end(), 0);
  m.subsystems = {all};
  return decompose(m);
}

GeneralizedState restrict_state(const DecomposedModel& dm, int i, const GeneralizedState& full) {
  const auto& sub = dm.subsystems[i];
  GeneralizedState st;
  st.q.resize(sub.q_map.size());
  st.v.resize(sub.q_map.size());
  for (size_t k = 0; k < sub.q_map.size(); ++k) {
    st.q[k] = full.q[sub.q_map[k]];
    st.v[k] = full.v[sub.q_map[k]];
  }
  return st;
}

Vec restrict_control(const DecomposedModel& dm, int i, const Vec& u_full) {
  const auto& sub = dm.subsystems[i];
  Vec u(sub.u_map.size());
  for (size_t k = 0; k < sub.u_map.size(); ++k) u[k] = u_full[sub.u_map[k]];
  return u;
}

std::vector<bool> restrict_stance(const DecomposedModel& dm, int i,
                                  const std::vector<bool>& full) {
  const auto& sub = dm.subsystems[i];
  std::vector<bool> s(sub.contact_map.size());
  for (size_t k = 0; k < sub.contact_map.size(); ++k) s[k] = full[sub.contact_map[k]];
  return s;
}

GeneralizedState stitch_state(const DecomposedModel& dm,
                              const std::vector<GeneralizedState>& subs) {
  GeneralizedState full;
  full.q = Vec::Zero(dm.full.nq());
  full.v = Vec::Zero(dm.full.nv());
  full.q.head<3>() = subs[0].q.head<3>();
  full.v.head<3>() = subs[0].v.head<3>();
  for (int i = 0; i < dm.n_subsystems(); ++i) {
    const auto& sub = dm.subsystems[i];
    for (size_t k = 3; k < sub.q_map.size(); ++k) {
      full.q[sub.q_map[k]] = subs[i].q[k];
      full.v[sub.q_map[k]] = subs[i].v[k];
    }
  }
  return full;
}

Vec stitch_control(const DecomposedModel& dm, const std::vector<Vec>& subs) {
  Vec u = Vec::Zero(dm.full.nu());
  for (int i = 0; i < dm.n_subsystems(); ++i) {
    const auto& sub = dm.subsystems[i];
    for (size_t k = 0; k < sub.u_map.size(); ++k) u[sub.u_map[k]] = subs[i][k];
  }
  return u;
}

namespace {

// Uncoupled post-step velocity and the base block of the inverse mass matrix.
struct UncoupledStep {
  Vec vhat;
  Mat3 w;
};

UncoupledStep uncoupled(const ModelSpec& spec, const GeneralizedState& st, const Vec& control,
                        const std::vector<bool>& stance, double dt, DynWorkspace& ws) {
  mass_matrix_and_bias(spec, st, ws);
  ws.gen_force = -ws.bias;
  apply_selector(spec, control.head(spec.nu()), ws.gen_force);
  for (int c = 0; c < spec.n_contacts(); ++c) {
    if (!stance[c]) continue;
    const Vec2 f(control[spec.nu() + 2 * c], control[spec.nu() + 2 * c + 1]);
    const Vec2 p = contact_point(spec, c, ws.kin);
    ws.gen_force[0] += f.x();
    ws.gen_force[1] += f.y();
    ws.gen_force[2] += cross2(p - ws.kin[0].origin, f);
    for (int b = spec.contacts[c].body; b != 0; b = spec.joints[b - 1].parent)
      ws.gen_force[3 + (b - 1)] += cross2(p - ws.kin[b].origin, f);
  }
  UncoupledStep out;
  out.vhat = st.v + dt * ws.factor().solve(ws.gen_force);
  Mat b3 = Mat::Zero(spec.nv(), 3);
  b3.topRows<3>().setIdentity();
  out.w = ws.factor().solve(b3).topRows<3>();
  return out;
}

}  // namespace

std::vector<Vec3> delta_v_total(const DecomposedModel& dm,
                                const std::vector<GeneralizedState>& states,
                                const std::vector<Vec>& controls,
                                const std::vector<std::vector<bool>>& stance, double dt) {
  std::vector<Vec3> delta(dm.n_tree(), Vec3::Zero());
  std::vector<Vec3> vhat(dm.n_subsystems());
  for (int i = 0; i < dm.n_subsystems(); ++i) {
    DynWorkspace ws(dm.subsystems[i].spec);
    vhat[i] = uncoupled(dm.subsystems[i].spec, states[i], controls[i], stance[i], dt, ws)
                  .vhat.head<3>();
  }
  for (int e = 0; e < dm.n_tree(); ++e) delta[e] = vhat[dm.tree[e].a] - vhat[dm.tree[e].b];
  return delta;
}

std::vector<Vec3> coupling_wrench(const DecomposedModel& dm,
                                  const std::vector<GeneralizedState>& states,
                                  const std::vector<Vec>& controls,
                                  const std::vector<std::vector<bool>>& stance, double dt) {
  const int ne = dm.n_tree();
  if (ne == 0) return {};
  Mat g = Mat::Zero(3 * ne, 3 * ne);
  Vec rhs = Vec::Zero(3 * ne);
  for (int i = 0; i < dm.n_subsystems(); ++i) {
    const auto& sub = dm.subsystems[i];
    DynWorkspace ws(sub.spec);
    const UncoupledStep un = uncoupled(sub.spec, states[i], controls[i], stance[i], dt, ws);
    for (size_t a = 0; a < sub.incident.size(); ++a) {
      rhs.segment<3>(3 * sub.incident[a]) += sub.inc_sign[a] * un.vhat.head<3>();
      for (size_t b = 0; b < sub.incident.size(); ++b)
        g.block<3, 3>(3 * sub.incident[a], 3 * sub.incident[b]) +=
            sub.inc_sign[a] * sub.inc_sign[b] * un.w;
    }
  }
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success)
    throw NumericError("interface system not positive definite; diagonal range [" +
                       std::to_string(g.diagonal().minCoeff()) + ", " +
                       std::to_string(g.diagonal().maxCoeff()) + "]");
  const Vec z = llt.solve(-rhs);
  std::vector<Vec3> f(ne);
  for (int e = 0; e < ne; ++e) f[e] = z.segment<3>(3 * e) / dt;
  return f;
}

CouplingEvaluator::CouplingEvaluator(const DecomposedModel& dm, int sub_id)
    : dm_(&dm), id_(sub_id), ws_(dm.subsystems[sub_id].spec) {
  for (int j = 0; j < dm.n_subsystems(); ++j) neighbor_ws_.emplace_back(dm.subsystems[j].spec);
  const int ne = dm.n_tree();
  const int nv = dm.subsystems[sub_id].spec.nv();
  x3_.resize(nv, 3);
  g_.resize(3 * ne, 3 * ne);
  rhs_.resize(3 * ne);
  z_.resize(3 * ne);
  vhat_.resize(nv);
  dv_.resize(nv);
  g_llt_ = Eigen::LLT<Mat>(3 * ne);
}

void CouplingEvaluator::build_cache(const std::vector<GeneralizedState>& states,
                                    const std::vector<Vec>& controls,
                                    const std::vector<std::vector<bool>>& stance, double dt,
                                    NeighborCache& nc) {
  const int ne = dm_->n_tree();
  nc.g_others.setZero(3 * ne, 3 * ne);
  nc.rhs_others.setZero(3 * ne);
  for (int j = 0; j < dm_->n_subsystems(); ++j) {
    if (j == id_) continue;
    const auto& sub = dm_->subsystems[j];
    const UncoupledStep un =
        uncoupled(sub.spec, states[j], controls[j], stance[j], dt, neighbor_ws_[j]);
    for (size_t a = 0; a < sub.incident.size(); ++a) {
      nc.rhs_others.segment<3>(3 * sub.incident[a]) += sub.inc_sign[a] * un.vhat.head<3>();
      for (size_t b = 0; b < sub.incident.size(); ++b)
        nc.g_others.block<3, 3>(3 * sub.incident[a], 3 * sub.incident[b]) +=
            sub.inc_sign[a] * sub.inc_sign[b] * un.w;
    }
  }
}

void CouplingEvaluator::local_vhat(const GeneralizedState& st, Eigen::Ref<const Vec> u_model,
                                   Eigen::Ref<const Vec> lambda, const std::vector<bool>& stance,
                                   double dt, bool reuse_factor) {
  const ModelSpec& spec = dm_->subsystems[id_].spec;
  if (reuse_factor) {
    bias_only(spec, st, ws_);
  } else {
    mass_matrix_and_bias(spec, st, ws_);
    Mat b3 = Mat::Zero(spec.nv(), 3);
    b3.topRows<3>().setIdentity();
    x3_ = ws_.factor().solve(b3);
  }
  ws_.gen_force = -ws_.bias;
  apply_selector(spec, u_model, ws_.gen_force);
  for (int c = 0; c < spec.n_contacts(); ++c) {
    if (!stance[c]) continue;
    const Vec2 f(lambda[2 * c], lambda[2 * c + 1]);
    const Vec2 p = contact_point(spec, c, ws_.kin);
    ws_.gen_force[0] += f.x();
    ws_.gen_force[1] += f.y();
    ws_.gen_force[2] += cross2(p - ws_.kin[0].origin, f);
    for (int b = spec.contacts[c].body; b != 0; b = spec.joints[b - 1].parent)
      ws_.gen_force[3 + (b - 1)] += cross2(p - ws_.kin[b].origin, f);
  }
  vhat_ = st.v + dt * ws_.factor().solve(ws_.gen_force);
}

void CouplingEvaluator::step(const GeneralizedState& st, Eigen::Ref<const Vec> u_model,
                             Eigen::Ref<const Vec> lambda, const std::vector<bool>& stance,
                             double dt, const NeighborCache& nc, Vec& q_out, Vec& v_out,
                             bool reuse_factor) {
  const auto& sub = dm_->subsystems[id_];
  local_vhat(st, u_model, lambda, stance, dt, reuse_factor);

  if (dm_->n_tree() == 0) {
    v_out = vhat_;
    q_out = st.q + dt * v_out;
    return;
  }

  g_ = nc.g_others;
  rhs_ = nc.rhs_others;
  const Mat3 w = x3_.topRows<3>();
  for (size_t a = 0; a < sub.incident.size(); ++a) {
    rhs_.segment<3>(3 * sub.incident[a]) += sub.inc_sign[a] * vhat_.head<3>();
    for (size_t b = 0; b < sub.incident.size(); ++b)
      g_.block<3, 3>(3 * sub.incident[a], 3 * sub.incident[b]) +=
          sub.inc_sign[a] * sub.inc_sign[b] * w;
  }
  g_llt_.compute(g_);
  if (g_llt_.info() != Eigen::Success)
    throw NumericError("interface system not positive definite; diagonal range [" +
                       std::to_string(g_.diagonal().minCoeff()) + ", " +
                       std::to_string(g_.diagonal().maxCoeff()) + "]");
  z_ = g_llt_.solve(-rhs_);
  jtw_.setZero();
  for (size_t a = 0; a < sub.incident.size(); ++a)
    jtw_ += sub.inc_sign[a] * z_.segment(3 * sub.incident[a], 3);
  dv_.noalias() = x3_ * jtw_;
  v_out = vhat_ + dv_;
  q_out = st.q + dt * v_out;
}

void CouplingEvaluator::step_pinned(const GeneralizedState& st, Eigen::Ref<const Vec> u_model,
                                    Eigen::Ref<const Vec> lambda, const std::vector<bool>& stance,
                                    double dt, const Vec3& impulse, Vec& q_out, Vec& v_out,
                                    bool reuse_factor) {
  local_vhat(st, u_model, lambda, stance, dt, reuse_factor);
  if (dm_->n_tree() == 0) {
    v_out = vhat_;
  } else {
    dv_.noalias() = x3_ * impulse;
    v_out = vhat_ + dv_;
  }
  q_out = st.q + dt * v_out;
}

GeneralizedState subsystem_step(const DecomposedModel& dm, int i,
                                const std::vector<GeneralizedState>& states,
                                const std::vector<Vec>& controls,
                                const std::vector<std::vector<bool>>& stance, double dt) {
  CouplingEvaluator ev(dm, i);
  NeighborCache nc;
  ev.build_cache(states, controls, stance, dt, nc);
  const auto& sub = dm.subsystems[i];
  GeneralizedState out;
  ev.step(states[i], controls[i].head(sub.spec.nu()), controls[i].tail(2 * sub.spec.n_contacts()),
          stance[i], dt, nc, out.q, out.v);
  wrap_state(sub.spec, out.q);
  return out;
}

}  // namespace dwmpc::model
