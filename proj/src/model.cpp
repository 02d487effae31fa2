#include "dwmpc/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

#include "dwmpc/dynamics.hpp"

namespace dwmpc::model {

using nlohmann::json;

Vec ModelSpec::nominal_q() const {
  Vec q = Vec::Zero(nq());
  for (int j = 0; j < n_joints(); ++j) q[3 + j] = joints[j].q_nominal;
  if (!contacts.empty()) {
    // Stand with the lowest contact point on the ground.
    std::vector<BodyKin> kin;
    forward_kinematics(*this, q, kin);
    double zmin = 1e30;
    for (int c = 0; c < n_contacts(); ++c)
      zmin = std::min(zmin, contact_point(*this, c, kin).y());
    q[1] = -zmin;
  } else {
    q[1] = 1.0;
  }
  return q;
}

Vec ModelSpec::torque_limits() const {
  Vec lim = Vec::Constant(nu(), 1e9);
  for (int j = 0; j < n_joints(); ++j) lim[j] = joints[j].torque_limit;
  return lim;
}

namespace {

template <typename T>
void check_unique_names(const std::vector<T>& items, const char* what) {
  std::set<std::string> seen;
  for (const auto& it : items)
    if (!seen.insert(it.name).second)
      throw ConfigError(std::string(what) + " name repeated: " + it.name);
}

}  // namespace

void validate(const ModelSpec& m) {
  if (m.bodies.empty()) throw ConfigError("model has no bodies");
  if (m.base_wrench_channels < 0) throw ConfigError("negative base_wrench_channels");
  if (!m.gravity.allFinite()) throw ConfigError("gravity must be finite");
  check_unique_names(m.bodies, "body");
  check_unique_names(m.joints, "joint");
  check_unique_names(m.contacts, "contact");
  check_unique_names(m.subsystems, "subsystem");

  for (const auto& b : m.bodies) {
    if (!(b.mass > 0.0)) throw ConfigError("body " + b.name + ": mass must be positive");
    if (!(b.inertia > 0.0)) throw ConfigError("body " + b.name + ": inertia must be positive");
  }
  if (m.bodies.size() != m.joints.size() + 1)
    throw ConfigError("expected one body per joint plus the base");
  for (int j = 0; j < m.n_joints(); ++j) {
    const auto& jt = m.joints[j];
    if (jt.child != j + 1)
      throw ConfigError("joint " + jt.name + ": joints must be listed in body order");
    if (jt.parent < 0 || jt.parent >= jt.child)
      throw ConfigError("joint " + jt.name + ": parent must precede child");
    if (!(jt.q_min < jt.q_max)) throw ConfigError("joint " + jt.name + ": empty angle range");
    if (!(jt.v_max > 0.0) || !(jt.torque_limit > 0.0))
      throw ConfigError("joint " + jt.name + ": limits must be positive");
  }
  for (const auto& c : m.contacts)
    if (c.body < 0 || c.body >= m.n_bodies())
      throw ConfigError("contact " + c.name + ": body index out of range");

  if (m.subsystems.empty()) return;

  double fsum = 0.0;
  std::vector<int> joint_owner(m.n_joints(), -1);
  std::vector<int> contact_owner(m.n_contacts(), -1);
  std::vector<int> channel_owner(m.base_wrench_channels, -1);
  for (int s = 0; s < static_cast<int>(m.subsystems.size()); ++s) {
    const auto& sub = m.subsystems[s];
    if (!(sub.fraction > 0.0))
      throw ConfigError("subsystem " + sub.name + ": fraction must be positive");
    fsum += sub.fraction;
    for (int j : sub.joints) {
      if (j < 0 || j >= m.n_joints())
        throw ConfigError("subsystem " + sub.name + ": joint index out of range");
      if (joint_owner[j] != -1)
        throw ConfigError("joint " + m.joints[j].name + " owned by two subsystems");
      joint_owner[j] = s;
    }
    for (int c : sub.contacts) {
      if (c < 0 || c >= m.n_contacts())
        throw ConfigError("subsystem " + sub.name + ": contact index out of range");
      if (contact_owner[c] != -1)
        throw ConfigError("contact " + m.contacts[c].name + " owned by two subsystems");
      contact_owner[c] = s;
    }
    for (int w : sub.wrench_channels) {
      if (w < 0 || w >= m.base_wrench_channels)
        throw ConfigError("subsystem " + sub.name + ": wrench channel out of range");
      if (channel_owner[w] != -1) throw ConfigError("wrench channel owned by two subsystems");
      channel_owner[w] = s;
    }
  }
  if (std::abs(fsum - 1.0) > 1e-12)
    throw ConfigError("subsystem fractions must sum to 1, got " + std::to_string(fsum));
  for (int j = 0; j < m.n_joints(); ++j)
    if (joint_owner[j] == -1) throw ConfigError("joint " + m.joints[j].name + " unowned");
  for (int c = 0; c < m.n_contacts(); ++c)
    if (contact_owner[c] == -1) throw ConfigError("contact " + m.contacts[c].name + " unowned");
  for (int w = 0; w < m.base_wrench_channels; ++w)
    if (channel_owner[w] == -1) throw ConfigError("wrench channel unowned");

  // Each subsystem's joints must hang off the base through its own joints, and
  // every contact must sit on a body the subsystem owns.
  for (const auto& sub : m.subsystems) {
    std::set<int> owned_bodies{0};
    for (int j : sub.joints) {
      const auto& jt = m.joints[j];
      if (!owned_bodies.count(jt.parent))
        throw ConfigError("subsystem " + sub.name + ": joint " + jt.name +
                          " not connected to the base through owned joints");
      owned_bodies.insert(jt.child);
    }
    for (int c : sub.contacts)
      if (!owned_bodies.count(m.contacts[c].body) || m.contacts[c].body == 0)
        throw ConfigError("subsystem " + sub.name + ": contact " + m.contacts[c].name +
                          " sits on a body it does not own");
  }
}

ModelSpec make_chain2() {
  ModelSpec m;
  m.name = "chain2";
  m.bodies.push_back({"trunk", 2.0, 0.04, Vec2::Zero()});
  m.base_wrench_channels = 2;
  m.subsystems.push_back({"a", 0.5, {}, {}, {0}});
  m.subsystems.push_back({"b", 0.5, {}, {}, {1}});
  validate(m);
  return m;
}

namespace {

void add_leg(ModelSpec& m, const std::string& prefix, double hip_x, double hip_sign) {
  const double len = 0.3, mass = 1.0, inertia = mass * len * len / 12.0;
  const int thigh = m.n_bodies();
  m.bodies.push_back({prefix + "_thigh", mass, inertia, Vec2(0.0, -len / 2)});
  m.bodies.push_back({prefix + "_shank", mass, inertia, Vec2(0.0, -len / 2)});
  JointSpec hip{prefix + "_hip", 0, thigh, Vec2(hip_x, 0.0), 60.0, -2.5, 2.5, 20.0,
                0.4 * hip_sign};
  JointSpec knee{prefix + "_knee", thigh, thigh + 1, Vec2(0.0, -len), 60.0, -2.5, 2.5, 20.0,
                 -0.8 * hip_sign};
  m.joints.push_back(hip);
  m.joints.push_back(knee);
  m.contacts.push_back({prefix + "_foot", thigh + 1, Vec2(0.0, -len)});
}

ModelSpec make_quad_base(const std::string& name) {
  ModelSpec m;
  m.name = name;
  m.bodies.push_back({"trunk", 20.0, 0.7, Vec2::Zero()});
  add_leg(m, "ft", 0.3, 1.0);
  add_leg(m, "hd", -0.3, -1.0);
  return m;
}

}  // namespace

ModelSpec make_quadruped2d() {
  ModelSpec m = make_quad_base("quadruped2d");
  m.subsystems.push_back({"front", 0.5, {0, 1}, {0}, {}});
  m.subsystems.push_back({"hind", 0.5, {2, 3}, {1}, {}});
  validate(m);
  return m;
}

ModelSpec make_quadmanip2d() {
  ModelSpec m = make_quad_base("quadmanip2d");
  const double len = 0.3, mass = 1.0, inertia = mass * len * len / 12.0;
  const int upper = m.n_bodies();
  // Arm links extend along +z of their frames so the nominal pose points up.
  m.bodies.push_back({"arm_upper", mass, inertia, Vec2(0.0, len / 2)});
  m.bodies.push_back({"arm_fore", mass, inertia, Vec2(0.0, len / 2)});
  m.joints.push_back({"shoulder", 0, upper, Vec2(0.1, 0.1), 30.0, -2.5, 2.5, 20.0, 0.3});
  m.joints.push_back({"elbow", upper, upper + 1, Vec2(0.0, len), 30.0, -2.5, 2.5, 20.0, 0.4});
  m.subsystems.push_back({"front", 0.4, {0, 1}, {0}, {}});
  m.subsystems.push_back({"hind", 0.4, {2, 3}, {1}, {}});
  m.subsystems.push_back({"arm", 0.2, {4, 5}, {}, {}});
  validate(m);
  return m;
}

ModelSpec make_builtin(const std::string& name) {
  if (name == "chain2") return make_chain2();
  if (name == "quadruped2d") return make_quadruped2d();
  if (name == "quadmanip2d") return make_quadmanip2d();
  throw ConfigError("unknown builtin model: " + name);
}

namespace {

Vec2 vec2_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(where + ": expected [x, z]");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

}  // namespace

ModelSpec model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model JSON parse failure: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model JSON must be an object");
  check_keys(j, {"name", "gravity", "bodies", "joints", "contacts", "base_wrench_channels",
                 "subsystems"},
             "model");
  ModelSpec m;
  try {
    m.name = j.value("name", "model");
    if (j.contains("gravity")) m.gravity = vec2_from_json(j["gravity"], "gravity");
    if (j.contains("base_wrench_channels"))
      m.base_wrench_channels = j["base_wrench_channels"].get<int>();
    for (const auto& jb : j.value("bodies", json::array())) {
      check_keys(jb, {"name", "mass", "inertia", "com"}, "body");
      BodySpec b;
      b.name = jb.at("name").get<std::string>();
      b.mass = jb.at("mass").get<double>();
      b.inertia = jb.at("inertia").get<double>();
      if (jb.contains("com")) b.com = vec2_from_json(jb["com"], "body com");
      m.bodies.push_back(b);
    }
    for (const auto& jj : j.value("joints", json::array())) {
      check_keys(jj,
                 {"name", "parent", "child", "anchor", "torque_limit", "q_min", "q_max", "v_max",
                  "q_nominal"},
                 "joint");
      JointSpec jt;
      jt.name = jj.at("name").get<std::string>();
      jt.parent = jj.at("parent").get<int>();
      jt.child = jj.at("child").get<int>();
      jt.anchor = vec2_from_json(jj.at("anchor"), "joint anchor");
      jt.torque_limit = jj.value("torque_limit", 1e9);
      jt.q_min = jj.value("q_min", -1e9);
      jt.q_max = jj.value("q_max", 1e9);
      jt.v_max = jj.value("v_max", 1e9);
      jt.q_nominal = jj.value("q_nominal", 0.0);
      m.joints.push_back(jt);
    }
    for (const auto& jc : j.value("contacts", json::array())) {
      check_keys(jc, {"name", "body", "point"}, "contact");
      ContactSpec c;
      c.name = jc.at("name").get<std::string>();
      c.body = jc.at("body").get<int>();
      c.point = vec2_from_json(jc.at("point"), "contact point");
      m.contacts.push_back(c);
    }
    for (const auto& js : j.value("subsystems", json::array())) {
      check_keys(js, {"name", "fraction", "joints", "contacts", "wrench_channels"}, "subsystem");
      SubsystemSpec s;
      s.name = js.at("name").get<std::string>();
      s.fraction = js.at("fraction").get<double>();
      s.joints = js.value("joints", std::vector<int>{});
      s.contacts = js.value("contacts", std::vector<int>{});
      s.wrench_channels = js.value("wrench_channels", std::vector<int>{});
      m.subsystems.push_back(s);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model JSON: ") + e.what());
  }
  validate(m);
  return m;
}

std::string model_to_json(const ModelSpec& m) {
  json j;
  j["name"] = m.name;
  j["gravity"] = {m.gravity.x(), m.gravity.y()};
  j["base_wrench_channels"] = m.base_wrench_channels;
  j["bodies"] = json::array();
  for (const auto& b : m.bodies)
    j["bodies"].push_back({{"name", b.name},
                           {"mass", b.mass},
                           {"inertia", b.inertia},
                           {"com", {b.com.x(), b.com.y()}}});
  j["joints"] = json::array();
  for (const auto& jt : m.joints)
    j["joints"].push_back({{"name", jt.name},
                           {"parent", jt.parent},
                           {"child", jt.child},
                           {"anchor", {jt.anchor.x(), jt.anchor.y()}},
                           {"torque_limit", jt.torque_limit},
                           {"q_min", jt.q_min},
                           {"q_max", jt.q_max},
                           {"v_max", jt.v_max},
                           {"q_nominal", jt.q_nominal}});
  j["contacts"] = json::array();
  for (const auto& c : m.contacts)
    j["contacts"].push_back(
        {{"name", c.name}, {"body", c.body}, {"point", {c.point.x(), c.point.y()}}});
  j["subsystems"] = json::array();
  for (const auto& s : m.subsystems)
    j["subsystems"].push_back({{"name", s.name},
                               {"fraction", s.fraction},
                               {"joints", s.joints},
                               {"contacts", s.contacts},
                               {"wrench_channels", s.wrench_channels}});
  return j.dump(2);
}

}  // namespace dwmpc::model
