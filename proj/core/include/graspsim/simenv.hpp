#pragma once

// Quasi-static grasping environment: position-mode joint stepping with
// per-joint gains and command latency (the reality-gap knobs), a rolling
// sphere with a seeded contact response, and the geometric grasp test.
// Episodes are independent values; run many in parallel with per-episode
// RNG streams derived from (global seed, episode index).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspsim/kinematics.hpp"
#include "graspsim/rng.hpp"

namespace grasp {

struct Action {
  std::array<double, 7> joint_deltas{};  // each in [-1, 1], scaled by max_delta
  double gripper_cmd = -1.0;             // in [-1, 1]; > 0 commands close
};

struct Rect {
  double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
  bool contains(double x, double y) const {
    return x >= x_lo && x <= x_hi && y >= y_lo && y <= y_hi;
  }
};

struct SimConfig {
  double sphere_diameter = 0.0137;  // m
  double max_delta = 0.02;          // rad per step at |joint_delta| = 1
  double table_z = 0.40;            // table surface height
  Rect table_bounds{0.25, 0.75, -0.25, 0.25};   // sphere stays on the table
  Rect workspace{0.35, 0.65, -0.10, 0.10};      // spawn rectangle
  double capture_radius = 0.007;    // grasp test radius, m
  double grasp_height_band = 0.04;  // gripper z window above table_z for a grasp
  double tip_radius = 0.01;         // contact proxy sphere at the gripper midpoint
  double push_multiplier = 3.0;     // contact displacement = overlap * multiplier
                                    // (real-world mode uses 0.3: barely rolls)
  double push_noise = 0.2;          // +/- fraction of seeded noise on the multiplier
  std::array<double, 7> gains{1, 1, 1, 1, 1, 1, 1};  // dynamics perturbation
  int latency = 0;                  // command delay in steps
  int episode_cap = 150;
  std::uint64_t seed = 0;

  double sphere_radius() const { return 0.5 * sphere_diameter; }

  void validate() const {
    if (!(sphere_diameter > 0))
      throw std::invalid_argument("sim config: sphere_diameter must be positive");
    if (!(capture_radius > sphere_radius()))
      throw std::invalid_argument(
          "sim config: capture_radius must exceed the sphere radius");
    if (!(max_delta > 0))
      throw std::invalid_argument("sim config: max_delta must be positive");
    if (latency < 0)
      throw std::invalid_argument("sim config: latency must be >= 0");
    if (episode_cap <= 0)
      throw std::invalid_argument("sim config: episode_cap must be positive");
    for (double g : gains)
      if (!(g > 0 && g < 2))
        throw std::invalid_argument("sim config: joint gains must lie in (0, 2)");
    if (workspace.x_lo > workspace.x_hi || workspace.y_lo > workspace.y_hi)
      throw std::invalid_argument("sim config: workspace rectangle is inverted");
  }
};

struct EnvState {
  Joints joints{};
  bool gripper_open = true;
  Vec3 sphere_pos = Vec3::Zero();  // center; resting height = table_z + radius
  int step_count = 0;
};

struct TransitionOutcome {
  EnvState next_state;
  bool grasped = false;
  bool terminal = false;
  bool sphere_displaced = false;
};

// Pure grasp predicate: sphere center within capture_radius of the gripper
// midpoint (closed boundary) while the midpoint is inside the near-table
// height band.
inline bool grasp_check(const KinematicChain& chain, const EnvState& s,
                        const SimConfig& cfg) {
  const Vec3 grip = forward_kinematics(chain, s.joints).gripper.t;
  const double d2 = (grip - s.sphere_pos).squaredNorm();
  if (d2 > cfg.capture_radius * cfg.capture_radius) return false;
  return grip.z() >= cfg.table_z && grip.z() <= cfg.table_z + cfg.grasp_height_band;
}

// Returns a copy of cfg with per-joint gains drawn uniformly from gain_range
// and the given command latency. The nominal configuration is gains = 1,
// latency = 0.
inline SimConfig perturb_dynamics(const SimConfig& cfg,
                                  std::pair<double, double> gain_range,
                                  int latency, Rng& rng) {
  if (!(gain_range.first > 0 && gain_range.second < 2 &&
        gain_range.first <= gain_range.second))
    throw std::invalid_argument("perturb_dynamics: gain range must lie inside (0, 2)");
  if (latency < 0)
    throw std::invalid_argument("perturb_dynamics: latency must be >= 0");
  SimConfig out = cfg;
  for (double& g : out.gains) g = rng.uniform(gain_range.first, gain_range.second);
  out.latency = latency;
  return out;
}

class Env {
 public:
  Env(const SimConfig& cfg, const KinematicChain& chain,
      std::uint64_t episode_index = 0)
      : cfg_(cfg), chain_(chain), rng_(cfg.seed, "episode", episode_index) {
    cfg_.validate();
    chain_.validate();
  }

  // Spawn the sphere at (x, y) on the table; arm at the start posture.
  EnvState reset(double x, double y) {
    if (!cfg_.workspace.contains(x, y))
      throw std::invalid_argument("reset: sphere position outside the workspace");
    st_ = EnvState{};
    st_.joints = start_configuration();
    st_.gripper_open = true;
    st_.sphere_pos = Vec3(x, y, cfg_.table_z + cfg_.sphere_radius());
    st_.step_count = 0;
    terminal_ = false;
    queue_.assign(static_cast<std::size_t>(cfg_.latency), Action{});
    return st_;
  }

  // Spawn uniformly over the workspace rectangle.
  EnvState reset() {
    const double x = rng_.uniform(cfg_.workspace.x_lo, cfg_.workspace.x_hi);
    const double y = rng_.uniform(cfg_.workspace.y_lo, cfg_.workspace.y_hi);
    return reset(x, y);
  }

  TransitionOutcome step(const Action& commanded) {
    if (terminal_)
      throw std::logic_error("step: episode is terminal; reset before stepping");
    validate_action(commanded);

    // Command latency: actions take effect latency steps after being issued.
    queue_.push_back(commanded);
    const Action a = queue_.front();
    queue_.pop_front();

    TransitionOutcome out;
    for (int i = 0; i < 7; ++i) {
      const double next =
          st_.joints[i] + cfg_.gains[i] * a.joint_deltas[i] * cfg_.max_delta;
      st_.joints[i] = std::clamp(next, chain_.limit_lo[i], chain_.limit_hi[i]);
    }

    const bool want_closed = a.gripper_cmd > 0;
    const bool closing_edge = want_closed && st_.gripper_open;
    st_.gripper_open = !want_closed;

    out.sphere_displaced = apply_contact_response();

    if (closing_edge && grasp_check(chain_, st_, cfg_)) out.grasped = true;

    ++st_.step_count;
    terminal_ = out.grasped || st_.step_count >= cfg_.episode_cap;
    out.terminal = terminal_;
    out.next_state = st_;
    return out;
  }

  const EnvState& state() const { return st_; }
  const SimConfig& config() const { return cfg_; }
  const KinematicChain& chain() const { return chain_; }
  bool terminal() const { return terminal_; }

 private:
  static void validate_action(const Action& a) {
    for (double d : a.joint_deltas)
      if (!(d >= -1.0 && d <= 1.0))
        throw std::invalid_argument("step: joint delta outside [-1, 1]");
    if (!(a.gripper_cmd >= -1.0 && a.gripper_cmd <= 1.0))
      throw std::invalid_argument("step: gripper command outside [-1, 1]");
  }

  // Gripper-tip proxy sphere vs target sphere: on overlap, the target rolls
  // along the horizontal component of the contact normal by
  // overlap * multiplier * (1 +/- noise), staying on the table plane. The
  // plane is unbounded: a sphere herded past the table edge keeps rolling
  // (and can end up beyond the arm's reach), which is how a bad policy loses
  // the ball for good. A sphere whose center is horizontally within
  // capture_radius of the tip axis sits between the open fingers and is not
  // touched -- without that gate a centered descent would bulldoze the
  // sphere away and no grasp could ever close.
  bool apply_contact_response() {
    const Vec3 tip = forward_kinematics(chain_, st_.joints).gripper.t;
    const double touch = cfg_.tip_radius + cfg_.sphere_radius();
    const Vec3 delta = st_.sphere_pos - tip;
    const double dist = delta.norm();
    if (dist >= touch) return false;

    Vec3 horiz(delta.x(), delta.y(), 0.0);
    const double hn = horiz.norm();
    if (hn <= cfg_.capture_radius) return false;  // between the fingers
    horiz /= hn;

    const double overlap = touch - dist;
    const double mult =
        cfg_.push_multiplier * (1.0 + cfg_.push_noise * rng_.uniform(-1.0, 1.0));
    Vec3 p = st_.sphere_pos + overlap * mult * horiz;
    p.z() = cfg_.table_z + cfg_.sphere_radius();
    st_.sphere_pos = p;
    return true;
  }

  SimConfig cfg_;
  KinematicChain chain_;
  EnvState st_;
  std::deque<Action> queue_;
  Rng rng_;
  bool terminal_ = false;
};

// ---------------------------------------------------------------------------
// Episode trace log: one line per step with everything needed for replay.
// Numbers are printed with 17 significant digits so parsing reproduces the
// exact doubles.

struct TraceRow {
  int step = 0;
  Joints joints{};
  bool gripper_open = true;
  Vec3 sphere_pos = Vec3::Zero();
  Action action;
  std::string phase = "-";  // expert FSM phase or policy tag; no spaces
};

inline std::string trace_line(const TraceRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step;
  for (double q : r.joints) os << ' ' << q;
  os << ' ' << (r.gripper_open ? 1 : 0);
  os << ' ' << r.sphere_pos.x() << ' ' << r.sphere_pos.y() << ' '
     << r.sphere_pos.z();
  for (double d : r.action.joint_deltas) os << ' ' << d;
  os << ' ' << r.action.gripper_cmd;
  os << ' ' << r.phase;
  return os.str();
}

inline TraceRow parse_trace_line(const std::string& line) {
  std::istringstream is(line);
  TraceRow r;
  is >> r.step;
  for (double& q : r.joints) is >> q;
  int open = 0;
  is >> open;
  r.gripper_open = open != 0;
  is >> r.sphere_pos.x() >> r.sphere_pos.y() >> r.sphere_pos.z();
  for (double& d : r.action.joint_deltas) is >> d;
  is >> r.action.gripper_cmd;
  is >> r.phase;
  if (!is) throw std::runtime_error("trace: malformed line: " + line);
  return r;
}

inline void write_trace(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("trace: cannot open for writing: " + path);
  f << "# step j0..j6 gripper_open sphere_xyz action0..6 gripper_cmd phase\n";
  for (const TraceRow& r : rows) f << trace_line(r) << '\n';
  if (!f) throw std::runtime_error("trace: write failed: " + path);
}

inline std::vector<TraceRow> read_trace(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("trace: cannot open: " + path);
  std::vector<TraceRow> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(parse_trace_line(line));
  }
  return rows;
}

}  // namespace grasp
