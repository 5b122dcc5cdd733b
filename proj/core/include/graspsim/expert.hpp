#pragma once

// Finite-state-machine grasping expert: approach a hover point 6 cm above
// the sphere, descend onto it, close when the gripper midpoint is within
// 0.1 cm of the center. If the sphere rolls more than 2 cm away from the
// line being descended, fall back to Approach or Descend depending on where
// it went. The expert reads the true sphere position from the simulator
// (privileged information); the learned policies never do.
//
// The elementary variant skips the hover phase and aims straight at the
// sphere; oblique approaches shove the sphere around, which is exactly the
// failure mode it exists to demonstrate.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "graspsim/kinematics.hpp"
#include "graspsim/simenv.hpp"

namespace grasp {

enum class ExpertPhase { approach, descend, close };

inline const char* phase_name(ExpertPhase p) {
  switch (p) {
    case ExpertPhase::approach: return "approach";
    case ExpertPhase::descend: return "descend";
    default: return "close";
  }
}

struct ExpertConfig {
  double hover_height = 0.06;     // hover point sits this far above the sphere
  double close_threshold = 0.001; // close the gripper within this distance
  double hover_tol = 0.005;       // Approach -> Descend arrival tolerance
  double recovery_radius = 0.02;  // horizontal sphere motion that triggers recovery
  bool elementary = false;        // no hover phase: aim directly at the sphere
};

struct ExpertContext {
  ExpertPhase phase = ExpertPhase::approach;
  Vec3 descent_anchor = Vec3::Zero();  // sphere position when Descend began
};

// One closed-loop expert decision. Advances the FSM in ctx and returns the
// action for the (possibly new) phase; all joint deltas are the resolved-
// rate step normalized by max_delta, so they lie in [-1, 1].
inline Action expert_action(ExpertContext& ctx, const EnvState& s,
                            const Vec3& sphere_pos, const KinematicChain& chain,
                            double max_delta, const ExpertConfig& xc = {}) {
  const Vec3 grip = forward_kinematics(chain, s.joints).gripper.t;
  const Vec3 hover = sphere_pos + Vec3(0, 0, xc.hover_height);
  const double to_sphere = (grip - sphere_pos).norm();

  if (xc.elementary) {
    ctx.phase = to_sphere < xc.close_threshold ? ExpertPhase::close
                                               : ExpertPhase::descend;
  } else {
    // Recovery: the sphere left the line we were descending along. Re-enter
    // Descend if we are already above its new position, otherwise re-approach.
    const auto recover = [&] {
      if ((grip - hover).norm() < xc.hover_tol) {
        ctx.phase = ExpertPhase::descend;
        ctx.descent_anchor = sphere_pos;
      } else {
        ctx.phase = ExpertPhase::approach;
      }
    };
    switch (ctx.phase) {
      case ExpertPhase::approach:
        if ((grip - hover).norm() < xc.hover_tol) {
          ctx.phase = ExpertPhase::descend;
          ctx.descent_anchor = sphere_pos;
        }
        break;
      case ExpertPhase::descend:
        if ((sphere_pos - ctx.descent_anchor).head<2>().norm() >
            xc.recovery_radius)
          recover();
        else if (to_sphere < xc.close_threshold)
          ctx.phase = ExpertPhase::close;
        break;
      case ExpertPhase::close:
        // Only reachable again if the grasp failed to land (e.g. the sphere
        // was bumped away during command latency); reopen and retry.
        if (to_sphere > xc.close_threshold) recover();
        break;
    }
  }

  Action a;
  if (ctx.phase == ExpertPhase::close) {
    a.gripper_cmd = 1.0;
    return a;
  }
  const Vec3 target = ctx.phase == ExpertPhase::approach ? hover : sphere_pos;
  // Gentler than the resolved-rate defaults: under command latency the
  // position loop rings at the default bandwidth, and a fast final descent
  // carries that ring into the contact zone where the fingers shove the
  // sphere instead of landing around it.
  ResolvedRateParams rr;
  rr.pos_gain = 0.25;
  if (ctx.phase == ExpertPhase::descend) rr.v_cap = 0.006;
  const Joints dq = resolved_rate_step(chain, s.joints, target, max_delta, rr);
  for (int i = 0; i < 7; ++i) a.joint_deltas[i] = dq[i] / max_delta;
  a.gripper_cmd = -1.0;
  return a;
}

struct RolloutResult {
  std::vector<TraceRow> trace;  // pre-step state + action per step
  bool success = false;
  int steps = 0;
};

// Runs the expert closed-loop from a fresh episode until grasp, episode
// cap, or max_steps. Spawn is explicit (x, y) or sampled from the workspace.
inline RolloutResult expert_rollout(
    const SimConfig& cfg, const KinematicChain& chain, int max_steps,
    std::optional<std::pair<double, double>> spawn = std::nullopt,
    std::uint64_t episode_index = 0, const ExpertConfig& xc = {}) {
  Env env(cfg, chain, episode_index);
  if (spawn)
    env.reset(spawn->first, spawn->second);
  else
    env.reset();

  RolloutResult out;
  ExpertContext ctx;
  while (!env.terminal() && out.steps < max_steps) {
    const EnvState& s = env.state();
    const Action a = expert_action(ctx, s, s.sphere_pos, chain, cfg.max_delta,
                                   xc);
    TraceRow row;
    row.step = out.steps;
    row.joints = s.joints;
    row.gripper_open = s.gripper_open;
    row.sphere_pos = s.sphere_pos;
    row.action = a;
    row.phase = xc.elementary ? "elementary" : phase_name(ctx.phase);
    out.trace.push_back(row);

    const TransitionOutcome t = env.step(a);
    out.success = out.success || t.grasped;
    ++out.steps;
  }
  return out;
}

}  // namespace grasp
