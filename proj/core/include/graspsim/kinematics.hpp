#pragma once

// 7-DOF serial-arm kinematics: forward kinematics for the gripper midpoint
// and the wrist-mounted camera, the geometric Jacobian, and damped-least-
// squares resolved-rate stepping toward Cartesian targets.
//
// The reference chain is an anthropomorphic layout with alternating axes
// (yaw, pitch, roll, pitch, roll, pitch, roll for joints s0 s1 e0 e1 w0 w1
// w2), link lengths 0.27/0.07/0.36/0.07/0.37/0.10/0.08 m, and the base
// 0.6 m above the floor. The camera sits 5 cm behind and 3 cm above the
// gripper midpoint, looking along the gripper approach axis (+x of the
// wrist frame). All chain geometry is data, so alternative arms can be
// loaded from config.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace grasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Joints = std::array<double, 7>;  // radians

// Rigid transform; rotation kept as an explicit orthonormal matrix.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Pose compose(const Pose& o) const { return Pose{R * o.R, R * o.t + t}; }

  // Orthonormality defect and determinant error, for invariant checks.
  double rigidity_error() const {
    const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = std::abs(R.determinant() - 1.0);
    return std::max(ortho, det);
  }
};

struct RevoluteJoint {
  Pose fixed;                    // parent frame -> joint frame, applied before the rotation
  Vec3 axis = Vec3::UnitZ();     // unit rotation axis, in the joint frame
};

struct KinematicChain {
  std::array<RevoluteJoint, 7> joints;
  Pose tool;                     // joint-7 frame -> gripper midpoint
  Pose camera;                   // joint-7 frame -> camera optical frame (+z looks out)
  Joints limit_lo{};             // joint angle box, radians
  Joints limit_hi{};

  // Enforces the type invariants: unit axes, rigid transforms, sane limits.
  void validate() const {
    for (int i = 0; i < 7; ++i) {
      if (std::abs(joints[i].axis.norm() - 1.0) > 1e-12)
        throw std::invalid_argument("chain: joint " + std::to_string(i) +
                                    " axis is not unit-norm");
      if (joints[i].fixed.rigidity_error() > 1e-9)
        throw std::invalid_argument("chain: joint " + std::to_string(i) +
                                    " fixed transform is not rigid");
      if (!(limit_lo[i] < limit_hi[i]))
        throw std::invalid_argument("chain: joint " + std::to_string(i) +
                                    " limits are not an interval");
    }
    if (tool.rigidity_error() > 1e-9)
      throw std::invalid_argument("chain: tool transform is not rigid");
    if (camera.rigidity_error() > 1e-9)
      throw std::invalid_argument("chain: camera transform is not rigid");
  }
};

// The frozen desk-scale arm described in the header comment. The base
// offset (0, 0, 0.6) is folded into joint 1's fixed transform.
inline KinematicChain reference_chain() {
  KinematicChain c;
  const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY(), z = Vec3::UnitZ();
  const std::array<Vec3, 7> offsets = {
      Vec3(0, 0, 0.87), Vec3(0, 0, 0.07), Vec3(0.36, 0, 0), Vec3(0.07, 0, 0),
      Vec3(0.37, 0, 0), Vec3(0.10, 0, 0), Vec3(0.08, 0, 0)};
  const std::array<Vec3, 7> axes = {z, y, x, y, x, y, x};
  for (int i = 0; i < 7; ++i) {
    c.joints[i].fixed.t = offsets[i];
    c.joints[i].axis = axes[i];
    c.limit_lo[i] = -2.9;
    c.limit_hi[i] = 2.9;
  }
  c.tool.t = Vec3(0.12, 0, 0);
  // Optical frame: +z along the approach axis (wrist +x), +x = -wrist y,
  // +y = -wrist z, so image "up" is the wrist +z direction.
  c.camera.t = Vec3(0.07, 0, 0.03);
  c.camera.R << 0, 0, 1,  //
      -1, 0, 0,           //
      0, -1, 0;
  return c;
}

// Down-pointing start posture above the workspace center: gripper midpoint
// at (0.50, 0, 0.62), approach axis within 4e-6 rad of straight down.
// Solved offline from the pitch-only closure s1 + e1 + w1 = pi/2.
inline Joints start_configuration() {
  return {0.0, -0.7925, 0.0, 1.9282, 0.0, 0.4351, 0.0};
}

struct FkResult {
  Pose gripper;                       // gripper midpoint in the world frame
  Pose camera;                        // camera optical frame in the world frame
  std::array<Vec3, 7> joint_origin;   // world-frame joint origins
  std::array<Vec3, 7> joint_axis;     // world-frame joint axes (unit)
};

inline FkResult forward_kinematics(const KinematicChain& chain, const Joints& q) {
  for (int i = 0; i < 7; ++i)
    if (!std::isfinite(q[i]))
      throw std::invalid_argument("forward_kinematics: joint " + std::to_string(i) +
                                  " angle is not finite");
  FkResult out;
  Pose x;
  for (int i = 0; i < 7; ++i) {
    x = x.compose(chain.joints[i].fixed);
    out.joint_origin[i] = x.t;
    x.R = x.R * Eigen::AngleAxisd(q[i], chain.joints[i].axis).toRotationMatrix();
    out.joint_axis[i] = x.R * chain.joints[i].axis;
  }
  out.gripper = x.compose(chain.tool);
  out.camera = x.compose(chain.camera);
  return out;
}

using JointJacobian = Eigen::Matrix<double, 6, 7>;

// Geometric Jacobian of the gripper midpoint: rows 0-2 linear, 3-5 angular.
inline JointJacobian jacobian(const FkResult& fk) {
  JointJacobian J;
  for (int i = 0; i < 7; ++i) {
    J.block<3, 1>(0, i) = fk.joint_axis[i].cross(fk.gripper.t - fk.joint_origin[i]);
    J.block<3, 1>(3, i) = fk.joint_axis[i];
  }
  return J;
}

inline JointJacobian jacobian(const KinematicChain& chain, const Joints& q) {
  return jacobian(forward_kinematics(chain, q));
}

struct ResolvedRateParams {
  double lambda = 0.05;       // DLS damping; stable near singularities at this scale
  double pos_gain = 0.5;      // proportional terminal gain (geometric convergence,
                              // no overshoot near arrival)
  double v_cap = 0.01;        // m/step cap on commanded linear motion
  double orient_gain = 0.5;   // strength of the keep-pointing-down hold
  double orient_ramp = 0.01;  // m of position error over which the hold fades in,
                              // so target == current position gives exactly zero deltas
  double w_cap = 0.05;        // rad/step cap on commanded angular motion
};

// One damped-least-squares step toward a Cartesian target point. The 6-D
// task twist combines proportional linear motion toward the target with an
// angular term holding the gripper approach axis on world -z (the wrist
// camera must keep the workspace in view; without the hold the wrist drifts
// ~18 degrees over an episode). Solves dq = J^T (J J^T + lambda^2 I)^-1 v,
// then clamps each component to +/- max_step.
inline Joints resolved_rate_step(const KinematicChain& chain, const Joints& q,
                                 const Vec3& target, double max_step,
                                 const ResolvedRateParams& p = {}) {
  if (!target.allFinite())
    throw std::invalid_argument("resolved_rate_step: target is not finite");
  const FkResult fk = forward_kinematics(chain, q);

  const Vec3 err = target - fk.gripper.t;
  Vec3 v = p.pos_gain * err;
  if (const double n = v.norm(); n > p.v_cap) v *= p.v_cap / n;

  const Vec3 approach = fk.gripper.R.col(0);
  Vec3 w = p.orient_gain * std::min(1.0, err.norm() / p.orient_ramp) *
           approach.cross(Vec3(0, 0, -1));
  if (const double n = w.norm(); n > p.w_cap) w *= p.w_cap / n;

  Eigen::Matrix<double, 6, 1> twist;
  twist << v, w;
  const JointJacobian J = jacobian(fk);
  Eigen::Matrix<double, 6, 6> A = J * J.transpose();
  A.diagonal().array() += p.lambda * p.lambda;
  const Eigen::Matrix<double, 7, 1> dq = J.transpose() * A.ldlt().solve(twist);

  Joints out;
  for (int i = 0; i < 7; ++i)
    out[i] = std::clamp(dq[i], -max_step, max_step);
  return out;
}

}  // namespace grasp
