// Kinematics tests: FK against hand-composed and independently computed
// golden poses, the geometric Jacobian against finite differences, and the
// resolved-rate convergence / descent envelope.
#include <cmath>

#include <doctest.h>

#include "graspsim/kinematics.hpp"
#include "graspsim/rng.hpp"

using namespace grasp;

namespace {

Joints random_joints(Rng& rng, double lo, double hi) {
  Joints q;
  for (double& v : q) v = rng.uniform(lo, hi);
  return q;
}

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

// Angle between the gripper approach axis and straight down, in radians.
double tilt(const FkResult& fk) {
  return std::acos(std::clamp(-fk.gripper.R.col(0).z(), -1.0, 1.0));
}

}  // namespace

TEST_CASE("chain validation") {
  KinematicChain c = reference_chain();
  CHECK_NOTHROW(c.validate());

  SUBCASE("non-unit axis rejected") {
    c.joints[3].axis = Vec3(0, 2, 0);
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("axis is not unit-norm"),
                         std::invalid_argument);
  }
  SUBCASE("non-rigid fixed transform rejected") {
    c.joints[0].fixed.R(0, 0) = 1.5;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("not rigid"),
                         std::invalid_argument);
  }
  SUBCASE("non-rigid tool rejected") {
    c.tool.R.col(1) = c.tool.R.col(0);
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("tool"),
                         std::invalid_argument);
  }
  SUBCASE("inverted limits rejected") {
    c.limit_lo[5] = 3.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("limits"),
                         std::invalid_argument);
  }
  SUBCASE("reflection (det = -1) rejected") {
    c.camera.R.col(2) = -c.camera.R.col(2);
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("camera"),
                         std::invalid_argument);
  }
}

TEST_CASE("forward kinematics: home pose by hand-composition") {
  // With all joints at zero every rotation is the identity, so the gripper
  // position is the plain sum of offsets: x = 0.36+0.07+0.37+0.10+0.08+0.12
  // = 1.10, z = 0.87+0.07 = 0.94; the camera adds (0.07, 0, 0.03) from the
  // wrist instead of (0.12, 0, 0).
  const KinematicChain c = reference_chain();
  const FkResult fk = forward_kinematics(c, Joints{});

  CHECK((fk.gripper.t - Vec3(1.10, 0, 0.94)).norm() < 1e-12);
  CHECK(max_abs(fk.gripper.R - Mat3::Identity()) < 1e-12);

  CHECK((fk.camera.t - Vec3(1.05, 0, 0.97)).norm() < 1e-12);
  Mat3 cam_r;
  cam_r << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  CHECK(max_abs(fk.camera.R - cam_r) < 1e-12);

  // Joint origins stack up the link offsets.
  CHECK((fk.joint_origin[0] - Vec3(0, 0, 0.87)).norm() < 1e-12);
  CHECK((fk.joint_origin[3] - Vec3(0.43, 0, 0.94)).norm() < 1e-12);
  CHECK((fk.joint_origin[6] - Vec3(0.98, 0, 0.94)).norm() < 1e-12);
}

TEST_CASE("forward kinematics: golden values from an independent implementation") {
  // Frozen outputs of a separate numpy implementation of the same chain
  // (Rodrigues rotations, explicit compositions), evaluated at seeded
  // random configurations.
  struct Golden {
    Joints q;
    Vec3 gripper_t;
    Mat3 gripper_r;  // rows as written
    Vec3 camera_t;
  };
  const Golden cases[] = {
      {{0.657494516534312, -0.1466917445950744, 0.8606350077873179,
        0.4736832697424733, -0.9739743650696411, 1.1414936439282142,
        0.626735284776847},
       {0.6256285096338802, 0.6880481785612824, 0.7337438718880211},
       (Mat3() << 0.22303805222985698, -0.4164608271533044, 0.8813707543958428,
        0.17028036390359236, 0.906890098580302, 0.38542826409835357,
        -0.9598221840145037, 0.06411496349367626, 0.2731861023731494)
           .finished(),
       {0.6409177296542626, 0.6910970082890534, 0.7899305641599408}},
      {{0.686554332664689, -0.8925272815786899, -0.11907374905063883,
        -0.310084741841805, 1.0242359732366444, 0.3452762881935949,
        0.7746278718499919},
       {0.3731412051403615, 0.40575370269503297, 1.8711925449377191},
       (Mat3() << 0.21908926020065864, -0.5846544942294919, 0.7811395639973595,
        0.569131134360257, -0.5737066712742233, -0.5890249631698622,
        0.7925210709921441, 0.5736198895720991, 0.20705210532800103)
           .finished(),
       {0.3856209290502493, 0.35962639708192423, 1.837778054547952}},
      {{-0.1358059228144053, -0.6546270677165354, 0.1310034888380036,
        -1.046838585349979, 0.7863148127821968, 0.3159945578929557,
        0.6194105762048971},
       {0.29144241332272763, -0.06826538337970836, 1.8628252396405351},
       (Mat3() << 0.0962229001734884, -0.9701052814002277, -0.22279339416057192,
        0.11291422031971643, 0.23302576304982264, -0.9658930440812992,
        0.9889345440077384, 0.06778448756487755, 0.1319610962131399)
           .finished(),
       {0.279947466489236, -0.10288788571813316, 1.8173373453265425}},
  };

  const KinematicChain c = reference_chain();
  for (const Golden& g : cases) {
    const FkResult fk = forward_kinematics(c, g.q);
    CHECK((fk.gripper.t - g.gripper_t).norm() < 1e-12);
    CHECK(max_abs(fk.gripper.R - g.gripper_r) < 1e-12);
    CHECK((fk.camera.t - g.camera_t).norm() < 1e-12);
  }
}

TEST_CASE("forward kinematics: symmetry and periodicity") {
  const KinematicChain c = reference_chain();
  Rng rng(2024);

  SUBCASE("base yaw rotates the gripper about the z axis by exactly theta") {
    const Vec3 home = forward_kinematics(c, Joints{}).gripper.t;
    for (double th : {0.3, -1.2, 2.5}) {
      Joints q{};
      q[0] = th;
      const Vec3 p = forward_kinematics(c, q).gripper.t;
      const Vec3 expect(std::cos(th) * home.x() - std::sin(th) * home.y(),
                        std::sin(th) * home.x() + std::cos(th) * home.y(),
                        home.z());
      CHECK((p - expect).norm() < 1e-12);
    }
  }

  SUBCASE("adding 2*pi to any joint leaves the pose unchanged") {
    const Joints q = random_joints(rng, -2.0, 2.0);
    const FkResult base = forward_kinematics(c, q);
    for (int j = 0; j < 7; ++j) {
      Joints q2 = q;
      q2[j] += 2.0 * M_PI;
      const FkResult fk = forward_kinematics(c, q2);
      CHECK((fk.gripper.t - base.gripper.t).norm() < 1e-9);
      CHECK(max_abs(fk.gripper.R - base.gripper.R) < 1e-9);
    }
  }

  SUBCASE("non-finite angles rejected") {
    Joints q{};
    q[4] = std::nan("");
    CHECK_THROWS_WITH_AS(forward_kinematics(c, q), doctest::Contains("joint 4"),
                         std::invalid_argument);
  }

  SUBCASE("rotations stay rigid across random configurations") {
    for (int k = 0; k < 100; ++k) {
      const FkResult fk = forward_kinematics(c, random_joints(rng, -2.9, 2.9));
      CHECK(fk.gripper.rigidity_error() < 1e-9);
      CHECK(fk.camera.rigidity_error() < 1e-9);
    }
  }
}

TEST_CASE("jacobian") {
  const KinematicChain c = reference_chain();
  Rng rng(77);

  SUBCASE("axes through the end effector give zero linear columns") {
    // At home the roll axes (e0, w0, w2) all run along the line y = 0,
    // z = 0.94 that contains the gripper midpoint.
    const JointJacobian J = jacobian(c, Joints{});
    for (int col : {2, 4, 6})
      CHECK(J.block<3, 1>(0, col).norm() < 1e-12);
    // The pitch joints do not: w1 sits 0.20 m behind the gripper.
    CHECK(J.block<3, 1>(0, 5).norm() == doctest::Approx(0.20).epsilon(1e-9));
  }

  SUBCASE("linear block matches finite differences of FK position") {
    const double h = 1e-6;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Joints q = random_joints(rng, -2.0, 2.0);
      const JointJacobian J = jacobian(c, q);
      for (int i = 0; i < 7; ++i) {
        Joints qp = q, qm = q;
        qp[i] += h;
        qm[i] -= h;
        const Vec3 fd = (forward_kinematics(c, qp).gripper.t -
                         forward_kinematics(c, qm).gripper.t) /
                        (2.0 * h);
        worst = std::max(worst, (J.block<3, 1>(0, i) - fd).cwiseAbs().maxCoeff());
      }
      CHECK(J.allFinite());
    }
    CHECK(worst < 1e-5);
  }

  SUBCASE("angular block matches finite differences of FK rotation") {
    // (R(q+h) - R(q-h)) / 2h * R^T is the skew matrix of the column's
    // angular velocity.
    const double h = 1e-6;
    for (int k = 0; k < 10; ++k) {
      const Joints q = random_joints(rng, -2.0, 2.0);
      const FkResult fk = forward_kinematics(c, q);
      const JointJacobian J = jacobian(fk);
      for (int i = 0; i < 7; ++i) {
        Joints qp = q, qm = q;
        qp[i] += h;
        qm[i] -= h;
        const Mat3 dr = (forward_kinematics(c, qp).gripper.R -
                         forward_kinematics(c, qm).gripper.R) /
                        (2.0 * h);
        const Mat3 skew = dr * fk.gripper.R.transpose();
        const Vec3 w(skew(2, 1), skew(0, 2), skew(1, 0));
        CHECK((J.block<3, 1>(3, i) - w).cwiseAbs().maxCoeff() < 1e-5);
      }
    }
  }
}

TEST_CASE("resolved rate stepping") {
  const KinematicChain c = reference_chain();
  const Joints q0 = start_configuration();

  SUBCASE("start configuration points straight down over the workspace") {
    const FkResult fk = forward_kinematics(c, q0);
    CHECK((fk.gripper.t - Vec3(0.50, 0, 0.62)).norm() < 1e-4);
    CHECK(tilt(fk) < 1e-5);
    for (int i = 0; i < 7; ++i) {
      CHECK(q0[i] > c.limit_lo[i]);
      CHECK(q0[i] < c.limit_hi[i]);
    }
  }

  SUBCASE("target at the current position gives exactly zero deltas") {
    const Vec3 here = forward_kinematics(c, q0).gripper.t;
    for (double d : resolved_rate_step(c, q0, here, 0.02)) CHECK(d == 0.0);
  }

  SUBCASE("deltas never exceed max_step") {
    Rng rng(5);
    for (int k = 0; k < 50; ++k) {
      const Joints q = random_joints(rng, -1.5, 1.5);
      const Vec3 target(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2));
      for (double max_step : {0.005, 0.02}) {
        for (double d : resolved_rate_step(c, q, target, max_step))
          CHECK(std::abs(d) <= max_step + 1e-15);
      }
    }
  }

  SUBCASE("tracking converges within 2mm and descends monotonically") {
    // Seeded targets spanning the sphere workspace plus the hover band.
    Rng rng(7);
    for (int k = 0; k < 20; ++k) {
      const Vec3 target(rng.uniform(0.35, 0.65), rng.uniform(-0.10, 0.10),
                        rng.uniform(0.407, 0.65));
      Joints q = q0;
      double prev = (forward_kinematics(c, q).gripper.t - target).norm();
      double max_tilt = 0.0;
      bool monotone = true;
      double err = prev;
      for (int step = 0; step < 500; ++step) {
        const Joints dq = resolved_rate_step(c, q, target, 0.02);
        for (int i = 0; i < 7; ++i)
          q[i] = std::clamp(q[i] + dq[i], c.limit_lo[i], c.limit_hi[i]);
        const FkResult fk = forward_kinematics(c, q);
        err = (fk.gripper.t - target).norm();
        // Allow double-precision noise once fully converged.
        if (err > prev + 1e-12) monotone = false;
        prev = err;
        max_tilt = std::max(max_tilt, tilt(fk));
      }
      CHECK(err < 0.002);
      CHECK(monotone);
      // The orientation hold keeps the approach axis near straight down.
      CHECK(max_tilt < 0.18);       // < ~10 degrees transient
      CHECK(tilt(forward_kinematics(c, q)) < 0.02);  // ~1 degree at rest
    }
  }

  SUBCASE("non-finite target rejected") {
    CHECK_THROWS_AS(
        resolved_rate_step(c, q0, Vec3(0.5, 0.0, std::nan("")), 0.02),
        std::invalid_argument);
  }
}
