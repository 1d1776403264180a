import numpy as np
import pytest

from armplan import kinematics as kin
from armplan.resources import robot_path, scene_path
from armplan.world import Scene, SphereObstacle, load_scene


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        print(f"\n[ACCEPTANCE] {name}: {status}", flush=True)


@pytest.fixture(scope="session")
def panda():
    return kin.load_robot(robot_path("panda7"))


@pytest.fixture(scope="session")
def planar():
    return kin.load_robot(robot_path("planar2"))


@pytest.fixture(scope="session")
def reference_scene():
    return load_scene(scene_path("two_spheres"))


@pytest.fixture()
def single_sphere_scene():
    return Scene(spheres=(SphereObstacle(np.array([0.0, 0.0, 0.0]), 0.2),),
                 bounds_min=np.array([-1.0, -1.0, -1.0]),
                 bounds_max=np.array([1.0, 1.0, 1.0]))


def dh_matrix(spec, q):
    """Independent 4x4 classic-DH transform used as the FK oracle."""
    th = q + spec.theta_offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(spec.dh_alpha), np.sin(spec.dh_alpha)
    return np.array([
        [ct, -st * ca, st * sa, spec.dh_a * ct],
        [st, ct * ca, -ct * sa, spec.dh_a * st],
        [0.0, sa, ca, spec.dh_d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def oracle_frames(model, q):
    """Homogeneous matrix-product FK oracle; list of 4x4 poses, base included."""
    mats = [np.eye(4)]
    for spec, qi in zip(model.joints, q):
        mats.append(mats[-1] @ dh_matrix(spec, qi))
    return mats


def oracle_points(model, q):
    """Link sample points transformed with oracle poses (link-major order)."""
    mats = oracle_frames(model, q)
    out = []
    for i, pts in enumerate(model.link_points):
        t = mats[i + 1]
        out.append(pts @ t[:3, :3].T + t[:3, 3])
    return np.concatenate(out, axis=0)


def random_configs(model, n, seed):
    rng = np.random.default_rng(seed)
    lo, hi = model.limits_lo, model.limits_hi
    return rng.uniform(lo, hi, size=(n, model.dof))
