"""Named scenario presets."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import InvalidSpec
from .harness import RunConfig
from .scenario import DriftModel, RobotSpec, Scenario, StepFault


def _corridor(start, heading, length, step=25.0, wiggle=1.5, climb=0.0, phase=0.0):
    """Gently curving corridor centreline as waypoints."""
    n = max(int(length // step), 1)
    s = np.linspace(0.0, length, n + 1)
    d = np.array([np.cos(heading), np.sin(heading), 0.0])
    lat = np.array([-np.sin(heading), np.cos(heading), 0.0])
    off = wiggle * np.sin(2.0 * np.pi * s / 180.0 + phase)
    pts = np.asarray(start, float) + s[:, None] * d + off[:, None] * lat
    pts[:, 2] += climb * s / length
    return pts


def _out_and_back(pts, lane=0.6):
    """Return along the same corridor, ``lane`` metres to the side."""
    seg = np.diff(pts[:, :2], axis=0)
    nrm = np.vstack([seg, seg[-1:]])
    nrm = np.column_stack([-nrm[:, 1], nrm[:, 0]]) / np.linalg.norm(nrm, axis=1)[:, None]
    back = pts.copy()
    back[:, :2] += lane * nrm
    return np.vstack([pts, back[::-1]])


def tunnel(seed: int = 0) -> Scenario:
    """Two robots, each ~1.2 km: a shared 350 m main gallery, then one branch each, and back out."""
    main = _corridor((0.0, 0.0, 0.0), 0.0, 350.0, climb=4.0)
    junction = main[-1]
    routes = []
    for k, heading in enumerate((0.45, -0.45)):
        branch = _corridor(junction, heading, 250.0, wiggle=2.0, climb=-3.0 if k else 3.0, phase=1.0 + k)
        out = np.vstack([main, branch[1:]])
        routes.append(_out_and_back(out, lane=0.6 if k == 0 else -0.6))
    drift = DriftModel(sigma_t=0.02, sigma_yaw=2.5e-4)
    robots = tuple(RobotSpec(tuple(map(tuple, r)), speed=1.2) for r in routes)
    return Scenario("tunnel", robots, seed=seed, odometry_rate_hz=2.0, drift=drift, submap_period_s=10.0,
                    epoch_period_s=100.0)


def _loop(cx, cy, w, h, laps, z=0.0):
    corners = [(cx - w / 2, cy - h / 2), (cx + w / 2, cy - h / 2), (cx + w / 2, cy + h / 2),
               (cx - w / 2, cy + h / 2)]
    pts = [corners[i % 4] for i in range(4 * laps + 1)]
    return tuple((x, y, z) for x, y in pts)


def euroc_like(seed: int = 0) -> Scenario:
    """Three short indoor loops flown one after another in the same room."""
    robots = (
        RobotSpec(_loop(0.0, 0.0, 8.0, 5.0, 3, 1.0), speed=0.6, start_time_s=0.0),
        RobotSpec(_loop(0.5, 0.3, 7.0, 4.0, 3, 1.5), speed=0.6, start_time_s=5.0),
        RobotSpec(_loop(-0.4, 0.2, 9.0, 4.5, 3, 1.2), speed=0.6, start_time_s=10.0),
    )
    drift = DriftModel(sigma_t=0.01, sigma_yaw=5e-4)
    return Scenario("euroc-like", robots, seed=seed, odometry_rate_hz=2.0, drift=drift, submap_period_s=10.0,
                    epoch_period_s=30.0)


def indoor_outdoor(seed: int = 0) -> Scenario:
    """A large loop driven twice with a localization failure half way round the first lap."""
    fault = StepFault(time_s=150.0, translation=(2.5, -1.5, 0.0), yaw=0.12)
    drift = DriftModel(sigma_t=0.01, sigma_yaw=1e-4, step_fault=fault)
    robots = (RobotSpec(_loop(0.0, 0.0, 80.0, 50.0, 2), speed=1.0),)
    # the onboard estimator reports a nominal covariance, it does not know about the fault
    return Scenario("indoor-outdoor", robots, seed=seed, odometry_rate_hz=2.0, drift=drift,
                    submap_period_s=10.0, epoch_period_s=50.0, odometry_sigma_t=0.05, odometry_sigma_r=0.005)


PRESETS = {"tunnel": tunnel, "euroc-like": euroc_like, "indoor-outdoor": indoor_outdoor}

# threshold multiplier per preset; band maxima on the long tunnel graphs are
# heavy-tailed, so mu + 3 sigma fires on a few percent of drift-free pairs
K_SIGMA = {"tunnel": 8.0, "euroc-like": 3.0, "indoor-outdoor": 3.0}


def preset(name: str, seed: int = 0) -> Scenario:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise InvalidSpec(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}") from None


def with_seed(s: Scenario, seed: int) -> Scenario:
    return replace(s, seed=seed)


def run_config(name: str, **overrides) -> RunConfig:
    """Default run configuration for a preset."""
    kw = {"k_sigma": K_SIGMA.get(name, 3.0)}
    kw.update(overrides)
    return RunConfig(**kw)
