"""Planar bistatic geometry: poses, joint UE/landmark state and the
range/AoD/AoA measurement model with analytic Jacobians.

Conventions
-----------
* Global frame is a right-handed 2D frame; headings are CCW from +x.
* All angles live in (-pi, pi].
* AoD is local to the BS array (relative to the BS heading), AoA is local
  to the UE array.
* The clock bias ``B`` is carried in meters (c * bias_seconds) and enters
  only the range row: measured range = propagation distance - B.
* State vector layout: [x_ue, y_ue, heading_ue, bias_m, x_lm0, y_lm0, ...].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Distances below this are treated as coincident points.
DEGENERACY_EPS = 1e-9


class DegenerateGeometryError(ValueError):
    """Two points of a propagation path (nearly) coincide."""


_TAU = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi].

    Raises ValueError on non-finite input.
    """
    if isinstance(a, (float, int, np.floating, np.integer)):
        if not math.isfinite(a):
            raise ValueError("wrap_angle: non-finite input")
        r = math.remainder(a, _TAU)
        return r + _TAU if r <= -math.pi else r
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("wrap_angle: non-finite input")
    out = np.remainder(a + np.pi, _TAU) - np.pi
    # remainder maps odd multiples of pi to -pi; the interval is half-open at -pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if out.ndim == 0 else out


def residual(z: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Measurement residual z - h with the angle rows wrapped to (-pi, pi]."""
    r = np.asarray(z, dtype=float) - np.asarray(h, dtype=float)
    r[1] = wrap_angle(float(r[1]))
    r[2] = wrap_angle(float(r[2]))
    return r


@dataclass(frozen=True)
class Pose2:
    """Position (m) and heading (rad, wrapped to (-pi, pi])."""

    position: np.ndarray
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class UEState:
    position: np.ndarray
    heading: float = 0.0
    bias: float = 0.0  # meters

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        if not math.isfinite(self.bias):
            raise ValueError("UEState: bias must be finite")

    @property
    def pose(self) -> Pose2:
        return Pose2(self.position, self.heading)


@dataclass(frozen=True)
class Landmark:
    position: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("Landmark: non-finite coordinates")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class PathKind:
    """LoS, or NLoS via the landmark at ``landmark`` in the JointState list."""

    landmark: int | None = None

    @classmethod
    def los(cls) -> "PathKind":
        return cls(None)

    @classmethod
    def nlos(cls, index: int) -> "PathKind":
        if index < 0:
            raise ValueError("landmark index must be >= 0")
        return cls(index)

    @property
    def is_los(self) -> bool:
        return self.landmark is None

    def __str__(self):
        return "LoS" if self.is_los else f"NLoS({self.landmark})"


@dataclass(frozen=True)
class Measurement:
    """One path's (range, AoD, AoA) with its noise covariance.

    ``range_m`` is the biased range c*tau_b. ``power`` (linear) is optional
    metadata used by the LoS-candidate rule; it does not enter the
    likelihood.
    """

    range_m: float
    aod: float
    aoa: float
    covariance: np.ndarray
    power: float | None = None

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T):
            raise ValueError("Measurement: covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("Measurement: covariance must be positive-definite")
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "aod", wrap_angle(self.aod))
        object.__setattr__(self, "aoa", wrap_angle(self.aoa))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.range_m, self.aod, self.aoa])


@dataclass(frozen=True)
class JointState:
    """UE state stacked with the landmark positions of the active hypothesis."""

    ue: UEState
    landmarks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "landmarks", tuple(self.landmarks))

    @property
    def dim(self) -> int:
        return 4 + 2 * len(self.landmarks)

    def to_vector(self) -> np.ndarray:
        v = np.empty(self.dim)
        v[0:2] = self.ue.position
        v[2] = self.ue.heading
        v[3] = self.ue.bias
        for k, lm in enumerate(self.landmarks):
            v[4 + 2 * k: 6 + 2 * k] = lm.position
        return v

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "JointState":
        v = np.asarray(v, dtype=float)
        if v.size < 4 or (v.size - 4) % 2:
            raise ValueError(f"state vector length {v.size} is not 4 + 2k")
        ue = UEState(v[0:2], v[2], v[3])
        lms = tuple(Landmark(v[4 + 2 * k: 6 + 2 * k]) for k in range((v.size - 4) // 2))
        return cls(ue, lms)

    def with_ue(self, ue: UEState) -> "JointState":
        return replace(self, ue=ue)


def _checked_norm(delta: np.ndarray, what: str) -> float:
    d = math.hypot(delta[0], delta[1])
    if d < DEGENERACY_EPS:
        raise DegenerateGeometryError(f"degenerate geometry: {what} separation {d:.3e} m")
    return d


def predict_measurement(bs: Pose2, x: JointState, kind: PathKind) -> np.ndarray:
    """Noise-free measurement [range, aod, aoa] for one path.

    Range row is distance - bias; both angle rows are in the local frames
    of the BS and UE arrays and wrapped to (-pi, pi].
    """
    p_bs, p_ue = bs.position, x.ue.position
    if kind.is_los:
        d = _checked_norm(p_bs - p_ue, "BS-UE")
        d1 = p_bs - p_ue  # toward BS as seen from UE
        d2 = p_bs - p_ue
    else:
        if kind.landmark >= len(x.landmarks):
            raise IndexError(f"path references landmark {kind.landmark} of {len(x.landmarks)}")
        m = x.landmarks[kind.landmark].position
        d = _checked_norm(p_bs - m, "BS-landmark") + _checked_norm(m - p_ue, "landmark-UE")
        d1 = p_bs - m
        d2 = m - p_ue
    aod = wrap_angle(math.atan2(-d1[1], -d1[0]) - bs.heading)
    aoa = wrap_angle(math.atan2(d2[1], d2[0]) - x.ue.heading)
    return np.array([d - x.ue.bias, aod, aoa])


def _datan2(v: np.ndarray) -> np.ndarray:
    """Gradient of atan2(v_y, v_x) with respect to v."""
    n2 = float(v @ v)
    return np.array([-v[1], v[0]]) / n2


def jacobian_measurement(bs: Pose2, x: JointState, kind: PathKind) -> np.ndarray:
    """Analytic Jacobian of predict_measurement w.r.t. the state vector.

    Shape (3, 4 + 2 * n_landmarks); columns of landmarks not on the path
    are zero.
    """
    p_bs, p_ue = bs.position, x.ue.position
    H = np.zeros((3, x.dim))
    if kind.is_los:
        v = p_ue - p_bs
        d = _checked_norm(v, "BS-UE")
        e = v / d
        H[0, 0:2] = e          # d||p_ue - p_bs|| / d p_ue
        H[0, 3] = -1.0
        H[1, 0:2] = _datan2(v)             # aod = atan2(v) - heading_bs
        H[2, 0:2] = -_datan2(p_bs - p_ue)  # aoa direction is -v
        H[2, 2] = -1.0
        return H
    m = x.landmarks[kind.landmark].position
    a = m - p_bs
    b = m - p_ue
    da = _checked_norm(a, "BS-landmark")
    db = _checked_norm(b, "landmark-UE")
    c0 = 4 + 2 * kind.landmark
    H[0, 0:2] = -b / db
    H[0, 3] = -1.0
    H[0, c0:c0 + 2] = a / da + b / db
    H[1, c0:c0 + 2] = _datan2(a)           # aod depends on the landmark only
    g = _datan2(b)
    H[2, 0:2] = -g
    H[2, 2] = -1.0
    H[2, c0:c0 + 2] = g
    return H
