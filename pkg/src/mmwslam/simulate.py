"""Synthetic scene and signal generation.

Provides the test substrate for the whole pipeline: ground-truth propagation
paths from a 2D scene, uniform-linear-array beam patterns, beam-swept power
maps (BRSRP), frequency-domain reference-signal grids, time-domain receive
series for coarse synchronization, and directly synthesized noisy
measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    JointState,
    Landmark,
    PathKind,
    Pose2,
    UEState,
    predict_measurement,
    wrap_angle,
)


@dataclass(frozen=True)
class BeamCodebook:
    """Swept TX/RX beam angles plus the array geometry driving the pattern.

    ``elements_per_row`` is the element count of the azimuth row of the
    array; beams are matched-filter steered to their nominal angle. An
    optional per-element amplitude ``taper`` reshapes the sidelobes.
    """

    tx_angles: np.ndarray
    rx_angles: np.ndarray
    elements_per_row: int = 16
    taper: np.ndarray | None = None

    def __post_init__(self):
        tx = np.asarray(self.tx_angles, dtype=float)
        rx = np.asarray(self.rx_angles, dtype=float)
        if tx.size < 2 or rx.size < 2:
            raise ValueError("codebook needs at least two beams per side")
        if np.any(np.diff(tx) <= 0) or np.any(np.diff(rx) <= 0):
            raise ValueError("beam angles must be strictly increasing")
        object.__setattr__(self, "tx_angles", tx)
        object.__setattr__(self, "rx_angles", rx)
        if self.taper is not None:
            t = np.asarray(self.taper, dtype=float)
            if t.size != self.elements_per_row:
                raise ValueError("taper length must match elements_per_row")
            object.__setattr__(self, "taper", t)

    @property
    def l_tx(self) -> int:
        return self.tx_angles.size

    @property
    def l_rx(self) -> int:
        return self.rx_angles.size

    def angles(self, side: str) -> np.ndarray:
        if side == "tx":
            return self.tx_angles
        if side == "rx":
            return self.rx_angles
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")

    def nearest_beam(self, side: str, angle: float) -> int:
        return int(np.argmin(np.abs(wrap_angle(self.angles(side) - angle))))

    @classmethod
    def uniform(cls, l_tx: int, l_rx: int, tx_fov=(-np.pi / 2, np.pi / 2),
                rx_fov=(-np.pi, np.pi), elements_per_row: int = 16) -> "BeamCodebook":
        """Beams at the centers of a uniform partition of each FOV."""
        def centers(n, lo, hi):
            step = (hi - lo) / n
            return lo + step * (np.arange(n) + 0.5)
        return cls(centers(l_tx, *tx_fov), centers(l_rx, *rx_fov), elements_per_row)


def desk_codebook(elements_per_row: int = 16) -> BeamCodebook:
    """Reduced sweep (63 TX over 180 deg, 126 RX over 360 deg) for tests."""
    return BeamCodebook.uniform(63, 126, elements_per_row=elements_per_row)


def full_codebook(elements_per_row: int = 16) -> BeamCodebook:
    """Full sweep: 126 TX beams over 180 deg FOV, 252 RX beams over 360 deg."""
    return BeamCodebook.uniform(126, 252, elements_per_row=elements_per_row)


def beam_amplitude(codebook: BeamCodebook, side: str, beam_index: int, angle):
    """Complex amplitude response of one beam at the given arrival angle.

    Matched-filter ULA response with half-wavelength spacing, evaluated at
    the offset from the beam's nominal angle. A hemispheric element factor
    cos(offset/2) suppresses the rear mirror lobe of the bare array factor,
    which the 360-degree RX sweep would otherwise alias into a second
    mainlobe.
    """
    steer = codebook.angles(side)[beam_index]
    delta = wrap_angle(np.asarray(angle, dtype=float) - steer)
    u = np.pi * np.sin(delta)
    n = codebook.elements_per_row
    if codebook.taper is None:
        # sin(n u / 2) / sin(u / 2) with the u -> 0 limit handled
        num = np.sin(0.5 * n * u)
        den = np.sin(0.5 * u)
        small = np.abs(den) < 1e-12
        af = np.where(small, float(n), num / np.where(small, 1.0, den))
    else:
        k = np.arange(n) - 0.5 * (n - 1)
        af = codebook.taper @ np.exp(1j * np.outer(k, np.atleast_1d(u)))
        af = af.reshape(np.shape(u))
    resp = af * np.cos(0.5 * delta)
    return resp if np.ndim(angle) else complex(np.asarray(resp).item())


def beam_gain(codebook: BeamCodebook, side: str, beam_index: int, angle):
    """Linear power gain of one beam toward ``angle`` (peak = n_elements^2)."""
    return np.abs(beam_amplitude(codebook, side, beam_index, angle)) ** 2


def gain_vector(codebook: BeamCodebook, side: str, angle: float) -> np.ndarray:
    """Power gains of every beam of one side toward a path angle."""
    steer = codebook.angles(side)
    return np.array([beam_gain(codebook, side, i, angle) for i in range(steer.size)])


@dataclass(frozen=True)
class WaveformConfig:
    """OFDM reference-signal parametrization with a fixed unit-modulus grid."""

    subcarriers: int
    symbols: int
    scs: float = 120e3
    symbol_duration: float | None = None
    carrier: float = 60e9
    rs_symbols: np.ndarray | None = None

    def __post_init__(self):
        if self.symbol_duration is None:
            object.__setattr__(self, "symbol_duration", 1.0 / self.scs)
        if self.rs_symbols is None:
            rng = np.random.default_rng(0)
            grid = np.exp(2j * np.pi * rng.random((self.subcarriers, self.symbols)))
            object.__setattr__(self, "rs_symbols", grid)
        else:
            grid = np.asarray(self.rs_symbols, dtype=complex)
            if grid.shape != (self.subcarriers, self.symbols):
                raise ValueError("rs_symbols shape must be (subcarriers, symbols)")
            if not np.allclose(np.abs(grid), 1.0):
                raise ValueError("rs_symbols must be unit modulus")
            object.__setattr__(self, "rs_symbols", grid)

    @property
    def n_rs(self) -> int:
        return self.subcarriers * self.symbols

    @property
    def bandwidth(self) -> float:
        return self.subcarriers * self.scs

    @classmethod
    def make(cls, subcarriers: int = 256, symbols: int = 4, scs: float = 120e3,
             carrier: float = 60e9, rs_seed: int = 0) -> "WaveformConfig":
        rng = np.random.default_rng(rs_seed)
        grid = np.exp(2j * np.pi * rng.random((subcarriers, symbols)))
        return cls(subcarriers, symbols, scs, 1.0 / scs, carrier, grid)


@dataclass(frozen=True)
class PathTruth:
    """Ground truth of one propagation path."""

    kind: PathKind
    delay: float        # physical propagation delay, s
    aod: float
    aoa: float
    gain: complex       # complex amplitude xi
    doppler: float = 0.0

    def __post_init__(self):
        if abs(self.gain) <= 0:
            raise ValueError("path gain must be nonzero")

    @property
    def range_m(self) -> float:
        return SPEED_OF_LIGHT * self.delay


@dataclass(frozen=True)
class BrsrpMap:
    """L_TX x L_RX nonnegative power matrix over the swept beam pairs."""

    values: np.ndarray
    codebook: BeamCodebook
    noise_floor: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.codebook.l_tx, self.codebook.l_rx):
            raise ValueError(f"map shape {v.shape} does not match codebook "
                             f"({self.codebook.l_tx}, {self.codebook.l_rx})")
        if np.any(v < 0):
            raise ValueError("BRSRP values must be nonnegative")
        object.__setattr__(self, "values", v)


@dataclass
class Scene:
    """World description: BS pose, UE trajectory, landmarks, bias trajectory."""

    bs: Pose2
    ue_trajectory: list
    landmarks: list
    bias_trajectory: np.ndarray
    rng_seed: int = 0
    reflectivity: np.ndarray | None = None  # per landmark, (0, 1]
    los_blocked: np.ndarray | None = None   # per UE position

    def __post_init__(self):
        if len(self.ue_trajectory) < 1:
            raise ValueError("scene needs at least one UE position")
        self.bias_trajectory = np.asarray(self.bias_trajectory, dtype=float)
        if self.bias_trajectory.size != len(self.ue_trajectory):
            raise ValueError("bias trajectory length must match UE trajectory")
        if self.reflectivity is None:
            self.reflectivity = np.full(len(self.landmarks), 0.5)
        else:
            self.reflectivity = np.asarray(self.reflectivity, dtype=float)
        if self.los_blocked is None:
            self.los_blocked = np.zeros(len(self.ue_trajectory), dtype=bool)
        else:
            self.los_blocked = np.asarray(self.los_blocked, dtype=bool)

    @property
    def n_positions(self) -> int:
        return len(self.ue_trajectory)

    def ue_state(self, index: int) -> UEState:
        pose = self.ue_trajectory[index]
        return UEState(pose.position, pose.heading, float(self.bias_trajectory[index]))

    def to_dict(self) -> dict:
        return {
            "bs": {"position": self.bs.position.tolist(), "heading": self.bs.heading},
            "ue_trajectory": [
                {"position": p.position.tolist(), "heading": p.heading}
                for p in self.ue_trajectory
            ],
            "landmarks": [lm.position.tolist() for lm in self.landmarks],
            "bias_trajectory": self.bias_trajectory.tolist(),
            "rng_seed": int(self.rng_seed),
            "reflectivity": self.reflectivity.tolist(),
            "los_blocked": self.los_blocked.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            bs=Pose2(np.array(d["bs"]["position"]), d["bs"]["heading"]),
            ue_trajectory=[Pose2(np.array(p["position"]), p["heading"])
                           for p in d["ue_trajectory"]],
            landmarks=[Landmark(np.array(p)) for p in d["landmarks"]],
            bias_trajectory=np.array(d["bias_trajectory"]),
            rng_seed=d.get("rng_seed", 0),
            reflectivity=np.array(d["reflectivity"]) if "reflectivity" in d else None,
            los_blocked=np.array(d["los_blocked"], dtype=bool) if "los_blocked" in d else None,
        )


def random_walk_bias(n: int, rng: np.random.Generator, start: float = 0.0,
                     step_std: float = 1.0) -> np.ndarray:
    """Clock-bias trajectory in meters; random walk with given step std."""
    steps = rng.normal(0.0, step_std, size=n)
    steps[0] = 0.0
    return start + np.cumsum(steps)


def default_scene(seed: int = 1, n_positions: int = 45, bias_start: float = 3.0) -> Scene:
    """Bundled indoor-scale scene: a straight 0.5 m step walk past the BS
    with five strongly reflecting single-bounce landmarks, LoS visible
    throughout."""
    rng = np.random.default_rng(seed)
    ys = -0.5 * (n_positions - 1) / 2 + 0.5 * np.arange(n_positions)
    traj = [Pose2(np.array([6.0, y]), np.pi / 2) for y in ys]
    # landmarks stay clear of every BS-UE segment: a scatterer on the
    # bistatic segment is unobservable along it (forward scatter)
    landmarks = [
        Landmark(np.array([2.0, -9.0])),
        Landmark(np.array([10.0, -2.0])),
        Landmark(np.array([2.0, 8.0])),
        Landmark(np.array([9.0, 7.0])),
        Landmark(np.array([12.0, 2.0])),
    ]
    bias = random_walk_bias(n_positions, rng, start=bias_start)
    return Scene(
        bs=Pose2(np.zeros(2), 0.0),
        ue_trajectory=traj,
        landmarks=landmarks,
        bias_trajectory=bias,
        rng_seed=seed,
        reflectivity=np.full(len(landmarks), 0.9),
    )


def true_paths(scene: Scene, position_index: int) -> list:
    """Ground-truth paths at one UE position: LoS (unless blocked) plus one
    single-bounce path per landmark. Amplitudes follow a 1/d law scaled by
    the landmark reflectivity (1 for LoS); phases are zero and Doppler is
    zero (static snapshot)."""
    if not 0 <= position_index < scene.n_positions:
        raise IndexError(f"position {position_index} out of range")
    ue = scene.ue_state(position_index)
    state = JointState(UEState(ue.position, ue.heading, 0.0), tuple(scene.landmarks))
    paths = []
    if not scene.los_blocked[position_index]:
        kind = PathKind.los()
        vec = predict_measurement(scene.bs, state, kind)
        d = vec[0]
        paths.append(PathTruth(kind, d / SPEED_OF_LIGHT, vec[1], vec[2], 1.0 / d + 0.0j))
    for k in range(len(scene.landmarks)):
        kind = PathKind.nlos(k)
        vec = predict_measurement(scene.bs, state, kind)
        d = vec[0]
        rho = float(scene.reflectivity[k])
        paths.append(PathTruth(kind, d / SPEED_OF_LIGHT, vec[1], vec[2], rho / d + 0.0j))
    return paths


def synth_brsrp(paths, codebook: BeamCodebook, noise_floor: float,
                rng: np.random.Generator | None = None, n_rs: int = 1024) -> BrsrpMap:
    """Beam-swept power map: sum of per-path gain outer products plus a
    noise matrix of per-cell averages of |CN(0, noise_floor)|^2 over n_rs
    resource elements (chi-square with mean noise_floor)."""
    if noise_floor < 0:
        raise ValueError("noise_floor must be >= 0")
    B = np.zeros((codebook.l_tx, codebook.l_rx))
    for p in paths:
        g_tx = gain_vector(codebook, "tx", p.aod)
        g_rx = gain_vector(codebook, "rx", p.aoa)
        B += abs(p.gain) ** 2 * np.outer(g_tx, g_rx)
    if noise_floor > 0:
        if rng is None:
            raise ValueError("rng required when noise_floor > 0")
        dof = 2 * n_rs
        B = B + noise_floor * rng.chisquare(dof, size=B.shape) / dof
    return BrsrpMap(B, codebook, noise_floor)


def synth_rs_samples(paths, codebook: BeamCodebook, wf: WaveformConfig,
                     beam_pair: tuple, noise_var: float = 0.0,
                     rng: np.random.Generator | None = None,
                     delay_shift: float = 0.0) -> np.ndarray:
    """Received K x M frequency-domain grid for one TX/RX beam pair.

    Each path contributes gain * subcarrier phase ramp (delay relative to
    ``delay_shift``) * symbol Doppler ramp * the RS grid, scaled by the
    complex beam responses.
    """
    i, j = beam_pair
    k = np.arange(wf.subcarriers)
    m = np.arange(wf.symbols)
    y = np.zeros((wf.subcarriers, wf.symbols), dtype=complex)
    for p in paths:
        tau = p.delay - delay_shift
        g = (p.gain * beam_amplitude(codebook, "tx", i, p.aod)
             * beam_amplitude(codebook, "rx", j, p.aoa))
        ramp_f = np.exp(-2j * np.pi * k * wf.scs * tau)
        ramp_t = np.exp(2j * np.pi * m * wf.symbol_duration * p.doppler)
        y += g * np.outer(ramp_f, ramp_t)
    y *= wf.rs_symbols
    if noise_var > 0:
        if rng is None:
            raise ValueError("rng required when noise_var > 0")
        y += np.sqrt(noise_var / 2) * (rng.standard_normal(y.shape)
                                       + 1j * rng.standard_normal(y.shape))
    return y


def exact_brsrp(grid: np.ndarray) -> float:
    """Average received power over the grid: (1/N_RS) sum |y|^2."""
    grid = np.asarray(grid)
    if grid.size == 0:
        raise ValueError("empty grid")
    return float(np.mean(np.abs(grid) ** 2))


def approx_brsrp(paths, codebook: BeamCodebook, beam_pair: tuple,
                 noise_floor: float = 0.0) -> float:
    """Separated-path approximation of the BRSRP at one beam pair:
    sum_n |xi_n|^2 g_tx g_rx + noise_floor."""
    i, j = beam_pair
    total = noise_floor
    for p in paths:
        total += (abs(p.gain) ** 2 * beam_gain(codebook, "tx", i, p.aod)
                  * beam_gain(codebook, "rx", j, p.aoa))
    return float(total)


def synth_measurements(paths, covariance: np.ndarray, bias_m: float,
                       rng: np.random.Generator, outlier_rate: float = 0.0,
                       outlier_range_offset=(5.0, 25.0)) -> list:
    """Noisy (range, aod, aoa) measurements straight from path truth.

    The range row carries the clock bias (range = distance - bias). With
    probability ``outlier_rate`` a measurement is replaced by an outlier:
    range offset by a uniform draw from +-outlier_range_offset and angles
    uniform over the circle. Measurement power is |gain|^2.
    """
    from .geometry import Measurement

    cov = np.asarray(covariance, dtype=float)
    chol = np.linalg.cholesky(cov)
    out = []
    for p in paths:
        truth = np.array([p.range_m - bias_m, p.aod, p.aoa])
        if outlier_rate > 0 and rng.random() < outlier_rate:
            lo, hi = outlier_range_offset
            z = np.array([
                truth[0] + rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi),
                rng.uniform(-np.pi, np.pi),
                rng.uniform(-np.pi, np.pi),
            ])
        else:
            z = truth + chol @ rng.standard_normal(3)
        out.append(Measurement(z[0], wrap_angle(z[1]), wrap_angle(z[2]),
                               cov, power=abs(p.gain) ** 2))
    return out


def synth_time_series(paths, reference: np.ndarray, sample_rate: float,
                      bias_m: float, noise_var: float = 0.0,
                      rng: np.random.Generator | None = None,
                      amplitudes=None, tail: int = 64) -> np.ndarray:
    """Time-domain receive series for coarse synchronization.

    Each path adds the reference shifted by its biased delay rounded to the
    sample grid; the sub-sample remainder is only observable in the
    frequency-domain grids.
    """
    n_ref = reference.size
    shifts = []
    for p in paths:
        tau_b = p.delay - bias_m / SPEED_OF_LIGHT
        q = int(round(tau_b * sample_rate))
        if q < 0:
            raise ValueError("biased delay before receiver window start")
        shifts.append(q)
    n_out = n_ref + max(shifts) + tail
    y = np.zeros(n_out, dtype=complex)
    if amplitudes is None:
        amplitudes = [p.gain for p in paths]
    for p, q, a in zip(paths, shifts, amplitudes):
        y[q:q + n_ref] += a * reference
    if noise_var > 0:
        if rng is None:
            raise ValueError("rng required when noise_var > 0")
        y += np.sqrt(noise_var / 2) * (rng.standard_normal(n_out)
                                       + 1j * rng.standard_normal(n_out))
    return y
