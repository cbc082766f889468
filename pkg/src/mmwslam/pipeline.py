"""End-to-end stages: per-position channel estimation from synthesized
signals, measurement assembly, and the sequential trajectory SLAM pass with
prior chaining."""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import simulate
from .angles import SvdParams, cfar_detect, svd_extract
from .geometry import SPEED_OF_LIGHT, Measurement, Pose2
from .metrics import trajectory_stats
from .simulate import BeamCodebook, Scene, WaveformConfig
from .slam import SlamConfig, SolveError, solve_snapshot
from .toa import coarse_toa, combine_toa, fine_toa, make_reference


@dataclass(frozen=True)
class PathEstimate:
    """One estimated path: biased ToA, angles, power and beam indices."""

    toa_s: float
    aod: float
    aoa: float
    power: float
    tx_index: int
    rx_index: int

    @property
    def range_m(self) -> float:
        return SPEED_OF_LIGHT * self.toa_s


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the synthetic end-to-end run (desk scale by default)."""

    l_tx: int = 63
    l_rx: int = 126
    elements_per_row: int = 16
    subcarriers: int = 256
    symbols: int = 4
    scs: float = 120e3
    noise_floor: float = 0.05          # linear, per resource element
    method: str = "svd"                # or "cfar"
    power_ratio: float = 99.0
    threshold_scale: float = 1.0       # scales the 1.1 x noise-floor default
    cluster_radius: int = 1
    fit_window: int = 2
    cfar_train: int = 15
    cfar_guard: int = 3
    cfar_pfa: float = 0.002
    range_std: float = 0.3             # assumed measurement noise, m
    angle_std_deg: float = 3.0
    n_sequences: int = 4
    true_sequence: int = 2
    reference_length: int = 512
    slam: SlamConfig = field(default_factory=SlamConfig)

    def codebook(self) -> BeamCodebook:
        return BeamCodebook.uniform(self.l_tx, self.l_rx,
                                    elements_per_row=self.elements_per_row)

    def waveform(self) -> WaveformConfig:
        return WaveformConfig.make(self.subcarriers, self.symbols, self.scs)

    def svd_params(self) -> SvdParams:
        return SvdParams(
            power_ratio=self.power_ratio,
            power_threshold=1.1 * self.noise_floor * self.threshold_scale,
            cluster_radius=self.cluster_radius,
            fit_window=self.fit_window,
        )

    def measurement_covariance(self) -> np.ndarray:
        a = np.radians(self.angle_std_deg)
        return np.diag([self.range_std ** 2, a ** 2, a ** 2])


def _position_rng(seed: int, position: int, stage: str) -> np.random.Generator:
    return np.random.default_rng([seed, position, zlib.crc32(stage.encode())])


def synthesize_map(scene: Scene, position: int, config: PipelineConfig,
                   codebook: BeamCodebook | None = None):
    paths = simulate.true_paths(scene, position)
    cb = codebook or config.codebook()
    rng = _position_rng(scene.rng_seed, position, "map")
    n_rs = config.subcarriers * config.symbols
    bmap = simulate.synth_brsrp(paths, cb, config.noise_floor, rng, n_rs=n_rs)
    return bmap, paths


def estimate_position(scene: Scene, position: int, config: PipelineConfig,
                      codebook: BeamCodebook | None = None,
                      bmap=None) -> list:
    """Channel estimates for one UE position: angle extraction on the BRSRP
    map, coarse synchronization on the time series, then per-path fine ToA
    from the grid of the nearest beam pair."""
    cb = codebook or config.codebook()
    if bmap is None:
        bmap, paths = synthesize_map(scene, position, config, cb)
    else:
        paths = simulate.true_paths(scene, position)
    if config.method == "svd":
        ests = svd_extract(bmap, config.svd_params())
    elif config.method == "cfar":
        ests = cfar_detect(bmap, config.cfar_train, config.cfar_guard,
                           config.cfar_pfa, config.cluster_radius)
    else:
        raise ValueError(f"unknown method {config.method!r}")
    if not ests:
        return []

    wf = config.waveform()
    bias_m = float(scene.bias_trajectory[position])
    fs = wf.bandwidth
    rng = _position_rng(scene.rng_seed, position, "toa")
    refs = [make_reference(i, config.reference_length)
            for i in range(config.n_sequences)]
    # coarse sync listens on the strongest beam pair of the map
    i0, j0 = np.unravel_index(int(np.argmax(bmap.values)), bmap.values.shape)
    amps = [p.gain * simulate.beam_amplitude(cb, "tx", int(i0), p.aod)
            * simulate.beam_amplitude(cb, "rx", int(j0), p.aoa) for p in paths]
    rx = simulate.synth_time_series(paths, refs[config.true_sequence], fs,
                                    bias_m, config.noise_floor, rng, amps)
    coarse = coarse_toa(rx, refs, fs)

    out = []
    shift = bias_m / SPEED_OF_LIGHT + coarse.delay
    for n, est in enumerate(ests):
        grid = simulate.synth_rs_samples(
            paths, cb, wf,
            (cb.nearest_beam("tx", est.aod), cb.nearest_beam("rx", est.aoa)),
            config.noise_floor, rng, delay_shift=shift)
        fine = fine_toa(grid, wf, est, cb, path_index=n)
        tau = combine_toa(coarse, fine)
        # fine delays just under the ambiguity period are aliased negatives
        # (paths slightly earlier than the coarse lock)
        if fine.delay > 0.75 / wf.scs:
            tau -= 1.0 / wf.scs
        out.append(PathEstimate(tau, est.aod, est.aoa, est.power,
                                fine.beam_pair[0], fine.beam_pair[1]))
    return out


def measurements_from_estimates(estimates: list, config: PipelineConfig) -> list:
    cov = config.measurement_covariance()
    return [Measurement(e.range_m, e.aod, e.aoa, cov, power=e.power)
            for e in estimates]


def direct_measurements(scene: Scene, config: PipelineConfig,
                        outlier_rate: float = 0.0) -> list:
    """Noisy measurements straight from path truth for every position
    (bypasses the signal-level stages)."""
    cov = config.measurement_covariance()
    out = []
    for t in range(scene.n_positions):
        paths = simulate.true_paths(scene, t)
        rng = _position_rng(scene.rng_seed, t, "direct")
        out.append(simulate.synth_measurements(
            paths, cov, float(scene.bias_trajectory[t]), rng,
            outlier_rate=outlier_rate))
    return out


def run_trajectory(bs: Pose2, measurements_per_position: list,
                   config: SlamConfig, known_bias=None,
                   prior_cov: np.ndarray | None = None):
    """Sequential snapshot pass: each position is solved with the previous
    estimate as UE prior mean (identity covariance by default); the first
    position runs LoS-initialized. Failures are recorded and the run
    continues. Returns (solutions, failures) with None entries for failed
    positions."""
    if prior_cov is None:
        prior_cov = np.eye(4)
    solutions = []
    failures = {}
    prior = None
    for t, z in enumerate(measurements_per_position):
        kb = None if known_bias is None else float(known_bias[t])
        if not z:
            solutions.append(None)
            failures[t] = "no measurements"
            continue
        try:
            sol = solve_snapshot(bs, z, prior, config, known_bias=kb)
        except SolveError as err:
            solutions.append(None)
            failures[t] = f"{err} ({err.failures})"
            continue
        solutions.append(sol)
        mean = np.concatenate([sol.estimate.ue.position,
                               [sol.estimate.ue.heading, sol.estimate.ue.bias]])
        prior = (mean, prior_cov)
    return solutions, failures


def run_pipeline(scene: Scene, config: PipelineConfig,
                 known_bias: bool = False):
    """simulate -> estimate -> slam -> eval in memory.

    Returns (estimates_per_position, solutions, failures, report).
    """
    t0 = time.perf_counter()
    cb = config.codebook()
    est_lists = [estimate_position(scene, t, config, cb)
                 for t in range(scene.n_positions)]
    meas = [measurements_from_estimates(e, config) for e in est_lists]
    kb = scene.bias_trajectory if known_bias else None
    solutions, failures = run_trajectory(scene.bs, meas, config.slam, kb)
    report = trajectory_stats(solutions, scene,
                              runtime_s=time.perf_counter() - t0)
    return est_lists, solutions, failures, report
