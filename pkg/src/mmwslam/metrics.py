"""Evaluation metrics: GOSPA over angle sets, sidelobe false detections,
and trajectory RMSE/STD tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import wrap_angle


@dataclass(frozen=True)
class GospaParams:
    cutoff_deg: float = 10.0
    exponent: float = 2.0
    penalty: float = 2.0

    def __post_init__(self):
        if self.cutoff_deg <= 0:
            raise ValueError("cutoff must be > 0")
        if self.exponent < 1:
            raise ValueError("exponent must be >= 1")
        if not 0 < self.penalty <= 2:
            raise ValueError("penalty must be in (0, 2]")


def _angle_distance_deg(a, b) -> float:
    """Euclidean distance between two (aod, aoa) pairs in degrees, each
    component wrapped."""
    d0 = np.degrees(wrap_angle(a[0] - b[0]))
    d1 = np.degrees(wrap_angle(a[1] - b[1]))
    return float(np.hypot(d0, d1))


def gospa_angles(estimates, truth, params: GospaParams = GospaParams()):
    """GOSPA between estimated and true (aod, aoa) sets, in degrees.

    The assignment minimizing the sum of min(d, cutoff)^p is solved
    optimally; assigned pairs at distance >= cutoff count as one false plus
    one missed detection. Returns (gospa, assignment, n_false, n_missed)
    where assignment maps estimate index -> truth index.
    """
    est = list(estimates)
    tru = list(truth)
    m, n = len(est), len(tru)
    p, dc = params.exponent, params.cutoff_deg
    if m == 0 and n == 0:
        return 0.0, {}, 0, 0
    if m == 0 or n == 0:
        gospa = ((m + n) * dc ** p / params.penalty) ** (1.0 / p)
        return gospa, {}, m, n
    D = np.array([[_angle_distance_deg(e, t) for t in tru] for e in est])
    C = np.minimum(D, dc) ** p
    rows, cols = linear_sum_assignment(C)
    assignment = {}
    base = 0.0
    for i, j in zip(rows, cols):
        if D[i, j] < dc:
            assignment[int(i)] = int(j)
            base += D[i, j] ** p
    n_false = m - len(assignment)
    n_missed = n - len(assignment)
    gospa = (base + (n_false + n_missed) * dc ** p / params.penalty) ** (1.0 / p)
    return float(gospa), assignment, n_false, n_missed


def gospa_angles_brute(estimates, truth, params: GospaParams = GospaParams()):
    """Exhaustive-assignment GOSPA; test oracle for small sets (<= ~7)."""
    from itertools import permutations

    est = list(estimates)
    tru = list(truth)
    m, n = len(est), len(tru)
    p, dc = params.exponent, params.cutoff_deg
    if m == 0 or n == 0:
        return ((m + n) * dc ** p / params.penalty) ** (1.0 / p)
    swap = m > n
    small, large = (tru, est) if swap else (est, tru)
    D = np.array([[_angle_distance_deg(a, b) for b in large] for a in small])
    best = np.inf
    for perm in permutations(range(len(large)), len(small)):
        base = 0.0
        matched = 0
        for i, j in enumerate(perm):
            if D[i, j] < dc:
                base += D[i, j] ** p
                matched += 1
        total = base + (m + n - 2 * matched) * dc ** p / params.penalty
        best = min(best, total)
    return float(best ** (1.0 / p))


def slfd_metric(estimates, tau_threshold: float,
                params: GospaParams = GospaParams()):
    """Sidelobe-false-detection count and metric.

    An estimate is flagged when it pairs with another within the ToA
    threshold while their TX or RX beam indices differ by at most one; of
    each such pair only the weaker member is flagged, and each estimate
    counts at most once. Estimates are (toa_s, tx_index, rx_index, power)
    records (PathEstimate works).
    """
    if tau_threshold <= 0:
        raise ValueError("tau_threshold must be > 0")
    est = list(estimates)
    flagged = set()
    for a in range(len(est)):
        for b in range(a + 1, len(est)):
            ea, eb = est[a], est[b]
            if abs(ea.toa_s - eb.toa_s) > tau_threshold:
                continue
            if (abs(ea.tx_index - eb.tx_index) <= 1
                    or abs(ea.rx_index - eb.rx_index) <= 1):
                flagged.add(a if ea.power <= eb.power else b)
    n_slfd = len(flagged)
    gamma = ((n_slfd * params.cutoff_deg ** params.exponent) / params.penalty) \
        ** (1.0 / params.exponent)
    return n_slfd, float(gamma)


@dataclass
class EvalReport:
    """Per-position metrics plus trajectory-level error summary."""

    position_rmse: float = np.nan
    position_std: float = np.nan
    heading_rmse_deg: float = np.nan
    heading_std_deg: float = np.nan
    bias_rmse: float = np.nan
    bias_std: float = np.nan
    runtime_s: float = 0.0
    n_positions: int = 0
    n_failed: int = 0
    gospa_per_position: list = field(default_factory=list)
    slfd_per_position: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "position_rmse_m": self.position_rmse,
            "position_std_m": self.position_std,
            "heading_rmse_deg": self.heading_rmse_deg,
            "heading_std_deg": self.heading_std_deg,
            "bias_rmse_m": self.bias_rmse,
            "bias_std_m": self.bias_std,
            "runtime_s": self.runtime_s,
            "n_positions": self.n_positions,
            "n_failed": self.n_failed,
            "gospa_per_position": self.gospa_per_position,
            "slfd_per_position": self.slfd_per_position,
        }


def _rmse_std(err: np.ndarray) -> tuple:
    return float(np.sqrt(np.mean(err ** 2))), float(np.std(err))


def trajectory_stats(solutions, scene, runtime_s: float = 0.0) -> EvalReport:
    """Position/heading/bias RMSE and STD of a trajectory run.

    ``solutions`` holds one SlamSolution (or None for a failed position)
    per scene position; failed positions are excluded from the statistics
    and counted.
    """
    if len(solutions) != scene.n_positions:
        raise ValueError(f"{len(solutions)} solutions for {scene.n_positions} positions")
    pos_err, head_err, bias_err = [], [], []
    n_failed = 0
    for t, sol in enumerate(solutions):
        if sol is None:
            n_failed += 1
            continue
        truth = scene.ue_state(t)
        ue = sol.estimate.ue
        pos_err.append(float(np.linalg.norm(ue.position - truth.position)))
        head_err.append(np.degrees(wrap_angle(ue.heading - truth.heading)))
        bias_err.append(ue.bias - truth.bias)
    report = EvalReport(runtime_s=runtime_s, n_positions=scene.n_positions,
                        n_failed=n_failed)
    if pos_err:
        report.position_rmse, report.position_std = _rmse_std(np.array(pos_err))
        report.heading_rmse_deg, report.heading_std_deg = _rmse_std(np.array(head_err))
        report.bias_rmse, report.bias_std = _rmse_std(np.array(bias_err))
    return report
