"""Snapshot SLAM: regularized robust Gauss-Newton over UE state and map.

One snapshot of (range, AoD, AoA) measurements is explained either as
NLoS-only or with one measurement cast as the LoS path; every candidate
assignment is solved independently (with and without the external UE prior)
and the lowest-cost solution wins. The objective is a Gaussian prior
penalty plus, per measurement, either the quadratic error or its Cauchy
robustification log(1 + q), which in the Gauss-Newton normal equations acts
as inflating the measurement covariance by (1 + q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    DegenerateGeometryError,
    JointState,
    Landmark,
    Measurement,
    PathKind,
    Pose2,
    UEState,
    jacobian_measurement,
    predict_measurement,
    residual,
    wrap_angle,
)

COND_LIMIT = 1e12


class RankDeficiencyError(np.linalg.LinAlgError):
    """The normal-equation matrix does not determine the state."""


class SolveError(RuntimeError):
    """Every hypothesis of a snapshot failed; diagnostics attached."""

    def __init__(self, message: str, failures: dict):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class Hypothesis:
    """One LoS assignment (None = NLoS-only) solved with/without prior."""

    los_measurement: int | None
    uses_prior: bool

    def label(self) -> str:
        los = "none" if self.los_measurement is None else str(self.los_measurement)
        return f"los={los},prior={'yes' if self.uses_prior else 'no'}"


@dataclass(frozen=True)
class GaussianPrior:
    """Prior over the full state vector; zero information blocks encode
    'no prior' for the corresponding entries."""

    mean: np.ndarray
    information: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        info = np.asarray(self.information, dtype=float)
        if info.shape != (mean.size, mean.size):
            raise ValueError("information shape must match mean")
        if not np.allclose(info, info.T):
            raise ValueError("information matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(info) < -1e-9):
            raise ValueError("information matrix must be PSD")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "information", info)

    @classmethod
    def ue_only(cls, ue_mean: np.ndarray, ue_cov: np.ndarray,
                landmarks: np.ndarray) -> "GaussianPrior":
        """UE prior block plus zero-information landmark blocks."""
        landmarks = np.asarray(landmarks, dtype=float).reshape(-1)
        dim = 4 + landmarks.size
        mean = np.concatenate([np.asarray(ue_mean, dtype=float), landmarks])
        info = np.zeros((dim, dim))
        info[:4, :4] = np.linalg.inv(ue_cov)
        return cls(mean, info)


@dataclass(frozen=True)
class SlamSolution:
    estimate: JointState
    covariance: np.ndarray
    cost: float
    hypothesis: Hypothesis
    iterations: int


@dataclass(frozen=True)
class SlamConfig:
    robust: bool = True
    use_prior: bool = True
    d_min: float = 1.0           # LoS distance bounds for the bias search
    d_max: float = 20.0
    sigma_bias_init: float = 3.0  # std of the augmented bias pseudo-measurement
    max_iterations: int = 100
    step_tol: float = 1e-6
    decrease_tol: float = 1e-9
    armijo_alpha: float = 0.3
    backtrack_beta: float = 0.8
    max_backtracks: int = 30
    known_bias_information: float = 1e12

    @classmethod
    def for_ablation(cls, name: str) -> "SlamConfig":
        modes = {
            "ofv0": dict(robust=False, use_prior=False),
            "ofv1": dict(robust=True, use_prior=False),
            "ofv2": dict(robust=False, use_prior=True),
            "proposed": dict(robust=True, use_prior=True),
        }
        if name not in modes:
            raise ValueError(f"unknown ablation {name!r}; pick from {sorted(modes)}")
        return cls(**modes[name])


def path_kinds(hypothesis: Hypothesis, n_measurements: int) -> list:
    """Measurement-to-path assignment implied by a hypothesis."""
    kinds = []
    k = 0
    for i in range(n_measurements):
        if hypothesis.los_measurement == i:
            kinds.append(PathKind.los())
        else:
            kinds.append(PathKind.nlos(k))
            k += 1
    return kinds


def _robust_f(q: float, robust: bool) -> float:
    return math.log1p(q) if robust else q


def _robust_weight(q: float, robust: bool) -> float:
    return 1.0 / (1.0 + q) if robust else 1.0


def _prior_residual(v: np.ndarray, prior: GaussianPrior) -> np.ndarray:
    r = v - prior.mean
    r[2] = wrap_angle(r[2])  # heading lives on the circle
    return r


def objective(bs: Pose2, x: JointState, z: list, hypothesis: Hypothesis,
              prior: GaussianPrior | None, robust: bool) -> float:
    """L(x): prior penalty plus per-measurement (robustified) quadratic
    errors, with the angle residuals wrapped."""
    kinds = path_kinds(hypothesis, len(z))
    total = 0.0
    if prior is not None:
        rp = _prior_residual(x.to_vector(), prior)
        total += float(rp @ prior.information @ rp)
    for zn, kind in zip(z, kinds):
        r = residual(zn.vector, predict_measurement(bs, x, kind))
        q = float(r @ np.linalg.solve(zn.covariance, r))
        total += _robust_f(q, robust)
    return total


def gradient(bs: Pose2, x: JointState, z: list, hypothesis: Hypothesis,
             prior: GaussianPrior | None, robust: bool) -> np.ndarray:
    """Analytic gradient of the objective with respect to the state vector."""
    kinds = path_kinds(hypothesis, len(z))
    g = np.zeros(x.dim)
    if prior is not None:
        g += 2.0 * prior.information @ _prior_residual(x.to_vector(), prior)
    for zn, kind in zip(z, kinds):
        H = jacobian_measurement(bs, x, kind)
        r = residual(zn.vector, predict_measurement(bs, x, kind))
        rinv_r = np.linalg.solve(zn.covariance, r)
        w = _robust_weight(float(r @ rinv_r), robust)
        g -= 2.0 * w * H.T @ rinv_r
    return g


def inflate_covariance(cov: np.ndarray, q: float) -> np.ndarray:
    """Covariance scaled by (1 + q); large residuals lose influence."""
    if q < 0:
        raise ValueError("quadratic error must be >= 0")
    return (1.0 + q) * np.asarray(cov, dtype=float)


def _state_block_name(index: int) -> str:
    if index < 2:
        return "UE position"
    if index == 2:
        return "UE heading"
    if index == 3:
        return "clock bias"
    return f"landmark {(index - 4) // 2}"


def normal_matrix(bs: Pose2, x: JointState, z: list, hypothesis: Hypothesis,
                  prior: GaussianPrior | None, robust: bool):
    """A and b of the Gauss-Newton update at x (A dx = b)."""
    kinds = path_kinds(hypothesis, len(z))
    dim = x.dim
    A = np.zeros((dim, dim))
    b = np.zeros(dim)
    if prior is not None:
        A += prior.information
        b -= prior.information @ _prior_residual(x.to_vector(), prior)
    for zn, kind in zip(z, kinds):
        H = jacobian_measurement(bs, x, kind)
        r = residual(zn.vector, predict_measurement(bs, x, kind))
        rinv = np.linalg.inv(zn.covariance)
        w = _robust_weight(float(r @ rinv @ r), robust)
        A += w * H.T @ rinv @ H
        b += w * H.T @ rinv @ r
    return A, b


def _check_conditioning(A: np.ndarray, context: str):
    eigvals, eigvecs = np.linalg.eigh(A)
    if eigvals[-1] <= 0 or eigvals[0] <= eigvals[-1] / COND_LIMIT:
        null = np.abs(eigvecs[:, 0])
        block = _state_block_name(int(np.argmax(null)))
        raise RankDeficiencyError(
            f"{context}: normal equations are rank deficient; the {block} "
            f"block is underdetermined")


def gn_solve(bs: Pose2, z: list, hypothesis: Hypothesis, init: JointState,
             prior: GaussianPrior | None = None,
             config: SlamConfig = SlamConfig(),
             cost_trace: list | None = None) -> SlamSolution:
    """Gauss-Newton with covariance inflation and backtracking line search.

    Iterates dx = A^-1 b with the per-measurement covariances inflated by
    (1 + q_n) when the robust cost is active; steps are scaled by an Armijo
    backtracking search so the objective never increases between accepted
    iterates. Returns the final state, its cost and P = A^-1 at the final
    iterate. ``cost_trace`` collects the cost at every accepted iterate.
    """
    n_land = sum(0 if k.is_los else 1 for k in path_kinds(hypothesis, len(z)))
    if len(init.landmarks) != n_land:
        raise ValueError(f"init has {len(init.landmarks)} landmarks, "
                         f"hypothesis needs {n_land}")
    robust = config.robust
    x = init
    cost = objective(bs, x, z, hypothesis, prior, robust)
    if cost_trace is not None:
        cost_trace.append(cost)
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        A, b = normal_matrix(bs, x, z, hypothesis, prior, robust)
        _check_conditioning(A, f"hypothesis {hypothesis.label()}")
        dx = np.linalg.solve(A, b)
        if np.max(np.abs(dx)) < config.step_tol:
            break
        g = gradient(bs, x, z, hypothesis, prior, robust)
        slope = float(g @ dx)
        if slope >= 0:  # numerically non-descent; stop rather than climb
            break
        t = 1.0
        accepted = False
        for _ in range(config.max_backtracks + 1):
            trial_vec = x.to_vector() + t * dx
            trial = JointState.from_vector(trial_vec)
            try:
                trial_cost = objective(bs, trial, z, hypothesis, prior, robust)
            except DegenerateGeometryError:
                trial_cost = np.inf
            if trial_cost <= cost + config.armijo_alpha * t * slope:
                accepted = True
                break
            t *= config.backtrack_beta
        converged = not accepted or abs(t * slope) < config.decrease_tol
        if accepted and trial_cost <= cost:
            x, cost = trial, trial_cost
            if cost_trace is not None:
                cost_trace.append(cost)
        if converged:
            break
    A, _ = normal_matrix(bs, x, z, hypothesis, prior, robust)
    _check_conditioning(A, f"hypothesis {hypothesis.label()} (final)")
    P = np.linalg.inv(A)
    x = JointState.from_vector(x.to_vector())  # re-wrap heading
    return SlamSolution(x, P, cost, hypothesis, iterations)


def bias_bounds(range_m: float, d_min: float, d_max: float) -> tuple:
    """Clock-bias interval implied by LoS distance bounds.

    The range row of the model is distance - bias, so a measured LoS range
    r with d_min <= d <= d_max pins the bias to [d_min - r, d_max - r].
    """
    if not d_min < d_max:
        raise ValueError("need d_min < d_max")
    return (d_min - range_m, d_max - range_m)


def ue_moments(z_los: Measurement, bs: Pose2, bias: float,
               sigma_bias: float) -> tuple:
    """Closed-form UE mean and covariance from one LoS measurement and a
    trial bias: the measurement (plus a bias pseudo-measurement) is pushed
    through the inverse LoS model, the covariance through its Jacobian."""
    r, phi, theta = z_los.range_m, z_los.aod, z_los.aoa
    u = r + bias  # implied BS-UE distance
    if u <= 1e-9:
        raise DegenerateGeometryError("trial bias implies nonpositive LoS distance")
    psi = bs.heading + phi
    c, s = math.cos(psi), math.sin(psi)
    mean = np.array([
        bs.position[0] + u * c,
        bs.position[1] + u * s,
        wrap_angle(psi + math.pi - theta),
        bias,
    ])
    H = np.array([
        [c, -u * s, 0.0, c],
        [s, u * c, 0.0, s],
        [0.0, 1.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    R_aug = np.zeros((4, 4))
    R_aug[:3, :3] = z_los.covariance
    R_aug[3, 3] = sigma_bias ** 2
    return mean, H @ R_aug @ H.T


def ray_intersection_start(z_n: Measurement, ue_mean: np.ndarray,
                           bs: Pose2) -> np.ndarray:
    """Landmark start point: AoD ray from the BS crossed with the AoA ray
    from the UE mean; falls back to the AoD-ray midpoint at half the
    implied path length when the rays are near-parallel or cross behind
    either endpoint."""
    ue = UEState(ue_mean[:2], ue_mean[2], ue_mean[3])
    e1 = np.array([math.cos(bs.heading + z_n.aod), math.sin(bs.heading + z_n.aod)])
    e2 = np.array([math.cos(ue.heading + z_n.aoa), math.sin(ue.heading + z_n.aoa)])
    total = z_n.range_m + ue.bias  # implied BS->landmark->UE path length
    rhs = ue.position - bs.position
    det = -e1[0] * e2[1] + e1[1] * e2[0]
    if abs(det) > 1e-6:
        t1 = (-rhs[0] * e2[1] + rhs[1] * e2[0]) / det
        t2 = (e1[0] * rhs[1] - e1[1] * rhs[0]) / det
        if t1 > 1e-6 and t2 > 1e-6:
            return bs.position + t1 * e1
    return bs.position + 0.5 * max(total, 1.0) * e1


def init_landmark(z_n: Measurement, ue_mean: np.ndarray, ue_cov: np.ndarray,
                  bs: Pose2, max_iterations: int = 50) -> tuple:
    """Initialize one landmark from its measurement and the UE prior.

    Minimizes the measurement discrepancy weighted by W = H_s Sigma_ss
    H_s^T + R (the UE uncertainty folded into the measurement) over the 2D
    landmark with Gauss-Newton, started from ray_intersection_start.

    Returns (position, converged); on non-convergence the best iterate is
    returned with converged=False.
    """
    ue = UEState(ue_mean[:2], ue_mean[2], ue_mean[3])
    m = ray_intersection_start(z_n, ue_mean, bs)
    kind = PathKind.nlos(0)

    def linearize(pos):
        x = JointState(ue, (Landmark(pos),))
        h = predict_measurement(bs, x, kind)
        H = jacobian_measurement(bs, x, kind)
        W = H[:, :4] @ ue_cov @ H[:, :4].T + z_n.covariance
        return residual(z_n.vector, h), H[:, 4:6], np.linalg.inv(W)

    def weighted_cost(pos, Winv):
        x = JointState(ue, (Landmark(pos),))
        r = residual(z_n.vector, predict_measurement(bs, x, kind))
        return float(r @ Winv @ r)

    converged = False
    for _ in range(max_iterations):
        r, Hm, Winv = linearize(m)
        cost = float(r @ Winv @ r)
        if cost < 1e-20:
            converged = True
            break
        A = Hm.T @ Winv @ Hm
        b = Hm.T @ Winv @ r
        try:
            dm = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            break
        if np.max(np.abs(dm)) < 1e-6:
            converged = True
            break
        # step halving against the current iterate's fixed weighting
        step = 1.0
        improved = False
        for _ in range(15):
            trial = m + step * dm
            try:
                trial_cost = weighted_cost(trial, Winv)
            except DegenerateGeometryError:
                trial_cost = np.inf
            if trial_cost < cost:
                m = trial
                improved = True
                break
            step *= 0.5
        if not improved:
            converged = True  # local stationary point under this weighting
            break
    return m, converged


def _assemble_init(bs: Pose2, z: list, hypothesis: Hypothesis,
                   ue_mean: np.ndarray, ue_cov: np.ndarray,
                   polish: bool = True) -> JointState:
    """UE moments plus per-measurement landmark initialization; with
    ``polish`` off the raw ray-intersection start points are used."""
    lms = []
    for i, zn in enumerate(z):
        if i == hypothesis.los_measurement:
            continue
        if polish:
            pos, _ = init_landmark(zn, ue_mean, ue_cov, bs)
        else:
            pos = ray_intersection_start(zn, ue_mean, bs)
        lms.append(Landmark(pos))
    return JointState(UEState(ue_mean[:2], ue_mean[2], ue_mean[3]), tuple(lms))


def _golden_section(fun, lo: float, hi: float, tol: float = 1e-2,
                    max_iter: int = 60) -> tuple:
    """Golden-section minimum of a scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def init_ue_from_los(z: list, los_index: int, bs: Pose2,
                     bounds: tuple | None = None,
                     config: SlamConfig = SlamConfig()) -> tuple:
    """LoS-based UE prior with the clock bias found by bounded search.

    For each trial bias the UE moments follow in closed form and every
    other measurement initializes its landmark; the snapshot cost of the
    assembled state scores the trial. The bias minimizing that cost over
    the bounds wins (golden-section restarted on three subintervals).

    Returns (ue_mean, ue_cov, bias).
    """
    if not z:
        raise ValueError("no measurements")
    z_los = z[los_index]
    if bounds is None:
        bounds = bias_bounds(z_los.range_m, config.d_min, config.d_max)
    lo, hi = bounds
    if not lo < hi:
        raise ValueError("empty bias bounds")
    hypothesis = Hypothesis(los_index, uses_prior=False)

    def trial_cost(bias):
        # score trials with unpolished landmark starts: the AoD/AoA rays fit
        # exactly, so the remaining range residual isolates the bias error
        try:
            mean, cov = ue_moments(z_los, bs, bias, config.sigma_bias_init)
            x = _assemble_init(bs, z, hypothesis, mean, cov, polish=False)
            return objective(bs, x, z, hypothesis, None, config.robust)
        except DegenerateGeometryError:
            return np.inf

    best_bias, best_cost = None, np.inf
    edges = np.linspace(lo, hi, 4)
    for k in range(3):
        cand, cost = _golden_section(trial_cost, edges[k], edges[k + 1])
        if cost < best_cost:
            best_bias, best_cost = cand, cost
    if best_bias is None or not np.isfinite(best_cost):
        raise DegenerateGeometryError("no feasible bias trial in bounds")
    mean, cov = ue_moments(z_los, bs, best_bias, config.sigma_bias_init)
    return mean, cov, best_bias


def enumerate_hypotheses(z: list, prior_available: bool) -> list:
    """LoS-candidate enumeration: paths within 1 m of the shortest range
    and within 3 dB of the strongest power. With a prior this yields
    2 N_LoS + 1 hypotheses (NLoS-only plus each candidate with and without
    the prior); without one, only the LoS-initialized variants exist."""
    if not z:
        raise ValueError("no measurements")
    if any(zn.power is None for zn in z):
        raise ValueError("measurements need attached powers for the LoS rule")
    shortest = min(zn.range_m for zn in z)
    strongest = max(zn.power for zn in z)
    candidates = [
        i for i, zn in enumerate(z)
        if zn.range_m <= shortest + 1.0 and zn.power >= strongest * 10 ** (-0.3)
    ]
    out = []
    if prior_available:
        out.append(Hypothesis(None, True))
        for i in candidates:
            out.append(Hypothesis(i, True))
            out.append(Hypothesis(i, False))
    else:
        out.extend(Hypothesis(i, False) for i in candidates)
    return out


def solve_snapshot(bs: Pose2, z: list, ue_prior: tuple | None,
                   config: SlamConfig = SlamConfig(),
                   known_bias: float | None = None) -> SlamSolution:
    """Solve one measurement snapshot over all hypotheses, lowest cost wins.

    ``ue_prior`` is an optional (mean4, cov4) pair, typically the previous
    position's estimate. ``known_bias`` pins the clock bias with a
    delta-like prior (synchronized-clocks reference mode).
    """
    prior_available = ue_prior is not None and config.use_prior
    hypotheses = enumerate_hypotheses(z, prior_available)
    if not hypotheses:
        raise SolveError("no admissible hypothesis (no prior and no LoS candidate)", {})
    best = None
    failures = {}
    for hyp in hypotheses:
        try:
            sol = _solve_hypothesis(bs, z, hyp, ue_prior, config, known_bias)
        except (RankDeficiencyError, DegenerateGeometryError,
                np.linalg.LinAlgError) as err:
            failures[hyp.label()] = f"{type(err).__name__}: {err}"
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise SolveError("all hypotheses failed", failures)
    return best


def _solve_hypothesis(bs, z, hyp, ue_prior, config, known_bias):
    if hyp.uses_prior:
        ue_mean, ue_cov = np.array(ue_prior[0], dtype=float), np.array(ue_prior[1], dtype=float)
    elif known_bias is not None:
        # synchronized clocks: closed-form moments at the known bias
        ue_mean, ue_cov = ue_moments(z[hyp.los_measurement], bs, known_bias,
                                     config.sigma_bias_init)
    else:
        ue_mean, ue_cov, _ = init_ue_from_los(z, hyp.los_measurement, bs,
                                              config=config)
    if known_bias is not None:
        ue_mean = ue_mean.copy()
        ue_mean[3] = known_bias
    init = _assemble_init(bs, z, hyp, ue_mean, ue_cov)

    prior = None
    if hyp.uses_prior:
        prior = GaussianPrior.ue_only(
            ue_mean, ue_cov,
            np.concatenate([lm.position for lm in init.landmarks])
            if init.landmarks else np.empty(0))
    if known_bias is not None:
        dim = init.dim
        mean = prior.mean.copy() if prior is not None else init.to_vector()
        info = prior.information.copy() if prior is not None else np.zeros((dim, dim))
        mean[3] = known_bias
        info[3, 3] += config.known_bias_information
        prior = GaussianPrior(mean, info)
    return gn_solve(bs, z, hyp, init, prior, config)
