"""AoD/AoA extraction from beam-swept power maps.

Primary method: low-rank SVD peeling of the power map. The map is a sum of
per-path outer products of beam-gain vectors, so each dominant rank-1 term
localizes one path; weak terms are sidelobe/noise residue. Rank-1 peaks are
collected until a target fraction of the total singular-value energy is
recovered, then thresholded, clustered on the beam grid and refined with a
local quadratic-surface fit. A classical 2D cell-averaging CFAR detector is
included as the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulate import BrsrpMap


@dataclass(frozen=True)
class SvdParams:
    power_ratio: float = 99.0      # percent of singular-value energy to recover
    power_threshold: float = 0.0   # linear; candidates below are dropped
    cluster_radius: int = 1        # Chebyshev radius on the beam-index grid
    fit_window: int = 2            # half-width (beams) of the refinement window

    def __post_init__(self):
        if not 0 < self.power_ratio <= 100:
            raise ValueError("power_ratio must be in (0, 100]")
        if self.power_threshold < 0:
            raise ValueError("power_threshold must be >= 0")
        if self.cluster_radius < 1 or self.fit_window < 1:
            raise ValueError("cluster_radius and fit_window must be >= 1")


@dataclass(frozen=True)
class AngleCandidate:
    """One rank-1 peak: beam angles, original map power and grid indices."""

    aod: float
    aoa: float
    power: float
    tx_index: int
    rx_index: int
    rank_index: int


@dataclass(frozen=True)
class AngleEstimate:
    """Refined path estimate with the candidates it was built from."""

    aod: float
    aoa: float
    power: float
    cluster_members: tuple = field(default_factory=tuple)


def rank1_peak(mat: np.ndarray) -> tuple:
    """Indices of the peak of a rank-1 matrix, sign-ambiguity tolerant.

    The overall sign is normalized so the entry of largest magnitude is
    positive; ties break to the lowest (row, col) in lexicographic order.
    """
    mat = np.asarray(mat, dtype=float)
    if not np.any(mat):
        raise ValueError("rank1_peak: all-zero matrix")
    flat_abs = np.abs(mat).ravel()
    if mat.ravel()[int(np.argmax(flat_abs))] < 0:
        mat = -mat
    idx = int(np.argmax(mat))  # first occurrence = lexicographic smallest
    return np.unravel_index(idx, mat.shape)


def cluster_candidates(cands, radius: int = 1) -> list:
    """Single-linkage clusters on the (tx, rx) index grid, Chebyshev metric.

    Returns one AngleEstimate per cluster: power-weighted mean angles,
    power = max member power, members attached.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    cands = list(cands)
    n = len(cands)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in range(n):
        for b in range(a + 1, n):
            di = abs(cands[a].tx_index - cands[b].tx_index)
            dj = abs(cands[a].rx_index - cands[b].rx_index)
            if max(di, dj) <= radius:
                parent[find(a)] = find(b)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(cands[i])
    out = []
    for members in groups.values():
        w = np.array([m.power for m in members])
        aod = float(np.dot(w, [m.aod for m in members]) / w.sum())
        aoa = float(np.dot(w, [m.aoa for m in members]) / w.sum())
        out.append(AngleEstimate(aod, aoa, float(w.max()), tuple(members)))
    out.sort(key=lambda e: -e.power)
    return out


def polyfit_refine(bmap: BrsrpMap, center: tuple, window: int = 2) -> tuple:
    """Refine a coarse (aod, aoa) by the vertex of a local quadratic surface.

    A second-degree surface c1 + c2 f + c3 t + c4 f^2 + c5 f t + c6 t^2 is
    fitted to the map over a (2 window + 1)^2 beam neighborhood by least
    squares weighted with the raw powers. The vertex is returned when the
    fit is a maximum lying inside the window; otherwise, or when the fit is
    singular, the input point is returned unchanged.
    """
    aod0, aoa0 = center
    cb = bmap.codebook
    ci = cb.nearest_beam("tx", aod0)
    cj = cb.nearest_beam("rx", aoa0)
    i_lo, i_hi = max(0, ci - window), min(cb.l_tx, ci + window + 1)
    j_lo, j_hi = max(0, cj - window), min(cb.l_rx, cj + window + 1)
    phis = cb.tx_angles[i_lo:i_hi] - cb.tx_angles[ci]
    thetas = cb.rx_angles[j_lo:j_hi] - cb.rx_angles[cj]
    F, T = np.meshgrid(phis, thetas, indexing="ij")
    P = bmap.values[i_lo:i_hi, j_lo:j_hi]
    f, t, p = F.ravel(), T.ravel(), P.ravel()
    if p.size < 6:
        return center
    A = np.column_stack([np.ones_like(f), f, t, f * f, f * t, t * t])
    w = np.sqrt(np.maximum(p, 0.0))
    try:
        c, *_ = np.linalg.lstsq(A * w[:, None], p * w, rcond=None)
    except np.linalg.LinAlgError:
        return center
    _, c2, c3, c4, c5, c6 = c
    det = 4.0 * c4 * c6 - c5 * c5
    # maximum: negative-definite Hessian [[2 c4, c5], [c5, 2 c6]]
    if det <= 0 or c4 >= 0 or not np.isfinite(det):
        return center
    span_f = max(abs(phis[0]), abs(phis[-1]))
    span_t = max(abs(thetas[0]), abs(thetas[-1]))
    # curvature must explain real variation, not lstsq roundoff
    if abs(c4) * span_f ** 2 + abs(c6) * span_t ** 2 < 1e-9 * p.max():
        return center
    df = (c5 * c3 - 2.0 * c6 * c2) / det
    dt = (c5 * c2 - 2.0 * c4 * c3) / det
    if abs(df) > span_f or abs(dt) > span_t:
        return center
    return (float(cb.tx_angles[ci] + df), float(cb.rx_angles[cj] + dt))


def svd_candidates(bmap: BrsrpMap, power_ratio: float) -> list:
    """Pre-threshold rank-1 peak candidates of a BRSRP map.

    Rank-1 SVD terms are peeled off in order of singular value; the peak of
    each contributes one candidate carrying the original map power at that
    cell. Peeling stops once the retained terms account for ``power_ratio``
    percent of the total squared singular values.
    """
    if not 0 < power_ratio <= 100:
        raise ValueError("power_ratio must be in (0, 100]")
    B = bmap.values
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    p_tot = float(np.sum(s ** 2))
    if p_tot <= 0:
        return []
    out = []
    recovered = 0.0
    for r in range(s.size):
        if s[r] <= 0:
            break
        # rank1_peak normalizes the sign indeterminacy of (u, v) itself
        i, j = rank1_peak(s[r] * np.outer(U[:, r], Vt[r]))
        out.append(AngleCandidate(
            aod=float(bmap.codebook.tx_angles[i]),
            aoa=float(bmap.codebook.rx_angles[j]),
            power=float(B[i, j]),
            tx_index=int(i), rx_index=int(j), rank_index=r + 1,
        ))
        recovered += float(s[r] ** 2)
        if 100.0 * recovered / p_tot >= power_ratio:
            break
    return out


def svd_extract(bmap: BrsrpMap, params: SvdParams) -> list:
    """SVD-based path extraction from a BRSRP map.

    Candidates from svd_candidates below ``power_threshold`` are dropped,
    the survivors are clustered on the beam grid, and each cluster mean is
    polished by a quadratic-surface fit. Estimates are returned sorted by
    falling power.
    """
    cands = svd_candidates(bmap, params.power_ratio)
    kept = [c for c in cands if c.power >= params.power_threshold]
    if not kept:
        return []
    clusters = cluster_candidates(kept, params.cluster_radius)
    refined = [
        AngleEstimate(*polyfit_refine(bmap, (e.aod, e.aoa), params.fit_window),
                      power=e.power, cluster_members=e.cluster_members)
        for e in clusters
    ]
    refined.sort(key=lambda e: -e.power)
    return refined


def _box_sum(cum: np.ndarray, i_lo, i_hi, j_lo, j_hi):
    """Sum of mat[i_lo:i_hi, j_lo:j_hi] from a zero-padded 2D cumsum."""
    return (cum[i_hi, j_hi] - cum[i_lo, j_hi] - cum[i_hi, j_lo] + cum[i_lo, j_lo])


def cfar_detect(bmap: BrsrpMap, train: int = 15, guard: int = 3,
                pfa: float = 0.002, cluster_radius: int = 1) -> list:
    """2D cell-averaging CFAR baseline.

    ``train`` and ``guard`` are odd full window widths; the training cells
    are the window ring between them (clipped at the map edges). The
    threshold factor is N (pfa^(-1/N) - 1) for N training cells. Cells must
    also be strict local maxima of their 3x3 neighborhood, which keeps one
    detection per peak. Detections are clustered like the SVD candidates.
    """
    if train % 2 == 0 or guard % 2 == 0 or guard >= train:
        raise ValueError("train and guard must be odd with guard < train")
    B = bmap.values
    rows, cols = B.shape
    if rows <= train or cols <= train:
        raise ValueError("map smaller than CFAR training window")
    th, gh = train // 2, guard // 2
    cum = np.zeros((rows + 1, cols + 1))
    cum[1:, 1:] = np.cumsum(np.cumsum(B, axis=0), axis=1)
    ones = np.ones_like(B)
    cnt = np.zeros((rows + 1, cols + 1))
    cnt[1:, 1:] = np.cumsum(np.cumsum(ones, axis=0), axis=1)

    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    ti_lo, ti_hi = np.maximum(ii - th, 0), np.minimum(ii + th + 1, rows)
    tj_lo, tj_hi = np.maximum(jj - th, 0), np.minimum(jj + th + 1, cols)
    gi_lo, gi_hi = np.maximum(ii - gh, 0), np.minimum(ii + gh + 1, rows)
    gj_lo, gj_hi = np.maximum(jj - gh, 0), np.minimum(jj + gh + 1, cols)
    train_sum = (_box_sum(cum, ti_lo, ti_hi, tj_lo, tj_hi)
                 - _box_sum(cum, gi_lo, gi_hi, gj_lo, gj_hi))
    n_train = (_box_sum(cnt, ti_lo, ti_hi, tj_lo, tj_hi)
               - _box_sum(cnt, gi_lo, gi_hi, gj_lo, gj_hi))
    noise = train_sum / n_train
    alpha = n_train * (pfa ** (-1.0 / n_train) - 1.0)

    padded = np.full((rows + 2, cols + 2), -np.inf)
    padded[1:-1, 1:-1] = B
    neigh = np.stack([
        padded[di:di + rows, dj:dj + cols]
        for di in range(3) for dj in range(3) if not (di == 1 and dj == 1)
    ])
    local_max = B > neigh.max(axis=0)

    det = local_max & (B > alpha * noise)
    cands = [
        AngleCandidate(float(bmap.codebook.tx_angles[i]),
                       float(bmap.codebook.rx_angles[j]),
                       float(B[i, j]), int(i), int(j), 0)
        for i, j in zip(*np.nonzero(det))
    ]
    if not cands:
        return []
    return cluster_candidates(cands, cluster_radius)
