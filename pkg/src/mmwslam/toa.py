"""Two-stage time-of-arrival estimation.

Coarse stage: sample-level delay plus reference-sequence identification by
cross-correlating the received time series against candidate reference
waveforms. Fine stage: per-path sub-sample delay from the frequency-domain
grid of the beam pair nearest the path's angle estimate, by dense search
over the phase-ramp correlator followed by local refinement. The sum of the
two is the biased ToA; multiplying by c gives the range measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angles import AngleEstimate
from .simulate import BeamCodebook, WaveformConfig


@dataclass(frozen=True)
class CoarseToa:
    sequence_id: int
    sample_offset: int
    sample_rate: float

    @property
    def delay(self) -> float:
        return self.sample_offset / self.sample_rate


@dataclass(frozen=True)
class FineToa:
    path_index: int
    delay: float
    beam_pair: tuple

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("fine delay must be >= 0")


def make_reference(sequence_id: int, n_samples: int) -> np.ndarray:
    """Unit-modulus pseudo-random reference waveform for a sequence id."""
    rng = np.random.default_rng(977_003 + 17 * sequence_id)
    return np.exp(2j * np.pi * rng.random(n_samples))


def coarse_toa(rx: np.ndarray, refs, sample_rate: float) -> CoarseToa:
    """Joint argmax over (sequence, sample offset) of the cross-correlation
    magnitude between the received series and each reference."""
    rx = np.asarray(rx)
    if rx.size == 0 or not refs:
        raise ValueError("coarse_toa: empty input")
    best = (-1.0, 0, 0)
    for nu, ref in enumerate(refs):
        ref = np.asarray(ref)
        if rx.size < ref.size:
            raise ValueError("received series shorter than reference")
        # np.correlate conjugates the second argument; lag k gives
        # sum_q rx[q + k] ref[q]*
        corr = np.abs(np.correlate(rx, ref, mode="valid")) ** 2
        k = int(np.argmax(corr))
        if corr[k] > best[0]:
            best = (float(corr[k]), nu, k)
    _, nu, k = best
    return CoarseToa(sequence_id=nu, sample_offset=k, sample_rate=sample_rate)


def _fine_delay(grid: np.ndarray, wf: WaveformConfig, oversample: int = 8) -> float:
    """Dense-grid delay search over [0, 1/scs) with two-stage refinement."""
    grid = np.asarray(grid)
    if not np.any(grid):
        raise ValueError("fine ToA: all-zero grid")
    c_k = np.sum(np.conj(wf.rs_symbols) * grid, axis=1)
    n = oversample * wf.subcarriers
    # objective(tau_p) = |sum_k c_k exp(+i 2 pi k p / n)| on the coarse grid
    mags = np.abs(np.fft.ifft(c_k, n=n)) * n
    p0 = int(np.argmax(mags))
    step = 1.0 / (n * wf.scs)

    def objective(tau):
        return np.abs(np.exp(2j * np.pi * np.outer(tau, np.arange(wf.subcarriers))
                             * wf.scs) @ c_k)

    # local zoom one coarse step around the peak, then a parabolic polish
    local = p0 * step + np.linspace(-step, step, 129)
    vals = objective(local)
    q = int(np.argmax(vals))
    if 0 < q < local.size - 1:
        y0, y1, y2 = vals[q - 1], vals[q], vals[q + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
        tau = local[q] + shift * (local[1] - local[0])
    else:
        tau = local[q]
    period = 1.0 / wf.scs
    tau = float(tau % period)
    # a vanishing negative estimate must not alias to a full period
    if period - tau < (local[1] - local[0]):
        tau = 0.0
    return tau


def fine_toa(grid: np.ndarray, wf: WaveformConfig, estimate: AngleEstimate,
             codebook: BeamCodebook, path_index: int = 0) -> FineToa:
    """Per-path fine delay from the grid of the beam pair nearest the
    estimated angles."""
    i = codebook.nearest_beam("tx", estimate.aod)
    j = codebook.nearest_beam("rx", estimate.aoa)
    return FineToa(path_index=path_index, delay=_fine_delay(grid, wf),
                   beam_pair=(i, j))


def combine_toa(coarse: CoarseToa, fine: FineToa) -> float:
    """Complete biased ToA in seconds for one path of the snapshot."""
    return coarse.delay + fine.delay
