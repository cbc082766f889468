"""On-disk formats: JSON for configs and solutions, CSV for tabular series,
and a little-endian binary sidecar for lossless power-map round-trips."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .geometry import JointState, Measurement
from .pipeline import PathEstimate
from .simulate import BeamCodebook, BrsrpMap, Scene
from .slam import Hypothesis, SlamSolution

MAP_MAGIC = b"BMAP"


def write_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2, sort_keys=True))


def read_scene(path) -> Scene:
    return Scene.from_dict(json.loads(Path(path).read_text()))


def write_map_csv(bmap: BrsrpMap, path) -> None:
    np.savetxt(path, bmap.values, delimiter=",", fmt="%.17g")


def write_map_binary(bmap: BrsrpMap, path) -> None:
    """Header: magic, uint32 rows/cols, float64 noise floor; then the
    row-major float64 values. Everything little-endian."""
    v = bmap.values
    with open(path, "wb") as fh:
        fh.write(MAP_MAGIC)
        fh.write(struct.pack("<IId", v.shape[0], v.shape[1], bmap.noise_floor))
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_map_binary(path, codebook: BeamCodebook) -> BrsrpMap:
    raw = Path(path).read_bytes()
    if raw[:4] != MAP_MAGIC:
        raise ValueError(f"{path}: not a map file")
    rows, cols, floor = struct.unpack("<IId", raw[4:20])
    values = np.frombuffer(raw[20:], dtype="<f8").reshape(rows, cols).copy()
    return BrsrpMap(values, codebook, floor)


def write_measurements(measurements, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "range_m", "aod_rad", "aoa_rad", "power_linear"])
        for n, z in enumerate(measurements):
            w.writerow([n, repr(z.range_m), repr(z.aod), repr(z.aoa),
                        repr(z.power if z.power is not None else float("nan"))])


def read_measurements(path, covariance: np.ndarray) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            power = float(row["power_linear"])
            out.append(Measurement(float(row["range_m"]), float(row["aod_rad"]),
                                   float(row["aoa_rad"]), covariance,
                                   power=None if np.isnan(power) else power))
    return out


def write_estimates(estimates, position_id: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position_id", "n", "aod_rad", "aoa_rad", "power_linear",
                    "toa_biased_s", "tx_index", "rx_index"])
        for n, e in enumerate(estimates):
            w.writerow([position_id, n, repr(e.aod), repr(e.aoa), repr(e.power),
                        repr(e.toa_s), e.tx_index, e.rx_index])


def read_estimates(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(PathEstimate(float(row["toa_biased_s"]),
                                    float(row["aod_rad"]), float(row["aoa_rad"]),
                                    float(row["power_linear"]),
                                    int(row["tx_index"]), int(row["rx_index"])))
    return out


def write_truth_paths(paths, position_id: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position_id", "n", "kind", "delay_s", "range_m",
                    "aod_rad", "aoa_rad", "gain_re", "gain_im", "doppler_hz"])
        for n, p in enumerate(paths):
            w.writerow([position_id, n, str(p.kind), repr(p.delay),
                        repr(p.range_m), repr(p.aod), repr(p.aoa),
                        repr(p.gain.real), repr(p.gain.imag), repr(p.doppler)])


def solution_to_dict(sol: SlamSolution) -> dict:
    return {
        "state": sol.estimate.to_vector().tolist(),
        "n_landmarks": len(sol.estimate.landmarks),
        "covariance_row_major": sol.covariance.ravel().tolist(),
        "cost": sol.cost,
        "hypothesis": {
            "los_measurement": sol.hypothesis.los_measurement,
            "uses_prior": sol.hypothesis.uses_prior,
        },
        "iterations": sol.iterations,
    }


def solution_from_dict(d: dict) -> SlamSolution:
    state = JointState.from_vector(np.array(d["state"]))
    dim = state.dim
    cov = np.array(d["covariance_row_major"]).reshape(dim, dim)
    hyp = Hypothesis(d["hypothesis"]["los_measurement"],
                     d["hypothesis"]["uses_prior"])
    return SlamSolution(state, cov, d["cost"], hyp, d["iterations"])


def write_solution(sol: SlamSolution | None, path, failure: str | None = None) -> None:
    if sol is None:
        payload = {"failed": True, "reason": failure or "unknown"}
    else:
        payload = solution_to_dict(sol)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def read_solution(path):
    d = json.loads(Path(path).read_text())
    if d.get("failed"):
        return None
    return solution_from_dict(d)


def write_report(report, path_json, path_csv) -> None:
    d = report.to_dict()
    Path(path_json).write_text(json.dumps(d, indent=2, sort_keys=True))
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "heading", "bias", "time"])
        w.writerow([repr(d["position_rmse_m"]), repr(d["heading_rmse_deg"]),
                    repr(d["bias_rmse_m"]), repr(d["runtime_s"])])
        w.writerow([repr(d["position_std_m"]), repr(d["heading_std_deg"]),
                    repr(d["bias_std_m"]), ""])


def write_manifest(path, **fields) -> None:
    Path(path).write_text(json.dumps(fields, indent=2, sort_keys=True, default=str))
