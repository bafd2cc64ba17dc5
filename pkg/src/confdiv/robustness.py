"""Influence of a single outlier on left and right minimizers.

The drift of a minimizer under contamination (1 - eps) S + eps x* is
measured as (mu* - mu) / eps. Sweeps over eps and the outlier magnitude
produce CSV rows alongside the weak-robustness bound for the right side.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .conformal import ConformalWeight, parse_weight, weight_at
from .errors import EpsilonRange
from .generators import get_generator
from .minimizers import Sample, left_minimizer, right_minimizer
from .uv_structure import CoordinateMapping, GeometricStructure, probe_grid, structure_from_text

DEFAULT_TAU = 0.05
CSV_HEADER = ["spec", "side", "epsilon", "outlier", "delta_norm", "bound"]


@dataclass
class InfluenceReport:
    side: str
    epsilon: float
    outlier: np.ndarray
    mu: np.ndarray
    mu_star: np.ndarray
    delta: np.ndarray
    analytic_delta: Optional[np.ndarray] = None

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.delta))


def _minimize(structure, weight, sample, side):
    if side == "left":
        return left_minimizer(structure, weight, sample)
    return right_minimizer(structure, weight, sample)


def left_influence(structure: GeometricStructure, weight: ConformalWeight, sample: Sample,
                   mu, outlier, epsilon: float) -> np.ndarray:
    """First-order drift of the left minimizer.

    g(x*) / ((1 - eps) G + eps g(x*)) * J_u(mu)^-1 (u(x*) - u(mu)), where
    G = sum_i w_i g(x_i) is the weighted total of the sample weights.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    x = np.atleast_1d(np.asarray(outlier, dtype=float))
    g_sample = np.broadcast_to(weight_at(structure, weight, sample.points), (sample.n,))
    total = float(sample.weights @ g_sample)
    g_out = float(weight_at(structure, weight, x))
    mixed = (1.0 - epsilon) * total + epsilon * g_out
    step = np.linalg.solve(structure.u.jacobian(mu), structure.u(x) - structure.u(mu))
    return g_out / mixed * step


def influence(structure: GeometricStructure, weight: ConformalWeight, sample: Sample, outlier,
              epsilon: float, side: str = "left", tau: float = DEFAULT_TAU) -> InfluenceReport:
    if not 0.0 < epsilon < 1.0 - tau:
        raise EpsilonRange(f"epsilon must lie in (0, {1 - tau:g}), got {epsilon}")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    x = np.atleast_1d(np.asarray(outlier, dtype=float))
    mu = _minimize(structure, weight, sample, side).mu
    mu_star = _minimize(structure, weight, sample.contaminate(x, epsilon), side).mu
    report = InfluenceReport(side, epsilon, x, mu, mu_star, (mu_star - mu) / epsilon)
    if side == "left":
        report.analytic_delta = left_influence(structure, weight, sample, mu, x, epsilon)
    return report


def jacobian_spread(mapping: CoordinateMapping, points) -> float:
    """Ratio of extreme eigenvalues of J^T J over a probe grid on the points' box."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    probes = list(pts)
    if np.all(hi > lo):
        probes.extend(probe_grid(lo, hi, pts.shape[1]))
    eig = np.concatenate([np.linalg.eigvalsh(mapping.jacobian(p).T @ mapping.jacobian(p))
                          for p in probes])
    return float(eig.max() / eig.min())


def lipschitz_ratio(structure: GeometricStructure, outlier, mu) -> float:
    """|phi(v(x*)) - phi(v(mu))| / |v(x*) - v(mu)|."""
    vx = structure.v(np.atleast_1d(np.asarray(outlier, dtype=float)))
    vm = structure.v(np.atleast_1d(np.asarray(mu, dtype=float)))
    gap = np.linalg.norm(vx - vm)
    if gap == 0.0:
        return 0.0
    return float(abs(structure.phi.eval(vx) - structure.phi.eval(vm)) / gap)


def weak_robustness_bound(structure: GeometricStructure, sample: Sample, mu, outlier) -> float:
    """sqrt(lambda_v) * sqrt(2) * (1 + L) * |x* - mu| for the right minimizer."""
    x = np.atleast_1d(np.asarray(outlier, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    hull = np.vstack([sample.points, x[None, :], mu[None, :]])
    spread = jacobian_spread(structure.v, hull)
    lip = lipschitz_ratio(structure, x, mu)
    return math.sqrt(spread) * math.sqrt(2.0) * (1.0 + lip) * float(np.linalg.norm(x - mu))


def magnitude_grid(spec) -> list:
    """Explicit list, or ``{"start", "stop", "ratio"}`` geometric grid (ratio 10 by default)."""
    if isinstance(spec, dict):
        start, stop = float(spec["start"]), float(spec["stop"])
        ratio = float(spec.get("ratio", 10.0))
        out, value = [], start
        while value <= stop * (1 + 1e-12):
            out.append(value)
            value *= ratio
        return out
    return [float(v) for v in spec]


def _sweep_entry(entry: dict, sample: Sample, epsilons, magnitudes, direction, tau):
    gen = get_generator(entry["gen"])
    weight = parse_weight(entry.get("weight", "const:1"))
    structure = structure_from_text(gen, entry.get("structure"), dim=sample.dim)
    side = entry.get("side", "left")
    name = entry.get("name", f"{entry['gen']}|{entry.get('weight', 'const:1')}|{side}")
    rows = []
    for eps in epsilons:
        for mag in magnitudes:
            x = mag * direction
            rep = influence(structure, weight, sample, x, eps, side, tau)
            bound = (weak_robustness_bound(structure, sample, rep.mu, x)
                     if side == "right" else math.nan)
            rows.append({"spec": name, "side": side, "epsilon": eps, "outlier": mag,
                         "delta_norm": rep.delta_norm, "bound": bound})
    return rows


def robustness_sweep(config: dict, workers: Optional[int] = None) -> list:
    """Run every spec of a sweep config over the epsilon and magnitude grids.

    Rows come back ordered by spec, then epsilon, then magnitude, whatever the
    number of worker threads.
    """
    sample = Sample.of(config["points"], config.get("weights"))
    epsilons = [float(e) for e in config.get("epsilons", [0.1])]
    magnitudes = magnitude_grid(config.get("magnitudes", {"start": 1.0, "stop": 1e6}))
    direction = np.asarray(config.get("direction", [1.0] * sample.dim), dtype=float)
    direction = direction / np.linalg.norm(direction)
    tau = float(config.get("tau", DEFAULT_TAU))
    specs = config["specs"]

    def run(entry):
        return _sweep_entry(entry, sample, epsilons, magnitudes, direction, tau)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, specs))
    else:
        chunks = [run(e) for e in specs]
    return [row for chunk in chunks for row in chunk]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row["spec"], row["side"]]
                        + [format(float(row[k]), ".17g") for k in CSV_HEADER[2:]])
    return buf.getvalue()
