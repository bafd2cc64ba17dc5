"""Lloyd-style hard clustering with a conformal divergence.

The left side assigns point x to the center c minimising D(c : x) and
re-centers with the closed-form left minimizer; the right side uses
D(x : c) and the right minimizer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import DivergenceSpec, conformal_div
from .errors import EmptyClusterError
from .minimizers import Sample, average_divergence, left_minimizer, right_minimizer


@dataclass
class ClusterModel:
    centers: np.ndarray
    assignment: np.ndarray
    side: str
    objective: float
    iterations: int
    seed: int
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "assignment": [int(a) for a in self.assignment],
            "side": self.side,
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "seed": int(self.seed),
            "history": [float(h) for h in self.history],
        }


def divergence_matrix(spec: DivergenceSpec, points, centers, side: str) -> np.ndarray:
    """Entry (i, j) is D(c_j : x_i) for the left side and D(x_i : c_j) for the right."""
    pts = np.asarray(points, dtype=float)[:, None, :]
    ctr = np.asarray(centers, dtype=float)[None, :, :]
    if side == "left":
        return conformal_div(spec, ctr, pts)
    return conformal_div(spec, pts, ctr)


def _objective(spec, data: Sample, centers, assignment, side) -> float:
    dmat = divergence_matrix(spec, data.points, centers, side)
    return float(data.weights @ dmat[np.arange(data.n), assignment])


def objective(model: ClusterModel, data: Sample, spec: DivergenceSpec) -> float:
    return _objective(spec, data, model.centers, model.assignment, model.side)


def _seed_centers(spec, data: Sample, k: int, side: str, rng) -> np.ndarray:
    chosen = [int(rng.integers(data.n))]
    for _ in range(1, k):
        dmat = divergence_matrix(spec, data.points, data.points[chosen], side)
        score = np.clip(dmat.min(axis=1), 0.0, None) * data.weights
        score[chosen] = 0.0
        if score.sum() > 0:
            chosen.append(int(rng.choice(data.n, p=score / score.sum())))
        else:
            rest = np.setdiff1d(np.arange(data.n), chosen)
            chosen.append(int(rng.choice(rest)))
    return data.points[chosen].copy()


def _assign(spec, data: Sample, centers, side: str) -> np.ndarray:
    dmat = divergence_matrix(spec, data.points, centers, side)
    labels = np.argmin(dmat, axis=1)
    k = len(centers)
    for c in range(k):
        if np.any(labels == c):
            continue
        # refill an empty cluster with the worst-fitting point of a cluster
        # that can spare it
        fit = dmat[np.arange(data.n), labels]
        sizes = np.bincount(labels, minlength=k)
        donors = np.flatnonzero(sizes[labels] > 1)
        if donors.size == 0:
            raise EmptyClusterError(f"cluster {c} is empty and no point can be moved")
        labels[donors[np.argmax(fit[donors])]] = c
    return labels


def _update(spec, data: Sample, labels, k: int, side: str) -> np.ndarray:
    geometry = spec.geometry
    centers = np.empty((k, data.dim))
    for c in range(k):
        part = data.subset(labels == c)
        if side == "left":
            centers[c] = left_minimizer(geometry, spec.weight, part).mu
            continue
        result = right_minimizer(geometry, spec.weight, part)
        options = result.candidates if result.multiplicity_flag else [result.mu]
        costs = [average_divergence(geometry, spec.weight, part, m, "right") for m in options]
        centers[c] = options[int(np.argmin(costs))]
    return centers


def fit(data: Sample, k: int, spec: DivergenceSpec, side: str = "left", seed: int = 0,
        max_iter: int = 100) -> ClusterModel:
    """Cluster ``data`` into ``k`` groups; deterministic for a fixed seed."""
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if not 1 <= k <= data.n:
        raise ValueError(f"k must lie in [1, {data.n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _seed_centers(spec, data, k, side, rng)
    labels = _assign(spec, data, centers, side)
    history = []
    iterations = 0
    while iterations < max_iter:
        centers = _update(spec, data, labels, k, side)
        iterations += 1
        history.append(_objective(spec, data, centers, labels, side))
        new_labels = _assign(spec, data, centers, side)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    value = _objective(spec, data, centers, labels, side)
    return ClusterModel(centers, labels, side, value, iterations, seed, history)
