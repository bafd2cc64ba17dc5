"""Left and right population minimizers of conformal divergences.

Left minimizers have a closed form: a g-weighted mean taken in u
coordinates. Right minimizers are characterised geometrically through the
augmented centroid ``[mean v(x); mean phi(v(x))]`` and are found either by
bisection on a bracket (1-D, total weight) or by a multi-start search over
an even-order distance to the graph of phi (general case).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import minimize, root

from .conformal import ConformalWeight, bregman, weight_at, weight_derivative
from .errors import (
    InvalidP,
    NonpositiveWeight,
    NoConvergence,
    NotInvertibleError,
    PreconditionError,
    RangeError,
    SignChangeError,
)
from .generators import DOMAIN_MARGIN, Generator, phi_mean
from .uv_structure import GeometricStructure, identity_structure

ORTH_TOL = 1e-8
ROOT_TOL = 1e-10
MAX_BISECT = 200
DEDUP_TOL = 1e-4


@dataclass(frozen=True)
class Sample:
    """Weighted points; ``points`` has shape (n, d), weights sum to one."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def of(cls, points, weights=None) -> "Sample":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("sample needs a non-empty (n, d) array of points")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (n,):
                raise ValueError("one weight per point is required")
            if np.any(~(w > 0)):
                raise NonpositiveWeight("sample weights must be positive")
            if abs(w.sum() - 1.0) > 1e-12:
                w = w / w.sum()
        return cls(pts, w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def is_degenerate(self) -> bool:
        return bool(np.all(self.points == self.points[0]))

    def subset(self, index) -> "Sample":
        return Sample.of(self.points[index], self.weights[index] / self.weights[index].sum())

    def contaminate(self, outlier, epsilon: float) -> "Sample":
        """Mixture (1 - eps) * sample + eps * point mass at the outlier."""
        x = np.atleast_1d(np.asarray(outlier, dtype=float)).reshape(1, -1)
        pts = np.vstack([self.points, x])
        w = np.append((1.0 - epsilon) * self.weights, epsilon)
        return Sample(pts, w)


@dataclass
class MinimizerResult:
    mu: np.ndarray
    side: str
    orth_residual: float
    avg_divergence: float
    iterations: int = 0
    bracket: Optional[tuple] = None
    rho: Optional[float] = None
    multiplicity_flag: bool = False
    candidates: List[np.ndarray] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mu": [float(v) for v in self.mu],
            "side": self.side,
            "bracket": None if self.bracket is None else [float(b) for b in self.bracket],
            "orth_residual": float(self.orth_residual),
            "avg_divergence": float(self.avg_divergence),
            "rho": None if self.rho is None else float(self.rho),
            "multiplicity": bool(self.multiplicity_flag),
            "candidates": [[float(v) for v in c] for c in self.candidates],
            "iterations": int(self.iterations),
        }


def augmented_mean(structure: GeometricStructure, sample: Sample):
    """Return (mean of v(x), mean of phi(v(x)))."""
    vx = structure.v(sample.points)
    return sample.weights @ vx, float(sample.weights @ structure.phi.eval(vx))


def average_divergence(structure: GeometricStructure, weight: ConformalWeight,
                       sample: Sample, mu, side: str) -> float:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    vx = structure.v(sample.points)
    vm = structure.v(mu)
    if side == "left":
        g = weight_at(structure, weight, sample.points)
        return float(sample.weights @ (g * bregman(structure.phi, vm[None, :], vx)))
    g = weight_at(structure, weight, mu)
    return float(g * (sample.weights @ bregman(structure.phi, vx, vm[None, :])))


# --- left side ------------------------------------------------------------

def left_minimizer(structure: GeometricStructure, weight: ConformalWeight,
                   sample: Sample) -> MinimizerResult:
    """Closed form mu = u^-1(sum w g(x) u(x) / sum w g(x))."""
    u_pts = structure.u(sample.points)
    coef = sample.weights * np.broadcast_to(weight_at(structure, weight, sample.points),
                                            (sample.n,))
    target = coef @ u_pts / coef.sum()
    if not structure.u.in_image(target):
        raise RangeError("weighted u-mean falls outside the image of u")
    mu = structure.u.inverse(target)

    um = structure.u(mu)
    diff = coef @ (um[None, :] - u_pts)
    scale = coef @ (np.linalg.norm(um) + np.linalg.norm(u_pts, axis=1)) + 1e-300
    resid = float(np.linalg.norm(diff) / scale)
    if resid > ORTH_TOL:
        raise NoConvergence(f"left stationarity residual {resid:.3e} too large")
    return MinimizerResult(
        mu=mu, side="left", orth_residual=resid,
        avg_divergence=average_divergence(structure, weight, sample, mu, "left"),
        candidates=[mu])


def scaled_left_minimizer(gen: Generator, weight: ConformalWeight, sample: Sample, scales,
                          structure: Optional[GeometricStructure] = None,
                          tol: float = ROOT_TOL) -> MinimizerResult:
    """Left minimizer of sum_i w_i D(mu / w_i : x_i / w_i) for per-point scales w_i.

    Solved coordinate by coordinate by bisection on the hull of the sample,
    which needs u and v to act coordinate-wise.
    """
    scales = np.asarray(scales, dtype=float).reshape(-1)
    if scales.shape != (sample.n,):
        raise ValueError("one scale per point is required")
    if np.any(~(scales > 0)):
        raise NonpositiveWeight("scales must be positive")
    s = structure if structure is not None else identity_structure(gen, sample.dim)
    scaled_pts = sample.points / scales[:, None]
    coef = sample.weights * np.broadcast_to(weight_at(s, weight, scaled_pts), (sample.n,))
    u_pts = s.u(scaled_pts)

    mu = sample.mean().copy()
    iterations = 0
    worst = 0.0
    for j in range(sample.dim):
        def terms(m, j=j):
            pts = np.tile(mu, (sample.n, 1))
            pts[:, j] = m
            z = pts / scales[:, None]
            dv = np.array([s.v.jacobian(p)[j, j] for p in z])
            return coef * dv * (s.u(z)[:, j] - u_pts[:, j])

        lo, hi = sample.points[:, j].min(), sample.points[:, j].max()
        if lo == hi:
            mu[j] = lo
            continue
        if terms(lo).sum() * terms(hi).sum() > 0:
            raise NoConvergence("scaled stationarity has no sign change on the hull")
        mu[j], its, _ = _bisect(lambda m: terms(m).sum(), lo, hi)
        iterations += its
        t = terms(mu[j])
        worst = max(worst, abs(t.sum()) / (np.abs(t).sum() + 1e-300))

    if worst > tol:
        raise NoConvergence(f"scaled stationarity residual {worst:.3e} above {tol:g}")
    avg = float(sum(wi * scales[i] * weight_at(s, weight, scaled_pts[i])
                    * bregman(s.phi, s.v(mu / scales[i]), s.v(scaled_pts[i]))
                    for i, wi in enumerate(sample.weights)))
    return MinimizerResult(mu=mu, side="left", orth_residual=worst, avg_divergence=avg,
                           iterations=iterations, candidates=[mu])


# --- orthogonality --------------------------------------------------------

def orthogonality_residual(structure: GeometricStructure, weight: ConformalWeight,
                           sample: Sample, mu) -> float:
    """Largest normalised inner product between delta+ and the test vectors z+.

    delta+ = [mean v(x) - v(mu); mean phi(v(x)) - phi(v(mu))] and
    z+ = [f(u) z + (grad f(u) . z) u; -grad f(u) . z] with u = u(mu), for z
    running over the coordinate axes and u itself. Zero means mu satisfies the
    first-order condition of the right-sided problem.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    a, b = augmented_mean(structure, sample)
    eta = structure.v(mu)
    delta = np.append(a - eta, b - structure.phi.eval(eta))
    dnorm = np.linalg.norm(delta)
    if dnorm == 0.0:
        return 0.0
    u = structure.u(mu)
    f = float(weight.value(u))
    gf = weight.grad(u)
    dirs = list(np.eye(len(u)))
    if np.linalg.norm(u) > 0:
        dirs.append(u / np.linalg.norm(u))
    worst = 0.0
    for z in dirs:
        slope = float(gf @ z)
        zplus = np.append(f * z + slope * u, -slope)
        worst = max(worst, abs(delta @ zplus) / (dnorm * np.linalg.norm(zplus)))
    return float(worst)


def rho_factor(structure: GeometricStructure, weight: ConformalWeight, sample: Sample, mu):
    """g(mu)^2 / D_{xbar - mu} g(mu), or None when mu sits on the mean."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    step = sample.mean() - mu
    if np.linalg.norm(step) <= 1e-12 * (1 + np.linalg.norm(mu)):
        return None
    slope = weight_derivative(structure, weight, mu, step)
    if slope == 0.0:
        return None
    return float(weight_at(structure, weight, mu)) ** 2 / slope


# --- right side: one dimension ---------------------------------------------

def _bisect(fn, lo, hi, max_iter=MAX_BISECT):
    """Bisection returning (root, iterations, exact).

    ``exact`` is True when the bracket shrank to adjacent floats or hit a zero.
    """
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo == 0.0:
        return lo, 0, True
    if f_hi == 0.0:
        return hi, 0, True
    if f_lo * f_hi > 0:
        return (lo if abs(f_lo) < abs(f_hi) else hi), 0, False
    mid = 0.5 * (lo + hi)
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if f_mid == 0.0 or mid in (lo, hi):
            return mid, it, True
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return mid, max_iter, False


def _degenerate_result(structure, weight, sample, side):
    mu = sample.points[0].copy()
    return MinimizerResult(mu=mu, side=side, orth_residual=0.0, avg_divergence=0.0,
                           candidates=[mu], diagnostics={"degenerate": True})


def right_minimizer_1d(gen: Generator, weight: ConformalWeight, sample: Sample,
                       tol: float = ROOT_TOL, max_iter: int = MAX_BISECT) -> MinimizerResult:
    """Right minimizer of a 1-D total (or constant-weight) divergence.

    For the total weight the minimizer solves
    (xbar - mu) + (phibar - phi(mu)) phi'(mu) = 0, which changes sign between
    the arithmetic mean and the quasi-arithmetic phi-mean; bisection on that
    bracket is used. A constant weight gives the arithmetic mean.
    """
    if sample.dim != 1:
        raise ValueError("the bracketed path is one-dimensional")
    structure = identity_structure(gen, 1)
    x = sample.points[:, 0]
    gen.check_domain(sample.points)
    if sample.is_degenerate():
        return _degenerate_result(structure, weight, sample, "right")
    xbar = float(sample.weights @ x)
    if weight.kind == "const":
        mu = np.array([xbar])
        return MinimizerResult(
            mu=mu, side="right",
            orth_residual=orthogonality_residual(structure, weight, sample, mu),
            avg_divergence=average_divergence(structure, weight, sample, mu, "right"),
            bracket=(xbar, xbar), candidates=[mu])
    if weight.kind != "bot":
        raise ValueError("the bracketed path needs the total (g_bot) weight")

    def dphi(t):
        return float(gen.grad(np.array([t]))[0])

    def phi(t):
        return float(gen.eval(np.array([t])))

    d_lo, d_hi = dphi(x.min()), dphi(x.max())
    if not (d_lo > 0 and d_hi > 0) and not (d_lo < 0 and d_hi < 0):
        raise SignChangeError(f"phi' changes sign on [{x.min()}, {x.max()}]")
    phibar = float(sample.weights @ np.array([phi(t) for t in x]))
    xphi = float(phi_mean(gen, sample.points, sample.weights)[0])
    bracket = (xphi, xbar) if d_lo < 0 else (xbar, xphi)

    def resid(m):
        # phi(xphi) == phibar by definition; computing it would only add
        # cancellation noise that can flip the end-point sign
        if m == xphi:
            return xbar - m
        return (xbar - m) + (phibar - phi(m)) * dphi(m)

    mu_val, its, exact = _bisect(resid, *bracket, max_iter=max_iter)
    gap = xbar - mu_val
    root_resid = abs(resid(mu_val) / gap) if gap != 0 else 0.0
    mu = np.array([mu_val])
    result = MinimizerResult(
        mu=mu, side="right",
        orth_residual=orthogonality_residual(structure, weight, sample, mu),
        avg_divergence=average_divergence(structure, weight, sample, mu, "right"),
        iterations=its, bracket=bracket,
        rho=rho_factor(structure, weight, sample, mu),
        candidates=[mu], diagnostics={"root_residual": root_resid})

    grid = np.linspace(*bracket, 257)
    signs = np.sign([resid(t) for t in grid])
    signs = signs[signs != 0]
    result.multiplicity_flag = bool(np.count_nonzero(np.diff(signs)) > 1)
    # a collapsed bracket is the best float answer even when cancellation in
    # phibar - phi(mu) keeps the relative residual above tol
    if root_resid > tol and not exact:
        raise NoConvergence(f"root residual {root_resid:.3e} above {tol:g}", best=result)
    return result


# --- right side: general ----------------------------------------------------

def _box(structure: GeometricStructure, dim: int):
    """Bounds in v-coordinates: domain of phi intersected with the image of v."""
    lo = max(structure.phi.lower, structure.v.image_lower)
    hi = min(structure.phi.upper, structure.v.image_upper)
    pad = 1e3 * DOMAIN_MARGIN
    lo = lo + pad * (1 + abs(lo)) if np.isfinite(lo) else None
    hi = hi - pad * (1 + abs(hi)) if np.isfinite(hi) else None
    return [(lo, hi)] * dim


def _clip(eta, bounds):
    out = eta.copy()
    for j, (lo, hi) in enumerate(bounds):
        if lo is not None:
            out[j] = max(out[j], lo)
        if hi is not None:
            out[j] = min(out[j], hi)
    return out


def right_minimizer_nd(structure: GeometricStructure, weight: ConformalWeight, sample: Sample,
                       k: Optional[int] = None, tol: float = ORTH_TOL) -> MinimizerResult:
    """Right minimizer through the q-norm distance from the augmented centroid.

    With q = 2k and the weight of order p = 2k / (2k - 1), right minimizers
    are the points of the graph of phi (in v-coordinates) closest in q-norm to
    [mean v(x); mean phi(v(x))]. The distance is minimised from several seeds
    (the centroid, the coordinate-wise phi-mean and every sample point), each
    local solution is polished on the first-order condition and kept only if
    its orthogonality residual is below ``tol``.
    """
    order = weight.norm_order()
    if k is not None and weight.kind != "const" and k != order:
        raise InvalidP(f"weight pairs with k = {order}, not k = {k}")
    q = 2 * order
    if sample.is_degenerate():
        return _degenerate_result(structure, weight, sample, "right")
    a, b = augmented_mean(structure, sample)
    phi = structure.phi

    if weight.kind == "const":
        mu = structure.v.inverse(a)
        return MinimizerResult(
            mu=mu, side="right",
            orth_residual=orthogonality_residual(structure, weight, sample, mu),
            avg_divergence=average_divergence(structure, weight, sample, mu, "right"),
            candidates=[mu])

    d = sample.dim
    bounds = _box(structure, d)

    def distance(eta):
        if not phi.in_domain(eta):
            return np.inf, np.zeros(d)
        dx = a - eta
        with np.errstate(over="ignore", invalid="ignore"):
            dp = np.float64(b - phi.eval(eta))
            total = np.sum(dx ** q) + dp ** q
            if not np.isfinite(total):
                return np.inf, np.zeros(d)
            norm = total ** (1.0 / q)
            if norm == 0.0:
                return 0.0, np.zeros(d)
            grad = -(dx ** (q - 1) + dp ** (q - 1) * phi.grad(eta)) * norm ** (1 - q)
        return float(norm), grad

    def first_order(eta):
        if not phi.in_domain(eta):
            return np.full(d, 1e6)
        u = phi.grad(eta)
        f = float(weight.value(u))
        dx = a - eta
        dp = b - phi.eval(eta)
        return dx + (dx @ u - dp) * weight.grad(u) / f

    seeds = [a]
    try:
        seeds.append(phi_mean(phi, structure.v(sample.points), sample.weights))
    except (NotInvertibleError, ValueError):
        pass
    seeds.extend(structure.v(sample.points))

    # the projection is no farther from the centroid than the nearest seed,
    # and every coordinate gap is bounded by the q-norm
    starts = [_clip(np.asarray(s, dtype=float), bounds) for s in seeds]
    reach = min((distance(s)[0] for s in starts if phi.in_domain(s)), default=np.inf)
    if np.isfinite(reach):
        bounds = [(max(lo, a[j] - reach) if lo is not None else a[j] - reach,
                   min(hi, a[j] + reach) if hi is not None else a[j] + reach)
                  for j, (lo, hi) in enumerate(bounds)]

    found = []
    iterations = 0
    for seed in starts:
        start = _clip(seed, bounds)
        if not phi.in_domain(start):
            continue
        opt = minimize(distance, start, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-15, "gtol": 1e-13, "maxiter": 500})
        iterations += int(opt.nit)
        eta = opt.x
        polished = root(first_order, eta, method="hybr", options={"xtol": 1e-14})
        if polished.success and phi.in_domain(polished.x) and structure.v.in_image(polished.x):
            if distance(polished.x)[0] <= distance(eta)[0] * (1 + 1e-9) + 1e-300:
                eta = polished.x
        if not structure.v.in_image(eta):
            continue
        mu = structure.v.inverse(eta)
        res = orthogonality_residual(structure, weight, sample, mu)
        found.append((distance(eta)[0], mu, res))

    if not found:
        raise NoConvergence("no seed produced an admissible point")
    certified = [c for c in found if c[2] < tol]
    if not certified:
        best = min(found, key=lambda c: c[0])
        partial = MinimizerResult(mu=best[1], side="right", orth_residual=best[2],
                                  avg_divergence=average_divergence(structure, weight, sample,
                                                                    best[1], "right"),
                                  iterations=iterations)
        raise NoConvergence(f"orthogonality residual {best[2]:.3e} above {tol:g}", best=partial)

    certified.sort(key=lambda c: c[0])
    distinct = []
    for c in certified:
        if all(np.linalg.norm(c[1] - other[1]) > DEDUP_TOL for other in distinct):
            distinct.append(c)
    best_val = distinct[0][0]
    ties = [c for c in distinct if c[0] <= best_val * (1 + 1e-9) + 1e-15]
    ties.sort(key=lambda c: tuple(c[1]))
    value, mu, res = ties[0]
    rho = rho_factor(structure, weight, sample, mu) if structure.plain else None
    return MinimizerResult(
        mu=mu, side="right", orth_residual=res,
        avg_divergence=average_divergence(structure, weight, sample, mu, "right"),
        iterations=iterations, rho=rho, multiplicity_flag=len(ties) > 1,
        candidates=[c[1] for c in distinct],
        diagnostics={"q": q, "distance": float(value)})


def right_minimizer(structure: GeometricStructure, weight: ConformalWeight, sample: Sample,
                    k: Optional[int] = None, root_tol: float = ROOT_TOL,
                    orth_tol: float = ORTH_TOL) -> MinimizerResult:
    """Dispatch to the bracketed 1-D path when it applies, else the general one."""
    if structure.plain and sample.dim == 1 and weight.kind in ("bot", "const") and k in (None, 1):
        try:
            return right_minimizer_1d(structure.phi, weight, sample, tol=root_tol)
        except SignChangeError:
            pass
    return right_minimizer_nd(structure, weight, sample, k, tol=orth_tol)


def augmented_distance(structure: GeometricStructure, sample: Sample, mu, q: int) -> float:
    """q-norm distance between the augmented centroid and (v(mu), phi(v(mu)))."""
    a, b = augmented_mean(structure, sample)
    eta = structure.v(np.atleast_1d(np.asarray(mu, dtype=float)))
    gap = np.append(a - eta, b - structure.phi.eval(eta))
    return float(np.sum(np.abs(gap) ** q) ** (1.0 / q))


def mahalanobis_check(gen: Generator, weight: ConformalWeight, sample: Sample, mu,
                      tol: float = ORTH_TOL):
    """Compare the average right divergence with rho (xbar-mu)^T H (xbar-mu).

    Returns (lhs, rhs, rho). Only valid at a right minimizer away from the mean.
    """
    structure = identity_structure(gen, sample.dim)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    res = orthogonality_residual(structure, weight, sample, mu)
    if res >= tol:
        raise PreconditionError(f"mu is not a right minimizer (residual {res:.3e})")
    step = sample.mean() - mu
    if np.linalg.norm(step) <= 1e-6:
        raise PreconditionError("mu coincides with the arithmetic mean")
    rho = rho_factor(structure, weight, sample, mu)
    if rho is None:
        raise PreconditionError("weight is flat along xbar - mu")
    lhs = average_divergence(structure, weight, sample, mu, "right")
    rhs = rho * float(step @ gen.hess(mu) @ step)
    return lhs, rhs, rho

