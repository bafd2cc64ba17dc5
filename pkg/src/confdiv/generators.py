"""Strictly convex generators with closed-form derivatives.

Every generator acts on arrays whose last axis is the coordinate axis, so a
point is a 1-D array of length ``d`` and a batch is an ``(n, d)`` array.
Separable generators apply a scalar function to each coordinate and sum.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NotInvertibleError, RangeError

DOMAIN_MARGIN = 1e-12
_INV_E = math.exp(-1.0)


def lambert_w(x: float, max_iter: int = 200) -> float:
    """Principal branch of the Lambert W function.

    Halley iterations are kept inside a bracket that shrinks with every
    evaluation; a step that would leave the bracket is replaced by bisection.
    """
    x = float(x)
    if math.isnan(x) or x < -_INV_E - 1e-15:
        raise DomainError(f"lambert_w needs x >= -1/e, got {x!r}")
    if x == 0.0:
        return 0.0
    if x <= -_INV_E:
        return -1.0
    if math.isinf(x):
        return math.inf

    if x < 0:
        lo, hi = -1.0, 0.0
    else:
        lo, hi = 0.0, max(1.0, math.log(x))

    if x < -0.25:
        p = math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif x < 3.0:
        w = math.log1p(x)
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1
    w = min(max(w, lo), hi)

    for _ in range(max_iter):
        ew = math.exp(w)
        resid = w * ew - x
        if resid == 0.0:
            return w
        if resid > 0:
            hi = w
        else:
            lo = w
        denom = ew * (w + 1.0) - (w + 2.0) * resid / (2.0 * w + 2.0) if w != -1.0 else 0.0
        step_ok = denom != 0.0 and math.isfinite(denom)
        w_new = w - resid / denom if step_ok else 0.5 * (lo + hi)
        if not (lo < w_new < hi):
            w_new = 0.5 * (lo + hi)
        if abs(w_new - w) <= 2e-16 * max(1.0, abs(w)):
            return w_new
        w = w_new
    return w


def _vec_lambert(values):
    arr = np.asarray(values, dtype=float)
    return np.vectorize(lambert_w, otypes=[float])(arr) if arr.ndim else np.float64(lambert_w(arr))


def _as_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


class Generator:
    """Base class: a strictly convex, twice differentiable potential."""

    name = "generator"
    separable = False
    dim: Optional[int] = None
    lower = -math.inf
    upper = math.inf
    grad_lower = -math.inf
    grad_upper = math.inf

    def _f(self, x):
        raise NotImplementedError

    def _grad(self, x):
        raise NotImplementedError

    def _hess(self, x):
        raise NotImplementedError

    def _inv_grad(self, y):
        raise NotImplementedError

    def in_domain(self, x) -> bool:
        x = _as_points(x)
        if self.dim is not None and x.shape[-1] != self.dim:
            return False
        lo = self.lower + DOMAIN_MARGIN if math.isfinite(self.lower) else -math.inf
        hi = self.upper - DOMAIN_MARGIN if math.isfinite(self.upper) else math.inf
        return bool(np.all(np.isfinite(x)) and np.all(x > lo) and np.all(x < hi))

    def check_domain(self, x) -> np.ndarray:
        x = _as_points(x)
        if not self.in_domain(x):
            raise DomainError(f"{self.name}: point outside domain ({self.lower}, {self.upper})")
        return x

    def in_range(self, y) -> bool:
        y = _as_points(y)
        if self.dim is not None and y.shape[-1] != self.dim:
            return False
        return bool(np.all(np.isfinite(y)) and np.all(y > self.grad_lower) and np.all(y < self.grad_upper))

    def eval(self, x):
        x = self.check_domain(x)
        out = self._f(x)
        return float(out) if np.ndim(out) == 0 else out

    def grad(self, x) -> np.ndarray:
        return self._grad(self.check_domain(x))

    def hess(self, x) -> np.ndarray:
        return self._hess(self.check_domain(x))

    def inv_grad(self, y) -> np.ndarray:
        y = _as_points(y)
        if not self.in_range(y):
            raise RangeError(f"{self.name}: value outside the gradient image "
                             f"({self.grad_lower}, {self.grad_upper})")
        return self._inv_grad(y)

    def conjugate(self) -> "Generator":
        return ConjugateGenerator(self)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class SeparableGenerator(Generator):
    """Sum of a scalar convex function over coordinates.

    ``phi_inverse(m, branch)`` optionally gives a closed-form inverse of the
    scalar function on its increasing (+1) or decreasing (-1) branch and may
    return ``None`` when no closed form exists for that branch.
    """

    separable = True

    def __init__(self, name: str, f: Callable, df: Callable, d2f: Callable, df_inv: Callable,
                 lower=-math.inf, upper=math.inf, grad_lower=-math.inf, grad_upper=math.inf,
                 phi_inverse: Optional[Callable] = None, symmetric: bool = False):
        self.name = name
        self.f, self.df, self.d2f, self.df_inv = f, df, d2f, df_inv
        self.lower, self.upper = lower, upper
        self.grad_lower, self.grad_upper = grad_lower, grad_upper
        self.phi_inverse = phi_inverse
        # symmetric generators (x^2) admit a signed inverse on straddling hulls
        self.symmetric = symmetric

    def _f(self, x):
        return np.sum(self.f(x), axis=-1)

    def _grad(self, x):
        return self.df(x)

    def _hess(self, x):
        diag = self.d2f(x)
        return diag[..., :, None] * np.eye(x.shape[-1])

    def _inv_grad(self, y):
        return self.df_inv(y)

    def conjugate(self) -> "SeparableGenerator":
        f, df_inv, d2f = self.f, self.df_inv, self.d2f
        return SeparableGenerator(
            name=f"conj({self.name})",
            f=lambda t: t * df_inv(t) - f(df_inv(t)),
            df=df_inv,
            d2f=lambda t: 1.0 / d2f(df_inv(t)),
            df_inv=self.df,
            lower=self.grad_lower, upper=self.grad_upper,
            grad_lower=self.lower, grad_upper=self.upper,
        )


class QuadraticGenerator(Generator):
    """phi(x) = x^T Q x / 2 with Q symmetric positive definite."""

    def __init__(self, matrix, name: str = "quadratic"):
        q = np.asarray(matrix, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("quadratic generator needs a square matrix")
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValueError("quadratic generator needs a symmetric matrix")
        if np.linalg.eigvalsh(q).min() <= 0:
            raise ValueError("quadratic generator needs a positive definite matrix")
        self.matrix = q
        self.dim = q.shape[0]
        self.name = name

    def _f(self, x):
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.matrix, x)

    def _grad(self, x):
        return x @ self.matrix.T

    def _hess(self, x):
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()

    def _inv_grad(self, y):
        return np.linalg.solve(self.matrix, y.T).T

    def conjugate(self) -> "QuadraticGenerator":
        return QuadraticGenerator(np.linalg.inv(self.matrix), name=f"conj({self.name})")


class ConjugateGenerator(Generator):
    """Legendre conjugate built from the base generator's inverse gradient."""

    def __init__(self, base: Generator):
        self.base = base
        self.name = f"conj({base.name})"
        self.separable = base.separable
        self.dim = base.dim
        self.lower, self.upper = base.grad_lower, base.grad_upper
        self.grad_lower, self.grad_upper = base.lower, base.upper

    def in_domain(self, x) -> bool:
        return self.base.in_range(x)

    def in_range(self, y) -> bool:
        return self.base.in_domain(y)

    def _f(self, t):
        x = self.base._inv_grad(t)
        return np.sum(t * x, axis=-1) - self.base._f(x)

    def _grad(self, t):
        return self.base._inv_grad(t)

    def _hess(self, t):
        return np.linalg.inv(self.base._hess(self.base._inv_grad(t)))

    def _inv_grad(self, x):
        return self.base._grad(x)

    def conjugate(self) -> Generator:
        return self.base


# --- catalog -------------------------------------------------------------

def _signed_sqrt(scale):
    def inverse(m, branch):
        return branch * np.sqrt(scale * m)
    return inverse


def _xlogx_inverse(m, branch):
    if branch < 0:
        return None
    if m == 0.0:
        return 1.0
    return m / lambert_w(m)


def _xexpx_inverse(m, branch):
    return lambert_w(m) if branch > 0 else None


def _neg_log():
    return SeparableGenerator(
        "neg_log", f=lambda x: -np.log(x), df=lambda x: -1.0 / x, d2f=lambda x: 1.0 / x ** 2,
        df_inv=lambda y: -1.0 / y, lower=0.0, grad_upper=0.0,
        phi_inverse=lambda m, b: math.exp(-m) if b < 0 else None)


def _inverse():
    return SeparableGenerator(
        "inverse", f=lambda x: 1.0 / x, df=lambda x: -1.0 / x ** 2, d2f=lambda x: 2.0 / x ** 3,
        df_inv=lambda y: np.sqrt(-1.0 / y), lower=0.0, grad_upper=0.0,
        phi_inverse=lambda m, b: 1.0 / m if b < 0 else None)


def _square():
    return SeparableGenerator(
        "square", f=lambda x: x * x, df=lambda x: 2.0 * x, d2f=lambda x: np.full_like(x, 2.0),
        df_inv=lambda y: 0.5 * y, phi_inverse=_signed_sqrt(1.0), symmetric=True)


def _half_square():
    return SeparableGenerator(
        "half_square", f=lambda x: 0.5 * x * x, df=lambda x: np.array(x, dtype=float),
        d2f=lambda x: np.ones_like(x), df_inv=lambda y: np.array(y, dtype=float),
        phi_inverse=_signed_sqrt(2.0), symmetric=True)


def _power(p: float):
    if not p > 1.0:
        raise ValueError(f"power generator needs p > 1, got {p}")
    return SeparableGenerator(
        f"power:{p:g}", f=lambda x: x ** p, df=lambda x: p * x ** (p - 1),
        d2f=lambda x: p * (p - 1) * x ** (p - 2), df_inv=lambda y: (y / p) ** (1.0 / (p - 1)),
        lower=0.0, grad_lower=0.0,
        phi_inverse=lambda m, b: m ** (1.0 / p) if b > 0 else None)


def _exp():
    return SeparableGenerator(
        "exp", f=np.exp, df=np.exp, d2f=np.exp, df_inv=np.log, grad_lower=0.0,
        phi_inverse=lambda m, b: math.log(m) if b > 0 else None)


def _xlogx():
    return SeparableGenerator(
        "xlogx", f=lambda x: x * np.log(x), df=lambda x: 1.0 + np.log(x), d2f=lambda x: 1.0 / x,
        df_inv=lambda y: np.exp(y - 1.0), lower=0.0, phi_inverse=_xlogx_inverse)


def _xexpx():
    # x e^x is strictly convex for x > -2, where its derivative spans (-e^-2, inf)
    return SeparableGenerator(
        "xexpx", f=lambda x: x * np.exp(x), df=lambda x: (1.0 + x) * np.exp(x),
        d2f=lambda x: (2.0 + x) * np.exp(x),
        df_inv=lambda y: _vec_lambert(math.e * np.asarray(y)) - 1.0,
        lower=-2.0, grad_lower=-math.exp(-2.0), phi_inverse=_xexpx_inverse)


_CATALOG = {
    "neg_log": _neg_log,
    "inverse": _inverse,
    "square": _square,
    "half_square": _half_square,
    "exp": _exp,
    "xlogx": _xlogx,
    "xexpx": _xexpx,
}


def _load_matrix(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    return np.asarray(json.loads(p.read_text()), dtype=float)


def get_generator(gen_id: str) -> Generator:
    """Build a generator from its identifier, e.g. ``"power:3"``."""
    if gen_id in _CATALOG:
        return _CATALOG[gen_id]()
    head, _, arg = gen_id.partition(":")
    if head == "power" and arg:
        return _power(float(arg))
    if head == "quadratic" and arg:
        return QuadraticGenerator(_load_matrix(arg), name=gen_id)
    raise ValueError(f"unknown generator id {gen_id!r}")


def generator_ids() -> list:
    return sorted(_CATALOG) + ["power:<p>", "quadratic:<matrix-file>"]


def eval_phi(gen: Generator, x):
    return gen.eval(x)


def inv_grad(gen: Generator, y) -> np.ndarray:
    return gen.inv_grad(y)


def _scalar(gen: Generator, fn: str, t: float) -> float:
    return float(np.ravel(getattr(gen, fn)(np.array([t])))[0])


def phi_mean(gen: Generator, points, weights=None, sign: Optional[int] = None) -> np.ndarray:
    """Coordinate-wise quasi-arithmetic mean phi^{-1}(sum_i w_i phi(x_i)).

    The scalar generator must be monotone on each coordinate's hull. For
    symmetric generators such as ``x^2`` a straddling hull is allowed and
    ``sign`` picks the branch (default +).
    """
    if not (gen.separable or gen.dim == 1):
        raise NotInvertibleError(f"{gen.name}: quasi-arithmetic mean needs a 1-D or separable generator")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    gen.check_domain(pts)

    out = np.empty(d)
    for j in range(d):
        col = pts[:, j]
        vals = np.array([_scalar(gen, "eval", c) for c in col])
        m = float(w @ vals)
        lo, hi = col.min(), col.max()
        if lo == hi:
            out[j] = lo
            continue
        d_lo, d_hi = _scalar(gen, "grad", lo), _scalar(gen, "grad", hi)
        if d_lo >= 0:
            branch = 1
        elif d_hi <= 0:
            branch = -1
        elif getattr(gen, "symmetric", False):
            branch = 1 if sign is None else int(np.sign(sign))
        else:
            raise NotInvertibleError(f"{gen.name} is not monotone on [{lo}, {hi}]")

        closed = getattr(gen, "phi_inverse", None)
        value = closed(m, branch) if closed is not None else None
        if value is None:
            value = brentq(lambda t: _scalar(gen, "eval", t) - m, lo, hi, xtol=1e-15, rtol=1e-15)
        out[j] = float(value)
    return out
