"""Bregman, conformal and v-conformal divergences."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, InvalidP, NonpositiveWeight, StructureError
from .generators import Generator
from .uv_structure import GeometricStructure, identity_structure


@dataclass(frozen=True)
class ConformalWeight:
    """A positive weight g(y) = f(u(y)).

    ``kind`` is ``"const"`` (f = K), ``"bot"`` (f(t) = K / sqrt(1 + |t|^2))
    or ``"p"`` (f(t) = K / (1 + |t|_p^p)^(1/p)). With the default structure,
    u is the gradient of the generator. ``over_u`` records that the weight was
    declared on an explicit u mapping, which then has to be supplied.
    """

    kind: str = "const"
    scale: float = 1.0
    p: float = 2.0
    over_u: bool = False

    def __post_init__(self):
        if self.kind not in ("const", "bot", "p"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if not self.scale > 0:
            raise NonpositiveWeight(f"weight scale must be positive, got {self.scale}")
        if self.kind == "p" and not self.p >= 1:
            raise InvalidP(f"p-norm weight needs p >= 1, got {self.p}")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return self.scale * np.ones(t.shape[:-1]) if t.ndim > 1 else self.scale
        if self.kind == "bot":
            out = self.scale / np.sqrt(1.0 + np.sum(t * t, axis=-1))
        else:
            out = self.scale * (1.0 + np.sum(np.abs(t) ** self.p, axis=-1)) ** (-1.0 / self.p)
        return float(out) if np.ndim(out) == 0 else out

    def grad(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.zeros_like(t)
        if self.kind == "bot":
            s = 1.0 + np.sum(t * t, axis=-1, keepdims=True)
            return -self.scale * t / s ** 1.5
        s = 1.0 + np.sum(np.abs(t) ** self.p, axis=-1, keepdims=True)
        return -self.scale * s ** (-1.0 - 1.0 / self.p) * np.sign(t) * np.abs(t) ** (self.p - 1.0)

    def norm_order(self) -> int:
        """Half the even dual norm order 2k paired with this weight."""
        if self.kind in ("const", "bot"):
            return 1
        k = self.p / (2.0 * (self.p - 1.0)) if self.p > 1 else math.inf
        if not math.isfinite(k) or abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise InvalidP(f"p = {self.p} is not of the form 2k/(2k-1)")
        return int(round(k))


def constant_weight(scale: float = 1.0) -> ConformalWeight:
    return ConformalWeight("const", scale)


def total_weight(scale: float = 1.0) -> ConformalWeight:
    return ConformalWeight("bot", scale)


def pnorm_weight(scale: float, p: float) -> ConformalWeight:
    return ConformalWeight("p", scale, p)


def parse_weight(text: str) -> ConformalWeight:
    """Parse ``const:K``, ``gbot:K``, ``gp:K:p`` or ``composed-u:K[:p]``."""
    parts = text.split(":")
    head, args = parts[0], [float(a) for a in parts[1:]]
    scale = args[0] if args else 1.0
    if head == "const":
        return ConformalWeight("const", scale)
    if head == "gbot":
        return ConformalWeight("bot", scale)
    if head == "gp":
        if len(args) != 2:
            raise ValueError("gp weight needs gp:<K>:<p>")
        return ConformalWeight("p", scale, args[1])
    if head == "composed-u":
        if len(args) == 2:
            return ConformalWeight("p", scale, args[1], over_u=True)
        return ConformalWeight("bot", scale, over_u=True)
    raise ValueError(f"unknown weight {text!r}")


@dataclass(frozen=True)
class DivergenceSpec:
    generator: Generator
    weight: ConformalWeight = ConformalWeight()
    structure: Optional[GeometricStructure] = None

    def __post_init__(self):
        if self.weight.over_u and self.structure is None:
            raise StructureError("a weight composed with u needs an explicit structure")

    @property
    def geometry(self) -> GeometricStructure:
        if self.structure is not None:
            return self.structure
        return identity_structure(self.generator)


def weight_at(structure: GeometricStructure, weight: ConformalWeight, y):
    """g(y) = f(u(y))."""
    if weight.kind == "const":
        y = np.asarray(y, dtype=float)
        return weight.value(y)
    return weight.value(structure.u(y))


def weight_derivative(structure: GeometricStructure, weight: ConformalWeight, y, z) -> float:
    """Directional derivative of g at y along z."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    gf = weight.grad(structure.u(y))
    return float(gf @ (structure.u.jacobian(y) @ np.asarray(z, dtype=float)))


def bregman(gen: Generator, x, y):
    """phi(x) - phi(y) - <x - y, grad phi(y)>, broadcasting over leading axes."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = gen.eval(x) - gen.eval(y) - np.sum((x - y) * gen.grad(y), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def conformal_div(spec: DivergenceSpec, x, y):
    """g(y) * D_phi(v(x) : v(y)); with the default structure v is the identity."""
    s = spec.geometry
    g = weight_at(s, spec.weight, y)
    return g * bregman(spec.generator, s.v(x), s.v(y))


def scaled_conformal_div(spec: DivergenceSpec, x, y, w: float):
    """Perspective form w * D(x / w : y / w)."""
    if not w > 0:
        raise NonpositiveWeight(f"scale must be positive, got {w}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return w * conformal_div(spec, x / w, y / w)


def symmetry_defect(spec: DivergenceSpec, x, y) -> float:
    return float(abs(conformal_div(spec, x, y) - conformal_div(spec, y, x)))


def conjugate_bregman(gen: Generator, a, b) -> float:
    """D_{phi*}(a : b) evaluated through the inverse gradient of phi."""
    return bregman(gen.conjugate(), a, b)


class RotatedGenerator(Generator):
    """The graph of a 1-D generator rotated by ``theta`` about the origin.

    Points (t, phi(t)) map to (t cos - phi(t) sin, t sin + phi(t) cos). The
    rotated curve is again the graph of a convex function on the parameter
    range where cos(theta) - phi'(t) sin(theta) > 0.
    """

    dim = 1

    def __init__(self, base: Generator, theta: float):
        if abs(theta) >= math.pi / 2:
            raise ValueError("rotation angle must satisfy |theta| < pi/2")
        self.base, self.theta = base, float(theta)
        self.name = f"rot({base.name},{theta:g})"
        self._c, self._s = math.cos(theta), math.sin(theta)
        t_lo, t_hi = base.lower, base.upper
        if self._s != 0.0:
            limit = self._c / self._s
            if base.grad_lower < limit < base.grad_upper:
                t_star = float(self._scalar_inv_grad(limit))
                if self._s > 0:
                    t_hi = min(t_hi, t_star)
                else:
                    t_lo = max(t_lo, t_star)
        self._t_lo, self._t_hi = t_lo, t_hi
        lo_in = t_lo + 1e-9 * (1 + abs(t_lo)) if math.isfinite(t_lo) else None
        hi_in = t_hi - 1e-9 * (1 + abs(t_hi)) if math.isfinite(t_hi) else None
        self.lower = self._abscissa(lo_in) if lo_in is not None else -math.inf
        self.upper = self._abscissa(hi_in) if hi_in is not None else math.inf
        # the slope blows up where the rotated curve turns vertical
        self.grad_lower = self._slope(lo_in) if lo_in is not None and t_lo == base.lower else -math.inf
        self.grad_upper = self._slope(hi_in) if hi_in is not None and t_hi == base.upper else math.inf

    def _scalar_inv_grad(self, y):
        return float(np.ravel(self.base.inv_grad(np.array([y])))[0])

    def _phi(self, t):
        return float(self.base.eval(np.array([t])))

    def _dphi(self, t):
        return float(np.ravel(self.base.grad(np.array([t])))[0])

    def _abscissa(self, t):
        return t * self._c - self._phi(t) * self._s

    def _slope(self, t):
        d = self._dphi(t)
        return (self._s + d * self._c) / (self._c - d * self._s)

    def _param(self, x: float) -> float:
        """Solve t cos - phi(t) sin = x on the admissible parameter range."""
        lo = self._t_lo if math.isfinite(self._t_lo) else None
        hi = self._t_hi if math.isfinite(self._t_hi) else None
        margin = 1e-12
        a = lo + margin * (1 + abs(lo)) if lo is not None else x - 1.0
        b = hi - margin * (1 + abs(hi)) if hi is not None else x + 1.0
        step = 1.0
        while lo is None and self._abscissa(a) > x:
            step *= 2.0
            a = x - step
        step = 1.0
        while hi is None and self._abscissa(b) < x:
            step *= 2.0
            b = x + step
        return brentq(lambda t: self._abscissa(t) - x, a, b, xtol=1e-15, rtol=1e-15)

    def _map(self, x, fn):
        flat = np.ravel(x)
        return np.array([fn(self._param(v)) for v in flat]).reshape(x.shape)

    def _f(self, x):
        out = self._map(x, lambda t: t * self._s + self._phi(t) * self._c)
        return np.sum(out, axis=-1)

    def _grad(self, x):
        return self._map(x, self._slope)

    def _hess(self, x):
        def curvature(t):
            d2 = float(np.ravel(self.base.hess(np.array([t])))[0])
            return d2 / (self._c - self._dphi(t) * self._s) ** 3

        return self._map(x, curvature)[..., None]

    def _inv_grad(self, y):
        def param(slope):
            return self._scalar_inv_grad(math.tan(math.atan(slope) - self.theta))

        flat = np.ravel(y)
        return np.array([self._abscissa(param(v)) for v in flat]).reshape(y.shape)

    def rotate(self, point) -> np.ndarray:
        """Rotate a point (x, y) of the plane by theta."""
        x, y = point
        return np.array([x * self._c - y * self._s, x * self._s + y * self._c])


def rotated_bregman(gen: Generator, x: float, mu: float, theta: float) -> float:
    """Bregman divergence of the rotated graph between the images of x and mu."""
    rot = RotatedGenerator(gen, theta)
    px = rot.rotate((x, float(gen.eval(np.array([x])))))
    pm = rot.rotate((mu, float(gen.eval(np.array([mu])))))
    if not (rot.in_domain(px[:1]) and rot.in_domain(pm[:1])):
        raise DomainError("rotation leaves the region where the graph is a function")
    return bregman(rot, px[:1], pm[:1])


def tangent_angle(gen: Generator, mu: float) -> float:
    """Rotation angle that makes the tangent of the graph at mu horizontal."""
    return -math.atan(float(np.ravel(gen.grad(np.array([mu])))[0]))
