"""Pairs of coordinate maps (u, v) tied together by a convex generator.

A structure ``(u, v)_phi`` satisfies ``u = grad(phi) o v`` on a common
source domain. Validation is done numerically on a fixed quasi-random probe
grid, so a structure that passes is only certified on the probed box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import (
    DomainError,
    IncompatibleStructures,
    MappingMismatch,
    RangeError,
    StructureMismatch,
)
from .generators import (
    DOMAIN_MARGIN,
    Generator,
    SeparableGenerator,
    get_generator,
)

PROBE_COUNT = 64
RELATION_TOL = 1e-8
SYMMETRY_TOL = 1e-8
EIGEN_FLOOR = 1e-10


class CoordinateMapping:
    """An invertible, differentiable map between coordinate systems."""

    def __init__(self, name: str, forward: Callable, inverse: Callable, jacobian: Callable,
                 lower=-math.inf, upper=math.inf, image_lower=-math.inf, image_upper=math.inf,
                 dim: Optional[int] = None):
        self.name = name
        self._forward = forward
        self._inverse = inverse
        self._jacobian = jacobian
        self.lower, self.upper = lower, upper
        self.image_lower, self.image_upper = image_lower, image_upper
        self.dim = dim

    def in_domain(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = self.lower + DOMAIN_MARGIN if math.isfinite(self.lower) else -math.inf
        hi = self.upper - DOMAIN_MARGIN if math.isfinite(self.upper) else math.inf
        return bool(np.all(np.isfinite(x)) and np.all(x > lo) and np.all(x < hi))

    def in_image(self, y) -> bool:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return bool(np.all(np.isfinite(y)) and np.all(y > self.image_lower)
                    and np.all(y < self.image_upper))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.in_domain(x):
            raise DomainError(f"mapping {self.name}: point outside ({self.lower}, {self.upper})")
        return self._forward(x)

    def inverse(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if not self.in_image(y):
            raise RangeError(f"mapping {self.name}: value outside its image")
        return self._inverse(y)

    def jacobian(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self._jacobian(x)

    def __repr__(self):
        return f"<CoordinateMapping {self.name}>"


def _elementwise(name, f, finv, df, lower=-math.inf, upper=math.inf,
                 image_lower=-math.inf, image_upper=math.inf) -> CoordinateMapping:
    def jac(x):
        return df(x)[..., :, None] * np.eye(x.shape[-1])

    return CoordinateMapping(name, f, finv, jac, lower, upper, image_lower, image_upper)


def gradient_mapping(gen: Generator) -> CoordinateMapping:
    return CoordinateMapping(
        f"grad:{gen.name}", gen.grad, gen.inv_grad, gen.hess,
        gen.lower, gen.upper, gen.grad_lower, gen.grad_upper, gen.dim)


def _power_mapping(a: float) -> CoordinateMapping:
    if a == 0:
        raise ValueError("power mapping needs a nonzero exponent")
    return _elementwise(
        f"power:{a:g}",
        lambda x: np.sign(x) * np.abs(x) ** a,
        lambda y: np.sign(y) * np.abs(y) ** (1.0 / a),
        lambda x: a * np.abs(x) ** (a - 1),
        lower=0.0, image_lower=0.0)


def get_mapping(mapping_id: str, gen: Optional[Generator] = None) -> CoordinateMapping:
    """Build a mapping from an id: identity, exp, log, power:<a>, grad[:<gen>]."""
    if mapping_id == "identity":
        return _elementwise("identity", lambda x: np.array(x, dtype=float),
                            lambda y: np.array(y, dtype=float), np.ones_like)
    if mapping_id == "exp":
        return _elementwise("exp", np.exp, np.log, np.exp, image_lower=0.0)
    if mapping_id == "log":
        return _elementwise("log", np.log, np.exp, lambda x: 1.0 / x, lower=0.0)
    head, _, arg = mapping_id.partition(":")
    if head == "power" and arg:
        return _power_mapping(float(arg))
    if head == "grad":
        if arg:
            return gradient_mapping(get_generator(arg))
        if gen is None:
            raise ValueError("'grad' mapping needs a generator")
        return gradient_mapping(gen)
    raise ValueError(f"unknown mapping id {mapping_id!r}")


def finite_interval(lo: float, hi: float):
    if math.isfinite(lo) and math.isfinite(hi):
        pad = 0.05 * (hi - lo)
        return lo + pad, hi - pad
    if math.isfinite(lo):
        return lo + 0.05, lo + 5.0
    if math.isfinite(hi):
        return hi - 5.0, hi - 0.05
    return -3.0, 3.0


def probe_grid(lower, upper, dim: int, count: int = PROBE_COUNT) -> np.ndarray:
    """Deterministic Halton points inside a (clipped) box."""
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    box = [finite_interval(lo, hi) for lo, hi in zip(lower, upper)]
    unit = qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    los = np.array([b[0] for b in box])
    his = np.array([b[1] for b in box])
    return los + unit * (his - los)


@dataclass(frozen=True)
class GeometricStructure:
    """A validated (u, v)_phi triple on a ``dim``-dimensional source domain.

    ``plain`` marks the default structure (grad(phi), identity), under which
    v-conformal divergences reduce to ordinary conformal ones.
    """

    u: CoordinateMapping
    v: CoordinateMapping
    phi: Generator
    dim: int = 1
    plain: bool = False
    probe_box: Optional[tuple] = None

    @property
    def lower(self):
        return max(self.u.lower, self.v.lower)

    @property
    def upper(self):
        return min(self.u.upper, self.v.upper)

    def probes(self) -> np.ndarray:
        if self.probe_box is not None:
            lo, hi = self.probe_box
            pts = probe_grid(lo, hi, self.dim)
        else:
            pts = probe_grid(self.lower, self.upper, self.dim)
        keep = [p for p in pts if self.v.in_domain(p) and self.u.in_domain(p)
                and self.phi.in_domain(self.v(p))]
        return np.array(keep).reshape(-1, self.dim)

    def conjugate(self) -> "GeometricStructure":
        """The symmetric pairing (v, u)_{phi*}."""
        return GeometricStructure(self.v, self.u, self.phi.conjugate(), self.dim,
                                  probe_box=self.probe_box)

    def relation_residual(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ux = self.u(x)
        return float(np.linalg.norm(ux - self.phi.grad(self.v(x))) / (1.0 + np.linalg.norm(ux)))


def _check_relation(s: GeometricStructure, tol: float = RELATION_TOL):
    probes = s.probes()
    if len(probes) == 0:
        raise StructureMismatch("no probe point lies in the common domain")
    for x in probes:
        res = s.relation_residual(x)
        if not res < tol:
            raise StructureMismatch(f"u != grad(phi) o v at {x} (residual {res:.3e})",
                                    probe=x, residual=res)
        jv = s.v.jacobian(x)
        if np.linalg.svd(jv, compute_uv=False).min() < 1e-12:
            raise StructureMismatch(f"J_v is singular at {x}", probe=x)
        if s.dim == 1:
            slope = jv[0, 0] / s.u.jacobian(x)[0, 0]
            if not slope > 0:
                raise StructureMismatch(f"v o u^-1 is not increasing at {x}", probe=x)


def make_structure(u, v, phi, dim: Optional[int] = None, probe_box=None,
                   validate: bool = True, tol: float = RELATION_TOL) -> GeometricStructure:
    """Build and validate (u, v)_phi. ``u`` and ``v`` may be mapping ids."""
    if isinstance(phi, str):
        phi = get_generator(phi)
    if isinstance(u, str):
        u = get_mapping(u, phi)
    if isinstance(v, str):
        v = get_mapping(v, phi)
    if dim is None:
        dim = phi.dim or u.dim or v.dim or 1
    s = GeometricStructure(u, v, phi, dim, probe_box=probe_box)
    if validate:
        _check_relation(s, tol)
    return s


def identity_structure(gen: Generator, dim: Optional[int] = None) -> GeometricStructure:
    """The default pairing (grad(phi), identity)_phi; valid by construction."""
    return GeometricStructure(gradient_mapping(gen), get_mapping("identity"), gen,
                              dim or gen.dim or 1, plain=True)


def validate_structure(s: GeometricStructure, tol: float = RELATION_TOL) -> bool:
    _check_relation(s, tol)
    return True


class CompositeGenerator(Generator):
    """Potential whose gradient is grad(outer) o grad(inner).

    Only meaningful when that map is a gradient, which ``compose_structures``
    checks. The value is recovered by a Gauss-Legendre line integral from a
    fixed base point, so it is defined up to an additive constant.
    """

    _nodes, _weights = np.polynomial.legendre.leggauss(48)

    def __init__(self, outer: Generator, inner: Generator):
        self.outer, self.inner = outer, inner
        self.name = f"compose({outer.name},{inner.name})"
        self.dim = inner.dim
        self.separable = outer.separable and inner.separable
        self.lower, self.upper = inner.lower, inner.upper
        self.grad_lower, self.grad_upper = outer.grad_lower, outer.grad_upper
        lo, hi = finite_interval(inner.lower, inner.upper)
        self._base = min(max(0.0, lo), hi)

    def _grad(self, x):
        return self.outer._grad(self.inner._grad(x))

    def _hess(self, x):
        m = self.outer._hess(self.inner._grad(x)) @ self.inner._hess(x)
        return 0.5 * (m + np.swapaxes(m, -1, -2))

    def _inv_grad(self, y):
        return self.inner._inv_grad(self.outer._inv_grad(y))

    def _f(self, x):
        base = np.full_like(x, self._base)
        step = x - base
        total = np.zeros(x.shape[:-1])
        for node, wt in zip(self._nodes, self._weights):
            s = 0.5 * (node + 1.0)
            total = total + 0.5 * wt * np.sum(step * self._grad(base + s * step), axis=-1)
        return total


def compose_structures(s1: GeometricStructure, s2: GeometricStructure) -> GeometricStructure:
    """Compose (u, v)_phi with (v, w)_psi into (u, w)_chi.

    Raises ``MappingMismatch`` when s1.v and s2.u disagree and
    ``IncompatibleStructures`` when Hphi(grad psi) Hpsi is not symmetric
    positive definite at some probe.
    """
    probes = s2.probes()
    for x in probes:
        if not s1.v.in_domain(x):
            raise MappingMismatch(f"{s1.v.name} undefined at probe {x}")
        gap = np.linalg.norm(s1.v(x) - s2.u(x)) / (1.0 + np.linalg.norm(s2.u(x)))
        if gap > RELATION_TOL:
            raise MappingMismatch(f"{s1.v.name} and {s2.u.name} differ at {x} ({gap:.3e})")

    for x in probes:
        m = s1.phi.hess(s2.u(x)) @ s2.phi.hess(s2.v(x))
        asym = float(np.max(np.abs(m - m.T)))
        if asym > SYMMETRY_TOL:
            raise IncompatibleStructures(f"composed Jacobian not symmetric at {x}",
                                         probe=x, residual=asym)
        low = float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
        if low <= EIGEN_FLOOR:
            raise IncompatibleStructures(f"composed Jacobian not positive definite at {x}",
                                         probe=x, residual=low)
    chi = CompositeGenerator(s1.phi, s2.phi)
    return GeometricStructure(s1.u, s2.v, chi, s2.dim, probe_box=s2.probe_box)


# --- alpha-beta structures ----------------------------------------------

@dataclass(frozen=True)
class AlphaBetaStructure:
    """u = xi^alpha, v = xi^beta on positive measures of a given dimension."""

    alpha: float
    beta: float
    dimension: int = 1

    def __post_init__(self):
        if self.alpha == 0 or self.beta == 0 or self.alpha + self.beta == 0:
            raise ValueError("alpha-beta structure needs alpha, beta, alpha+beta nonzero")
        if self.alpha * self.beta < 0:
            raise ValueError("alpha and beta must share a sign for a convex generator")

    def generator(self) -> SeparableGenerator:
        a, b = self.alpha, self.beta
        r = (a + b) / b
        return SeparableGenerator(
            f"alpha_beta:{a:g}:{b:g}",
            f=lambda t: (b / (a + b)) * t ** r,
            df=lambda t: t ** (a / b),
            d2f=lambda t: (a / b) * t ** (a / b - 1.0),
            df_inv=lambda y: y ** (b / a),
            lower=0.0, grad_lower=0.0)

    def structure(self) -> GeometricStructure:
        return make_structure(_power_mapping(self.alpha), _power_mapping(self.beta),
                              self.generator(), dim=self.dimension)


def alpha_beta_divergence(s: AlphaBetaStructure, xi, xi_prime) -> float:
    xi = np.asarray(xi, dtype=float)
    xp = np.asarray(xi_prime, dtype=float)
    if np.any(xi <= 0) or np.any(xp <= 0):
        raise DomainError("alpha-beta divergence needs positive measures")
    a, b = s.alpha, s.beta
    terms = a / (a + b) * xi ** (a + b) + b / (a + b) * xp ** (a + b) - xi ** a * xp ** b
    return float(np.sum(terms))


def alpha_beta_potentials(s: AlphaBetaStructure, theta):
    """Return (psi(theta), phi(eta)) with eta the point dual to theta."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise DomainError("alpha-beta potentials need positive coordinates")
    a, b = s.alpha, s.beta
    psi = float(np.sum(a / (a + b) * theta ** ((a + b) / a)))
    eta = theta ** (b / a)
    phi = float(np.sum(b / (a + b) * eta ** ((a + b) / b)))
    return psi, phi


def structure_from_text(gen: Generator, text: Optional[str], dim: Optional[int] = None,
                        probe_box=None) -> GeometricStructure:
    """Parse ``"<u-id>,<v-id>"``; a bare ``grad`` refers to ``gen``.

    ``None``, ``""`` and ``"default"`` give the plain (grad(phi), identity)
    structure.
    """
    if text in (None, "", "default"):
        return identity_structure(gen, dim)
    u_id, sep, v_id = text.partition(",")
    if not sep:
        raise ValueError(f"structure must look like '<u>,<v>', got {text!r}")
    u_id, v_id = u_id.strip(), v_id.strip()
    if u_id == "grad" and v_id == "identity":
        return identity_structure(gen, dim)
    return make_structure(get_mapping(u_id, gen), get_mapping(v_id, gen), gen, dim=dim,
                          probe_box=probe_box)
