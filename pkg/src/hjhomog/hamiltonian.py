"""Hamiltonian families, truncations, and the monotone Lax-Friedrichs flux.

Two convex coercive families are supported on a rasterized potential V >= 0:

  separated:  H(p, y) = c0 |p|^gamma - V(y)
  fpp:        H(p, y) = a(y) |p|^gamma,  a = 1 / (1 + V)   (degenerate coercivity)

plus the truncation H_k = max(H, c0 |p|^gamma - k), which bounds the
environment from above while keeping convexity and coercivity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .numerics import Grid, ScalarField

FORMS = ("separated", "fpp")

# Shape constant of the Bernstein-type gradient bound |Dv|^gamma <= C (1 + sup V);
# a scheme parameter, re-audited after each solve.
BERNSTEIN_C = 4.0


@dataclass(frozen=True)
class HamiltonianSpec:
    form: str
    gamma: float
    c0: float
    C0: float = 0.0
    potential: ScalarField | None = None
    sigma2: float = 0.0      # A = sigma2 * Identity; 0 means first-order

    def __post_init__(self):
        if self.form not in FORMS:
            raise ParameterError(f"unknown Hamiltonian form '{self.form}'")
        if not (self.gamma > 1):
            raise ParameterError(f"need gamma > 1, got {self.gamma}")
        if not (self.c0 > 0):
            raise ParameterError(f"need c0 > 0, got {self.c0}")
        if self.C0 < 0:
            raise ParameterError(f"need C0 >= 0, got {self.C0}")
        if self.sigma2 < 0:
            raise ParameterError(f"need sigma2 >= 0, got {self.sigma2}")

    @property
    def grid(self) -> Grid:
        if self.potential is None:
            raise ParameterError("spec has no potential field attached")
        return self.potential.grid

    @property
    def viscous(self) -> bool:
        return self.sigma2 > 0


@dataclass(frozen=True)
class TruncatedSpec:
    """H_k = max(H, c0 |p|^gamma - k); nonincreasing toward H as k grows."""

    base: HamiltonianSpec
    k: float

    def __post_init__(self):
        if not np.isfinite(self.k):
            raise ParameterError("truncation level k must be finite")

    @property
    def form(self):
        return self.base.form

    @property
    def gamma(self):
        return self.base.gamma

    @property
    def c0(self):
        return self.base.c0

    @property
    def C0(self):
        return self.base.C0

    @property
    def potential(self):
        return self.base.potential

    @property
    def sigma2(self):
        return self.base.sigma2

    @property
    def grid(self):
        return self.base.grid

    @property
    def viscous(self):
        return self.base.viscous


def zero_potential_spec(grid: Grid, form="separated", gamma=2.0, c0=1.0,
                        C0=0.0, sigma2=0.0) -> HamiltonianSpec:
    return HamiltonianSpec(form, gamma, c0, C0, ScalarField.zeros(grid), sigma2)


def potential_value(spec, node) -> float:
    if spec.potential is None:
        return 0.0
    return float(spec.potential.values[node])


def coefficient_arrays(spec):
    """(coef, offset) with H(q, y) = coef(y) |q|^gamma - offset(y), plus the
    truncation pair (trunc_c0, trunc_k); trunc_k = +inf for no truncation."""
    V = spec.potential.values
    if spec.form == "separated":
        coef = np.full_like(V, spec.c0)
        off = V
    else:
        coef = 1.0 / (1.0 + V)
        off = np.zeros_like(V)
    if isinstance(spec, TruncatedSpec):
        return coef, off, spec.c0, spec.k
    return coef, off, spec.c0, np.inf


def eval_H(spec, p, node) -> float:
    """Pointwise Hamiltonian value at one grid node."""
    pn = float(np.linalg.norm(np.atleast_1d(np.asarray(p, dtype=float))))
    V = potential_value(spec, node)
    if spec.form == "separated":
        base = spec.c0 * pn ** spec.gamma - V
    else:
        base = pn ** spec.gamma / (1.0 + V)
    if isinstance(spec, TruncatedSpec):
        return max(base, spec.c0 * pn ** spec.gamma - spec.k)
    return base


def lf_flux(spec, node, q_minus, q_plus, dissipation) -> float:
    """Lax-Friedrichs numerical Hamiltonian.

    Hhat = H((q- + q+)/2, y) - sum_i alpha_i (q_i+ - q_i-)/2, monotone as long
    as alpha_i dominates |dH/dq_i| on the realized gradient range.
    """
    qm = np.atleast_1d(np.asarray(q_minus, dtype=float))
    qp = np.atleast_1d(np.asarray(q_plus, dtype=float))
    al = np.atleast_1d(np.asarray(dissipation, dtype=float))
    if np.any(al < 0):
        raise ParameterError("dissipation must be nonnegative")
    mid = 0.5 * (qm + qp)
    return eval_H(spec, mid, node) - float(np.sum(al * 0.5 * (qp - qm)))


def dissipation_bound(spec, gradient_cap) -> np.ndarray:
    """Per-axis bound gamma * coef_max * cap^(gamma-1) on |dH/dq_i|."""
    if not np.all(np.asarray(gradient_cap) > 0):
        raise ParameterError("gradient_cap must be positive")
    if spec.form == "separated":
        coef_max = spec.c0
    else:
        vmin = float(spec.potential.values.min()) if spec.potential is not None else 0.0
        coef_max = 1.0 / (1.0 + vmin)
    dim = spec.grid.dim if spec.potential is not None else 1
    bound = spec.gamma * coef_max * float(gradient_cap) ** (spec.gamma - 1.0)
    return np.full(dim, bound)


def bernstein_cap(spec, p) -> float:
    """Global cap on |p + Dv| from the Bernstein-shaped bound."""
    sup_v = float(spec.potential.values.max()) if spec.potential is not None else 0.0
    pn = float(np.linalg.norm(np.atleast_1d(np.asarray(p, dtype=float))))
    return pn + (BERNSTEIN_C / spec.c0 * (1.0 + sup_v)) ** (1.0 / spec.gamma)


def local_gradient_cap(spec, p, halo_radius: float = 1.0) -> np.ndarray:
    """Per-node cap |p| + (C (1 + local sup V))^{1/gamma}.

    The local sup runs over a ball of halo_radius around each node, so the
    dissipation (and hence the numerical smearing) stays small where the
    potential is flat.
    """
    g = spec.grid
    V = spec.potential.values
    size = 2 * int(np.ceil(halo_radius / g.h)) + 1
    mode = "wrap" if g.periodic else "nearest"
    vloc = ndimage.maximum_filter(V, size=size, mode=mode)
    pn = float(np.linalg.norm(np.atleast_1d(np.asarray(p, dtype=float))))
    return pn + (BERNSTEIN_C / spec.c0 * (1.0 + vloc)) ** (1.0 / spec.gamma)


def local_dissipation(spec, cap: np.ndarray) -> np.ndarray:
    """Per-node dissipation gamma * coef(y) * cap(y)^(gamma-1)."""
    if spec.form == "separated":
        coef = spec.c0
    else:
        coef = 1.0 / (1.0 + spec.potential.values)
    return spec.gamma * coef * np.maximum(cap, 1e-12) ** (spec.gamma - 1.0)


def coercivity_audit(spec, p_samples, sandwich_C=None):
    """Check c0|p|^gamma - V - C0 <= H <= C(1+|p|^gamma) on all nodes.

    Returns (fitted_C, ok).  With sandwich_C given, ok reflects that frozen
    constant; otherwise fitted_C is the smallest C making the upper bound hold.
    """
    V = spec.potential.values
    fitted = 0.0
    ok = True
    for p in p_samples:
        pn = float(np.linalg.norm(np.atleast_1d(np.asarray(p, dtype=float))))
        if spec.form == "separated":
            H = spec.c0 * pn ** spec.gamma - V
        else:
            H = pn ** spec.gamma / (1.0 + V)
        lower = spec.c0 * pn ** spec.gamma - V - spec.C0
        if np.any(H < lower - 1e-9):
            ok = False
        fitted = max(fitted, float(H.max()) / (1.0 + pn ** spec.gamma))
    if sandwich_C is not None:
        for p in p_samples:
            pn = float(np.linalg.norm(np.atleast_1d(np.asarray(p, dtype=float))))
            if spec.form == "separated":
                H = spec.c0 * pn ** spec.gamma - V
            else:
                H = pn ** spec.gamma / (1.0 + V)
            if float(H.max()) > sandwich_C * (1.0 + pn ** spec.gamma) + 1e-9:
                ok = False
        return sandwich_C, ok
    return fitted, ok
