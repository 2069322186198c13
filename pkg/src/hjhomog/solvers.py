"""Grid solvers: the resolvent (delta) problem, the metric problem, the
time-dependent problem, a killed-diffusion Monte Carlo estimator, and the
independent oracles used to cross-check them.
"""
from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import BudgetError, OracleError, ParameterError, SolverDivergence
from .hamiltonian import (bernstein_cap, coefficient_arrays,
                          local_gradient_cap)
from .numerics import Grid, ScalarField, backward_diff, forward_diff, with_boundary

_FK_STREAM = 17


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _p_vector(p, dim):
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (dim,):
        raise ParameterError(f"p must have {dim} components, got {p.shape}")
    return p


def _coef_array(spec):
    if spec.form == "separated":
        return np.full(spec.grid.shape, spec.c0)
    return 1.0 / (1.0 + spec.potential.values)


def axis_dissipation(spec, caps):
    """Per-axis bounds on |dH/dq_i| over the componentwise-clamped box."""
    coef = _coef_array(spec)
    cap_tot = np.sqrt(sum(c * c for c in caps))
    out = []
    for c in caps:
        if spec.gamma >= 2.0:
            a = spec.gamma * coef * np.maximum(cap_tot, 1e-12) ** (spec.gamma - 2.0) * c
        else:
            a = spec.gamma * coef * np.maximum(c, 1e-12) ** (spec.gamma - 1.0)
        out.append(a)
    return out


def _solver_arrays(spec, p, local_diss, halo_radius, extra_cap=0.0):
    coef, off, tc0, tk = coefficient_arrays(spec)
    if local_diss:
        cap = local_gradient_cap(spec, p, halo_radius) + extra_cap
    else:
        cap = np.full(spec.grid.shape, bernstein_cap(spec, p) + extra_cap)
    caps = [np.ascontiguousarray(cap)] * spec.grid.dim
    alphas = axis_dissipation(spec, caps)
    # genuine diffusion already supplies 2 sigma2/h of monotonicity per axis,
    # so only the excess needs Lax-Friedrichs smearing
    alphas = [np.ascontiguousarray(np.maximum(0.0, a - 2.0 * spec.sigma2 / spec.grid.h))
              for a in alphas]
    return coef, off, tc0, tk, caps, alphas


def discrete_residual(spec, v: ScalarField, p, delta: float, alphas,
                      mu_rhs: float = 0.0) -> np.ndarray:
    """Residual of the Lax-Friedrichs discretization, vectorized and unclamped.

    Independent of the numba path; used to audit converged fields.
    """
    g = v.grid
    p = _p_vector(p, g.dim)
    if isinstance(alphas, np.ndarray) and alphas.ndim == g.dim:
        alphas = [alphas] * g.dim
    coef, off, tc0, tk = coefficient_arrays(spec)
    qsq = np.zeros_like(v.values)
    diss = np.zeros_like(v.values)
    lap = np.zeros_like(v.values)
    for ax in range(g.dim):
        qm = backward_diff(v, ax)
        qp = forward_diff(v, ax)
        q = 0.5 * (qm + qp) + p[ax]
        qsq += q * q
        diss += alphas[ax] * 0.5 * (qp - qm)
        lap += (qp - qm) / g.h
    H = coef * qsq ** (spec.gamma / 2.0) - off
    if np.isfinite(tk):
        H = np.maximum(H, tc0 * qsq ** (spec.gamma / 2.0) - tk)
    return delta * v.values - spec.sigma2 * lap + H - diss - mu_rhs


def slowness_bound(spec, mu: float) -> float:
    """Upper bound on the far-field slope scale |Dm| of the metric problem."""
    sup_v = float(spec.potential.values.max())
    if spec.form == "separated":
        return ((max(mu, 0.0) + sup_v + spec.C0) / spec.c0) ** (1.0 / spec.gamma)
    return (max(mu, 0.0) * (1.0 + sup_v)) ** (1.0 / spec.gamma)


# ---------------------------------------------------------------------------
# The delta problem:  delta v - sigma2 lap(v) + H(p + Dv, y) = 0, periodic box
# ---------------------------------------------------------------------------

@dataclass
class DeltaProblemResult:
    v: ScalarField
    delta: float
    p: np.ndarray
    residual: float
    iterations: int
    residual_history: np.ndarray       # (k, 2): iteration, max residual
    dissipation: np.ndarray            # per-axis stack
    gradient_cap: np.ndarray
    realized_gradient: float
    hbar_estimate: float               # -spatial average of delta*v
    delta_v_oscillation: float         # box-wide osc of delta*v


def _realized_gradient(v: ScalarField, p) -> float:
    g = v.grid
    p = _p_vector(p, g.dim)
    total = np.zeros_like(v.values)
    for ax in range(g.dim):
        q = 0.5 * (backward_diff(v, ax) + forward_diff(v, ax)) + p[ax]
        total += q * q
    return float(np.sqrt(total.max()))


def _delta_iterate(spec, v, buf, coef, off, tc0, tk, p, delta, caps, alphas,
                   tol, max_iters, check_every, mean_shift, history, start_iter):
    g = spec.grid
    amax = max(float(a.max()) for a in alphas)
    dt = 0.9 / (delta + g.dim * amax / g.h + 2.0 * g.dim * spec.sigma2 / g.h ** 2)
    chunk_pairs = max(1, check_every // 2)
    iters = start_iter
    res = np.inf
    while iters < max_iters:
        if g.dim == 1:
            res = K.delta_chunk_1d(v, buf, coef, off, spec.gamma, tc0, tk,
                                   p[0], delta, spec.sigma2, g.h, alphas[0],
                                   caps[0], dt, chunk_pairs, mean_shift)
        else:
            res = K.delta_chunk_2d(v, buf, coef, off, spec.gamma, tc0, tk,
                                   p[0], p[1], delta, spec.sigma2, g.h,
                                   alphas[0], alphas[1], caps[0], caps[1],
                                   dt, chunk_pairs, mean_shift)
        iters += 2 * chunk_pairs
        history.append((iters, res))
        if res < tol:
            break
    return iters, res, dt


def _tighten_caps(spec, values, p, caps, cap_scale, wrap=True, dilate_cells=2):
    """Per-axis caps from the realized gradients, dilated by a few cells,
    ceilinged by the first-pass caps."""
    from scipy import ndimage
    g = spec.grid
    size = 2 * dilate_cells + 1
    mode = "wrap" if wrap else "nearest"
    out = []
    for ax in range(g.dim):
        up = np.roll(values, -1, axis=ax)
        dn = np.roll(values, 1, axis=ax)
        q = np.abs((up - dn) / (2.0 * g.h) + p[ax])
        if not wrap:
            sl = [slice(None)] * g.dim
            sl[ax] = 0
            q[tuple(sl)] = q[tuple(sl[:ax] + [1] + sl[ax + 1:])]
            sl[ax] = -1
            q[tuple(sl)] = q[tuple(sl[:ax] + [-2] + sl[ax + 1:])]
        c2 = ndimage.maximum_filter(q, size=size, mode=mode)
        c2 = 1.05 * c2 + 0.02 * cap_scale + 0.02
        out.append(np.ascontiguousarray(np.minimum(c2, caps[ax])))
    return out


def solve_delta(spec, p, delta, *, tol=1e-8, max_iters=600_000, initial=None,
                local_diss=True, halo_radius=1.0, check_every=50,
                mean_shift=True, refine=0) -> DeltaProblemResult:
    """Pseudo-time relaxation v <- v - dt [delta v - sigma2 lap v + Hhat(p+Dv)].

    The CFL step comes from the dissipation bound; iteration stops when the
    max-norm residual drops below tol.  refine > 0 adds that many passes with
    the per-axis dissipation tightened to the realized gradients (less
    numerical viscosity, at the cost of a different discrete operator than
    brute_force_delta solves).  Non-convergence raises SolverDivergence
    carrying the residual history and a gradient audit.
    """
    if not (delta > 0):
        raise ParameterError(f"delta must be positive, got {delta}")
    g = spec.grid
    if not g.periodic:
        raise ParameterError("solve_delta needs a periodic grid")
    p = _p_vector(p, g.dim)
    if g.box_side < 1.0 / delta:
        warnings.warn(f"box side {g.box_side} below 1/delta={1.0 / delta:.3g}; "
                      "finite-volume bias may dominate", stacklevel=2)
    coef, off, tc0, tk, caps, alphas = _solver_arrays(spec, p, local_diss,
                                                      halo_radius)
    cap_scale = max(float(c.max()) for c in caps)
    if initial is not None:
        v = np.ascontiguousarray(np.asarray(initial.values, dtype=float).copy())
    else:
        hp = coef * float(np.dot(p, p)) ** (spec.gamma / 2.0) - off
        v = np.full(g.shape, -float(hp.mean()) / delta)
    buf = np.empty_like(v)
    history = []

    iters, res, dt = _delta_iterate(spec, v, buf, coef, off, tc0, tk, p,
                                    delta, caps, alphas, tol, max_iters,
                                    check_every, mean_shift, history, 0)
    for _ in range(int(refine)):
        if res >= tol:
            break
        caps = _tighten_caps(spec, v, p, caps, cap_scale, wrap=True)
        alphas = axis_dissipation(spec, caps)
        alphas = [np.ascontiguousarray(
            np.maximum(0.0, a - 2.0 * spec.sigma2 / g.h)) for a in alphas]
        iters, res, dt = _delta_iterate(spec, v, buf, coef, off, tc0, tk, p,
                                        delta, caps, alphas, tol, max_iters,
                                        check_every, mean_shift, history, iters)

    vfield = ScalarField(g, v)
    realized = _realized_gradient(vfield, p)
    if res >= tol:
        raise SolverDivergence(
            f"delta solve stalled at residual {res:.3e} after {iters} iterations "
            f"(dt={dt:.3e}, realized |p+Dv|={realized:.3g} vs cap "
            f"{max(float(c.max()) for c in caps):.3g})",
            residual_history=np.asarray(history),
            realized_gradient=realized,
            gradient_cap=max(float(c.max()) for c in caps))
    dv = delta * v
    return DeltaProblemResult(
        v=vfield, delta=delta, p=p, residual=float(res), iterations=iters,
        residual_history=np.asarray(history), dissipation=np.stack(alphas),
        gradient_cap=np.stack(caps), realized_gradient=realized,
        hbar_estimate=-float(dv.mean()),
        delta_v_oscillation=float(dv.max() - dv.min()))


def brute_force_delta(spec, p, delta, *, tol=1e-10, max_sweeps=50_000,
                      damping=1.0, local_diss=True, halo_radius=1.0) -> ScalarField:
    """Damped nonlinear Gauss-Seidel reference solver for tiny grids (<= 32^d).

    Solves the same discrete equations as solve_delta (same flux, same
    dissipation) but by pointwise exact updates in alternating sweep order,
    driving the residual to machine level.
    """
    g = spec.grid
    if g.n > 32:
        raise ParameterError("brute_force_delta is restricted to grids <= 32^d")
    if not g.periodic:
        raise ParameterError("brute_force_delta needs a periodic grid")
    p = _p_vector(p, g.dim)
    coef, off, tc0, tk, caps, alphas = _solver_arrays(spec, p, local_diss,
                                                      halo_radius)
    h = g.h
    hp = coef * float(np.dot(p, p)) ** (spec.gamma / 2.0) - off
    v = np.full(g.shape, -float(hp.mean()) / delta)

    nodes = list(np.ndindex(g.shape))
    orders = [nodes, nodes[::-1]]
    res = np.inf
    for sweep in range(max_sweeps):
        for node in orders[sweep % 2]:
            if g.dim == 1:
                (i,) = node
                vm, vpl = v[(i - 1) % g.n], v[(i + 1) % g.n]
                q0 = np.clip((vpl - vm) / (2 * h) + p[0], -caps[0][node],
                             caps[0][node])
                qsq = q0 * q0
                diss_neigh = alphas[0][node] * (vpl + vm) / (2 * h)
                asum = alphas[0][node]
                neigh = vpl + vm
                nneigh = 2
            else:
                i, j = node
                v0m, v0p = v[(i - 1) % g.n, j], v[(i + 1) % g.n, j]
                v1m, v1p = v[i, (j - 1) % g.n], v[i, (j + 1) % g.n]
                q0 = np.clip((v0p - v0m) / (2 * h) + p[0], -caps[0][node],
                             caps[0][node])
                q1 = np.clip((v1p - v1m) / (2 * h) + p[1], -caps[1][node],
                             caps[1][node])
                qsq = q0 * q0 + q1 * q1
                diss_neigh = (alphas[0][node] * (v0p + v0m)
                              + alphas[1][node] * (v1p + v1m)) / (2 * h)
                asum = alphas[0][node] + alphas[1][node]
                neigh = v0p + v0m + v1p + v1m
                nneigh = 4
            H = coef[node] * qsq ** (spec.gamma / 2) - off[node]
            if np.isfinite(tk):
                H = max(H, tc0 * qsq ** (spec.gamma / 2) - tk)
            num = -H + diss_neigh + spec.sigma2 * neigh / h ** 2
            den = delta + asum / h + nneigh * spec.sigma2 / h ** 2
            v[node] = (1 - damping) * v[node] + damping * num / den
        res = np.abs(discrete_residual(spec, ScalarField(g, v), p, delta,
                                       alphas)).max()
        if res < tol:
            return ScalarField(g, v)
    raise OracleError(f"brute_force_delta failed to reach {tol:.1e} "
                      f"(last residual {res:.3e})")


# ---------------------------------------------------------------------------
# The metric problem:  Hhat(p + Dm, y) = mu outside a source set, m = 0 there
# ---------------------------------------------------------------------------

COMPASS_2D = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))
COMPASS_1D = ((1,), (-1,))


@dataclass
class MetricSolution:
    m: ScalarField
    mu: float
    p: np.ndarray
    source_node: tuple
    source_radius: float
    feasible: bool
    asymptotic_slopes: dict
    sweeps: int
    max_update: float
    converged: bool


def default_source_radius(spec, grid: Grid) -> float:
    """Single node when first-order or gamma > 2, a small ball otherwise."""
    if spec.sigma2 == 0.0 or spec.gamma > 2.0:
        return 0.0
    return 2.0 * grid.h


def source_mask(grid: Grid, node, radius: float) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    if radius <= 0:
        mask[node] = True
        return mask
    idx = np.indices(grid.shape)
    dist2 = np.zeros(grid.shape)
    for ax in range(grid.dim):
        dist2 += ((idx[ax] - node[ax]) * grid.h) ** 2
    return dist2 <= radius ** 2 + 1e-12


def directional_values(m: ScalarField, source_node, t: float, directions) -> dict:
    """(m value, actual distance) at the node nearest source + t e, per e."""
    g = m.grid
    out = {}
    for e in directions:
        ev = np.asarray(e, dtype=float)
        ev = ev / np.linalg.norm(ev)
        target = np.asarray(source_node) + t * ev / g.h
        idx = tuple(int(round(c)) for c in target)
        if any(c < 0 or c >= g.n for c in idx):
            raise ParameterError(f"slope probe at t={t} leaves the box")
        dist = np.linalg.norm((np.asarray(idx) - np.asarray(source_node)) * g.h)
        out[tuple(e)] = (float(m.values[idx]), float(dist))
    return out


def directional_slopes(m: ScalarField, source_node, t: float, directions) -> dict:
    """m(source + t e)/t per direction, measured at the nearest node."""
    vals = directional_values(m, source_node, t, directions)
    return {e: (v / d if d > 0 else 0.0) for e, (v, d) in vals.items()}


def increment_slopes(m: ScalarField, source_node, t: float, directions) -> dict:
    """Two-point slopes (m(t e) - m(t e / 2)) / (t / 2) per direction.

    Differencing cancels the additive source-zone offset of the scheme, so
    these converge to the asymptotic slopes much faster than m(t e)/t.
    """
    hi = directional_values(m, source_node, t, directions)
    lo = directional_values(m, source_node, t / 2.0, directions)
    out = {}
    for e in hi:
        vh, dh = hi[e]
        vl, dl = lo[e]
        out[e] = (vh - vl) / (dh - dl) if dh > dl else 0.0
    return out


def _run_sweeps(vp, inner, spec, coef, off, tc0, tk, p, mu, delta, alphas,
                caps, src, pinned, omega, tol, max_rounds, dive_floor):
    g = spec.grid
    converged = diverged = False
    chg = np.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        if g.dim == 1:
            chg = K.sweep_round_1d(vp, coef, off, spec.gamma, tc0, tk, p[0],
                                   mu, delta, spec.sigma2, g.h, alphas[0],
                                   caps[0], src, pinned, omega)
        else:
            chg = K.sweep_round_2d(vp, coef, off, spec.gamma, tc0, tk, p[0],
                                   p[1], mu, delta, spec.sigma2, g.h,
                                   alphas[0], alphas[1], caps[0], caps[1],
                                   src, pinned, omega)
        if chg < tol:
            converged = True
            break
        if vp[inner].min() < dive_floor:
            diverged = True
            break
    return rounds, chg, converged, diverged


def local_cone(spec, p, mu, source_node, dist):
    """Exact local solution for frozen coefficients at the source:
    m(y) = s |y - x0| - p.(y - x0) with s from the slowness at x0."""
    g = spec.grid
    V0 = float(spec.potential.values[source_node])
    if spec.form == "separated":
        s = (max(mu + V0, 0.0) / spec.c0) ** (1.0 / spec.gamma)
    else:
        s = (max(mu, 0.0) * (1.0 + V0)) ** (1.0 / spec.gamma)
    idx = np.indices(g.shape)
    lin = np.zeros(g.shape)
    p = _p_vector(p, g.dim)
    for ax in range(g.dim):
        lin += p[ax] * (idx[ax] - source_node[ax]) * g.h
    return s * dist - lin


def solve_metric(spec, p, mu, *, source_node=None, source_radius=None,
                 tol=1e-6, max_rounds=3000, slope_tol_factor=0.02,
                 delta_freeze=1e-3, slope_fraction=0.45, local_diss=True,
                 halo_radius=1.0, directions=None, omega=1.0,
                 refine=1, cap_mu=None) -> MetricSolution:
    """Fast-sweeping Gauss-Seidel for the metric problem with outflow far field.

    Starts from the cone with the physical slope bound (a supersolution) and
    descends.  Infeasibility (mu below the effective threshold) is a verdict:
    values diving below the floor, failure to contract within the round
    budget, or a negative asymptotic slope.  The viscous variant runs the
    same kernel as the elliptic limit with a small frozen damping and a
    pinned source ball (omega over-relaxes the diffusion-dominated
    Gauss-Seidel there).  A refinement pass re-solves with per-axis
    dissipation tightened to the realized one-sided gradients, which removes
    most of the transverse Lax-Friedrichs smearing.
    """
    g = spec.grid
    p = _p_vector(p, g.dim)
    if source_node is None:
        source_node = (g.n // 2,) * g.dim
    source_node = tuple(int(i) for i in source_node)
    if source_radius is None:
        source_radius = default_source_radius(spec, g)
    pn = float(np.linalg.norm(p))
    # cap_mu lets callers build the dissipation for a larger mu so that two
    # solves at different levels share one discrete operator (monotonicity
    # comparisons need that)
    mu_for_caps = mu if cap_mu is None else max(mu, cap_mu)
    extra = (max(mu_for_caps, 0.0) / spec.c0) ** (1.0 / spec.gamma)
    coef, off, tc0, tk, caps, alphas = _solver_arrays(spec, p, local_diss,
                                                      halo_radius,
                                                      extra_cap=extra)
    delta = 0.0 if spec.sigma2 == 0.0 else delta_freeze
    idx = np.indices(g.shape)
    dist = np.zeros(g.shape)
    for ax in range(g.dim):
        dist += ((idx[ax] - source_node[ax]) * g.h) ** 2
    dist = np.sqrt(dist)

    # single-node sources get a factored 2h disk pinned to the local exact
    # cone, which removes the Lax-Friedrichs tip smear; viscous ball sources
    # stay pinned to zero
    if source_radius <= 0:
        pin_radius = 2.0 * g.h
        pinned = np.ascontiguousarray(local_cone(spec, p, mu, source_node, dist))
    else:
        pin_radius = source_radius
        pinned = np.zeros(g.shape)
    src = source_mask(g, source_node, pin_radius)

    # cone supersolution start: slope = physical slowness bound; a flat huge
    # start would relax at diffusion speed in the far field
    init_slope = pn + slowness_bound(spec, mu)
    vp = np.zeros(tuple(s + 2 for s in g.shape))
    inner = tuple(slice(1, -1) for _ in range(g.dim))
    vp[inner] = init_slope * dist
    vp[inner][src] = pinned[src]
    cap_scale = max(float(c.max()) for c in caps)
    dive_floor = -0.05 * g.box_side * max(1.0, cap_scale) - float(
        np.abs(pinned[src]).max() if src.any() else 0.0)

    rounds, chg, converged, diverged = _run_sweeps(
        vp, inner, spec, coef, off, tc0, tk, p, mu, delta, alphas, caps, src,
        pinned, omega, tol, max_rounds, dive_floor)

    for _ in range(int(refine)):
        if not (converged and not diverged):
            break
        caps = _tighten_caps(spec, vp[inner], p, caps, cap_scale, wrap=False)
        alphas = axis_dissipation(spec, caps)
        alphas = [np.ascontiguousarray(
            np.maximum(0.0, a - 2.0 * spec.sigma2 / g.h)) for a in alphas]
        r2, chg, converged, diverged = _run_sweeps(
            vp, inner, spec, coef, off, tc0, tk, p, mu, delta, alphas,
            caps, src, pinned, omega, tol, max_rounds, dive_floor)
        rounds += r2

    values = vp[inner].copy()
    if not np.isfinite(values).all():
        raise SolverDivergence("metric sweep produced non-finite values")
    result_grid = with_boundary(g, "dirichlet")
    m = ScalarField(result_grid, values)
    if directions is None:
        directions = COMPASS_1D if g.dim == 1 else COMPASS_2D
    t = slope_fraction * g.box_side
    # two-point slopes cancel the additive source-zone offset, which makes the
    # negative-slope infeasibility test sharp near the threshold
    slopes = increment_slopes(m, source_node, t, directions)
    min_slope = min(slopes.values())
    feasible = converged and not diverged and min_slope >= -slope_tol_factor
    return MetricSolution(m=m, mu=mu, p=p, source_node=source_node,
                          source_radius=source_radius, feasible=feasible,
                          asymptotic_slopes=slopes, sweeps=rounds,
                          max_update=float(chg), converged=converged)


def dijkstra_metric(spec, mu, *, source_node=None, neighborhood=16) -> ScalarField:
    """Shortest-path oracle for the first-order metric problem at p = 0.

    Node slowness from the integrand: ((mu + V)/c0)^{1/gamma} for the
    separated form, (mu (1+V))^{1/gamma} for the fpp form; edge cost is the
    trapezoid of the slowness along the hop.  A 16-point stencil keeps the
    angular discretization error below one percent.
    """
    g = spec.grid
    if source_node is None:
        source_node = (g.n // 2,) * g.dim
    V = spec.potential.values
    if spec.form == "separated":
        if mu + V.min() < 0:
            raise ParameterError("mu + V must be nonnegative for the oracle")
        slow = ((mu + V) / spec.c0) ** (1.0 / spec.gamma)
    else:
        if mu < 0:
            raise ParameterError("fpp oracle needs mu >= 0")
        slow = (mu * (1.0 + V)) ** (1.0 / spec.gamma)
    if g.dim == 1:
        hops = [(1,), (-1,)]
    else:
        hops = [(1, 0), (-1, 0), (0, 1), (0, -1),
                (1, 1), (1, -1), (-1, 1), (-1, -1)]
        if neighborhood >= 16:
            hops += [(2, 1), (2, -1), (-2, 1), (-2, -1),
                     (1, 2), (1, -2), (-1, 2), (-1, -2)]
    hop_len = [g.h * float(np.linalg.norm(hp)) for hp in hops]

    dist = np.full(g.shape, np.inf)
    src = tuple(int(i) for i in source_node)
    dist[src] = 0.0
    pq = [(0.0, src)]
    while pq:
        d, node = heapq.heappop(pq)
        if d > dist[node]:
            continue
        for hp, ln in zip(hops, hop_len):
            nxt = tuple(node[ax] + hp[ax] for ax in range(g.dim))
            if any(c < 0 or c >= g.n for c in nxt):
                continue
            nd = d + ln * 0.5 * (slow[node] + slow[nxt])
            if nd < dist[nxt]:
                dist[nxt] = nd
                heapq.heappush(pq, (nd, nxt))
    return ScalarField(with_boundary(g, "dirichlet"), dist)


# ---------------------------------------------------------------------------
# Time-dependent problem:  u_t - eps sigma2 lap(u) + H(Du, y) = 0, periodic
# ---------------------------------------------------------------------------

@dataclass
class TimeDependentResult:
    slices: list
    times: list
    epsilon: float
    cfl_dt: float
    realized_gradient: float
    gradient_cap: float


def _time_cap(spec, u0: ScalarField, cap_extra=1.0, halo_radius=1.0):
    from scipy import ndimage
    from .hamiltonian import BERNSTEIN_C
    g = u0.grid
    lip = 0.0
    for ax in range(g.dim):
        lip = max(lip, float(np.abs(forward_diff(u0, ax)).max()))
    V = spec.potential.values
    size = 2 * int(np.ceil(halo_radius / g.h)) + 1
    vloc = ndimage.maximum_filter(V, size=size, mode="wrap")
    return lip + cap_extra + (BERNSTEIN_C / spec.c0 * vloc) ** (1.0 / spec.gamma)


def _time_march(spec, u0, caps, alphas, eps_diff, dt, output_times):
    g = u0.grid
    coef, off, tc0, tk = coefficient_arrays(spec)
    nsteps = int(np.ceil(output_times[-1] / dt - 1e-12))
    capture_steps = sorted({min(nsteps, max(0, int(round(t / dt))))
                            for t in output_times})
    u = u0.values.copy()
    buf = np.empty_like(u)
    qmaxs = [np.zeros(g.shape) for _ in range(g.dim)]
    slices, times = [], []
    step = 0
    maxq = 0.0

    def run_until(target):
        nonlocal step, maxq, u, buf
        while step < target:
            pairs = (target - step) // 2
            if pairs > 0:
                if g.dim == 1:
                    mq = K.time_chunk_1d(u, buf, coef, off, spec.gamma, tc0,
                                         tk, eps_diff, g.h, alphas[0], caps[0],
                                         dt, pairs, qmaxs[0])
                else:
                    mq = K.time_chunk_2d(u, buf, coef, off, spec.gamma, tc0,
                                         tk, eps_diff, g.h, alphas[0],
                                         alphas[1], caps[0], caps[1],
                                         dt, pairs, qmaxs[0], qmaxs[1])
                maxq = max(maxq, mq)
                step += 2 * pairs
            else:
                if g.dim == 1:
                    mq = K._time_step_1d(u, buf, coef, off, spec.gamma, tc0,
                                         tk, eps_diff, g.h, alphas[0], caps[0],
                                         dt, qmaxs[0])
                else:
                    mq = K._time_step_2d(u, buf, coef, off, spec.gamma, tc0,
                                         tk, eps_diff, g.h, alphas[0],
                                         alphas[1], caps[0], caps[1], dt,
                                         qmaxs[0], qmaxs[1])
                maxq = max(maxq, mq)
                u, buf = buf, u
                step += 1

    for cs in capture_steps:
        run_until(cs)
        slices.append(ScalarField(g, u.copy()))
        times.append(cs * dt)
    return slices, times, maxq, qmaxs


def solve_time_dependent(spec, u0: ScalarField, epsilon, T, output_times=None,
                         dt=None, local_diss=True, cap_extra=1.0,
                         halo_radius=1.0, refine=0) -> TimeDependentResult:
    """Forward Euler with the Lax-Friedrichs flux and explicit diffusion.

    The time step obeys dt*(sum_i alpha_i/h + 2 d eps_diff/h^2) <= 0.9; a
    caller-supplied dt breaking that bound is rejected before any stepping.
    refine > 0 re-runs from u0 with per-node dissipation tightened to the
    gradients realized on the first pass, trimming the kink smearing.
    """
    g = u0.grid
    if not g.periodic:
        raise ParameterError("solve_time_dependent needs a periodic grid")
    if spec.grid.shape != g.shape or abs(spec.grid.h - g.h) > 1e-12:
        raise ParameterError("potential grid does not match u0 grid")
    if not (epsilon > 0):
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not (T > 0):
        raise ParameterError(f"T must be positive, got {T}")
    eps_diff = epsilon * spec.sigma2
    if local_diss:
        cap = _time_cap(spec, u0, cap_extra=cap_extra, halo_radius=halo_radius)
    else:
        cap = np.full(g.shape, bernstein_cap(spec, np.zeros(g.dim)) + cap_extra)
    caps = [np.ascontiguousarray(cap)] * g.dim

    if output_times is None:
        output_times = [T]
    output_times = sorted(set(list(output_times) + [T]))

    maxq = 0.0
    dt_use = None
    for attempt in range(int(refine) + 1):
        alphas = axis_dissipation(spec, caps)
        alphas = [np.ascontiguousarray(np.maximum(0.0, a - 2.0 * eps_diff / g.h))
                  for a in alphas]
        amax = max(float(a.max()) for a in alphas)
        dt_max = 0.9 / (g.dim * amax / g.h + 2.0 * g.dim * eps_diff / g.h ** 2)
        if dt is not None:
            if dt > dt_max:
                raise ParameterError(
                    f"requested dt={dt:.3e} violates the CFL bound {dt_max:.3e}")
            dt_use = dt
        else:
            dt_use = dt_max
        nsteps = int(np.ceil(T / dt_use - 1e-12))
        dt_use = T / nsteps
        slices, times, maxq, qmaxs = _time_march(spec, u0, caps, alphas,
                                                 eps_diff, dt_use, output_times)
        if attempt < int(refine):
            from scipy import ndimage
            caps = []
            for ax in range(g.dim):
                c2 = ndimage.maximum_filter(qmaxs[ax], size=5, mode="wrap")
                caps.append(np.ascontiguousarray(1.05 * c2 + 0.1))

    return TimeDependentResult(slices=slices, times=times, epsilon=epsilon,
                               cfl_dt=dt_use, realized_gradient=float(np.sqrt(maxq)),
                               gradient_cap=float(max(c.max() for c in caps)))


# ---------------------------------------------------------------------------
# Feynman-Kac Monte Carlo oracle (gamma = 2, isotropic diffusion)
# ---------------------------------------------------------------------------

@dataclass
class FKEstimate:
    value: float
    ci_halfwidth: float
    n_paths: int
    hits: int
    mean_hit_time: float


def periodic_bilinear(f: ScalarField, pts: np.ndarray) -> np.ndarray:
    g = f.grid
    x = np.asarray(pts, dtype=float) / g.h
    i0 = np.floor(x).astype(np.int64)
    frac = x - i0
    if g.dim == 1:
        a = f.values[i0[:, 0] % g.n]
        b = f.values[(i0[:, 0] + 1) % g.n]
        return a * (1 - frac[:, 0]) + b * frac[:, 0]
    ix, iy = i0[:, 0] % g.n, i0[:, 1] % g.n
    ix1, iy1 = (i0[:, 0] + 1) % g.n, (i0[:, 1] + 1) % g.n
    fx, fy = frac[:, 0], frac[:, 1]
    v = f.values
    return (v[ix, iy] * (1 - fx) * (1 - fy) + v[ix1, iy] * fx * (1 - fy)
            + v[ix, iy1] * (1 - fx) * fy + v[ix1, iy1] * fx * fy)


def feynman_kac_metric(spec, mu, y, *, n_paths=4096, dt=5e-4, seed=0,
                       max_steps=400_000, source_radius=1.0,
                       confidence=1.96) -> FKEstimate:
    """Monte Carlo estimate of the viscous metric value at displacement y.

    Simulates the diffusion with generator sigma2 * laplacian from the probe
    point, accumulating exp(-int (V + mu) ds) until the path first hits the
    source ball; returns -log of the path average with a delta-method CI.
    The potential is read by periodic bilinear interpolation.
    """
    if spec.gamma != 2.0 or spec.form != "separated":
        raise ParameterError("the killed-diffusion estimator needs the "
                             "separated form with gamma = 2")
    if spec.sigma2 <= 0:
        raise ParameterError("the killed-diffusion estimator needs sigma2 > 0")
    if mu < 0:
        raise ParameterError("mu must be nonnegative")
    g = spec.grid
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.linalg.norm(y) <= source_radius:
        raise ParameterError("probe point must lie outside the source ball")
    center = np.full(g.dim, (g.n // 2) * g.h)
    rng = np.random.Generator(np.random.Philox(key=[np.uint64(seed),
                                                    np.uint64(_FK_STREAM)]))
    pos = np.tile(center + y, (n_paths, 1))
    weight_log = np.zeros(n_paths)
    hit_weight = np.zeros(n_paths)
    hit = np.zeros(n_paths, dtype=bool)
    hit_time = np.zeros(n_paths)
    active = np.arange(n_paths)
    step_scale = np.sqrt(2.0 * spec.sigma2 * dt)
    min_dist = np.inf

    steps = 0
    while active.size and steps < max_steps:
        cur = pos[active]
        V = periodic_bilinear(spec.potential, np.mod(cur, g.box_side))
        weight_log[active] -= (V + mu) * dt
        cur = cur + step_scale * rng.standard_normal(cur.shape)
        pos[active] = cur
        d = np.linalg.norm(cur - center, axis=1)
        min_dist = min(min_dist, float(d.min()))
        arrived = d <= source_radius
        if arrived.any():
            idx = active[arrived]
            hit[idx] = True
            hit_weight[idx] = np.exp(weight_log[idx])
            hit_time[idx] = (steps + 1) * dt
            active = active[~arrived]
        steps += 1

    hits = int(hit.sum())
    if hits == 0:
        raise BudgetError(
            f"no path hit the source ball within {max_steps} steps",
            diagnostics={"closest_approach": min_dist,
                         "min_log_weight": float(weight_log.min()),
                         "n_paths": n_paths})
    w = hit_weight          # censored paths contribute 0, consistent with the
    mean_w = float(w.mean())  # indicator inside the expectation
    sd_w = float(w.std(ddof=1))
    value = -np.log(mean_w)
    ci = confidence * sd_w / (np.sqrt(n_paths) * mean_w)
    return FKEstimate(value=float(value), ci_halfwidth=float(ci),
                      n_paths=n_paths, hits=hits,
                      mean_hit_time=float(hit_time[hit].mean()))
