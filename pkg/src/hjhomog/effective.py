"""Effective-Hamiltonian estimation and verification.

Three independent routes to Hbar(p):

  * delta route: resolvent solves over a shrinking delta schedule, statistic
    -<delta v^delta> extrapolated linearly to delta = 0;
  * metric inversion: directional slopes of the metric solutions over a mu
    grid, inverted through the support-function relation;
  * solvability bisection: the feasible/infeasible threshold of the metric
    problem in mu.

Plus the homogenized side: convex tables, Legendre transforms, a Hopf-Lax
solver for the limit equation, the desk-scale closure experiment, and a
property report for estimated tables.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BracketError, ParameterError, RangeError, SolverDivergence
from .numerics import ScalarField
from .solvers import (MetricSolution, directional_slopes, solve_delta,
                      solve_metric, solve_time_dependent)

COMPASS_2D = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


def _map_jobs(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Delta route
# ---------------------------------------------------------------------------

@dataclass
class HbarEstimate:
    value: float                # linear-in-delta extrapolation
    spread: float               # seed-to-seed deviation + fit residual
    raw_smallest_delta: float   # un-extrapolated statistic at the smallest delta
    per_delta: dict             # delta -> per-seed statistics
    per_seed_fit: list          # per-seed (intercept, slope)
    oscillations: dict          # delta -> per-seed box osc of delta*v


def estimate_hbar_delta(specs, p, deltas, *, tol=1e-5, threads=1,
                        solver_kwargs=None, keep_results=False):
    """Delta-route estimate of Hbar(p) over per-seed environments.

    Each seed walks the delta schedule from largest to smallest with warm
    starts (previous field rescaled by the delta ratio).  Solves run with the
    refinement pass on, which trims the numerical-viscosity bias that
    dominates near the flat spot.  Any solve failure propagates with its
    seed/delta identification attached.
    """
    deltas = sorted(float(d) for d in deltas)
    if not deltas:
        raise ParameterError("empty delta schedule")
    solver_kwargs = dict(solver_kwargs or {})
    solver_kwargs.setdefault("refine", 2)

    def run_seed(item):
        idx, spec = item
        stats = {}
        oscs = {}
        results = {}
        prev = None
        prev_delta = None
        for d in sorted(deltas, reverse=True):
            initial = None
            if prev is not None:
                initial = ScalarField(prev.grid, prev.values * (prev_delta / d))
            try:
                res = solve_delta(spec, p, d, tol=tol, initial=initial,
                                  **solver_kwargs)
            except SolverDivergence as exc:
                raise SolverDivergence(
                    f"seed index {idx}, delta={d}: {exc}",
                    residual_history=exc.residual_history,
                    realized_gradient=exc.realized_gradient,
                    gradient_cap=exc.gradient_cap) from exc
            stats[d] = res.hbar_estimate
            oscs[d] = res.delta_v_oscillation
            results[d] = res
            prev, prev_delta = res.v, d
        return stats, oscs, results

    out = _map_jobs(run_seed, list(enumerate(specs)), threads)
    per_delta = {d: [o[0][d] for o in out] for d in deltas}
    oscillations = {d: [o[1][d] for o in out] for d in deltas}

    fits = []
    for o in out:
        ys = np.array([o[0][d] for d in deltas])
        if len(deltas) >= 2:
            slope, intercept = np.polyfit(np.array(deltas), ys, 1)
        else:
            slope, intercept = 0.0, ys[0]
        fits.append((float(intercept), float(slope)))
    intercepts = np.array([f[0] for f in fits])
    value = float(intercepts.mean())
    seed_dev = float(intercepts.std(ddof=1)) if len(intercepts) > 1 else 0.0
    fit_res = 0.0
    for o, (b, a) in zip(out, fits):
        ys = np.array([o[0][d] for d in deltas])
        fit_res = max(fit_res, float(np.abs(ys - (a * np.array(deltas) + b)).max()))
    est = HbarEstimate(value=value, spread=seed_dev + fit_res,
                       raw_smallest_delta=float(np.mean(per_delta[deltas[0]])),
                       per_delta=per_delta, per_seed_fit=fits,
                       oscillations=oscillations)
    if keep_results:
        est.results = [o[2] for o in out]
    return est


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass
class HbarTable:
    p_grid: np.ndarray          # (k, d)
    estimates: np.ndarray       # (k,)
    spreads: np.ndarray         # (k,)
    route: str
    convexified: bool = False
    n_seeds: int = 0
    details: list = field(default_factory=list)

    def __post_init__(self):
        self.p_grid = np.atleast_2d(np.asarray(self.p_grid, dtype=float))
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.spreads = np.asarray(self.spreads, dtype=float)

    @property
    def dim(self):
        return self.p_grid.shape[1]


def build_hbar_table(specs, p_list, deltas, *, tol=1e-5, threads=1,
                     solver_kwargs=None) -> HbarTable:
    p_list = [np.atleast_1d(np.asarray(p, dtype=float)) for p in p_list]

    def one(p):
        return estimate_hbar_delta(specs, p, deltas, tol=tol, threads=1,
                                   solver_kwargs=solver_kwargs)

    ests = _map_jobs(one, p_list, threads)
    return HbarTable(p_grid=np.vstack(p_list),
                     estimates=np.array([e.value for e in ests]),
                     spreads=np.array([e.spread for e in ests]),
                     route="delta", n_seeds=len(specs), details=ests)


def _collinear_param(p_grid):
    """Signed parameter along the common line, or None if not collinear."""
    p0 = p_grid[0]
    diffs = p_grid - p0
    norms = np.linalg.norm(diffs, axis=1)
    if norms.max() == 0:
        return None
    e = diffs[int(norms.argmax())] / norms.max()
    perp = diffs - np.outer(diffs @ e, e)
    if np.abs(perp).max() > 1e-10 * max(1.0, norms.max()):
        return None
    return diffs @ e


def _lower_envelope_1d(s, v):
    order = np.argsort(s)
    ss, vv = s[order], v[order]
    hull = []               # monotone chain, lower hull of (s, v)
    for x, y in zip(ss, vv):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (y2 - y1) * (x - x2) >= (y - y2) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append((x, y))
    hx = np.array([h[0] for h in hull])
    hy = np.array([h[1] for h in hull])
    out = np.interp(s, hx, hy)
    return out


def convexify_table(table: HbarTable) -> HbarTable:
    """Lower convex envelope of the estimates on the p-grid."""
    s = _collinear_param(table.p_grid)
    if s is not None or table.dim == 1:
        if s is None:
            s = table.p_grid[:, 0]
        env = _lower_envelope_1d(np.asarray(s, float), table.estimates)
    else:
        from scipy.interpolate import LinearNDInterpolator
        from scipy.spatial import ConvexHull
        pts = np.column_stack([table.p_grid, table.estimates])
        hull = ConvexHull(pts)
        lower_vertices = set()
        for facet, normal in zip(hull.simplices, hull.equations[:, :-1]):
            if normal[-1] < -1e-12:
                lower_vertices.update(int(i) for i in facet)
        idx = sorted(lower_vertices)
        interp = LinearNDInterpolator(table.p_grid[idx], table.estimates[idx])
        env = interp(table.p_grid)
        env = np.where(np.isnan(env), table.estimates, env)
    return replace(table, estimates=np.minimum(env, table.estimates),
                   convexified=True)


def isotropic_table(ray_table: HbarTable, n_theta=32) -> HbarTable:
    """Expand a radial profile (p on a single ray from 0) into a full 2-d
    polar p-grid, assuming the law of the environment is isotropic."""
    s = np.linalg.norm(ray_table.p_grid, axis=1)
    order = np.argsort(s)
    s, est, spr = s[order], ray_table.estimates[order], ray_table.spreads[order]
    thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    ps, es, sp = [], [], []
    for si, ei, vi in zip(s, est, spr):
        if si == 0:
            ps.append((0.0, 0.0))
            es.append(ei)
            sp.append(vi)
            continue
        for th in thetas:
            ps.append((si * np.cos(th), si * np.sin(th)))
            es.append(ei)
            sp.append(vi)
    return HbarTable(np.array(ps), np.array(es), np.array(sp),
                     route=ray_table.route, convexified=False,
                     n_seeds=ray_table.n_seeds)


# ---------------------------------------------------------------------------
# Metric route
# ---------------------------------------------------------------------------

@dataclass
class EffectiveMetricProfile:
    mu: float
    p: np.ndarray
    directions: tuple
    slopes: dict              # direction -> slope at the largest t (seed mean)
    history: dict             # direction -> [(t, seed-mean slope), ...]
    infeasible_fraction: float
    unreliable: bool
    n_seeds: int


def estimate_mbar(specs, p, mu, *, directions=None, t_schedule=None,
                  prior_hbar=None, threads=1, solver_kwargs=None) -> EffectiveMetricProfile:
    """Directional slope profile of the metric solutions at level mu."""
    solver_kwargs = dict(solver_kwargs or {})
    if prior_hbar is not None and mu <= prior_hbar:
        warnings.warn(f"mu={mu} is not above the prior Hbar estimate "
                      f"{prior_hbar}; the metric problem may be infeasible",
                      stacklevel=2)

    def run(spec):
        return solve_metric(spec, p, mu, **solver_kwargs)

    sols = _map_jobs(run, list(specs), threads)
    grid = sols[0].m.grid
    if directions is None:
        directions = ((1,), (-1,)) if grid.dim == 1 else COMPASS_2D
    if t_schedule is None:
        tmax = 0.45 * grid.box_side
        t_schedule = [tmax / 4, tmax / 2, tmax]
    t_schedule = sorted(t_schedule)

    feasible = [s for s in sols if s.feasible]
    frac_bad = 1.0 - len(feasible) / len(sols)
    history = {tuple(e): [] for e in directions}
    slopes = {}
    use = feasible if feasible else sols
    for t in t_schedule:
        per_dir = {tuple(e): [] for e in directions}
        for s in use:
            ds = directional_slopes(s.m, s.source_node, t, directions)
            for e, val in ds.items():
                per_dir[e].append(val)
        for e in per_dir:
            history[e].append((t, float(np.mean(per_dir[e]))))
    for e in history:
        slopes[e] = history[e][-1][1]
    return EffectiveMetricProfile(mu=mu, p=np.atleast_1d(np.asarray(p, float)),
                                  directions=tuple(tuple(e) for e in directions),
                                  slopes=slopes, history=history,
                                  infeasible_fraction=frac_bad,
                                  unreliable=frac_bad > 0.2, n_seeds=len(sols))


@dataclass
class InversionResult:
    value: float
    floored: bool


def invert_metric_to_hbar(profiles, p0, p) -> InversionResult:
    """Recover Hbar(p) as inf{mu : slope_mu(e) > (p - p0).e for all tabled e}.

    Linear interpolation in mu on the exceedance margin; if even the smallest
    tabled mu exceeds, returns it with a floor flag.
    """
    profiles = sorted(profiles, key=lambda pr: pr.mu)
    if not profiles:
        raise ParameterError("no profiles supplied")
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))

    def margin(pr):
        vals = []
        for e, slope in pr.slopes.items():
            ev = np.asarray(e, dtype=float)
            ev = ev / np.linalg.norm(ev)
            vals.append(slope - float((p - p0) @ ev))
        return min(vals)

    margins = [margin(pr) for pr in profiles]
    if margins[0] > 0:
        return InversionResult(value=profiles[0].mu, floored=True)
    for k in range(1, len(profiles)):
        if margins[k] > 0:
            mu_lo, mu_hi = profiles[k - 1].mu, profiles[k].mu
            g_lo, g_hi = margins[k - 1], margins[k]
            mu_star = mu_lo + (0.0 - g_lo) * (mu_hi - mu_lo) / (g_hi - g_lo)
            return InversionResult(value=float(mu_star), floored=False)
    raise RangeError(
        f"mu grid (max {profiles[-1].mu}) does not bracket the query at p={p}; "
        "extend the grid upward")


def solvability_hbar(specs, p, mu_lo, mu_hi, *, tol=0.05, threads=1,
                     solver_kwargs=None) -> float:
    """Bisection on the majority feasible/infeasible verdict of the metric
    problem; returns the threshold, the solvability characterization of Hbar."""
    solver_kwargs = dict(solver_kwargs or {})
    if not mu_lo < mu_hi:
        raise ParameterError("need mu_lo < mu_hi")

    def feasible(mu):
        def run(spec):
            return solve_metric(spec, p, mu, **solver_kwargs).feasible
        verdicts = _map_jobs(run, list(specs), threads)
        return sum(verdicts) > len(verdicts) / 2

    if feasible(mu_lo):
        raise BracketError(f"mu_lo={mu_lo} is already feasible; lower it")
    if not feasible(mu_hi):
        raise BracketError(f"mu_hi={mu_hi} is still infeasible; raise it")
    lo, hi = float(mu_lo), float(mu_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Legendre transform and Hopf-Lax
# ---------------------------------------------------------------------------

@dataclass
class LagrangianTable:
    v_axes: tuple
    values: np.ndarray
    dim: int

    def interpolator(self):
        from scipy.interpolate import RegularGridInterpolator
        return RegularGridInterpolator(self.v_axes, self.values,
                                       bounds_error=False, fill_value=None)

    @property
    def v_max(self):
        return min(float(ax.max()) for ax in self.v_axes)


def legendre(table: HbarTable, *, v_max=None, n_v=65) -> LagrangianTable:
    """Discrete convex conjugate Lbar(v) = max_p (p.v - Hbar(p)) over the table."""
    if not table.convexified:
        raise ParameterError("legendre needs a convexified table")
    P = table.p_grid
    est = table.estimates
    if v_max is None:
        vmax = 0.0
        for i in range(len(est)):
            for j in range(i + 1, len(est)):
                dp = np.linalg.norm(P[i] - P[j])
                if dp > 1e-12:
                    vmax = max(vmax, abs(est[i] - est[j]) / dp)
        v_max = 1.2 * vmax + 1e-6
    axes = tuple(np.linspace(-v_max, v_max, n_v) for _ in range(table.dim))
    if table.dim == 1:
        V = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        V = np.column_stack([g0.ravel(), g1.ravel()])
    vals = (V @ P.T - est[None, :]).max(axis=1)
    shape = (n_v,) * table.dim
    return LagrangianTable(v_axes=axes, values=vals.reshape(shape), dim=table.dim)


def hbar_from_lagrangian(lag: LagrangianTable, p_points) -> np.ndarray:
    """Biconjugate evaluated at p_points (recovers the convexified table)."""
    if lag.dim == 1:
        V = lag.v_axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(lag.v_axes[0], lag.v_axes[1], indexing="ij")
        V = np.column_stack([g0.ravel(), g1.ravel()])
    L = lag.values.ravel()
    P = np.atleast_2d(np.asarray(p_points, dtype=float))
    return (P @ V.T - L[None, :]).max(axis=1)


def hopf_lax_solve(u0: ScalarField, lag: LagrangianTable, t, *,
                   out_nodes=None, v_reach=None):
    """Variational solution u(x, t) = min_y [u0(y) + t Lbar((x - y)/t)].

    The minimization runs over grid nodes within reach t * v_reach of x
    (wrapped on periodic grids).  Returns a ScalarField on the u0 grid, or an
    array of values when out_nodes is given.
    """
    g = u0.grid
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if lag.dim != g.dim:
        raise ParameterError("lagrangian dimension does not match the grid")
    if t < 1e-12:
        if out_nodes is None:
            return u0.copy()
        return np.array([u0.values[tuple(nd)] for nd in out_nodes])
    if v_reach is None:
        v_reach = lag.v_max
    reach = t * v_reach
    if g.periodic:
        reach = min(reach, g.box_side / 2 - g.h)
    kmax = max(1, int(np.floor(reach / g.h)))
    offs = np.arange(-kmax, kmax + 1)
    interp = lag.interpolator()
    if g.dim == 1:
        disp = offs[:, None] * g.h
        keep = np.abs(disp[:, 0]) <= reach
    else:
        o0, o1 = np.meshgrid(offs, offs, indexing="ij")
        disp = np.column_stack([o0.ravel(), o1.ravel()]) * g.h
        keep = np.linalg.norm(disp, axis=1) <= reach
    disp = disp[keep]
    kernel = t * interp(disp / t)
    off_idx = np.round(disp / g.h).astype(int)

    def value_at(node):
        node = np.asarray(node, dtype=int)
        nb = node[None, :] + off_idx
        if g.periodic:
            nb = nb % g.n
        else:
            valid = np.all((nb >= 0) & (nb < g.n), axis=1)
            nb, kern = nb[valid], kernel[valid]
            vals = u0.values[tuple(nb.T)] + kern
            return float(vals.min())
        vals = u0.values[tuple(nb.T)] + kernel
        return float(vals.min())

    if out_nodes is not None:
        return np.array([value_at(nd) for nd in out_nodes])
    out = np.empty(g.shape)
    for node in np.ndindex(g.shape):
        out[node] = value_at(node)
    return ScalarField(g, out)


# ---------------------------------------------------------------------------
# Homogenization closure experiment
# ---------------------------------------------------------------------------

@dataclass
class ClosureResult:
    epsilons: list
    errors: list
    T: float
    window_radius: float
    reference: np.ndarray
    probe_nodes: np.ndarray


def homogenization_closure(env, base_spec, u0: ScalarField, epsilons, T, *,
                           hbar_table: HbarTable, window_radius,
                           n_theta=32, n_v=81, threads=1,
                           solver_kwargs=None) -> ClosureResult:
    """Compare the oscillatory solves u^eps against the Hopf-Lax solution of
    the effective equation on a fixed interior window; returns the sup-window
    error per epsilon."""
    from .env import potential_at
    from .hamiltonian import HamiltonianSpec

    solver_kwargs = dict(solver_kwargs or {})
    g = u0.grid
    if not g.periodic:
        raise ParameterError("closure runs on a periodic window grid")
    table = hbar_table
    if table.dim == 1 and g.dim == 2:
        raise ParameterError("need a 2-d table (expand radial tables first)")
    if not table.convexified:
        table = convexify_table(table)
    lag = legendre(table, n_v=n_v)

    center = (g.n // 2,) * g.dim
    probes = []
    for node in np.ndindex(g.shape):
        d = np.linalg.norm((np.asarray(node) - np.asarray(center)) * g.h)
        if d <= window_radius:
            probes.append(node)
    probes = np.asarray(probes)
    ref = hopf_lax_solve(u0, lag, T, out_nodes=probes)

    ax = g.axis_coords()
    if g.dim == 1:
        coords = ax[:, None]
    else:
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        coords = np.column_stack([xx.ravel(), yy.ravel()])

    def run_eps(eps):
        ypts = np.mod(coords / eps, env.cloud.box_side)
        Veps = potential_at(env.cloud, env.profile, ypts).reshape(g.shape)
        spec_eps = HamiltonianSpec(base_spec.form, base_spec.gamma, base_spec.c0,
                                   base_spec.C0, ScalarField(g, Veps),
                                   base_spec.sigma2)
        kw = dict(solver_kwargs)
        kw.setdefault("refine", 1)
        res = solve_time_dependent(spec_eps, u0, eps, T, **kw)
        uf = res.slices[-1].values
        vals = np.array([uf[tuple(nd)] for nd in probes])
        return float(np.abs(vals - ref).max())

    errors = _map_jobs(run_eps, list(epsilons), threads)
    return ClosureResult(epsilons=list(epsilons), errors=errors, T=T,
                         window_radius=window_radius, reference=ref,
                         probe_nodes=probes)


# ---------------------------------------------------------------------------
# Property suite
# ---------------------------------------------------------------------------

@dataclass
class Finding:
    name: str
    passed: bool
    value: float
    threshold: float
    witness: str = ""


@dataclass
class PropertyReport:
    findings: list

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.findings)

    def summary(self) -> str:
        lines = []
        for f in self.findings:
            status = "pass" if f.passed else "FAIL"
            lines.append(f"[{status}] {f.name}: value={f.value:.6g} "
                         f"threshold={f.threshold:.6g} {f.witness}")
        return "\n".join(lines)


def default_sandwich_constant(spec) -> float:
    # frozen from the zero-potential calibration (C = c0 there) x3 headroom
    return 3.0 * (spec.c0 + spec.C0 + 1.0)


def default_lipschitz_constant(spec) -> float:
    return 3.0 * spec.gamma * spec.c0 + 1.0


def property_suite(table: HbarTable, spec, *, sandwich_C=None, lipschitz_C=None,
                   flat_tol=0.05) -> PropertyReport:
    """Run the table-level checks: midpoint convexity, coercivity sandwich,
    Lipschitz quotient, and the flat-spot facts for separated V >= 0, A = 0.

    Always returns a report; failures are findings, not exceptions.
    """
    P, est, spr = table.p_grid, table.estimates, table.spreads
    findings = []

    worst = -np.inf
    witness = "no midpoint triples found"
    n_tri = 0
    for i in range(len(est)):
        for j in range(i + 1, len(est)):
            mid = 0.5 * (P[i] + P[j])
            dist = np.linalg.norm(P - mid, axis=1)
            k = int(dist.argmin())
            if dist[k] > 1e-9:
                continue
            n_tri += 1
            allowance = 2.0 * (spr[i] + spr[j] + spr[k]) / 3.0
            viol = est[k] - 0.5 * (est[i] + est[j])
            if viol - allowance > worst:
                worst = viol - allowance
                witness = (f"p1={P[i]}, p2={P[j]}, mid={P[k]}, "
                           f"violation={viol:.4g}, allowance={allowance:.4g}")
    if n_tri == 0:
        findings.append(Finding("midpoint_convexity", True, 0.0, 0.0, witness))
    else:
        findings.append(Finding("midpoint_convexity", worst <= 0.0,
                                float(worst), 0.0, witness))

    C = sandwich_C if sandwich_C is not None else default_sandwich_constant(spec)
    pn = np.linalg.norm(P, axis=1)
    lower = 0.5 * spec.c0 * pn ** spec.gamma - C
    upper = C * (1.0 + pn ** spec.gamma)
    gap = float(np.maximum(lower - est, est - upper).max())
    kbad = int(np.maximum(lower - est, est - upper).argmax())
    findings.append(Finding("coercivity_sandwich", gap <= 0.0, gap, 0.0,
                            f"worst at p={P[kbad]} (C={C:.3g})"))

    Lc = lipschitz_C if lipschitz_C is not None else default_lipschitz_constant(spec)
    qmax, qwit = 0.0, ""
    for i in range(len(est)):
        for j in range(i + 1, len(est)):
            dp = np.linalg.norm(P[i] - P[j])
            if dp < 1e-12:
                continue
            denom = (1.0 + pn[i] + pn[j]) ** (spec.gamma - 1.0) * dp
            q = abs(est[i] - est[j]) / denom
            if q > qmax:
                qmax, qwit = q, f"pair p1={P[i]}, p2={P[j]}"
    findings.append(Finding("lipschitz_quotient", qmax <= Lc, float(qmax),
                            float(Lc), qwit))

    separated_nonneg = (spec.form == "separated" and spec.sigma2 == 0.0
                        and (spec.potential is None
                             or spec.potential.values.min() >= -1e-12))
    if separated_nonneg:
        zero_idx = np.where(pn < 1e-12)[0]
        if zero_idx.size:
            h0 = float(est[zero_idx[0]])
            findings.append(Finding("flat_spot_level", abs(h0) <= flat_tol,
                                    h0, flat_tol, "Hbar(0)"))
            drop = float((h0 - est).max())
            findings.append(Finding("flat_spot_argmin", drop <= flat_tol,
                                    drop, flat_tol,
                                    "max of Hbar(0) - Hbar(p) over the table"))
            flat = pn[est <= est.min() + flat_tol]
            radius = float(flat.max()) if flat.size else 0.0
            findings.append(Finding("flat_spot_radius_report", True, radius,
                                    np.inf, "measured, not asserted"))
        else:
            findings.append(Finding("flat_spot_level", True, np.nan, flat_tol,
                                    "p=0 not in table; check skipped"))
    return PropertyReport(findings)


# ---------------------------------------------------------------------------
# CSV emitters (schemas shared with the CLI)
# ---------------------------------------------------------------------------

def hbar_table_csv(table: HbarTable, path) -> None:
    d = table.dim
    with open(path, "w") as fh:
        cols = [f"p_{i + 1}" for i in range(d)] + ["estimate", "spread",
                                                   "route", "n_seeds"]
        fh.write(",".join(cols) + "\n")
        for k in range(len(table.estimates)):
            row = [f"{x:.12g}" for x in table.p_grid[k]]
            row += [f"{table.estimates[k]:.12g}", f"{table.spreads[k]:.12g}",
                    table.route, str(table.n_seeds)]
            fh.write(",".join(row) + "\n")


def profile_csv(profiles, path) -> None:
    profiles = profiles if isinstance(profiles, (list, tuple)) else [profiles]
    with open(path, "w") as fh:
        fh.write("mu,direction,t,slope\n")
        for pr in profiles:
            for e, hist in pr.history.items():
                tag = ":".join(str(int(c)) for c in e)
                for t, slope in hist:
                    fh.write(f"{pr.mu:.12g},{tag},{t:.12g},{slope:.12g}\n")


def closure_csv(result: ClosureResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("epsilon,sup_error\n")
        for eps, err in zip(result.epsilons, result.errors):
            fh.write(f"{eps:.12g},{err:.12g}\n")
