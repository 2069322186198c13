"""Stationary random environments: point clouds, bump potentials, diagnostics.

A realized environment is a point cloud on a periodic box together with the
rasterized potential V(y) = sum_j W(y - y_j), where W is a smooth nonnegative
bump of compact support with W(0) = 1.  Bumps straddling a box edge wrap
around (periodic images), so one sampled box is exactly stationary under
torus translations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .numerics import Grid, ScalarField

# Philox streams: one role per stream so draws are order-independent.
_STREAM_COUNT = 0
_STREAM_POSITION = 1
_STREAM_OFFSPRING = 2
_STREAM_OFFSET = 3

PROFILE_SHAPES = ("cos2", "quartic")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(stream)]))


@dataclass(frozen=True)
class BumpProfile:
    """Compactly supported bump W with W(0)=1, W=0 outside |y| >= radius."""

    radius: float
    shape: str = "cos2"

    def __post_init__(self):
        if not (self.radius > 0 and np.isfinite(self.radius)):
            raise ParameterError(f"bad bump radius {self.radius}")
        if self.shape not in PROFILE_SHAPES:
            raise ParameterError(f"unknown bump shape '{self.shape}'")

    def __call__(self, dist: np.ndarray) -> np.ndarray:
        dist = np.asarray(dist, dtype=float)
        s = dist / self.radius
        inside = s < 1.0
        if self.shape == "cos2":
            w = np.where(inside, np.cos(0.5 * np.pi * np.minimum(s, 1.0)) ** 2, 0.0)
        else:
            w = np.where(inside, (1.0 - np.minimum(s, 1.0) ** 2) ** 2, 0.0)
        return w


@dataclass
class PointCloud:
    points: np.ndarray          # (k, dim)
    box_side: float
    dim: int
    seed: int
    process_kind: str
    params: dict = field(default_factory=dict)
    periodic: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, self.dim)
        if pts.size and (pts.min() < 0 or pts.max() >= self.box_side):
            raise ParameterError("cloud points must lie in [0, L)^d")
        self.points = pts

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass
class EnvironmentSample:
    cloud: PointCloud
    profile: BumpProfile
    potential: ScalarField
    alpha_diag: float
    beta_diag: float


def _check_rate(name, value):
    if not (np.isfinite(value) and value >= 0):
        raise ParameterError(f"{name} must be finite and >= 0, got {value}")


def sample_poisson_cloud(intensity: float, box_side: float, dim: int, seed: int) -> PointCloud:
    """Homogeneous Poisson cloud: Poisson(nu*L^d) points, i.i.d. uniform."""
    _check_rate("intensity", intensity)
    if not (box_side > 0 and np.isfinite(box_side)):
        raise ParameterError(f"box_side must be positive, got {box_side}")
    if dim not in (1, 2):
        raise ParameterError(f"dim must be 1 or 2, got {dim}")
    count = int(_rng(seed, _STREAM_COUNT).poisson(intensity * box_side ** dim))
    pts = _rng(seed, _STREAM_POSITION).uniform(0.0, box_side, size=(count, dim))
    pts = np.minimum(pts, np.nextafter(box_side, 0.0))
    return PointCloud(pts, box_side, dim, seed, "poisson", {"nu": float(intensity)})


def sample_cluster_cloud(center_intensity: float, offspring_mean: float,
                         offspring_spread: float, box_side: float, dim: int,
                         seed: int) -> PointCloud:
    """Poisson cluster cloud: Poisson centers, each with a Poisson number of
    Gaussian offspring, wrapped into the box.  Centers are kept in the cloud."""
    _check_rate("center_intensity", center_intensity)
    _check_rate("offspring_mean", offspring_mean)
    _check_rate("offspring_spread", offspring_spread)
    if not (box_side > 0 and np.isfinite(box_side)):
        raise ParameterError(f"box_side must be positive, got {box_side}")
    if dim not in (1, 2):
        raise ParameterError(f"dim must be 1 or 2, got {dim}")
    n_centers = int(_rng(seed, _STREAM_COUNT).poisson(center_intensity * box_side ** dim))
    centers = _rng(seed, _STREAM_POSITION).uniform(0.0, box_side, size=(n_centers, dim))
    counts = _rng(seed, _STREAM_OFFSPRING).poisson(offspring_mean, size=n_centers)
    total = int(counts.sum())
    offsets = _rng(seed, _STREAM_OFFSET).normal(0.0, 1.0, size=(total, dim))
    offsets *= offspring_spread
    parents = np.repeat(np.arange(n_centers), counts) if n_centers else np.zeros(0, int)
    offspring = (centers[parents] + offsets) % box_side if total else np.zeros((0, dim))
    pts = np.vstack([centers, offspring])
    pts = np.minimum(pts, np.nextafter(box_side, 0.0))
    return PointCloud(pts, box_side, dim, seed, "cluster",
                      {"center_nu": float(center_intensity),
                       "offspring_mean": float(offspring_mean),
                       "offspring_spread": float(offspring_spread)})


def _wrap(delta: np.ndarray, box_side: float) -> np.ndarray:
    # nearest periodic image; exact when coords and L share a binary grid
    return delta - box_side * np.round(delta / box_side)


def potential_at(cloud: PointCloud, profile: BumpProfile, points) -> np.ndarray:
    """Sum of bumps evaluated at arbitrary coordinates (batch)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != cloud.dim:
        raise ParameterError("query points have wrong dimension")
    if cloud.count == 0:
        return np.zeros(pts.shape[0])
    if profile.radius > cloud.box_side / 2:
        raise ParameterError("bump radius must not exceed half the box side")
    out = np.zeros(pts.shape[0])
    chunk = max(1, int(4e6) // max(cloud.count, 1))
    for lo in range(0, pts.shape[0], chunk):
        block = pts[lo:lo + chunk]
        delta = block[:, None, :] - cloud.points[None, :, :]
        if cloud.periodic:
            delta = _wrap(delta, cloud.box_side)
        dist = np.sqrt(np.sum(delta * delta, axis=2))
        out[lo:lo + chunk] = profile(dist).sum(axis=1)
    return out


def evaluate_potential(cloud: PointCloud, profile: BumpProfile, y) -> float:
    """V(y) = sum_j W(y - y_j) with periodic images of nearby points."""
    return float(potential_at(cloud, profile, np.atleast_2d(np.asarray(y, float)))[0])


def rasterize_potential(cloud: PointCloud, profile: BumpProfile, grid: Grid) -> ScalarField:
    """Potential on grid nodes; each node value equals evaluate_potential there.

    Accumulates per-point patches (support is compact), which is O(points)
    rather than O(points * nodes).
    """
    if abs(grid.box_side - cloud.box_side) > 1e-9 * max(1.0, cloud.box_side):
        raise ParameterError(
            f"grid box {grid.box_side} does not match cloud box {cloud.box_side}")
    if grid.dim != cloud.dim:
        raise ParameterError("grid dim does not match cloud dim")
    if profile.radius > cloud.box_side / 2:
        raise ParameterError("bump radius must not exceed half the box side")
    vals = np.zeros(grid.shape)
    if cloud.count == 0:
        return ScalarField(grid, vals)
    h, n, L = grid.h, grid.n, grid.box_side
    half = int(np.ceil(profile.radius / h)) + 1
    offs = np.arange(-half, half + 1)
    for pt in cloud.points:
        anchor = np.floor(pt / h).astype(int)
        if grid.dim == 1:
            idx = anchor[0] + offs
            coord = idx * h
            delta = _wrap(coord - pt[0], L)
            w = profile(np.abs(delta))
            np.add.at(vals, idx % n, w)
        else:
            ix = anchor[0] + offs
            iy = anchor[1] + offs
            dx = _wrap(ix * h - pt[0], L)
            dy = _wrap(iy * h - pt[1], L)
            dist = np.sqrt(dx[:, None] ** 2 + dy[None, :] ** 2)
            w = profile(dist)
            vals[np.ix_(ix % n, iy % n)] += w
    return ScalarField(grid, vals)


def make_environment(cloud: PointCloud, profile: BumpProfile, grid: Grid,
                     alpha_diag: float | None = None,
                     beta_diag: float | None = None) -> EnvironmentSample:
    if alpha_diag is None:
        alpha_diag = cloud.dim + 1.0
    if beta_diag is None:
        beta_diag = 4.0 * cloud.dim
    return EnvironmentSample(cloud, profile, rasterize_potential(cloud, profile, grid),
                             alpha_diag, beta_diag)


# ---------------------------------------------------------------------------
# Statistical diagnostics
# ---------------------------------------------------------------------------

@dataclass
class MomentEstimate:
    mean: float
    ci_halfwidth: float
    n_samples: int


def _sup_over_ball(sample: EnvironmentSample, center, radius: float) -> float:
    from .numerics import ball_mask
    mask = ball_mask(sample.potential.grid, center, radius)
    return float(sample.potential.values[mask].max())


def moment_diagnostic(samples, alpha: float) -> MomentEstimate:
    """Monte Carlo estimate of E[sup_{B_1} V^alpha] with a normal CI."""
    if not samples:
        raise ParameterError("moment_diagnostic needs at least one sample")
    if not (alpha > 0):
        raise ParameterError("alpha must be positive")
    vals = []
    for s in samples:
        c = (s.potential.grid.n // 2,) * s.potential.grid.dim
        vals.append(_sup_over_ball(s, c, 1.0) ** alpha)
    vals = np.asarray(vals)
    n = len(vals)
    half = 1.96 * vals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    return MomentEstimate(float(vals.mean()), float(half), n)


def sublinearity_diagnostic(sample: EnvironmentSample, sigma: float, radii) -> np.ndarray:
    """Decay profile R^{-sigma} * sup_{B_R} V along a radii schedule."""
    if not (0 < sigma < 1):
        raise ParameterError("sigma must lie in (0, 1)")
    g = sample.potential.grid
    center = (g.n // 2,) * g.dim
    out = []
    for r in radii:
        if r <= 0:
            raise ParameterError("radii must be positive")
        rr = min(r, g.box_side / 2)
        out.append(r ** (-sigma) * _sup_over_ball(sample, center, rr))
    return np.asarray(out)


def correlation_decay_diagnostic(samples, separations) -> np.ndarray:
    """Empirical covariance of sup_{B(y,1)} V at two sites vs separation."""
    separations = list(separations)
    if len(separations) < 2:
        raise ParameterError("need at least two separations")
    if not samples:
        raise ParameterError("need at least one sample")
    g = samples[0].potential.grid
    base = (g.n // 4,) * g.dim
    covs = []
    for r in separations:
        shift_nodes = int(round(r / g.h))
        other = ((base[0] + shift_nodes) % g.n,) + base[1:]
        xs, ys = [], []
        for s in samples:
            xs.append(_sup_over_ball(s, base, 1.0))
            ys.append(_sup_over_ball(s, other, 1.0))
        xs, ys = np.asarray(xs), np.asarray(ys)
        covs.append(float(np.mean(xs * ys) - xs.mean() * ys.mean()))
    return np.asarray(covs)


# ---------------------------------------------------------------------------
# Cloud serialization: text, one point per line, `# key=value` headers.
# ---------------------------------------------------------------------------

def write_cloud(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# kind={cloud.process_kind}\n")
        fh.write(f"# seed={cloud.seed}\n")
        fh.write(f"# L={cloud.box_side!r}\n")
        fh.write(f"# d={cloud.dim}\n")
        for k, v in sorted(cloud.params.items()):
            fh.write(f"# {k}={v!r}\n")
        for pt in cloud.points:
            fh.write(" ".join(f"{x:.17g}" for x in pt) + "\n")


def read_cloud(path) -> PointCloud:
    headers = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                headers[key.strip()] = val.strip()
            else:
                rows.append([float(t) for t in line.split()])
    for key in ("kind", "seed", "L", "d"):
        if key not in headers:
            raise ParameterError(f"cloud file missing header '{key}'")
    dim = int(headers.pop("d"))
    box = float(headers.pop("L"))
    seed = int(headers.pop("seed"))
    kind = headers.pop("kind")
    params = {k: float(v) for k, v in headers.items()}
    pts = np.asarray(rows, dtype=float).reshape(-1, dim)
    return PointCloud(pts, box, dim, seed, kind, params)
