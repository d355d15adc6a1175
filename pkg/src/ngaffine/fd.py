"""Monotone explicit finite differences for the worst-case Kolmogorov PDE.

Three configurations share one upwind machinery:

* path-independent payoffs on a 1-d state grid (the fully non-linear case),
* Asian payoffs on an (integral, state) grid, where the integral coordinate
  is advected with velocity equal to the state, and
* the linear PDE of the square-root worst case.

The scheme marches backward from the terminal data.  Per corner of the
parameter box, the first derivative is upwinded by the sign of that corner's
drift and the second derivative is central; the generator value is the max
over corners.  Because the corner drift and diffusion coordinates are
independent, the max splits into a drift max (4 corners) plus a diffusion
max (interval endpoint times the second difference), which is what the
implementation evaluates.

With the CFL bound dt * (alpha_max / dx^2 + beta_max / dx) <= 1 every update
is a convex combination of old values, so the discrete maximum principle and
all comparison-based invariants hold exactly.  At the spatial boundaries the
second difference is zeroed (linear extrapolation) and outflowing drift
contributions are dropped, which keeps the stencil monotone there too.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ParameterBox, diffusion_interval, drift_interval, eval_G

__all__ = [
    "CflError",
    "Grid1D",
    "Grid2D",
    "GridSolution",
    "ResidualStats",
    "pde_residual_check",
    "solve_asian_2d",
    "solve_linear_cir",
    "solve_nonlinear_1d",
]

MAGIC = b"NGAF"
BINARY_VERSION = 1


class CflError(ValueError):
    """Time step too large for the explicit monotone scheme."""


def _check_cfl(dt: float, dx: float, alpha_max: float, beta_max: float,
               extra: float = 0.0) -> float:
    load = dt * (alpha_max / dx ** 2 + beta_max / dx + extra)
    if load > 1.0 + 1e-12:
        raise CflError(
            f"CFL violation: dt*(alpha/dx^2 + beta/dx + adv) = {load:.3f} > 1; "
            f"dt={dt:.3e}, dx={dx:.3e}, alpha_max={alpha_max:.3e}, "
            f"beta_max={beta_max:.3e}")
    return load


def _box_extremes(box: ParameterBox, x: np.ndarray) -> tuple[float, float]:
    d_lo, d_hi = drift_interval(box, x)
    beta_max = float(np.maximum(np.abs(d_lo), np.abs(d_hi)).max())
    _, a_hi = diffusion_interval(box, x)
    alpha_max = float(np.max(a_hi))
    return alpha_max, beta_max


@dataclass(frozen=True)
class Grid1D:
    """Uniform state grid with an explicit time step, CFL-checked on build."""

    box: ParameterBox
    x_min: float
    x_max: float
    n_x: int
    n_t: int
    horizon: float

    def __post_init__(self) -> None:
        if self.n_x < 3 or self.n_t < 1 or self.x_max <= self.x_min:
            raise ValueError("need n_x >= 3, n_t >= 1 and x_max > x_min")
        alpha_max, beta_max = _box_extremes(self.box, self.x)
        _check_cfl(self.dt, self.dx, alpha_max, beta_max)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @classmethod
    def auto(cls, box: ParameterBox, x_min: float, x_max: float, n_x: int,
             horizon: float, safety: float = 0.8) -> "Grid1D":
        """Pick the largest stable step count for the requested resolution."""
        x = np.linspace(x_min, x_max, n_x)
        dx = (x_max - x_min) / (n_x - 1)
        alpha_max, beta_max = _box_extremes(box, x)
        dt_max = safety / (alpha_max / dx ** 2 + beta_max / dx)
        n_t = max(1, int(np.ceil(horizon / dt_max)))
        return cls(box, x_min, x_max, n_x, n_t, horizon)


@dataclass(frozen=True)
class Grid2D:
    """Grid for the Asian configuration: y is the running integral, z the state."""

    box: ParameterBox
    y_min: float
    y_max: float
    n_y: int
    z_min: float
    z_max: float
    n_z: int
    n_t: int
    horizon: float

    def __post_init__(self) -> None:
        if self.n_y < 3 or self.n_z < 3 or self.n_t < 1:
            raise ValueError("need n_y, n_z >= 3 and n_t >= 1")
        alpha_max, beta_max = _box_extremes(self.box, self.z)
        adv = max(abs(self.z_min), abs(self.z_max)) / self.dy
        _check_cfl(self.dt, self.dz, alpha_max, beta_max, extra=adv)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.n_z)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (self.n_z - 1)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @classmethod
    def auto(cls, box: ParameterBox, y_min: float, y_max: float, n_y: int,
             z_min: float, z_max: float, n_z: int, horizon: float,
             safety: float = 0.8) -> "Grid2D":
        z = np.linspace(z_min, z_max, n_z)
        dz = (z_max - z_min) / (n_z - 1)
        dy = (y_max - y_min) / (n_y - 1)
        alpha_max, beta_max = _box_extremes(box, z)
        adv = max(abs(z_min), abs(z_max)) / dy
        dt_max = safety / (alpha_max / dz ** 2 + beta_max / dz + adv)
        n_t = max(1, int(np.ceil(horizon / dt_max)))
        return cls(box, y_min, y_max, n_y, z_min, z_max, n_z, n_t, horizon)


@dataclass
class GridSolution:
    """Value function samples on (report times) x (space grid).

    ``values`` has shape (n_report, n_x) or (n_report, n_y, n_z); report
    times are stored increasing and always include 0 and the horizon.
    Interpolation is multilinear (bilinear in space, linear in time).
    """

    times: np.ndarray
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._interp = None

    @property
    def ndim_space(self) -> int:
        return len(self.axes)

    def value(self, t: float, *coords: float) -> float:
        if self._interp is None:
            from scipy.interpolate import RegularGridInterpolator
            self._interp = RegularGridInterpolator(
                (self.times, *self.axes), self.values, method="linear",
                bounds_error=True)
        return float(self._interp(np.array([t, *coords])))

    def price_at(self, x0: float) -> float:
        """Time-0 value; Asian solutions are read on the zero-integral slice."""
        if self.ndim_space == 1:
            return self.value(0.0, x0)
        return self.value(0.0, 0.0, x0)

    def export_csv(self, file) -> None:
        """Rows are x[,y],t,value over the full stored lattice."""
        own = isinstance(file, str)
        fh = open(file, "w") if own else file
        try:
            if self.ndim_space == 1:
                fh.write("x,t,value\n")
                for k, t in enumerate(self.times):
                    for i, x in enumerate(self.axes[0]):
                        fh.write(f"{x:.17g},{t:.17g},{self.values[k, i]:.17g}\n")
            else:
                fh.write("x,y,t,value\n")
                for k, t in enumerate(self.times):
                    for i, x in enumerate(self.axes[0]):
                        for j, y in enumerate(self.axes[1]):
                            fh.write(f"{x:.17g},{y:.17g},{t:.17g},"
                                     f"{self.values[k, i, j]:.17g}\n")
        finally:
            if own:
                fh.close()

    def export_binary(self, file) -> None:
        """Compact dump: magic ``NGAF``, version u32, ndim u32, axis lengths
        (u32 each, time first), then time grid, axes and values as
        little-endian f64."""
        own = isinstance(file, str)
        fh = open(file, "wb") if own else file
        try:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", BINARY_VERSION, self.ndim_space))
            fh.write(struct.pack("<I", self.times.size))
            for ax in self.axes:
                fh.write(struct.pack("<I", ax.size))
            fh.write(self.times.astype("<f8").tobytes())
            for ax in self.axes:
                fh.write(ax.astype("<f8").tobytes())
            fh.write(self.values.astype("<f8").tobytes())
        finally:
            if own:
                fh.close()

    @classmethod
    def load_binary(cls, file) -> "GridSolution":
        own = isinstance(file, str)
        fh = open(file, "rb") if own else file
        try:
            if fh.read(4) != MAGIC:
                raise ValueError("not a grid-solution dump (bad magic)")
            version, ndim = struct.unpack("<II", fh.read(8))
            if version != BINARY_VERSION:
                raise ValueError(f"unsupported dump version {version}")
            n_t, = struct.unpack("<I", fh.read(4))
            dims = [struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)]
            times = np.frombuffer(fh.read(8 * n_t), dtype="<f8")
            axes = tuple(np.frombuffer(fh.read(8 * d), dtype="<f8") for d in dims)
            count = n_t * int(np.prod(dims))
            values = np.frombuffer(fh.read(8 * count), dtype="<f8")
            values = values.reshape(n_t, *dims)
        finally:
            if own:
                fh.close()
        return cls(times.copy(), tuple(a.copy() for a in axes), values.copy())


def _report_steps(n_t: int, n_report: int) -> np.ndarray:
    """Step indices (0 .. n_t) at which the march stores the solution."""
    n_report = max(2, min(n_report, n_t + 1))
    return np.unique(np.round(np.linspace(0, n_t, n_report)).astype(int))


def _cq_bounds(box: ParameterBox, x: np.ndarray,
               half_inside: bool) -> tuple[np.ndarray, np.ndarray]:
    """Range over the box of the coefficient multiplying the curvature."""
    if not half_inside:
        lo, hi = diffusion_interval(box, x)
        return 0.5 * lo, 0.5 * hi
    xp = np.maximum(x, 0.0)
    s_lo = 0.5 * (box.a0_lo + box.a1_lo * xp)
    s_hi = 0.5 * (box.a0_hi + box.a1_hi * xp)
    cands = np.stack([s_lo ** (2 * box.gamma_lo), s_lo ** (2 * box.gamma_hi),
                      s_hi ** (2 * box.gamma_lo), s_hi ** (2 * box.gamma_hi)])
    return cands.min(axis=0), cands.max(axis=0)


def _drift_corners(box: ParameterBox) -> np.ndarray:
    return np.array([(box.b0_lo, box.b1_lo), (box.b0_lo, box.b1_hi),
                     (box.b0_hi, box.b1_lo), (box.b0_hi, box.b1_hi)])


def _upwind_diffs(v: np.ndarray, dx: float, axis: int = -1):
    """Forward / backward / central-second differences with boundary rules.

    Outside the grid the forward and backward differences are zero (dropped
    outflow) and the second difference is zero (linear extrapolation).
    """
    v = np.moveaxis(v, axis, -1)
    dp = np.zeros_like(v)
    dm = np.zeros_like(v)
    d2 = np.zeros_like(v)
    dp[..., :-1] = (v[..., 1:] - v[..., :-1]) / dx
    dm[..., 1:] = dp[..., :-1]
    d2[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]) / dx ** 2
    back = lambda a: np.moveaxis(a, -1, axis)
    return back(dp), back(dm), back(d2)


def _sup_generator_term(box: ParameterBox, x: np.ndarray, dp, dm, d2,
                        half_inside: bool) -> np.ndarray:
    """max over corners of [drift upwind + curvature coefficient * D2].

    Drift and diffusion corner coordinates are independent, so the max
    separates into a 4-corner drift max plus the diffusion endpoint choice
    by the sign of the second difference.
    """
    g_drift = None
    for b0, b1 in _drift_corners(box):
        b = b0 + b1 * x
        term = np.maximum(b, 0.0) * dp + np.minimum(b, 0.0) * dm
        g_drift = term if g_drift is None else np.maximum(g_drift, term)
    cq_lo, cq_hi = _cq_bounds(box, x, half_inside)
    g_diff = np.maximum(cq_hi * d2, cq_lo * d2)
    return g_drift + g_diff


def solve_nonlinear_1d(
    box: ParameterBox,
    payoff,
    grid: Grid1D,
    n_report: int = 101,
    half_inside: bool = False,
    terminal: Callable | None = None,
) -> GridSolution:
    """Worst-case value of a path-independent payoff on a 1-d grid.

    ``payoff`` must expose a terminal function (``payoff.terminal``); a bare
    callable can be passed via ``terminal`` instead.  Marches v(t - dt) =
    v + dt * max over corners of the upwind generator.
    """
    h = terminal if terminal is not None else payoff.terminal
    x = grid.x
    v = np.asarray(h(x), dtype=float).copy()
    if v.shape != x.shape:
        raise ValueError("terminal data must match the grid")
    steps = _report_steps(grid.n_t, n_report)
    stored = {grid.n_t: v.copy()}
    dt = grid.dt
    for k in range(grid.n_t, 0, -1):
        dp, dm, d2 = _upwind_diffs(v, grid.dx)
        v = v + dt * _sup_generator_term(box, x, dp, dm, d2, half_inside)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite grid values at step {k - 1}")
        if (k - 1) in steps:
            stored[k - 1] = v.copy()
    times = np.array([s * dt for s in sorted(stored)])
    values = np.stack([stored[s] for s in sorted(stored)])
    meta = {"scheme": "explicit_upwind_nonlinear", "box": box.content_hash(),
            "n_x": grid.n_x, "n_t": grid.n_t, "half_inside": half_inside}
    return GridSolution(times, (x,), values, meta)


def solve_linear_cir(
    b0: float,
    b1: float,
    a1: float,
    payoff,
    grid: Grid1D,
    n_report: int = 101,
    terminal: Callable | None = None,
) -> GridSolution:
    """Explicit scheme for dV/dt + (b0 + b1 x) dV/dx + a1 x / 2 d2V/dx2 = 0.

    The linear square-root-case PDE on the positive half line; the diffusion
    degenerates at x = 0 where only the one-sided first-order drift stencil
    remains active.
    """
    x = grid.x
    if grid.x_min < 0:
        raise ValueError("the linear square-root PDE lives on x >= 0")
    h = terminal if terminal is not None else payoff.terminal
    v = np.asarray(h(x), dtype=float).copy()
    b = b0 + b1 * x
    a = a1 * np.maximum(x, 0.0)
    _check_cfl(grid.dt, grid.dx, float(a.max()), float(np.abs(b).max()))
    steps = _report_steps(grid.n_t, n_report)
    stored = {grid.n_t: v.copy()}
    dt = grid.dt
    bp = np.maximum(b, 0.0)
    bm = np.minimum(b, 0.0)
    for k in range(grid.n_t, 0, -1):
        dp, dm, d2 = _upwind_diffs(v, grid.dx)
        v = v + dt * (bp * dp + bm * dm + 0.5 * a * d2)
        if (k - 1) in steps:
            stored[k - 1] = v.copy()
    times = np.array([s * dt for s in sorted(stored)])
    values = np.stack([stored[s] for s in sorted(stored)])
    meta = {"scheme": "explicit_upwind_linear_cir",
            "coeffs": (b0, b1, a1), "n_x": grid.n_x, "n_t": grid.n_t}
    return GridSolution(times, (x,), values, meta)


def solve_asian_2d(
    box: ParameterBox,
    payoff,
    grid: Grid2D,
    n_report: int = 51,
    half_inside: bool = False,
    terminal: Callable | None = None,
) -> GridSolution:
    """Worst-case Asian value v(t, y, z); y integrates the state z.

    Terminal data come from ``payoff.h(y, z)`` (or the ``terminal``
    callable).  The y-advection with velocity z is upwinded by the sign of
    z; the z-direction carries the non-linear generator.  The inception
    price of the Asian claim is ``solution.price_at(x0) = v(0, 0, x0)``.
    """
    h = terminal if terminal is not None else payoff.h
    y = grid.y
    z = grid.z
    yy, zz = np.meshgrid(y, z, indexing="ij")
    v = np.asarray(h(yy, zz), dtype=float)
    if v.shape != (grid.n_y, grid.n_z):
        raise ValueError("terminal data must match the (y, z) grid")
    steps = _report_steps(grid.n_t, n_report)
    stored = {grid.n_t: v.copy()}
    dt = grid.dt
    zrow = z[None, :]
    zp = np.maximum(zrow, 0.0)
    zm = np.minimum(zrow, 0.0)
    for k in range(grid.n_t, 0, -1):
        dp_z, dm_z, d2_z = _upwind_diffs(v, grid.dz, axis=1)
        dp_y, dm_y, _ = _upwind_diffs(v, grid.dy, axis=0)
        gen = _sup_generator_term(box, zrow, dp_z, dm_z, d2_z, half_inside)
        adv = zp * dp_y + zm * dm_y
        v = v + dt * (adv + gen)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite grid values at step {k - 1}")
        if (k - 1) in steps:
            stored[k - 1] = v.copy()
    times = np.array([s * dt for s in sorted(stored)])
    values = np.stack([stored[s] for s in sorted(stored)])
    meta = {"scheme": "explicit_upwind_asian", "box": box.content_hash(),
            "n_y": grid.n_y, "n_z": grid.n_z, "n_t": grid.n_t,
            "half_inside": half_inside}
    return GridSolution(times, (y, z), values, meta)


@dataclass(frozen=True)
class ResidualStats:
    max_abs: float
    mean_abs: float
    n_points: int


def pde_residual_check(
    solution: GridSolution,
    box: ParameterBox,
    n_samples: int = 200,
    half_inside: bool = False,
    rng_seed: int = 0,
) -> ResidualStats:
    """Discrete residual -D_t v - G(x, D_x v, D_xx v) at interior nodes.

    Central differences on the stored lattice of a 1-d solution; interior
    means one report time and one grid cell away from every edge.  A
    converged monotone solution shows O(dx) residual decay under refinement;
    a perturbed one does not.
    """
    if solution.ndim_space != 1:
        raise NotImplementedError("residual check covers 1-d solutions")
    t = solution.times
    x = solution.axes[0]
    v = solution.values
    if t.size < 3 or x.size < 3:
        raise ValueError("need at least 3 report times and 3 grid nodes")
    rng = np.random.default_rng(rng_seed)
    ks = rng.integers(1, t.size - 1, size=n_samples)
    js = rng.integers(1, x.size - 1, size=n_samples)
    dt = np.diff(t)
    dx = float(x[1] - x[0])
    dvdt = (v[ks + 1, js] - v[ks - 1, js]) / (dt[ks] + dt[ks - 1])
    dvdx = (v[ks, js + 1] - v[ks, js - 1]) / (2 * dx)
    d2v = (v[ks, js + 1] - 2 * v[ks, js] + v[ks, js - 1]) / dx ** 2
    res = -dvdt - eval_G(box, x[js], dvdx, d2v, half_inside=half_inside)
    res = np.asarray(res)
    return ResidualStats(float(np.abs(res).max()), float(np.abs(res).mean()),
                         n_samples)
