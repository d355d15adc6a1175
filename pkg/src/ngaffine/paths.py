"""Discrete paths and numeric functional derivatives.

A :class:`DiscretePath` is a time grid plus one value per grid time,
interpreted as a piecewise-constant cadlag function (the value at ``times[i]``
holds on ``[times[i], times[i+1])``).  On top of it live the two primitives of
functional calculus -- freezing the path forward in time and nudging its
endpoint -- and difference-quotient versions of the horizontal and vertical
derivatives with Richardson extrapolation.

Only the trapezoidal running integral treats the path as piecewise linear;
everything else uses the cadlag reading, under which an endpoint perturbation
is supported on a single point and therefore leaves integrals unchanged.
"""

from __future__ import annotations

import io
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "DerivativeEstimate",
    "DiscretePath",
    "PathFunctional",
    "horizontal_extend",
    "numeric_horizontal_derivative",
    "numeric_vertical_derivative",
    "running_integral",
    "running_max",
    "vertical_perturb",
]

# Step fractions (of the horizon) for difference quotients; successive halving
# supports two Richardson levels.  Tolerance is relative.
DEFAULT_H_FRACTIONS = (1e-2, 5e-3, 2.5e-3)
DEFAULT_REL_TOL = 1e-3


@dataclass(frozen=True)
class DiscretePath:
    """Strictly increasing time grid starting at 0 with one value per time."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or t.size != v.size or t.size == 0:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def value_at(self, t: float) -> float:
        """Cadlag evaluation: value of the last grid time <= t."""
        if t < 0 or t > self.end_time + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.end_time}]")
        i = bisect_right(self.times, t) - 1
        return float(self.values[max(i, 0)])

    def restricted_to(self, t: float) -> "DiscretePath":
        """The sub-path on [0, t], inserting a grid point at t if needed."""
        if t < 0 or t > self.end_time + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.end_time}]")
        i = bisect_right(self.times, t)
        ts = self.times[:i]
        vs = self.values[:i]
        if ts[-1] != t and t <= self.end_time:
            ts = np.append(ts, t)
            vs = np.append(vs, vs[-1])
        return DiscretePath(ts, vs)

    def with_values(self, values: Sequence[float]) -> "DiscretePath":
        return DiscretePath(self.times.copy(), np.asarray(values, dtype=float))

    def to_csv(self, file) -> None:
        """Write (time,value) rows with 17 significant decimal digits."""
        own = isinstance(file, str)
        fh = open(file, "w") if own else file
        try:
            fh.write("time,value\n")
            for t, v in zip(self.times, self.values):
                fh.write(f"{t:.17g},{v:.17g}\n")
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, file) -> "DiscretePath":
        own = isinstance(file, str)
        fh = open(file, "r") if own else file
        try:
            header = fh.readline().strip()
            if header != "time,value":
                raise ValueError(f"unexpected path CSV header: {header!r}")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        finally:
            if own:
                fh.close()
        times = np.array([float(r[0]) for r in rows])
        values = np.array([float(r[1]) for r in rows])
        return cls(times, values)

    @classmethod
    def constant(cls, value: float, T: float, n: int = 2) -> "DiscretePath":
        return cls(np.linspace(0.0, T, n), np.full(n, float(value)))


@dataclass(frozen=True)
class PathFunctional:
    """A non-anticipative map (t, path up to t) -> real.

    The evaluator receives the path restricted to [0, t]; it must not look
    beyond t (checked by the mutation-based property tests, not enforced
    here).
    """

    evaluator: Callable[[float, DiscretePath], float]
    name: str = "functional"

    def __call__(self, t: float, path: DiscretePath) -> float:
        return float(self.evaluator(t, path.restricted_to(t)))


def horizontal_extend(path: DiscretePath, t: float, h: float) -> DiscretePath:
    """Freeze the path at its time-t value on (t, t+h].

    The result lives on [0, t+h]; requires t + h <= the path horizon.
    """
    if h < 0:
        raise ValueError("extension length h must be nonnegative")
    if t + h > path.end_time + 1e-12:
        raise ValueError(
            f"extension beyond horizon: t+h={t + h} > T={path.end_time}")
    base = path.restricted_to(t)
    if h == 0:
        return base
    return DiscretePath(np.append(base.times, t + h),
                        np.append(base.values, base.values[-1]))


def vertical_perturb(path: DiscretePath, t: float, h: float) -> DiscretePath:
    """Shift the time-t endpoint by h, leaving earlier values untouched."""
    base = path.restricted_to(t)
    values = base.values.copy()
    values[-1] += h
    return DiscretePath(base.times, values)


@dataclass(frozen=True)
class DerivativeEstimate:
    """Extrapolated difference quotient with a convergence verdict."""

    value: float
    converged: bool
    estimates: tuple = field(default=())

    def __float__(self) -> float:
        return self.value


def _richardson(quotients: Sequence[float], order: int,
                rel_tol: float) -> DerivativeEstimate:
    """Two Richardson levels on quotients at steps h, h/2, h/4, ...

    ``order`` is the leading error order of the raw quotient (1 for one-sided,
    2 for central); each level cancels one further power of h.
    """
    rows = [list(map(float, quotients))]
    p = order
    while len(rows[-1]) > 1:
        prev = rows[-1]
        fac = 2.0 ** p
        rows.append([(fac * prev[i + 1] - prev[i]) / (fac - 1.0)
                     for i in range(len(prev) - 1)])
        p += 1
    best = rows[-1][0]
    # compare the two highest-level estimates available
    second = rows[-2][-1] if len(rows) > 1 else best
    scale = max(abs(best), 1e-12)
    converged = abs(best - second) <= rel_tol * scale
    return DerivativeEstimate(best, converged, tuple(quotients))


def numeric_horizontal_derivative(
    F: PathFunctional, path: DiscretePath, t: float,
    h_seq: Sequence[float] | None = None,
    rel_tol: float = DEFAULT_REL_TOL,
) -> DerivativeEstimate:
    """One-sided quotient (F_{t+h}(frozen path) - F_t(path)) / h, h dropping.

    Uses the default step sequence (fractions of the horizon, halving) with
    two Richardson levels; the estimate is flagged unconverged when the last
    two extrapolants disagree by more than ``rel_tol`` relatively.
    """
    if h_seq is None:
        T = path.end_time
        h_seq = [f * T for f in DEFAULT_H_FRACTIONS]
    f0 = F(t, path)
    quotients = []
    for h in h_seq:
        fh = F(t + h, horizontal_extend(path, t, h))
        quotients.append((fh - f0) / h)
    return _richardson(quotients, order=1, rel_tol=rel_tol)


def numeric_vertical_derivative(
    F: PathFunctional, path: DiscretePath, t: float,
    order: int = 1,
    h_seq: Sequence[float] | None = None,
    rel_tol: float = DEFAULT_REL_TOL,
    scheme: str = "one_sided",
) -> DerivativeEstimate:
    """Vertical (endpoint-perturbation) derivative of order 1 or 2.

    Order 1 defaults to the one-sided quotient of the definition (h down to
    0 from above); ``scheme="central"`` switches to central differences for
    smooth functionals.  Order 2 is the central second difference of the
    perturbed functional.
    """
    if h_seq is None:
        scale = max(abs(path.value_at(t)), 1.0)
        h_seq = [f * scale for f in DEFAULT_H_FRACTIONS]
    f0 = F(t, path)
    quotients = []
    for h in h_seq:
        up = F(t, vertical_perturb(path, t, h))
        if order == 1:
            if scheme == "one_sided":
                quotients.append((up - f0) / h)
            elif scheme == "central":
                down = F(t, vertical_perturb(path, t, -h))
                quotients.append((up - down) / (2.0 * h))
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
        elif order == 2:
            down = F(t, vertical_perturb(path, t, -h))
            quotients.append((up - 2.0 * f0 + down) / (h * h))
        else:
            raise ValueError("order must be 1 or 2")
    raw_order = 1 if (order == 1 and scheme == "one_sided") else 2
    return _richardson(quotients, order=raw_order, rel_tol=rel_tol)


def running_max(path: DiscretePath, t: float | None = None) -> float:
    """Exact maximum of the grid values up to time t (default: horizon)."""
    if t is None:
        return float(path.values.max())
    i = bisect_right(path.times, t)
    return float(path.values[:max(i, 1)].max())


def running_integral(path: DiscretePath, t: float | None = None) -> float:
    """Trapezoidal integral of the piecewise-linear interpolant on [0, t]."""
    if t is None:
        t = path.end_time
    if t < 0 or t > path.end_time + 1e-12:
        raise ValueError(f"t={t} outside [0, {path.end_time}]")
    i = bisect_right(path.times, t)
    ts = path.times[:i]
    vs = path.values[:i]
    total = float(_trapezoid(vs, ts)) if ts.size > 1 else 0.0
    if ts[-1] < t:
        # partial last cell against the linear interpolant
        j = min(i, path.times.size - 1)
        t0, t1 = path.times[j - 1], path.times[j]
        v0, v1 = path.values[j - 1], path.values[j]
        vt = v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        total += 0.5 * (v0 + vt) * (t - t0)
    return total


def running_max_functional() -> PathFunctional:
    return PathFunctional(lambda t, p: running_max(p, t), name="running_max")


def running_integral_functional() -> PathFunctional:
    return PathFunctional(lambda t, p: running_integral(p, t),
                          name="running_integral")
