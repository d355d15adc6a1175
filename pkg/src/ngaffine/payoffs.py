"""Payoff library: Asian put, digital barrier, and structural-credit legs.

Every payoff evaluates single :class:`~ngaffine.paths.DiscretePath` objects
and, for Monte-Carlo throughput, whole batches given as a shared time grid
plus a (n_paths, n_times) value matrix.  Barrier and default monitoring is
discrete -- at the grid times only -- which is also what the simulation and
training pipelines see; the bias against continuous monitoring shrinks under
grid refinement.

Flags (``bounded``, ``increasing``, ``convex`` in the terminal value,
``path_dependent``) drive the worst-case-model shortcuts and the ordering
diagnostics, so they are part of the contract, not documentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

from .paths import DiscretePath, running_integral, running_max

__all__ = [
    "AsianPutCapped",
    "BlackCoxPut",
    "CappedCall",
    "ContagionPut",
    "CreditSpec",
    "MertonBond",
    "MertonEquity",
    "Payoff",
    "UpAndInDigital",
    "asian_put_capped",
    "black_cox_put",
    "climate_stressed_threshold",
    "contagion_adjusted_terminal",
    "contagion_put",
    "increasing_convex_test_payoffs",
    "merton_bond_payoff",
    "merton_equity",
    "up_and_in_digital",
]


@dataclass(frozen=True)
class Payoff:
    """Base payoff: a terminal functional of one path.

    ``bound`` is the declared sup-norm bound when ``bounded`` is true.
    Subclasses implement :meth:`evaluate_batch`; single-path evaluation
    and the FD terminal function (for path-independent payoffs or payoffs
    with a finite-dimensional reduction) derive from it.
    """

    name: str = field(default="payoff", init=False)
    bounded: bool = field(default=False, init=False)
    bound: float | None = field(default=None, init=False)
    increasing: bool = field(default=False, init=False)
    convex: bool = field(default=False, init=False)
    path_dependent: bool = field(default=True, init=False)

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, path: DiscretePath) -> float:
        return float(self.evaluate_batch(path.times, path.values[None, :])[0])

    def terminal(self, x):
        """Terminal function h(x(T)) for path-independent payoffs."""
        raise NotImplementedError(f"{self.name} has no terminal reduction")


def _set(obj, **kw) -> None:
    for k, v in kw.items():
        object.__setattr__(obj, k, v)


@dataclass(frozen=True)
class AsianPutCapped(Payoff):
    """(K1 - average of the path)^+ capped at K2.

    The average is the running integral over [0, T] divided by T.  The
    integral rule is trapezoidal by default (matching
    :func:`~ngaffine.paths.running_integral`); ``integral_rule="left"``
    switches to the left-endpoint sum of the piecewise-constant reading,
    which is what the discretized training pipeline uses.
    """

    k1: float
    k2: float
    maturity: float
    integral_rule: str = "trapezoid"

    def __post_init__(self) -> None:
        if self.k2 < 0 or self.maturity <= 0:
            raise ValueError("need K2 >= 0 and T > 0")
        if self.integral_rule not in ("trapezoid", "left"):
            raise ValueError(f"unknown integral rule {self.integral_rule!r}")
        _set(self, name="asian_put", bounded=True,
             bound=min(max(self.k1, 0.0), self.k2), path_dependent=True)

    def average(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        if self.integral_rule == "trapezoid":
            integral = _trapezoid(values, times, axis=1)
        else:
            dt = np.diff(times)
            integral = values[:, :-1] @ dt
        return integral / self.maturity

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        avg = self.average(times, np.asarray(values, dtype=float))
        return np.minimum(np.maximum(self.k1 - avg, 0.0), self.k2)

    def h(self, y, z=None):
        """Terminal function on the (integral, state) plane: h(y) only.

        The cap is deliberately not applied here: on the PDE grids the cap
        is vacuous for any sensible K2 and dropping it keeps the terminal
        data affine where the put is in the money.
        """
        del z
        return np.maximum(self.k1 - np.asarray(y, dtype=float) / self.maturity, 0.0)


@dataclass(frozen=True)
class UpAndInDigital(Payoff):
    """Pays 1 iff the running maximum reaches the barrier at a grid time."""

    barrier: float

    def __post_init__(self) -> None:
        _set(self, name="digital_up_in", bounded=True, bound=1.0,
             increasing=True, path_dependent=True)

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        hit = np.asarray(values, dtype=float).max(axis=1) >= self.barrier
        return hit.astype(float)


@dataclass(frozen=True)
class MertonBond(Payoff):
    """Bond leg (D - x(T))^+; path-independent, decreasing, convex.

    The robust bond value is the infimum over models, computed downstream as
    ``-sup E[-(D - X_T)^+]``.
    """

    face: float

    def __post_init__(self) -> None:
        if self.face <= 0:
            raise ValueError("face value must be positive")
        _set(self, name="merton_bond", bounded=True, bound=self.face,
             convex=True, path_dependent=False)

    def terminal(self, x):
        return np.maximum(self.face - np.asarray(x, dtype=float), 0.0)

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        return self.terminal(np.asarray(values)[:, -1])


@dataclass(frozen=True)
class MertonEquity(Payoff):
    """Equity leg (x(T) - D)^+; path-independent, increasing, convex."""

    face: float

    def __post_init__(self) -> None:
        if self.face <= 0:
            raise ValueError("face value must be positive")
        _set(self, name="merton_equity", increasing=True, convex=True,
             path_dependent=False)

    def terminal(self, x):
        return np.maximum(np.asarray(x, dtype=float) - self.face, 0.0)

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        return self.terminal(np.asarray(values)[:, -1])


@dataclass(frozen=True)
class CappedCall(Payoff):
    """(x(T) - K)^+ capped at M; increasing, and convex below the cap.

    The cap exists to keep the payoff bounded; choose M beyond the grid /
    simulation range so that the convexity flag is honest on the domain that
    matters.
    """

    strike: float
    cap: float

    def __post_init__(self) -> None:
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        _set(self, name="capped_call", bounded=True, bound=self.cap,
             increasing=True, convex=True, path_dependent=False)

    def terminal(self, x):
        return np.minimum(np.maximum(np.asarray(x, dtype=float) - self.strike, 0.0),
                          self.cap)

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        return self.terminal(np.asarray(values)[:, -1])


def _threshold_on_grid(threshold, times: np.ndarray) -> np.ndarray:
    if callable(threshold):
        return np.asarray([float(threshold(t)) for t in times])
    arr = np.asarray(threshold, dtype=float)
    if arr.ndim == 0:
        return np.full(times.shape, float(arr))
    if arr.shape != times.shape:
        raise ValueError("threshold curve must match the time grid")
    return arr


@dataclass(frozen=True)
class BlackCoxPut(Payoff):
    """(K - x(T))^+ paid only if the path stayed above D(t) at all grid times.

    Zero recovery: any grid time with x(t) <= D(t) kills the claim.
    ``threshold`` is a scalar, an array aligned with the evaluation grid, or
    a callable of time.
    """

    strike: float
    threshold: object

    def __post_init__(self) -> None:
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        _set(self, name="black_cox_put", bounded=True, bound=self.strike,
             path_dependent=True)

    def evaluate_batch(self, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        level = _threshold_on_grid(self.threshold, np.asarray(times, dtype=float))
        alive = np.all(values > level[None, :], axis=1)
        return np.maximum(self.strike - values[:, -1], 0.0) * alive


def climate_stressed_threshold(threshold, damage) -> Callable[[float], float]:
    """Default barrier shifted up by the deterministic climate damage C(t)."""
    def curve(t: float) -> float:
        d = threshold(t) if callable(threshold) else float(threshold)
        c = damage(t) if callable(damage) else float(damage)
        if c < 0:
            raise ValueError("climate damage must be nonnegative")
        return d + c
    return curve


@dataclass(frozen=True)
class CreditSpec:
    """Parameter record of the structural-credit payoffs.

    ``face`` is the outstanding debt D, ``threshold`` / ``threshold_2`` the
    deterministic default barriers D(t) (scalars, grid-aligned arrays or
    callables of time), ``damage`` the nonnegative climate damage C(t), the
    contagion factors lie in (0, 1] and give the proportional write-down of
    the surviving firm when the other defaults first, and ``strike`` is the
    put strike K.
    """

    face: float = 1.0
    threshold: object = 0.0
    threshold_2: object = 0.0
    damage: object = 0.0
    e12: float = 1.0
    e21: float = 1.0
    strike: float = 1.0

    def __post_init__(self) -> None:
        for name, e in (("e12", self.e12), ("e21", self.e21)):
            if not 0.0 < e <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {e}")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.face <= 0:
            raise ValueError("face value must be positive")
        if not callable(self.damage) and np.any(np.asarray(self.damage) < 0):
            raise ValueError("climate damage must be nonnegative")


def _first_breach(values: np.ndarray, level: np.ndarray) -> np.ndarray:
    """Index of the first grid time with value <= level, or n_times."""
    breached = values <= level[None, :]
    any_breach = breached.any(axis=1)
    idx = np.where(any_breach, breached.argmax(axis=1), values.shape[1])
    return idx


def contagion_adjusted_terminal(
    times: np.ndarray,
    values_1: np.ndarray,
    values_2: np.ndarray,
    spec: CreditSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal firm values after first-passage defaults and contagion.

    Firm i ends at x_i(T) when neither firm breached its threshold at any
    grid time; at x_i(T) (1 - e_ij) when only firm j breached; and at 0 in
    every other state (own default, or both defaulting).  Breaches are
    detected at grid times.
    """
    times = np.asarray(times, dtype=float)
    v1 = np.asarray(values_1, dtype=float)
    v2 = np.asarray(values_2, dtype=float)
    if v1.shape != v2.shape:
        raise ValueError("the two path batches must share one grid")
    n = times.size
    d1 = _threshold_on_grid(spec.threshold, times)
    d2 = _threshold_on_grid(spec.threshold_2, times)
    breach1 = _first_breach(v1, d1) < n
    breach2 = _first_breach(v2, d2) < n
    both_safe = ~breach1 & ~breach2
    only_2 = breach2 & ~breach1
    only_1 = breach1 & ~breach2
    x1 = np.where(both_safe, v1[:, -1],
                  np.where(only_2, v1[:, -1] * (1.0 - spec.e12), 0.0))
    x2 = np.where(both_safe, v2[:, -1],
                  np.where(only_1, v2[:, -1] * (1.0 - spec.e21), 0.0))
    return x1, x2


@dataclass(frozen=True)
class ContagionPut:
    """Put (K - adjusted terminal of firm i)^+ on the two-firm setup."""

    firm: int
    spec: CreditSpec
    name: str = field(default="contagion_put", init=False)
    bounded: bool = field(default=True, init=False)
    path_dependent: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        if self.firm not in (1, 2):
            raise ValueError("firm must be 1 or 2")
        object.__setattr__(self, "bound", self.spec.strike)

    def evaluate_pair_batch(self, times: np.ndarray, values_1: np.ndarray,
                            values_2: np.ndarray) -> np.ndarray:
        x1, x2 = contagion_adjusted_terminal(times, values_1, values_2, self.spec)
        x = x1 if self.firm == 1 else x2
        return np.maximum(self.spec.strike - x, 0.0)

    def __call__(self, path_1: DiscretePath, path_2: DiscretePath) -> float:
        if not np.array_equal(path_1.times, path_2.times):
            raise ValueError("the two paths must share one time grid")
        return float(self.evaluate_pair_batch(
            path_1.times, path_1.values[None, :], path_2.values[None, :])[0])


# -- factory aliases matching the config-schema payoff names ----------------

def asian_put_capped(k1: float, k2: float, maturity: float,
                     integral_rule: str = "trapezoid") -> AsianPutCapped:
    return AsianPutCapped(k1, k2, maturity, integral_rule)


def up_and_in_digital(barrier: float) -> UpAndInDigital:
    return UpAndInDigital(barrier)


def merton_bond_payoff(face: float) -> MertonBond:
    return MertonBond(face)


def merton_equity(face: float) -> MertonEquity:
    return MertonEquity(face)


def black_cox_put(strike: float, threshold) -> BlackCoxPut:
    return BlackCoxPut(strike, threshold)


def contagion_put(firm: int, spec: CreditSpec) -> ContagionPut:
    return ContagionPut(firm, spec)


def increasing_convex_test_payoffs(strikes: Sequence[float] = (0.05, 0.1, 0.2),
                                   cap: float = 100.0) -> list[Payoff]:
    """The shipped increasing-convex family used by the ordering diagnostics."""
    return [CappedCall(k, cap) for k in strikes]


# helpers reused by tests

def asian_average_oracle(path: DiscretePath, n_fine: int = 20001) -> float:
    """Independent high-resolution quadrature of the path average.

    Samples the piecewise-linear interpolant on a dense uniform grid and
    integrates with Simpson weights; used as the cross-check for the
    trapezoidal route.
    """
    ts = np.linspace(0.0, path.end_time, n_fine)
    vs = np.interp(ts, path.times, path.values)
    from scipy.integrate import simpson
    return float(simpson(vs, x=ts) / path.end_time)
