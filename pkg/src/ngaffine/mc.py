"""Path simulation, Monte-Carlo pricing and probabilistic diagnostics.

Random numbers come from a counter-based construction so that the normal
increment of path i at step k is a pure function of (seed, k, i): the Philox
4x64 generator is keyed with (seed, step), its raw 64-bit word number i is
mapped to a uniform by ``u = ((w >> 11) + 0.5) / 2**53`` and to a normal by
the inverse standard-normal CDF.  Reproducibility therefore does not depend
on scheduling, batch partitioning, or how many paths other callers drew.

Simulation schemes are plain Euler-Maruyama and, for models degenerate at
zero, full-truncation Euler: the latent state evolves with coefficients
evaluated at the positive part and the reported path is clipped at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .model import (
    ModelPoint,
    ParameterBox,
    PropernessCase,
    StateSpace,
    corner_models,
    instantiate_model,
)
from .paths import DiscretePath
from .payoffs import Payoff

__all__ = [
    "ComparisonOrderingError",
    "McPrice",
    "ModelPoint2D",
    "PathBatch",
    "SimulationPlan",
    "comparison_diagnostic",
    "counter_normals",
    "moment_scaling_diagnostic",
    "price_mc",
    "robust_lower_bound",
    "simulate_paths",
    "simulate_paths_2d",
    "worst_case_cir_price",
]

_U53 = 1.0 / 9007199254740992.0  # 2**-53


def counter_normals(seed: int, step: int, n: int,
                    antithetic: bool = False) -> np.ndarray:
    """Standard normals for (seed, step), value i belonging to path i.

    With ``antithetic=True`` the second half of the batch mirrors the first
    (n must be even).
    """
    if antithetic:
        if n % 2:
            raise ValueError("antithetic batches need an even path count")
        half = counter_normals(seed, step, n // 2)
        return np.concatenate([half, -half])
    key = np.array([seed, step], dtype=np.uint64)
    raw = Philox(key=key).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
    return ndtri(u)


class ComparisonOrderingError(AssertionError):
    """A corner-model price exceeded the worst-case price beyond noise."""


@dataclass(frozen=True)
class SimulationPlan:
    """Everything a simulation run needs; fully determines its output."""

    model: ModelPoint
    n_paths: int
    n_steps: int
    horizon: float
    x0: float
    seed: int
    scheme: str = "auto"  # euler | full_truncation_euler | auto
    antithetic: bool = False

    def __post_init__(self) -> None:
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("need n_steps >= 1 and n_paths >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        scheme = self.scheme
        if scheme == "auto":
            scheme = ("full_truncation_euler"
                      if self.model.state_space is StateSpace.POSITIVE
                      else "euler")
            object.__setattr__(self, "scheme", scheme)
        if scheme not in ("euler", "full_truncation_euler"):
            raise ValueError(f"unknown scheme {scheme!r}")
        if (self.model.state_space is StateSpace.POSITIVE
                and scheme != "full_truncation_euler"):
            raise ValueError(
                "positive-state models require the full_truncation_euler scheme")


@dataclass(frozen=True)
class PathBatch:
    """Simulated paths on a common grid: values has shape (n_paths, n_steps+1)."""

    times: np.ndarray
    values: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def path(self, i: int) -> DiscretePath:
        return DiscretePath(self.times, self.values[i])

    def __iter__(self):
        return (self.path(i) for i in range(self.n_paths))


@dataclass(frozen=True)
class McPrice:
    """Monte-Carlo estimate with its standard error and provenance."""

    mean: float
    stderr: float
    n_paths: int
    seed: int
    model: str
    method: str = "mc"

    def __str__(self) -> str:
        return f"{self.mean:.6f} +/- {self.stderr:.6f} ({self.method}, {self.model})"


def _model_label(m: ModelPoint) -> str:
    return (f"b0={m.b0:g},b1={m.b1:g},a0={m.a0:g},a1={m.a1:g},gamma={m.gamma:g}")


def simulate_paths(plan: SimulationPlan) -> PathBatch:
    """Euler-Maruyama batch under a single model, reproducible by plan."""
    m = plan.model
    dt = plan.horizon / plan.n_steps
    sq = math.sqrt(dt)
    truncate = plan.scheme == "full_truncation_euler"
    x = np.full(plan.n_paths, float(plan.x0))
    out = np.empty((plan.n_paths, plan.n_steps + 1))
    out[:, 0] = np.maximum(x, 0.0) if truncate else x
    for k in range(plan.n_steps):
        z = counter_normals(plan.seed, k, plan.n_paths, plan.antithetic)
        base = np.maximum(x, 0.0) if truncate else x
        drift = m.b0 + m.b1 * base
        vol = (m.a0 + m.a1 * np.maximum(base, 0.0)) ** m.gamma
        x = x + drift * dt + vol * sq * z
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(
                f"non-finite state at step {k + 1} under {_model_label(m)}")
        out[:, k + 1] = np.maximum(x, 0.0) if truncate else x
    times = np.linspace(0.0, plan.horizon, plan.n_steps + 1)
    return PathBatch(times, out)


def price_mc(plan: SimulationPlan, payoff: Payoff) -> McPrice:
    """Sample mean / stderr of the payoff over a simulated batch."""
    batch = simulate_paths(plan)
    vals = payoff.evaluate_batch(batch.times, batch.values)
    return _price_from_samples(vals, plan, _model_label(plan.model), "mc")


def _price_from_samples(vals: np.ndarray, plan: SimulationPlan,
                        model: str, method: str) -> McPrice:
    if plan.antithetic:
        # mirrored halves are dependent; the independent units are the
        # pairwise averages
        half = vals.size // 2
        units = 0.5 * (vals[:half] + vals[half:])
    else:
        units = vals
    mean = float(units.mean())
    sd = float(units.std(ddof=1)) if units.size > 1 else 0.0
    return McPrice(mean, sd / math.sqrt(units.size), vals.size, plan.seed,
                   model, method)


def worst_case_cir_price(
    box: ParameterBox,
    payoff: Payoff,
    t: float,
    x0: float,
    horizon: float,
    n_paths: int = 100_000,
    n_steps: int = 200,
    seed: int = 0,
) -> McPrice:
    """Robust price in the square-root case via its single worst-case model.

    For increasing convex terminal payoffs on the positive half line the
    supremum over the box is attained by the model
    (b0_hi, b1_hi, 0, a1_hi, 1/2), so one linear Monte-Carlo run prices the
    whole family.  The payoff must be flagged increasing and convex and be
    path-independent; the remaining horizon is ``horizon - t``.
    """
    if box.state.case is not PropernessCase.CASE_CIR:
        raise ValueError("worst-case-CIR pricing requires a CASE_CIR box")
    if not (payoff.increasing and payoff.convex):
        raise ValueError("payoff must be flagged increasing and convex")
    if payoff.path_dependent:
        raise ValueError("worst-case-CIR pricing covers terminal payoffs only")
    model = instantiate_model(box, "worst_case_cir")
    plan = SimulationPlan(model, n_paths, n_steps, horizon - t, x0, seed)
    price = price_mc(plan, payoff)
    return replace(price, method="worst_case_cir")


def robust_lower_bound(box: ParameterBox, payoff: Payoff,
                       plan: SimulationPlan) -> tuple[McPrice, list[McPrice]]:
    """Certified lower bound: best corner-model price, common random numbers.

    Corner models form a finite sub-family of the admissible laws, so the
    max of their prices bounds the robust supremum from below.  All corners
    share the plan's seed (the counter-based draws coincide), which makes
    the max meaningful at moderate path counts.  Returns the best price
    (method ``"corner_lower_bound"``) plus the full per-corner list.
    """
    prices = []
    for m in corner_models(box):
        p = price_mc(replace(plan, model=m, scheme="auto"), payoff)
        prices.append(p)
    best = max(prices, key=lambda p: p.mean)
    return replace(best, method="corner_lower_bound"), prices


@dataclass(frozen=True)
class MomentScalingFit:
    """Fit of E[sup-increment^q] against c1 h^q + c2 h^(q/2)."""

    q: float
    h: np.ndarray
    estimates: np.ndarray
    c1: float
    c2: float
    r_squared: float
    c2_drop_largest: float
    c2_drop_smallest: float
    residual: float


def moment_scaling_diagnostic(
    model: ModelPoint,
    x0: float,
    q: float,
    h_list: Sequence[float],
    n_paths: int = 20_000,
    n_sub: int = 256,
    seed: int = 0,
) -> MomentScalingFit:
    """Estimate E[sup_{s<=h} |X(s) - x0|^q] per h and fit the two-power law.

    Each h gets its own fine sub-grid of ``n_sub`` Euler steps; the fit is
    linear least squares on the design (h^q, h^(q/2)).  Stability of the
    h^(q/2) coefficient is probed by refitting without the largest and
    without the smallest h.
    """
    h_arr = np.asarray(sorted(h_list), dtype=float)
    est = np.empty(h_arr.size)
    for j, h in enumerate(h_arr):
        plan = SimulationPlan(model, n_paths, n_sub, h, x0, seed + j)
        batch = simulate_paths(plan)
        sup_inc = np.abs(batch.values - x0).max(axis=1)
        est[j] = np.mean(sup_inc ** q)

    def fit(hs, ys):
        design = np.column_stack([hs ** q, hs ** (q / 2.0)])
        coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
        resid = ys - design @ coef
        ss_res = float(resid @ resid)
        ss_tot = float(((ys - ys.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        return coef, r2, math.sqrt(ss_res / ys.size)

    coef, r2, rms = fit(h_arr, est)
    coef_dl, _, _ = fit(h_arr[:-1], est[:-1])
    coef_ds, _, _ = fit(h_arr[1:], est[1:])
    return MomentScalingFit(q, h_arr, est, float(coef[0]), float(coef[1]),
                            r2, float(coef_dl[1]), float(coef_ds[1]), rms)


@dataclass(frozen=True)
class ComparisonReport:
    """Per-payoff corner-vs-worst-case ordering check (shared seeds)."""

    payoff_names: list[str]
    worst_case: list[McPrice]
    corner_best: list[McPrice]
    max_violation_sigmas: float


def comparison_diagnostic(
    box: ParameterBox,
    payoffs: Sequence[Payoff],
    x0: float,
    horizon: float,
    n_paths: int = 100_000,
    n_steps: int = 200,
    seed: int = 0,
    tolerance_sigmas: float = 2.0,
) -> ComparisonReport:
    """Check corner-model prices never beat the worst-case CIR price.

    Prices every increasing convex payoff under every corner model and under
    the worst-case model with one shared seed, and fails loudly (raises
    :class:`ComparisonOrderingError`) if any corner exceeds the worst case
    by more than ``tolerance_sigmas`` joint standard errors of the pairwise
    difference.
    """
    wc_model = instantiate_model(box, "worst_case_cir")
    wc_plan = SimulationPlan(wc_model, n_paths, n_steps, horizon, x0, seed)
    wc_batch = simulate_paths(wc_plan)
    names, wc_prices, corner_prices = [], [], []
    worst_sigma = -math.inf
    for payoff in payoffs:
        if not (payoff.increasing and payoff.convex):
            raise ValueError(f"{payoff.name} is not flagged increasing convex")
        wc_vals = payoff.evaluate_batch(wc_batch.times, wc_batch.values)
        wc_price = _price_from_samples(wc_vals, wc_plan, _model_label(wc_model),
                                       "worst_case_cir")
        best_corner = None
        for m in corner_models(box):
            plan = SimulationPlan(m, n_paths, n_steps, horizon, x0, seed)
            batch = simulate_paths(plan)
            vals = payoff.evaluate_batch(batch.times, batch.values)
            price = _price_from_samples(vals, plan, _model_label(m), "mc")
            diff = vals - wc_vals
            dm = float(diff.mean())
            dse = float(diff.std(ddof=1)) / math.sqrt(diff.size)
            sigmas = dm / dse if dse > 0 else (math.inf if dm > 0 else 0.0)
            worst_sigma = max(worst_sigma, sigmas)
            if sigmas > tolerance_sigmas:
                raise ComparisonOrderingError(
                    f"{payoff.name}: corner {_model_label(m)} beats the worst "
                    f"case by {dm:.3e} ({sigmas:.1f} joint sigmas)")
            if best_corner is None or price.mean > best_corner.mean:
                best_corner = price
        names.append(payoff.name)
        wc_prices.append(wc_price)
        corner_prices.append(best_corner)
    return ComparisonReport(names, wc_prices, corner_prices, worst_sigma)


# -- two-dimensional extension ----------------------------------------------

@dataclass(frozen=True)
class ModelPoint2D:
    """Two-dimensional affine model: drift b0 + B y, diffusion a0 + y1 a1 + y2 a2.

    ``b_lin`` has the per-coordinate drift vectors as columns; ``a0`` and the
    ``a_lin`` entries are symmetric 2x2 matrices.  The diffusion matrix must
    stay positive semidefinite along every visited state.
    """

    b0: np.ndarray
    b_lin: np.ndarray
    a0: np.ndarray
    a_lin: np.ndarray  # shape (2, 2, 2): a_lin[i] multiplies state coordinate i

    def __post_init__(self) -> None:
        b0 = np.asarray(self.b0, dtype=float).reshape(2)
        b_lin = np.asarray(self.b_lin, dtype=float).reshape(2, 2)
        a0 = np.asarray(self.a0, dtype=float).reshape(2, 2)
        a_lin = np.asarray(self.a_lin, dtype=float).reshape(2, 2, 2)
        for m in (a0, a_lin[0], a_lin[1]):
            if not np.allclose(m, m.T):
                raise ValueError("diffusion matrices must be symmetric")
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "b_lin", b_lin)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a_lin", a_lin)

    def drift(self, y: np.ndarray) -> np.ndarray:
        return self.b0[None, :] + y @ self.b_lin.T

    def diffusion(self, y: np.ndarray) -> np.ndarray:
        return (self.a0[None, :, :]
                + y[:, 0, None, None] * self.a_lin[0][None, :, :]
                + y[:, 1, None, None] * self.a_lin[1][None, :, :])


@dataclass(frozen=True)
class SimulationPlan2D:
    model: ModelPoint2D
    n_paths: int
    n_steps: int
    horizon: float
    x0: tuple[float, float]
    seed: int


def _sqrt_psd_2x2(a: np.ndarray, where: str) -> np.ndarray:
    """Batched symmetric PSD square root of 2x2 matrices.

    Uses the closed form sqrt(A) = (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det));
    aborts with a state report when a matrix fails PSD beyond roundoff.
    """
    det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    tr = a[:, 0, 0] + a[:, 1, 1]
    bad = (det < -1e-12) | (tr < -1e-12)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise FloatingPointError(
            f"diffusion matrix not PSD {where}: a={a[i].tolist()}")
    s = np.sqrt(np.maximum(det, 0.0))
    denom = np.sqrt(np.maximum(tr + 2.0 * s, 0.0))
    out = a + s[:, None, None] * np.eye(2)[None, :, :]
    safe = denom > 0
    out[safe] /= denom[safe, None, None]
    out[~safe] = 0.0
    return out


def simulate_paths_2d(plan: SimulationPlan2D) -> tuple[np.ndarray, np.ndarray]:
    """Euler batch of coupled path pairs; returns (times, values (n,steps+1,2)).

    Per step, path i consumes the counter-based words (2i, 2i+1), so the
    first coordinate's draws coincide with a one-dimensional run of the same
    seed with interleaved stride.
    """
    m = plan.model
    dt = plan.horizon / plan.n_steps
    sq = math.sqrt(dt)
    x = np.tile(np.asarray(plan.x0, dtype=float), (plan.n_paths, 1))
    out = np.empty((plan.n_paths, plan.n_steps + 1, 2))
    out[:, 0] = x
    for k in range(plan.n_steps):
        z = counter_normals(plan.seed, k, 2 * plan.n_paths).reshape(plan.n_paths, 2)
        a = m.diffusion(x)
        root = _sqrt_psd_2x2(a, where=f"at step {k}")
        x = x + m.drift(x) * dt + sq * np.einsum("nij,nj->ni", root, z)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite 2-d state at step {k + 1}")
        out[:, k + 1] = x
    times = np.linspace(0.0, plan.horizon, plan.n_steps + 1)
    return times, out


def price_mc_2d(plan: SimulationPlan2D, pair_payoff) -> McPrice:
    """Mean / stderr of a two-path payoff over a coupled 2-d batch."""
    times, values = simulate_paths_2d(plan)
    vals = pair_payoff.evaluate_pair_batch(times, values[:, :, 0], values[:, :, 1])
    mean = float(vals.mean())
    sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return McPrice(mean, sd / math.sqrt(vals.size), vals.size, plan.seed,
                   "2d-model", "mc2d")


def robust_lower_bound_2d(models: Sequence[ModelPoint2D], pair_payoff,
                          plan: SimulationPlan2D) -> tuple[McPrice, list[McPrice]]:
    """Best price over an explicit finite family of 2-d models, shared seed."""
    prices = []
    for m in models:
        p = price_mc_2d(replace(plan, model=m), pair_payoff)
        prices.append(p)
    best = max(prices, key=lambda p: p.mean)
    return replace(best, method="corner_lower_bound_2d"), prices
