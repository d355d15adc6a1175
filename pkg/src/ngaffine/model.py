"""Parameter boxes, state-space rules and the worst-case generator.

The model class is a one-dimensional diffusion

    dX(t) = (b0 + b1 X(t)) dt + (a0 + a1 X(t)^+)^gamma dW(t)

whose parameter vector theta = (b0, b1, a0, a1, gamma) is only known to lie
in a box.  Everything downstream (finite differences, Monte Carlo, the
deep-BSDE solver) consumes two primitives defined here: the per-state
uncertainty intervals of drift and squared diffusion, and the worst-case
generator

    G(y, p, q) = sup_theta [ (b0 + b1 y) p + 1/2 (a0 + a1 y0^+)^(2 gamma) q ]

evaluated exactly by enumerating the 32 corners of the box (each coordinate
enters monotonically when the others are fixed, so the sup is attained at a
corner).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

__all__ = [
    "ImproperParameterBox",
    "ModelPoint",
    "ParameterBox",
    "PropernessCase",
    "StateSpace",
    "StateSpec",
    "classify_properness",
    "diffusion_interval",
    "drift_interval",
    "eval_G",
    "eval_G_gradient",
    "eval_generator",
    "instantiate_model",
]


class ImproperParameterBox(ValueError):
    """Raised when a parameter box matches none of the admissible cases."""


class PropernessCase(enum.Enum):
    CASE_R = "real_line"          # a0_lo > 0, paths live on R
    CASE_CIR = "cir"              # gamma = 1/2, a0 = 0, b0_lo >= a1_hi/2 > 0
    CASE_POWER = "power"          # 1/2 < gamma, a0 = 0, b0_lo > 0, a1_lo > 0


class StateSpace(enum.Enum):
    REAL = "real"
    POSITIVE = "positive"


@dataclass(frozen=True)
class StateSpec:
    """State space implied by the properness case of a parameter box."""

    case: PropernessCase
    space: StateSpace


# keys used by the config layer; order fixes the corner enumeration
BOX_FIELDS = (
    "b0_lo", "b0_hi", "b1_lo", "b1_hi",
    "a0_lo", "a0_hi", "a1_lo", "a1_hi",
    "gamma_lo", "gamma_hi",
)


@dataclass(frozen=True)
class ParameterBox:
    """Uncertainty box for (b0, b1, a0, a1, gamma).

    Drift coefficients are unconstrained reals, diffusion coefficients are
    nonnegative and the exponent lies in [1/2, 1].  Construction validates
    the interval ordering only; state-space admissibility is checked by
    :func:`classify_properness` (and cached on first use).
    """

    b0_lo: float
    b0_hi: float
    b1_lo: float
    b1_hi: float
    a0_lo: float
    a0_hi: float
    a1_lo: float
    a1_hi: float
    gamma_lo: float = 0.5
    gamma_hi: float = 0.5

    def __post_init__(self) -> None:
        for name in BOX_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for lo, hi in (("b0_lo", "b0_hi"), ("b1_lo", "b1_hi"),
                       ("a0_lo", "a0_hi"), ("a1_lo", "a1_hi"),
                       ("gamma_lo", "gamma_hi")):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo}={getattr(self, lo)} exceeds {hi}={getattr(self, hi)}")
        if self.a0_lo < 0 or self.a1_lo < 0:
            raise ValueError("diffusion coefficients must be nonnegative")
        if not (0.5 <= self.gamma_lo and self.gamma_hi <= 1.0):
            raise ValueError("gamma bounds must lie in [1/2, 1]")

    @classmethod
    def singleton(cls, b0: float, b1: float, a0: float, a1: float,
                  gamma: float = 0.5) -> "ParameterBox":
        return cls(b0, b0, b1, b1, a0, a0, a1, a1, gamma, gamma)

    @property
    def is_singleton(self) -> bool:
        return (self.b0_lo == self.b0_hi and self.b1_lo == self.b1_hi
                and self.a0_lo == self.a0_hi and self.a1_lo == self.a1_hi
                and self.gamma_lo == self.gamma_hi)

    @cached_property
    def corners(self) -> np.ndarray:
        """All 2^5 = 32 corner parameter vectors, shape (32, 5).

        Columns are (b0, b1, a0, a1, gamma); degenerate intervals produce
        duplicate rows, which is harmless for the max-reductions downstream.
        """
        los = [self.b0_lo, self.b1_lo, self.a0_lo, self.a1_lo, self.gamma_lo]
        his = [self.b0_hi, self.b1_hi, self.a0_hi, self.a1_hi, self.gamma_hi]
        grid = np.stack(np.meshgrid(*[(lo, hi) for lo, hi in zip(los, his)],
                                    indexing="ij"), axis=-1)
        return grid.reshape(-1, 5)

    @cached_property
    def state(self) -> StateSpec:
        return classify_properness(self)

    def contains(self, point: "ModelPoint") -> bool:
        return (self.b0_lo <= point.b0 <= self.b0_hi
                and self.b1_lo <= point.b1 <= self.b1_hi
                and self.a0_lo <= point.a0 <= self.a0_hi
                and self.a1_lo <= point.a1 <= self.a1_hi
                and self.gamma_lo <= point.gamma <= self.gamma_hi)

    def includes(self, other: "ParameterBox") -> bool:
        """Componentwise interval inclusion (other subset of self)."""
        return (self.b0_lo <= other.b0_lo and other.b0_hi <= self.b0_hi
                and self.b1_lo <= other.b1_lo and other.b1_hi <= self.b1_hi
                and self.a0_lo <= other.a0_lo and other.a0_hi <= self.a0_hi
                and self.a1_lo <= other.a1_lo and other.a1_hi <= self.a1_hi
                and self.gamma_lo <= other.gamma_lo and other.gamma_hi <= self.gamma_hi)

    def content_hash(self) -> str:
        payload = ",".join(repr(float(getattr(self, k))) for k in BOX_FIELDS)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ModelPoint:
    """A single parameter vector, optionally tagged with its state space."""

    b0: float
    b1: float
    a0: float
    a1: float
    gamma: float = 0.5
    state_space: StateSpace | None = None

    def drift(self, y):
        """Drift b(y) = b0 + b1 y."""
        return self.b0 + self.b1 * np.asarray(y, dtype=float)

    def diffusion(self, y):
        """Squared volatility a(y) = (a0 + a1 y^+)^(2 gamma)."""
        base = self.a0 + self.a1 * np.maximum(np.asarray(y, dtype=float), 0.0)
        return base ** (2.0 * self.gamma)

    def vol(self, y):
        """Volatility sigma(y) = (a0 + a1 y^+)^gamma."""
        base = self.a0 + self.a1 * np.maximum(np.asarray(y, dtype=float), 0.0)
        return base ** self.gamma

    def as_array(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.a0, self.a1, self.gamma])


def classify_properness(box: ParameterBox) -> StateSpec:
    """Classify a box into one of the admissible state-space cases.

    Exactly one of the following holds for an admissible box:

    * ``CASE_R``     -- a0_lo > 0; state space is the real line.
    * ``CASE_CIR``   -- gamma identically 1/2, a0 identically 0 and
      b0_lo >= a1_hi / 2 > 0; state space is the positive half line.
    * ``CASE_POWER`` -- 1/2 < gamma_lo, a0 identically 0, b0_lo > 0 and
      a1_lo > 0; state space is the positive half line.

    Anything else is rejected with the first violated condition named.
    """
    if box.a0_lo > 0:
        return StateSpec(PropernessCase.CASE_R, StateSpace.REAL)
    if box.a0_hi > 0:
        raise ImproperParameterBox(
            f"a0_lo=0 requires a0_hi=0 as well, got a0_hi={box.a0_hi}")
    # a0 == 0 from here on
    if box.gamma_lo == 0.5 and box.gamma_hi == 0.5:
        if box.a1_hi <= 0:
            raise ImproperParameterBox(
                "gamma=1/2, a0=0 requires a1_hi > 0, got a1_hi=0")
        if box.b0_lo < box.a1_hi / 2.0:
            raise ImproperParameterBox(
                f"b0_lo={box.b0_lo} < a1_hi/2={box.a1_hi / 2.0} violates the "
                "square-root-case drift condition")
        return StateSpec(PropernessCase.CASE_CIR, StateSpace.POSITIVE)
    if box.gamma_lo > 0.5:
        if box.b0_lo <= 0:
            raise ImproperParameterBox(
                f"b0_lo={box.b0_lo} must be positive when a0=0, gamma > 1/2")
        if box.a1_lo <= 0:
            raise ImproperParameterBox(
                f"a1_lo={box.a1_lo} must be positive when a0=0, gamma > 1/2")
        return StateSpec(PropernessCase.CASE_POWER, StateSpace.POSITIVE)
    raise ImproperParameterBox(
        f"gamma interval [{box.gamma_lo}, {box.gamma_hi}] mixes the "
        "square-root case with larger exponents while a0=0")


def drift_interval(box: ParameterBox, x):
    """Range of the drift b0 + b1 x over the box; affine, so corner-attained.

    Accepts scalars or arrays; returns a pair (lo, hi) of the same shape.
    """
    x = np.asarray(x, dtype=float)
    t_lo = np.minimum(box.b1_lo * x, box.b1_hi * x)
    t_hi = np.maximum(box.b1_lo * x, box.b1_hi * x)
    return box.b0_lo + t_lo, box.b0_hi + t_hi


def diffusion_interval(box: ParameterBox, x):
    """Range of (a0 + a1 x^+)^(2 gamma) over the box.

    The base is monotone in (a0, a1) since x^+ >= 0, and for a fixed base s
    the map gamma -> s^(2 gamma) is monotone (direction given by sign of
    ln s), so both endpoints are attained on corners.  s = 0 is continuously
    extended to s^(2 gamma) = 0.
    """
    xp = np.maximum(np.asarray(x, dtype=float), 0.0)
    s_lo = box.a0_lo + box.a1_lo * xp
    s_hi = box.a0_hi + box.a1_hi * xp
    cands = np.stack([
        s_lo ** (2.0 * box.gamma_lo),
        s_lo ** (2.0 * box.gamma_hi),
        s_hi ** (2.0 * box.gamma_lo),
        s_hi ** (2.0 * box.gamma_hi),
    ])
    return cands.min(axis=0), cands.max(axis=0)


def _corner_terms(box: ParameterBox, y, p, q, half_inside: bool):
    """Generator value of every corner, stacked along a leading axis."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    c = box.corners
    shape = (c.shape[0],) + tuple([1] * max(y.ndim, p.ndim, q.ndim))
    b0 = c[:, 0].reshape(shape)
    b1 = c[:, 1].reshape(shape)
    a0 = c[:, 2].reshape(shape)
    a1 = c[:, 3].reshape(shape)
    tg = 2.0 * c[:, 4].reshape(shape)
    base = a0 + a1 * np.maximum(y, 0.0)
    if half_inside:
        diff = (0.5 * base) ** tg
    else:
        diff = 0.5 * base ** tg
    return (b0 + b1 * y) * p + diff * q


def eval_G(box: ParameterBox, y, p, q, *, half_inside: bool = False):
    """Worst-case generator G(y, p, q) = sup over the box.

    The default convention puts the 1/2 outside the power,
    ``(b0 + b1 y) p + 1/2 (a0 + a1 y^+)^(2 gamma) q``, consistent with the
    squared-diffusion characteristic; ``half_inside=True`` switches to the
    alternative reading ``((a0 + a1 y^+) / 2)^(2 gamma) q`` for sensitivity
    runs.  Exact via enumeration of the 32 corners.  Broadcasts over array
    arguments.
    """
    box.state  # reject improper boxes up front
    terms = _corner_terms(box, y, p, q, half_inside)
    out = terms.max(axis=0)
    if out.ndim == 0:
        return float(out)
    return out


def eval_G_gradient(box: ParameterBox, y, p, q, *, half_inside: bool = False):
    """G together with a supergradient (dG/dp, dG/dq) at an argmax corner.

    G is a pointwise max of functions linear in (p, q); the returned pair is
    the coefficient vector of a maximizing corner (ties broken by corner
    order), which is what reverse-mode differentiation of the max needs.
    """
    box.state
    terms = _corner_terms(box, y, p, q, half_inside)
    idx = terms.argmax(axis=0)
    val = np.take_along_axis(terms, idx[None, ...], axis=0)[0]
    c = box.corners
    b0, b1, a0, a1, tg = (c[idx, k] for k in range(5))
    tg = 2.0 * tg
    base = a0 + a1 * np.maximum(np.asarray(y, dtype=float), 0.0)
    dp = b0 + b1 * np.asarray(y, dtype=float)
    if half_inside:
        dq = (0.5 * base) ** tg
    else:
        dq = 0.5 * base ** tg
    return val, dp, dq


def curvature_coefficient_bounds(box: ParameterBox, x, *, half_inside: bool = False):
    """Range over the box of the coefficient multiplying the curvature q.

    Default convention: half the squared-diffusion interval; the alternative
    reading halves the base before raising to the power.
    """
    if not half_inside:
        lo, hi = diffusion_interval(box, x)
        return 0.5 * lo, 0.5 * hi
    xp = np.maximum(np.asarray(x, dtype=float), 0.0)
    s_lo = 0.5 * (box.a0_lo + box.a1_lo * xp)
    s_hi = 0.5 * (box.a0_hi + box.a1_hi * xp)
    cands = np.stack([s_lo ** (2 * box.gamma_lo), s_lo ** (2 * box.gamma_hi),
                      s_hi ** (2 * box.gamma_lo), s_hi ** (2 * box.gamma_hi)])
    return cands.min(axis=0), cands.max(axis=0)


def eval_G_separable(box: ParameterBox, y, p, q, *, half_inside: bool = False):
    """Branchless (G, dG/dp, dG/dq) exploiting corner independence.

    The sup splits into independent one-dimensional maxima,

        G = max(b0) p  +  max(b1) (y p)  +  max(cq) q,

    each resolved by the sign of its multiplier, which reproduces the
    32-corner enumeration exactly while touching every sample once.  Used on
    the hot paths; :func:`eval_G` remains the reference implementation.
    """
    box.state
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    yp = y * p
    b0_star = np.where(p >= 0, box.b0_hi, box.b0_lo)
    b1_star = np.where(yp >= 0, box.b1_hi, box.b1_lo)
    cq_lo, cq_hi = curvature_coefficient_bounds(box, y, half_inside=half_inside)
    gq = np.where(q >= 0, cq_hi, cq_lo)
    gp = b0_star + b1_star * y
    val = b0_star * p + b1_star * yp + gq * q
    return val, gp, gq


def eval_generator(theta: ModelPoint, y, p, q):
    """Linear generator of a single model: (b0 + b1 y) p + 1/2 a(y) q."""
    val = theta.drift(y) * np.asarray(p, dtype=float) \
        + 0.5 * theta.diffusion(y) * np.asarray(q, dtype=float)
    if np.ndim(val) == 0:
        return float(val)
    return val


_CORNER_SELECTORS = {
    "lower": (0, 0, 0, 0, 0),
    "upper": (1, 1, 1, 1, 1),
}


def instantiate_model(box: ParameterBox, selector="midpoint") -> ModelPoint:
    """Pick a concrete model from the box.

    ``selector`` is one of

    * ``"midpoint"`` -- componentwise interval midpoint;
    * ``"lower"`` / ``"upper"`` -- the all-lower / all-upper corner;
    * ``"worst_case_cir"`` -- (b0_hi, b1_hi, 0, a1_hi, 1/2), the model that
      attains the robust sup for increasing convex terminal payoffs in the
      square-root case (requires ``CASE_CIR``);
    * an integer corner index into :attr:`ParameterBox.corners`;
    * a 5-tuple of floats checked for membership.

    The returned point carries the box's state-space tag.
    """
    space = box.state.space
    if selector == "midpoint":
        vals = [(box.b0_lo + box.b0_hi) / 2, (box.b1_lo + box.b1_hi) / 2,
                (box.a0_lo + box.a0_hi) / 2, (box.a1_lo + box.a1_hi) / 2,
                (box.gamma_lo + box.gamma_hi) / 2]
    elif selector == "worst_case_cir":
        if box.state.case is not PropernessCase.CASE_CIR:
            raise ValueError("worst_case_cir selector requires a CASE_CIR box")
        vals = [box.b0_hi, box.b1_hi, 0.0, box.a1_hi, 0.5]
    elif selector in _CORNER_SELECTORS:
        flags = _CORNER_SELECTORS[selector]
        los = [box.b0_lo, box.b1_lo, box.a0_lo, box.a1_lo, box.gamma_lo]
        his = [box.b0_hi, box.b1_hi, box.a0_hi, box.a1_hi, box.gamma_hi]
        vals = [hi if f else lo for f, lo, hi in zip(flags, los, his)]
    elif isinstance(selector, (int, np.integer)):
        vals = list(box.corners[int(selector)])
    else:
        vals = [float(v) for v in selector]
        point = ModelPoint(*vals, state_space=space)
        if not box.contains(point):
            raise ValueError(f"model point {vals} lies outside the box")
        return point
    return ModelPoint(*vals, state_space=space)


def corner_models(box: ParameterBox) -> list[ModelPoint]:
    """All corner models, deduplicated, tagged with the box state space."""
    space = box.state.space
    seen: set[tuple] = set()
    out: list[ModelPoint] = []
    for row in box.corners:
        key = tuple(row)
        if key not in seen:
            seen.add(key)
            out.append(ModelPoint(*row, state_space=space))
    return out
