"""Deep-BSDE pricer for path-dependent worst-case valuation.

The functional Kolmogorov equation is discretized forward in time as

    Y_{n+1} = Y_n + p_n (X_{t_{n+1}} - X_{t_n})
                  + [ 1/2 sigma^2(X_{t_n}) q_n - G(X_{t_n}, p_n, q_n) ] dt,

where X is simulated under a fixed reference model, the driver -G comes from
the worst-case generator, and p_n, q_n approximate the first and second
vertical derivatives of the value functional.  p_0, q_0 and Y_0 are trainable
scalars; for n >= 1 each derivative is its own feed-forward network reading
the raw path prefix (X_{t_0}, ..., X_{t_n}).  Training minimizes the summed
terminal mismatch (Y_N - g(path))^2 over minibatches; the trained Y_0 scalar
is the price.

Implementation notes, all exact reverse-mode:

* The per-step networks are stored stacked.  The first layers of all steps
  run as one matrix product against the full path matrix, with weight rows
  beyond each step's prefix pinned to zero so network n sees exactly n+1
  inputs and nothing anticipative.
* The driver has no Y-argument, so Y_N is a plain sum of per-step
  contributions and the loss gradient reaching every p_n, q_n is available
  in closed form; the whole backward pass is data-parallel across steps.
* All parameters live in one flat buffer (views per tensor), which makes the
  optimizer two handfuls of vector operations and finite-difference checking
  trivial.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .mc import counter_normals
from .model import (
    ModelPoint,
    ParameterBox,
    StateSpace,
    eval_G_separable,
    instantiate_model,
)

__all__ = [
    "BsdePricer",
    "Mlp",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "load_checkpoint",
    "price_from_checkpoint",
    "reference_model",
    "save_checkpoint",
    "train",
]

CHECKPOINT_MAGIC = b"NGAB"
CHECKPOINT_VERSION = 1
N_AFFINE_LAYERS = 4  # three ReLU hidden layers plus the linear scalar output


class TrainingDiverged(RuntimeError):
    pass


def reference_model(box: ParameterBox) -> ModelPoint:
    """Forward measure used for training paths.

    Midpoint drift with upper-corner diffusion: the widest-vol model keeps
    the sampled paths spread over the region where the generator's argmax
    switches, which is where the gradient networks need data.
    """
    return ModelPoint(
        b0=(box.b0_lo + box.b0_hi) / 2.0,
        b1=(box.b1_lo + box.b1_hi) / 2.0,
        a0=box.a0_hi,
        a1=box.a1_hi,
        gamma=box.gamma_hi,
        state_space=box.state.space,
    )


class Mlp:
    """Plain feed-forward net: affine -> ReLU repeated, linear scalar output."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator | None = None,
                 dtype=np.float64):
        self.dims = list(int(d) for d in dims)
        if len(self.dims) < 2 or self.dims[-1] != 1:
            raise ValueError("need at least one affine layer and scalar output")
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(
                (rng.standard_normal((fan_in, fan_out)) * scale).astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Scalar output per row of x; accepts a single vector too."""
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        a = x[None, :] if single else x
        acts = [a]
        n_layers = len(self.weights)
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = np.maximum(z, 0.0) if li < n_layers - 1 else z
            acts.append(a)
        out = a[:, 0]
        return (float(out[0]) if single else out), acts

    def backward(self, acts, upstream):
        """Exact gradients of sum(upstream * output) w.r.t. params and input.

        ``acts`` is the cache from :meth:`forward_cached`; ``upstream`` is
        the scalar gradient per batch row.  Returns (weight grads, bias
        grads, input grad).
        """
        upstream = np.atleast_1d(np.asarray(upstream, dtype=self.dtype))
        grad = upstream[:, None]
        gws = [None] * len(self.weights)
        gbs = [None] * len(self.biases)
        for li in range(len(self.weights) - 1, -1, -1):
            a_in = acts[li]
            gws[li] = a_in.T @ grad
            gbs[li] = grad.sum(axis=0)
            grad = grad @ self.weights[li].T
            if li > 0:
                grad = grad * (acts[li] > 0)
        return gws, gbs, grad


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer run: minibatch size, step count, schedule and seed."""

    batch_size: int = 256
    n_steps: int = 25_000
    learning_rate: float = 1e-3
    lr_schedule: tuple[tuple[int, float], ...] = ()
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 100
    divergence_factor: float = 1e6
    divergence_patience: int = 100
    # Tikhonov weight on the curvature outputs.  When the curvature
    # coefficient of the box is state-independent (a1 = 0), a constant shift
    # of the q-field moves Y deterministically and theta1 absorbs it -- an
    # exactly flat ridge of the terminal-fit loss.  A small penalty selects
    # the minimal-norm representative; the value bias is negligible because
    # the q-coefficient in Y is of the order of the diffusion spread.
    q_penalty: float = 1e-3

    def lr_at(self, step: int) -> float:
        lr = self.learning_rate
        for s, value in self.lr_schedule:
            if step >= s:
                lr = value
        return lr


@dataclass
class TrainReport:
    """Loss trajectory and the trained price of one optimization run."""

    losses: np.ndarray
    theta1_trace: np.ndarray
    final_theta1: float
    wall_clock: float
    n_steps: int
    seed: int

    def __post_init__(self) -> None:
        if np.any(self.losses < 0):
            raise ValueError("losses must be nonnegative")


class BsdePricer:
    """Trainable scalars plus stacked per-step derivative networks.

    One pricer is tied to a start value x0 (the scalars approximate the
    value and its derivatives at that state).  ``n_steps`` is the number of
    time intervals N; networks exist for steps 1 .. N-1 and network n reads
    the path prefix of length n+1.
    """

    def __init__(
        self,
        box: ParameterBox,
        x0: float,
        horizon: float,
        n_steps: int,
        hidden: int = 32,
        dtype=np.float64,
        reference: ModelPoint | None = None,
        half_inside: bool = False,
        include_running_max: bool = False,
        init_seed: int = 0,
    ):
        if n_steps < 1:
            raise ValueError("need at least one time step")
        self.box = box
        self.x0 = float(x0)
        self.horizon = float(horizon)
        self.n_steps = int(n_steps)
        self.hidden = int(hidden)
        self.dtype = np.dtype(dtype)
        self.reference = reference if reference is not None else reference_model(box)
        self.half_inside = bool(half_inside)
        self.include_running_max = bool(include_running_max)
        self.init_seed = int(init_seed)
        self.times = np.linspace(0.0, self.horizon, self.n_steps + 1)
        self.dt = self.horizon / self.n_steps

        N, H = self.n_steps, self.hidden
        S = N - 1
        # the p- and q-networks live in one stack of 2S nets (p rows first),
        # so every batched operation feeds both families per call
        S2 = 2 * S
        self._shapes: dict[str, tuple] = {"theta1": (), "theta2": (), "theta3": ()}
        self._shapes["W1"] = (S2, N, H)
        self._shapes["b1"] = (S2, H)
        if self.include_running_max:
            self._shapes["W1m"] = (S2, H)
        self._shapes["W2"] = (S2, H, H)
        self._shapes["b2"] = (S2, H)
        self._shapes["W3"] = (S2, H, H)
        self._shapes["b3"] = (S2, H)
        self._shapes["W4"] = (S2, H, 1)
        self._shapes["b4"] = (S2,)
        total = sum(int(np.prod(s)) for s in self._shapes.values())
        self._flat = np.zeros(total, dtype=self.dtype)
        self.params: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            self.params[name] = self._flat[offset:offset + size].reshape(shape)
            offset += size
        # input mask: the network for step n reads path columns 0..n only
        mask = np.zeros((S2, N, 1), dtype=self.dtype)
        for s in range(S):
            mask[s, :s + 2, 0] = 1.0
            mask[S + s, :s + 2, 0] = 1.0
        self._mask = mask
        self._init_params()

    # -- parameters ----------------------------------------------------------

    def _init_params(self) -> None:
        rng = np.random.default_rng(self.init_seed)
        self.params["theta1"][()] = rng.uniform(0.0, 1.0)
        self.params["theta2"][()] = 0.1 * rng.standard_normal()
        self.params["theta3"][()] = 0.1 * rng.standard_normal()
        S, H = self.n_steps - 1, self.hidden
        w1 = self.params["W1"]
        for row in range(2 * S):
            s = row % S
            fan_in = s + 2 + (1 if self.include_running_max else 0)
            w1[row, :s + 2, :] = rng.standard_normal((s + 2, H)) * np.sqrt(2.0 / fan_in)
            if self.include_running_max:
                self.params["W1m"][row] = (
                    rng.standard_normal(H) * np.sqrt(2.0 / fan_in))
        for li in ("W2", "W3"):
            self.params[li][:] = (
                rng.standard_normal((2 * S, H, H)) * np.sqrt(2.0 / H))
        # output layers start near zero: the derivative fields then grow from
        # the regression signal instead of injecting sup-gap noise into Y
        self.params["W4"][:] = (
            rng.standard_normal((2 * S, H, 1)) * (0.01 / np.sqrt(H)))

    def flat_params(self) -> np.ndarray:
        return self._flat.copy()

    def set_flat_params(self, vec: np.ndarray) -> None:
        if vec.shape != self._flat.shape:
            raise ValueError("parameter vector has the wrong length")
        self._flat[:] = vec
        self.params["W1"] *= self._mask

    @property
    def n_params(self) -> int:
        return self._flat.size

    def active_mask(self) -> np.ndarray:
        """Boolean flat mask: False on structurally-zero first-layer padding."""
        mask = np.ones(self._flat.size, dtype=bool)
        offset = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            if name == "W1":
                mask[offset:offset + size] = (
                    np.broadcast_to(self._mask.astype(bool), shape).reshape(-1))
            offset += size
        return mask

    def net(self, role: str, n: int) -> Mlp:
        """Unpadded view of the step-n derivative network as a plain Mlp."""
        if not 1 <= n <= self.n_steps - 1:
            raise ValueError(f"networks exist for steps 1..{self.n_steps - 1}")
        if self.include_running_max:
            raise NotImplementedError(
                "per-net export does not cover the running-max feature")
        if role not in ("p", "q"):
            raise ValueError("role must be 'p' or 'q'")
        s = (0 if role == "p" else self.n_steps - 1) + n - 1
        net = Mlp([n + 1, self.hidden, self.hidden, self.hidden, 1],
                  dtype=self.dtype)
        net.weights[0] = self.params["W1"][s, :n + 1, :].copy()
        net.weights[1] = self.params["W2"][s].copy()
        net.weights[2] = self.params["W3"][s].copy()
        net.weights[3] = self.params["W4"][s].copy()
        net.biases[0] = self.params["b1"][s].copy()
        net.biases[1] = self.params["b2"][s].copy()
        net.biases[2] = self.params["b3"][s].copy()
        net.biases[3] = np.atleast_1d(self.params["b4"][s]).copy()
        return net

    def net1(self, n: int) -> Mlp:
        return self.net("p", n)

    def net2(self, n: int) -> Mlp:
        return self.net("q", n)

    # -- forward / backward ---------------------------------------------------

    def _stack_forward(self, xin: np.ndarray, runmax: np.ndarray | None):
        """All 2(N-1) step networks at once; returns outputs and cache.

        The first layer runs batched against the full path matrix; masked
        weight rows make the network for step n blind to columns beyond its
        prefix.  Activations are computed in place (the ReLU masks are
        recovered from the activations themselves in the backward pass).
        """
        M = xin.shape[0]
        if self.n_steps == 1:
            return np.zeros((0, M), dtype=self.dtype), None
        p = self.params
        a1 = np.matmul(xin[None, :, :], p["W1"])
        a1 += p["b1"][:, None, :]
        if runmax is not None:
            a1 += runmax[:, :, None] * p["W1m"][:, None, :]
        np.maximum(a1, 0.0, out=a1)
        a2 = np.matmul(a1, p["W2"])
        a2 += p["b2"][:, None, :]
        np.maximum(a2, 0.0, out=a2)
        a3 = np.matmul(a2, p["W3"])
        a3 += p["b3"][:, None, :]
        np.maximum(a3, 0.0, out=a3)
        out = np.matmul(a3, p["W4"])[:, :, 0] + p["b4"][:, None]
        return out, (xin, runmax, a1, a2, a3)

    def _stack_backward(self, cache, dout: np.ndarray,
                        grads: dict[str, np.ndarray],
                        xin_t: np.ndarray) -> None:
        """Write exact network-parameter gradients; dout is (2(N-1), M)."""
        if cache is None:
            return
        xin, runmax, a1, a2, a3 = cache
        p = self.params
        # output layer is rank one; broadcasting beats batched matmul here
        np.einsum("smh,sm->sh", a3, dout, out=grads["W4"][:, :, 0],
                  optimize=True)
        dout.sum(axis=1, out=grads["b4"])
        g = dout[:, :, None] * p["W4"][:, None, :, 0]
        g *= a3 > 0
        np.matmul(a2.transpose(0, 2, 1), g, out=grads["W3"])
        g.sum(axis=1, out=grads["b3"])
        g = np.matmul(g, p["W3"].transpose(0, 2, 1))
        g *= a2 > 0
        np.matmul(a1.transpose(0, 2, 1), g, out=grads["W2"])
        g.sum(axis=1, out=grads["b2"])
        g = np.matmul(g, p["W2"].transpose(0, 2, 1))
        g *= a1 > 0
        g.sum(axis=1, out=grads["b1"])
        if runmax is not None:
            (g * runmax[:, :, None]).sum(axis=1, out=grads["W1m"])
        np.matmul(xin_t[None, :, :], g, out=grads["W1"])
        grads["W1"] *= self._mask

    def forward_y(self, paths: np.ndarray):
        """Terminal Y_N for a path batch (M, N+1); returns (Y_N, cache)."""
        X = np.ascontiguousarray(paths, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != self.n_steps + 1:
            raise ValueError(f"paths must have {self.n_steps + 1} columns")
        M = X.shape[0]
        xin = X[:, :self.n_steps]
        runmax = None
        if self.include_running_max:
            cum = np.maximum.accumulate(X, axis=1)[:, 1:self.n_steps]
            rm = np.ascontiguousarray(cum.T)  # running max up to step n
            runmax = np.concatenate([rm, rm])
        outs, net_cache = self._stack_forward(xin, runmax)
        S = self.n_steps - 1
        p_full = np.concatenate(
            [np.full((1, M), self.params["theta2"], dtype=self.dtype), outs[:S]])
        q_full = np.concatenate(
            [np.full((1, M), self.params["theta3"], dtype=self.dtype), outs[S:]])
        x_n = xin.T  # (N, M) states at t_0 .. t_{N-1}
        sig2 = self.reference.diffusion(x_n).astype(self.dtype)
        g_val, g_p, g_q = eval_G_separable(self.box, x_n, p_full, q_full,
                                           half_inside=self.half_inside)
        g_val = g_val.astype(self.dtype)
        dx = np.diff(X, axis=1).T  # (N, M)
        incr = p_full * dx + (0.5 * sig2 * q_full - g_val) * self.dtype.type(self.dt)
        y_terminal = self.params["theta1"] + incr.sum(axis=0)
        if not np.all(np.isfinite(y_terminal)):
            bad = int(np.argmax(~np.isfinite(np.asarray(y_terminal))))
            raise FloatingPointError(f"non-finite terminal Y in batch row {bad}")
        cache = (X, xin, runmax, net_cache, p_full, q_full,
                 g_p.astype(self.dtype), g_q.astype(self.dtype), sig2, dx)
        return y_terminal, cache

    def loss_and_grads(self, paths: np.ndarray, g_values: np.ndarray,
                       q_penalty: float = 0.0):
        """Summed squared terminal mismatch and its exact parameter gradient.

        ``q_penalty`` adds q_penalty * dt * sum(q_n^2) to the loss (see
        :class:`TrainConfig`); the returned gradient includes it exactly.
        """
        y_terminal, cache = self.forward_y(paths)
        (X, xin, runmax, net_cache, p_full, q_full,
         g_p, g_q, sig2, dx) = cache
        g_values = np.asarray(g_values, dtype=self.dtype)
        diff = y_terminal - g_values
        loss = float(diff @ diff)
        if q_penalty:
            loss += q_penalty * self.dt * float((q_full * q_full).sum())
        dY = 2.0 * diff  # same gradient reaches every step: dY_N/dY_n = 1
        grads_flat = np.zeros_like(self._flat)
        grads: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            grads[name] = grads_flat[offset:offset + size].reshape(shape)
            offset += size
        dp_full = dY[None, :] * (dx - g_p * self.dt)
        dq_full = dY[None, :] * (0.5 * sig2 - g_q) * self.dtype.type(self.dt)
        if q_penalty:
            dq_full += (2.0 * q_penalty * self.dt) * q_full
        grads["theta1"][()] = dY.sum()
        grads["theta2"][()] = dp_full[0].sum()
        grads["theta3"][()] = dq_full[0].sum()
        if self.n_steps > 1:
            xin_t = np.ascontiguousarray(xin.T)
            dout = np.concatenate([dp_full[1:], dq_full[1:]])
            self._stack_backward(net_cache, dout, grads, xin_t)
        return loss, grads_flat

    # -- training -------------------------------------------------------------

    def _simulate_reference(self, seed: int, step: int, m: int) -> np.ndarray:
        """Reference-measure Euler batch keyed by (seed, training step)."""
        N = self.n_steps
        z = counter_normals(seed, step, m * N).reshape(m, N).astype(self.dtype)
        ref = self.reference
        truncate = ref.state_space is StateSpace.POSITIVE
        dt = self.dt
        sq = np.sqrt(dt)
        x = np.full(m, self.x0, dtype=self.dtype)
        out = np.empty((m, N + 1), dtype=self.dtype)
        out[:, 0] = np.maximum(x, 0.0) if truncate else x
        b0, b1, a0, a1, gam = ref.b0, ref.b1, ref.a0, ref.a1, ref.gamma
        for k in range(N):
            base = np.maximum(x, 0.0) if truncate else x
            drift = b0 + b1 * base
            vol = (a0 + a1 * np.maximum(base, 0.0)) ** gam
            x = x + drift * dt + vol * sq * z[:, k]
            out[:, k + 1] = np.maximum(x, 0.0) if truncate else x
        return out

    def train(self, payoff, config: TrainConfig) -> TrainReport:
        """Algorithm: sample minibatch, forward, backward, adaptive-moment step.

        ``payoff`` evaluates batches on the pricer's time grid; its value is
        a constant target per path (no gradient flows through it).
        Deterministic given the config seed.
        """
        t_start = time.perf_counter()
        m_buf = np.zeros_like(self._flat)
        v_buf = np.zeros_like(self._flat)
        losses = np.empty(config.n_steps)
        n_trace = config.n_steps // config.log_every + 1
        theta1_trace = np.empty(n_trace)
        trace_i = 0
        initial_loss = None
        bad_streak = 0
        b1, b2, eps = config.beta1, config.beta2, config.eps
        for step in range(config.n_steps):
            X = self._simulate_reference(config.seed, step, config.batch_size)
            g = payoff.evaluate_batch(self.times, X)
            loss, grad = self.loss_and_grads(X, g, q_penalty=config.q_penalty)
            losses[step] = loss
            if initial_loss is None:
                initial_loss = max(loss, 1e-12)
            if loss > config.divergence_factor * initial_loss:
                bad_streak += 1
                if bad_streak >= config.divergence_patience:
                    raise TrainingDiverged(
                        f"loss {loss:.3e} stayed above {config.divergence_factor:.0e}"
                        f" x initial for {bad_streak} steps (step {step})")
            else:
                bad_streak = 0
            lr = config.lr_at(step)
            t = step + 1
            m_buf += (1.0 - b1) * (grad - m_buf)
            np.multiply(grad, grad, out=grad)
            v_buf += (1.0 - b2) * (grad - v_buf)
            denom = v_buf / (1.0 - b2 ** t)
            np.sqrt(denom, out=denom)
            denom += eps
            np.divide(m_buf, denom, out=denom)
            denom *= lr / (1.0 - b1 ** t)
            self._flat -= denom
            if step % config.log_every == 0:
                theta1_trace[trace_i] = float(self.params["theta1"])
                trace_i += 1
        return TrainReport(
            losses=losses,
            theta1_trace=theta1_trace[:trace_i],
            final_theta1=float(self.params["theta1"]),
            wall_clock=time.perf_counter() - t_start,
            n_steps=config.n_steps,
            seed=config.seed,
        )

    @property
    def price(self) -> float:
        return float(self.params["theta1"])


def train(pricer: BsdePricer, payoff, config: TrainConfig) -> TrainReport:
    return pricer.train(payoff, config)


# -- checkpointing ------------------------------------------------------------

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(pricer: BsdePricer, file) -> None:
    """Binary container: magic NGAB, version, grid spec, per-net dims, params.

    All parameters are written as little-endian f64 regardless of the
    training dtype (f32 values embed exactly); the first-layer weights are
    stored at their logical, unpadded shapes.
    """
    own = isinstance(file, str)
    fh = open(file, "wb") if own else file
    try:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION,
                             _DTYPE_CODES[pricer.dtype]))
        fh.write(struct.pack("<IIII", pricer.n_steps, pricer.hidden,
                             int(pricer.half_inside),
                             int(pricer.include_running_max)))
        fh.write(struct.pack("<ddd", pricer.horizon, pricer.x0, 0.0))
        from .model import BOX_FIELDS
        fh.write(np.array([getattr(pricer.box, k) for k in BOX_FIELDS],
                          dtype="<f8").tobytes())
        ref = pricer.reference
        fh.write(np.array([ref.b0, ref.b1, ref.a0, ref.a1, ref.gamma],
                          dtype="<f8").tobytes())
        fh.write(np.array([float(pricer.params["theta1"]),
                           float(pricer.params["theta2"]),
                           float(pricer.params["theta3"])], dtype="<f8").tobytes())
        S = pricer.n_steps - 1
        fh.write(struct.pack("<I", 2 * S))
        for base in (0, S):
            for n in range(1, pricer.n_steps):
                s = base + n - 1
                dims = [n + 1, pricer.hidden, pricer.hidden, pricer.hidden, 1]
                fh.write(struct.pack("<I", len(dims)))
                fh.write(np.array(dims, dtype="<u4").tobytes())
                blocks = [
                    pricer.params["W1"][s, :n + 1, :],
                    pricer.params["b1"][s],
                ]
                if pricer.include_running_max:
                    blocks.append(pricer.params["W1m"][s])
                blocks += [
                    pricer.params["W2"][s], pricer.params["b2"][s],
                    pricer.params["W3"][s], pricer.params["b3"][s],
                    pricer.params["W4"][s],
                    np.atleast_1d(pricer.params["b4"][s]),
                ]
                for b in blocks:
                    fh.write(np.asarray(b, dtype="<f8").tobytes())
    finally:
        if own:
            fh.close()


def load_checkpoint(file) -> BsdePricer:
    own = isinstance(file, str)
    fh = open(file, "rb") if own else file
    try:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a pricer checkpoint (bad magic)")
        version, dtype_code = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n_steps, hidden, half_inside, with_runmax = struct.unpack("<IIII", fh.read(16))
        horizon, x0, _ = struct.unpack("<ddd", fh.read(24))
        box_vals = np.frombuffer(fh.read(8 * 10), dtype="<f8")
        ref_vals = np.frombuffer(fh.read(8 * 5), dtype="<f8")
        thetas = np.frombuffer(fh.read(8 * 3), dtype="<f8")
        box = ParameterBox(*box_vals)
        ref = ModelPoint(*ref_vals, state_space=box.state.space)
        pricer = BsdePricer(box, x0, horizon, n_steps, hidden=hidden,
                            dtype=_CODE_DTYPES[dtype_code], reference=ref,
                            half_inside=bool(half_inside),
                            include_running_max=bool(with_runmax))
        pricer._flat[:] = 0.0
        pricer.params["theta1"][()] = thetas[0]
        pricer.params["theta2"][()] = thetas[1]
        pricer.params["theta3"][()] = thetas[2]
        n_nets, = struct.unpack("<I", fh.read(4))
        if n_nets != 2 * (n_steps - 1):
            raise ValueError("checkpoint net count mismatch")
        def read_block(shape):
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            return arr.astype(pricer.dtype)
        for base in (0, n_steps - 1):
            for n in range(1, n_steps):
                s = base + n - 1
                n_dims, = struct.unpack("<I", fh.read(4))
                dims = np.frombuffer(fh.read(4 * n_dims), dtype="<u4")
                if dims[0] != n + 1 or dims[1] != hidden:
                    raise ValueError("checkpoint layer dims mismatch")
                pricer.params["W1"][s, :n + 1, :] = read_block((n + 1, hidden))
                pricer.params["b1"][s] = read_block((hidden,))
                if with_runmax:
                    pricer.params["W1m"][s] = read_block((hidden,))
                pricer.params["W2"][s] = read_block((hidden, hidden))
                pricer.params["b2"][s] = read_block((hidden,))
                pricer.params["W3"][s] = read_block((hidden, hidden))
                pricer.params["b3"][s] = read_block((hidden,))
                pricer.params["W4"][s] = read_block((hidden, 1))
                pricer.params["b4"][s] = read_block(())
    finally:
        if own:
            fh.close()
    return pricer


def price_from_checkpoint(file, x0: float) -> float:
    """Trained price stored in a checkpoint; x0 must match the trained state."""
    pricer = load_checkpoint(file)
    if abs(pricer.x0 - x0) > 1e-12:
        raise ValueError(
            f"checkpoint was trained at x0={pricer.x0}, asked for {x0}")
    return pricer.price
