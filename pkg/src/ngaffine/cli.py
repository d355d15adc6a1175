"""Command-line harness: price, reproduce, diff, check.

Artifacts are data files (CSV, compact binaries), never rendered images.
Result CSVs contain no timestamps and fixed 17-digit float formatting, so a
repeated run with the same config and seed is byte-identical; runtimes and
timestamps live only in the append-only ledger.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 acceptance miss.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bsde as bsde_mod
from . import fd, mc
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    merge_overrides,
    parse_overrides,
    validate,
)
from .model import (
    ImproperParameterBox,
    ModelPoint,
    ParameterBox,
    eval_G,
    eval_generator,
    instantiate_model,
)
__all__ = ["main", "run_config", "reproduce", "diff_results", "run_check"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4

LEDGER_COLUMNS = ("record_id", "config_hash", "method", "label", "x0",
                  "price", "uncertainty", "runtime_s", "timestamp", "seed")

EXPERIMENTS = {
    "fig1": ("fig1_nonlinear.toml", "fig1_vasicek1.toml", "fig1_vasicek2.toml"),
    "fig2": ("fig2_fd.toml", "fig2_bsde.toml"),
    "table1": ("table1.toml",),
    "merton": ("merton.toml",),
    "blackcox": ("blackcox_bsde.toml", "blackcox_bound.toml"),
    "contagion": ("contagion.toml",),
}


def output_root(cfg_dir: str | None = None) -> Path:
    root = cfg_dir or os.environ.get("NGAFFINE_OUTPUT_ROOT", "results")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass(frozen=True)
class ResultRecord:
    """One priced point; the id is a content hash, so records never collide
    across distinct configs or results."""

    record_id: str
    config_hash: str
    method: str
    label: str
    x0: float
    price: float
    uncertainty: float
    runtime_s: float
    timestamp: float
    seed: int

    @classmethod
    def build(cls, cfg_hash: str, method: str, label: str, x0: float,
              price: float, uncertainty: float, runtime_s: float,
              seed: int) -> "ResultRecord":
        body = f"{cfg_hash}|{method}|{x0:.17g}|{price:.17g}|{uncertainty:.17g}|{seed}"
        rid = hashlib.sha256(body.encode()).hexdigest()[:12]
        return cls(rid, cfg_hash, method, label, x0, price, uncertainty,
                   runtime_s, time.time(), seed)


def append_ledger(root: Path, records: list[ResultRecord]) -> Path:
    path = root / "ledger.csv"
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LEDGER_COLUMNS)
        for r in records:
            writer.writerow([r.record_id, r.config_hash, r.method, r.label,
                             f"{r.x0:.17g}", f"{r.price:.17g}",
                             f"{r.uncertainty:.17g}", f"{r.runtime_s:.3f}",
                             f"{r.timestamp:.3f}", r.seed])
    return path


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                f"{v:.17g}" if isinstance(v, float) else str(v)
                for v in row) + "\n")


def _grid_from_cfg(cfg: RunConfig, box: ParameterBox) -> fd.Grid1D:
    g = cfg.raw["grid"]
    if "n_t" in g:
        return fd.Grid1D(box, g["x_min"], g["x_max"], g["n_x"], g["n_t"],
                         cfg.horizon)
    return fd.Grid1D.auto(box, g["x_min"], g["x_max"], g["n_x"], cfg.horizon,
                          safety=g.get("safety", 0.8))


def _grid2d_from_cfg(cfg: RunConfig, box: ParameterBox) -> fd.Grid2D:
    g = cfg.raw["grid2d"]
    if "n_t" in g:
        return fd.Grid2D(box, g["y_min"], g["y_max"], g["n_y"], g["z_min"],
                         g["z_max"], g["n_z"], g["n_t"], cfg.horizon)
    return fd.Grid2D.auto(box, g["y_min"], g["y_max"], g["n_y"], g["z_min"],
                          g["z_max"], g["n_z"], cfg.horizon,
                          safety=g.get("safety", 0.8))


def _sweep_prices_csv(out_dir: Path, label: str, rows: list[list],
                      with_stderr: bool) -> Path:
    header = ["x0", "price"] + (["stderr"] if with_stderr else [])
    path = out_dir / f"{label}_prices.csv"
    _write_rows(path, header, rows)
    return path


def run_config(cfg: RunConfig, out_dir: Path) -> tuple[list[ResultRecord], list[Path]]:
    """Dispatch a validated config; returns ledger records and written files."""
    t0 = time.perf_counter()
    box = cfg.box()
    payoff = cfg.payoff()
    method = cfg.method
    label = cfg.label
    cfg_hash = cfg.config_hash()
    records: list[ResultRecord] = []
    files: list[Path] = []
    n_report = None

    if method in ("fd", "fd_cir"):
        g = cfg.raw["grid"]
        grid = _grid_from_cfg(cfg, box)
        n_report = g.get("n_report", 101)
        if payoff.path_dependent:
            raise ConfigError(
                f"method {method!r} needs a path-independent payoff, "
                f"got {payoff.name}")
        if method == "fd":
            sol = fd.solve_nonlinear_1d(box, payoff, grid, n_report=n_report,
                                        half_inside=cfg.half_inside)
        else:
            from .model import PropernessCase
            if box.state.case is not PropernessCase.CASE_CIR:
                raise ConfigError("method 'fd_cir' requires a CASE_CIR box")
            sol = fd.solve_linear_cir(box.b0_hi, box.b1_hi, box.a1_hi, payoff,
                                      grid, n_report=n_report)
        rows = []
        for x0 in cfg.sweep_x0():
            price = sol.price_at(x0)
            rows.append([x0, price])
            records.append(ResultRecord.build(
                cfg_hash, method, label, x0, price, 0.0,
                time.perf_counter() - t0, cfg.seed))
        files.append(_sweep_prices_csv(out_dir, label, rows, False))
        dump = out_dir / f"{label}_solution.ngaf"
        sol.export_binary(dump)
        files.append(dump)

    elif method == "fd_asian":
        grid = _grid2d_from_cfg(cfg, box)
        n_report = cfg.raw["grid2d"].get("n_report", 51)
        sol = fd.solve_asian_2d(box, payoff, grid, n_report=n_report,
                                half_inside=cfg.half_inside)
        rows = []
        for x0 in cfg.sweep_x0():
            price = sol.price_at(x0)
            rows.append([x0, price])
            records.append(ResultRecord.build(
                cfg_hash, method, label, x0, price, 0.0,
                time.perf_counter() - t0, cfg.seed))
        files.append(_sweep_prices_csv(out_dir, label, rows, False))
        dump = out_dir / f"{label}_solution.ngaf"
        sol.export_binary(dump)
        files.append(dump)

    elif method in ("mc", "worst_case_cir", "lower_bound"):
        m = cfg.raw["mc"]
        rows = []
        for x0 in cfg.sweep_x0():
            if method == "worst_case_cir":
                price = mc.worst_case_cir_price(
                    box, payoff, 0.0, x0, cfg.horizon,
                    n_paths=m["n_paths"], n_steps=m["n_steps"], seed=cfg.seed)
            else:
                model = instantiate_model(box, cfg.selector)
                plan = mc.SimulationPlan(
                    model, m["n_paths"], m["n_steps"], cfg.horizon, x0,
                    cfg.seed, scheme=m.get("scheme", "auto"),
                    antithetic=m.get("antithetic", False))
                if method == "mc":
                    price = mc.price_mc(plan, payoff)
                else:
                    price, _ = mc.robust_lower_bound(box, payoff, plan)
            rows.append([x0, price.mean, price.stderr])
            records.append(ResultRecord.build(
                cfg_hash, price.method, label, x0, price.mean, price.stderr,
                time.perf_counter() - t0, cfg.seed))
        files.append(_sweep_prices_csv(out_dir, label, rows, True))

    elif method == "bsde":
        b = cfg.raw["bsde"]
        runs = b.get("runs", 1)
        dtype = {"float64": np.float64, "float32": np.float32}[
            b.get("dtype", "float64")]
        schedule = tuple((int(s), float(r)) for s, r in b.get("lr_schedule", []))
        sweep = cfg.sweep_x0()
        table_rows = []
        price_rows = []
        for ix, x0 in enumerate(sweep):
            finals = []
            for run in range(runs):
                seed = cfg.seed + 100 * ix + run
                pricer = bsde_mod.BsdePricer(
                    box, x0, cfg.horizon, b["n_steps"],
                    hidden=b.get("hidden", 32), dtype=dtype,
                    half_inside=cfg.half_inside,
                    include_running_max=b.get("include_running_max", False),
                    init_seed=seed)
                tc = bsde_mod.TrainConfig(
                    batch_size=b.get("batch_size", 256),
                    n_steps=b["train_steps"],
                    learning_rate=b.get("learning_rate", 1e-3),
                    lr_schedule=schedule,
                    seed=seed,
                    log_every=b.get("log_every", 100),
                )
                report = pricer.train(payoff, tc)
                finals.append(report.final_theta1)
                log = out_dir / f"{label}_x{ix}_run{run}_log.csv"
                steps = np.arange(0, tc.n_steps, tc.log_every)
                _write_rows(log, ["step", "loss", "theta1"],
                            [[int(s), float(report.losses[s]), float(th)]
                             for s, th in zip(steps, report.theta1_trace)])
                files.append(log)
                if run == 0:
                    ckpt = out_dir / f"{label}_x{ix}.ngab"
                    bsde_mod.save_checkpoint(pricer, ckpt)
                    files.append(ckpt)
            mean = float(np.mean(finals))
            std = float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0
            table_rows.append([x0, mean, std] + [float(f) for f in finals])
            price_rows.append([x0, mean, std])
            records.append(ResultRecord.build(
                cfg_hash, "bsde", label, x0, mean, std,
                time.perf_counter() - t0, cfg.seed))
        table = out_dir / f"{label}_table.csv"
        _write_rows(table, ["x0", "mean", "std"] +
                    [f"run_{r}" for r in range(runs)], table_rows)
        files.append(table)
        files.append(_sweep_prices_csv(out_dir, label, price_rows, True))

    elif method == "contagion_lower_bound":
        m2 = cfg.raw["model2d"]
        models = _contagion_corner_family(m2)
        plan = mc.SimulationPlan2D(
            models[0], m2.get("n_paths", 20000), m2.get("n_steps", 100),
            cfg.horizon, (m2["x0_1"], m2["x0_2"]), cfg.seed)
        best, per_model = mc.robust_lower_bound_2d(models, payoff, plan)
        rows = [[i, p.mean, p.stderr] for i, p in enumerate(per_model)]
        path = out_dir / f"{label}_corners.csv"
        _write_rows(path, ["corner", "price", "stderr"], rows)
        files.append(path)
        best_path = out_dir / f"{label}_prices.csv"
        _write_rows(best_path, ["x0", "price", "stderr"],
                    [[m2["x0_1"], best.mean, best.stderr]])
        files.append(best_path)
        records.append(ResultRecord.build(
            cfg_hash, best.method, label, m2["x0_1"], best.mean, best.stderr,
            time.perf_counter() - t0, cfg.seed))

    elif method == "merton":
        grid = _grid_from_cfg(cfg, box)
        n_report = cfg.raw["grid"].get("n_report", 101)
        x0 = float(cfg.raw["sweep"]["x0"][0])
        from .payoffs import MertonBond, MertonEquity
        rows = []
        for face in (float(f) for f in cfg.raw["sweep"]["face"]):
            bond_leg = MertonBond(face)
            # bond holders care about the worst case over models, i.e. the
            # infimum: -sup E[-(D - x(T))^+]
            neg = fd.solve_nonlinear_1d(
                box, None, grid, n_report=n_report, half_inside=cfg.half_inside,
                terminal=lambda x, pf=bond_leg: -pf.terminal(x))
            bond = -neg.price_at(x0)
            equity = fd.solve_nonlinear_1d(
                box, MertonEquity(face), grid, n_report=n_report,
                half_inside=cfg.half_inside).price_at(x0)
            rows.append([face, bond, equity])
            records.append(ResultRecord.build(
                cfg_hash, "merton", label, face, bond, 0.0,
                time.perf_counter() - t0, cfg.seed))
        path = out_dir / f"{label}_legs.csv"
        _write_rows(path, ["face", "bond_robust_inf", "equity_robust_sup"], rows)
        files.append(path)

    else:
        raise ConfigError(f"method {method!r} not wired")

    return records, files




def _contagion_corner_family(m2: dict) -> list:
    """Corner family of the two-firm model: per-firm drift and variance
    endpoints plus the correlation endpoints (2^7 models, deduplicated)."""
    import itertools
    models = []
    seen = set()
    for b01, b11, b02, b12, v1, v2, rho in itertools.product(
            (m2["b0_1_lo"], m2["b0_1_hi"]), (m2["b1_1_lo"], m2["b1_1_hi"]),
            (m2["b0_2_lo"], m2["b0_2_hi"]), (m2["b1_2_lo"], m2["b1_2_hi"]),
            (m2["var1_lo"], m2["var1_hi"]), (m2["var2_lo"], m2["var2_hi"]),
            (m2["rho_lo"], m2["rho_hi"])):
        key = (b01, b11, b02, b12, v1, v2, rho)
        if key in seen:
            continue
        seen.add(key)
        cov = rho * (v1 * v2) ** 0.5
        models.append(mc.ModelPoint2D(
            b0=[b01, b02],
            b_lin=[[b11, 0.0], [0.0, b12]],
            a0=[[v1, cov], [cov, v2]],
            a_lin=np.zeros((2, 2, 2)),
        ))
    return models


# -- experiments --------------------------------------------------------------

def _experiment_config(name: str) -> Path:
    from importlib.resources import files as res_files
    return Path(str(res_files("ngaffine.experiments") / name))


def reproduce(name: str, out_root: Path, overrides: list[str] | None = None
              ) -> tuple[list[ResultRecord], list[Path]]:
    """Run the pinned configs of a named experiment; emit a file manifest."""
    if name not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    out_dir = out_root / name
    out_dir.mkdir(parents=True, exist_ok=True)
    all_records: list[ResultRecord] = []
    all_files: list[Path] = []
    over = parse_overrides(overrides or [])
    for cfg_name in EXPERIMENTS[name]:
        path = _experiment_config(cfg_name)
        if not path.exists():
            raise ConfigError(f"pinned config {cfg_name} missing")
        cfg = load_config(path)
        if over:
            cfg = validate(merge_overrides(cfg.raw, over), source=str(path))
        records, files = run_config(cfg, out_dir)
        all_records += records
        all_files += files
    if name == "merton":
        all_files.append(_merton_parity_file(out_dir))
    manifest = {
        "experiment": name,
        "files": {f.name: hashlib.sha256(f.read_bytes()).hexdigest()
                  for f in sorted(set(all_files))},
    }
    mpath = out_dir / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    all_files.append(mpath)
    append_ledger(out_root, all_records)
    return all_records, all_files


def _merton_parity_file(out_dir: Path) -> Path:
    """Cross-check bond + equity against |x - D| under the midpoint model.

    The robust legs come from the sup/inf runs already on disk; the parity
    column checks the midpoint-model identity (D-x)^+ + (x-D)^+ = |x-D|
    leg by leg on one grid solve each.
    """
    from .payoffs import MertonBond, MertonEquity
    cfg = load_config(_experiment_config("merton.toml"))
    box = cfg.box()
    mid = instantiate_model(box, "midpoint")
    sbox = ParameterBox.singleton(mid.b0, mid.b1, mid.a0, mid.a1, mid.gamma)
    grid = _grid_from_cfg(cfg, sbox)
    faces = [float(f) for f in cfg.raw["sweep"]["face"]]
    x0 = float(cfg.raw["sweep"]["x0"][0])
    rows = []
    for face in faces:
        bond = fd.solve_nonlinear_1d(sbox, MertonBond(face), grid).price_at(x0)
        equity = fd.solve_nonlinear_1d(sbox, MertonEquity(face), grid).price_at(x0)
        absleg = fd.solve_nonlinear_1d(
            sbox, None, grid, terminal=lambda x, d=face: np.abs(x - d)).price_at(x0)
        rows.append([face, bond, equity, absleg, bond + equity - absleg])
    path = out_dir / "merton_parity.csv"
    _write_rows(path, ["face", "bond_mid", "equity_mid", "abs_mid",
                       "parity_gap"], rows)
    return path


# -- diff ----------------------------------------------------------------------

def load_ledger(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def diff_results(ledger_path: Path, id_a: str, id_b: str,
                 fd_tolerance: float = 0.01,
                 mc_sigmas: float = 3.0) -> tuple[bool, str]:
    """Compare two ledger records; FD-type records gate at 1% drift,
    MC-type at joint standard errors."""
    rows = {r["record_id"]: r for r in load_ledger(ledger_path)}
    try:
        a, b = rows[id_a], rows[id_b]
    except KeyError as exc:
        raise ConfigError(f"record {exc.args[0]!r} not in ledger") from exc
    pa, pb = float(a["price"]), float(b["price"])
    ua, ub = float(a["uncertainty"]), float(b["uncertainty"])
    delta = pb - pa
    lines = [f"{'':12s} {'A':>14s} {'B':>14s}",
             f"{'method':12s} {a['method']:>14s} {b['method']:>14s}",
             f"{'x0':12s} {float(a['x0']):14.6g} {float(b['x0']):14.6g}",
             f"{'price':12s} {pa:14.8f} {pb:14.8f}",
             f"{'uncertainty':12s} {ua:14.8f} {ub:14.8f}",
             f"{'delta':12s} {delta:14.8f}"]
    if ua > 0 or ub > 0:
        joint = (ua ** 2 + ub ** 2) ** 0.5
        ok = abs(delta) <= mc_sigmas * joint if joint > 0 else delta == 0
        lines.append(f"gate: |delta| <= {mc_sigmas:g} joint stderr "
                     f"({mc_sigmas * joint:.8f}) -> {'PASS' if ok else 'FAIL'}")
    else:
        scale = max(abs(pa), 1e-12)
        ok = abs(delta) <= fd_tolerance * scale
        lines.append(f"gate: |delta| <= {fd_tolerance:.0%} "
                     f"-> {'PASS' if ok else 'FAIL'}")
    return ok, "\n".join(lines)


# -- check: fast invariant battery ---------------------------------------------

def run_check(verbose: bool = True) -> bool:
    """Quick self-test battery over the core invariants; True iff all pass."""
    from .payoffs import CappedCall

    checks: list[tuple[str, bool]] = []

    def record(name: str, ok: bool) -> None:
        checks.append((name, ok))
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}")

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        b0 = sorted(rng.uniform(-1, 1, 2))
        b1 = sorted(rng.uniform(-2, 2, 2))
        a0 = sorted(rng.uniform(0.01, 2, 2))
        a1 = sorted(rng.uniform(0.0, 2, 2))
        ga = sorted(rng.uniform(0.5, 1, 2))
        box = ParameterBox(b0[0], b0[1], b1[0], b1[1], a0[0], a0[1],
                           a1[0], a1[1], ga[0], ga[1])
        y, p, q = rng.uniform(-5, 5, 3)
        grid = _dense_generator_sup(box, y, p, q)
        val = eval_G(box, y, p, q)
        worst = max(worst, abs(val - grid) / (1e-6 + abs(val)))
    record(f"generator corner enumeration vs dense grid (rel {worst:.1e})",
           worst <= 1e-6)

    theta = ModelPoint(0.1, -1.2, 0.3, 0.4, 0.7)
    sbox = ParameterBox.singleton(0.1, -1.2, 0.3, 0.4, 0.7)
    pts = rng.uniform(-3, 3, (50, 3))
    sing = max(abs(eval_G(sbox, *row) - eval_generator(theta, *row))
               for row in pts)
    record(f"singleton box reduces to the linear generator ({sing:.1e})",
           sing < 1e-12)

    box5 = ParameterBox(0.05, 0.15, -3.0, -0.5, 0.01, 0.02, 0.0, 0.0, 0.5, 0.5)
    grid = fd.Grid1D.auto(box5, -1.0, 1.0, 81, 0.5)
    sol = fd.solve_nonlinear_1d(box5, CappedCall(0.1, 0.5), grid)
    record("finite-difference maximum principle",
           sol.values.min() >= -1e-12 and sol.values.max() <= 0.5 + 1e-12)

    cir_box = ParameterBox(0.10, 0.15, -1.0, -0.5, 0.0, 0.0, 0.05, 0.2, 0.5, 0.5)
    model = instantiate_model(cir_box, "worst_case_cir")
    plan = mc.SimulationPlan(model, 2000, 64, 1.0, 0.2, seed=1)
    batch = mc.simulate_paths(plan)
    record("full-truncation paths stay nonnegative", bool((batch.values >= 0).all()))

    p1 = mc.price_mc(plan, CappedCall(0.1, 10.0))
    p2 = mc.price_mc(plan, CappedCall(0.1, 10.0))
    record("seeded Monte Carlo is bitwise reproducible", p1 == p2)

    pricer = bsde_mod.BsdePricer(box5, -0.1, 1.0, 3, hidden=4, init_seed=11)
    vec = rng.normal(0, 0.3, pricer.n_params)
    pricer.set_flat_params(vec)
    X = rng.normal(0, 0.3, (8, 4))
    gv = rng.uniform(0, 1, 8)
    _, grads = pricer.loss_and_grads(X, gv)
    grads = grads.copy()
    base = pricer.flat_params()
    worst_g = 0.0
    eps = 1e-6
    for i in rng.choice(np.where(pricer.active_mask())[0], 20, replace=False):
        up = base.copy(); up[i] += eps
        pricer.set_flat_params(up)
        lp, _ = pricer.loss_and_grads(X, gv)
        dn = base.copy(); dn[i] -= eps
        pricer.set_flat_params(dn)
        lm, _ = pricer.loss_and_grads(X, gv)
        fd_g = (lp - lm) / (2 * eps)
        worst_g = max(worst_g, abs(fd_g - grads[i])
                      / max(abs(fd_g), abs(grads[i]), 1e-8))
    record(f"deep-BSDE reverse-mode gradients vs finite differences "
           f"({worst_g:.1e})", worst_g <= 1e-3)

    ok = all(flag for _, flag in checks)
    if verbose:
        print(f"{sum(f for _, f in checks)}/{len(checks)} checks passed")
    return ok


def _dense_generator_sup(box: ParameterBox, y: float, p: float, q: float,
                         n: int = 50) -> float:
    """Dense-grid supremum of the generator (50 points per axis).

    The drift and diffusion corners are independent coordinates, so the
    joint 50^5 grid supremum equals the sum of the two partial suprema
    computed here; endpoints are included, hence the true corners are on
    the grid.
    """
    b0 = np.linspace(box.b0_lo, box.b0_hi, n)
    b1 = np.linspace(box.b1_lo, box.b1_hi, n)
    drift = ((b0[:, None] + b1[None, :] * y) * p).max()
    a0 = np.linspace(box.a0_lo, box.a0_hi, n)
    a1 = np.linspace(box.a1_lo, box.a1_hi, n)
    ga = np.linspace(box.gamma_lo, box.gamma_hi, n)
    base = (a0[:, None] + a1[None, :] * max(y, 0.0)).reshape(-1)
    diff = (0.5 * (base[:, None] ** (2.0 * ga[None, :])) * q).max()
    return float(drift + diff)


# -- entry point ----------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ngaffine",
        description="Worst-case pricing under non-linear generalized affine "
                    "models: finite differences, Monte Carlo and deep-BSDE.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_price = sub.add_parser("price", help="run one pricing config")
    p_price.add_argument("config", help="TOML run configuration")
    p_price.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE", help="override a config key")
    p_price.add_argument("--out", default=None, help="output root directory")

    p_rep = sub.add_parser("reproduce", help="run a pinned experiment")
    p_rep.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p_rep.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE")
    p_rep.add_argument("--runs", type=int, default=None,
                       help="override the number of BSDE training runs")
    p_rep.add_argument("--out", default=None)

    p_diff = sub.add_parser("diff", help="compare two ledger records")
    p_diff.add_argument("ledger")
    p_diff.add_argument("record_a")
    p_diff.add_argument("record_b")

    sub.add_parser("check", help="run the fast invariant battery")

    args = parser.parse_args(argv)
    try:
        if args.command == "price":
            cfg = load_config(args.config)
            if args.override:
                cfg = validate(merge_overrides(
                    cfg.raw, parse_overrides(args.override)), cfg.source)
            root = output_root(args.out or cfg.raw.get("output", {}).get("dir"))
            records, files = run_config(cfg, root)
            append_ledger(root, records)
            for r in records:
                print(f"{r.record_id}  {r.method:16s} x0={r.x0:+.4g} "
                      f"price={r.price:.6f} +/- {r.uncertainty:.6f}")
            if records and records[0].method == "corner_lower_bound":
                print("note: corner-family maximum is a LOWER BOUND on the "
                      "robust price")
            for f in files:
                print(f"wrote {f}")
        elif args.command == "reproduce":
            over = list(args.override)
            if args.runs is not None:
                over.append(f"bsde.runs={args.runs}")
            root = output_root(args.out)
            records, files = reproduce(args.experiment, root, over)
            print(f"{args.experiment}: {len(records)} records, "
                  f"{len(files)} files under {root / args.experiment}")
        elif args.command == "diff":
            ok, text = diff_results(Path(args.ledger), args.record_a,
                                    args.record_b)
            print(text)
            if not ok:
                return EXIT_ACCEPTANCE
        elif args.command == "check":
            if not run_check():
                return EXIT_ACCEPTANCE
    except (ConfigError, ImproperParameterBox, fd.CflError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, bsde_mod.TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
