"""Experiment orchestration, parallel path execution and output files.

Paths are split into fixed chunks of `chunk_size` consecutive path indices.
A chunk is always simulated as one batch, whichever process runs it, and BLAS
is pinned to one thread, so results do not depend on the worker count.
"""
from __future__ import annotations

import hashlib
import json
import math
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cf
from . import diagnostics as dg
from . import geometry as geo
from .galerkin import GalerkinModel, NonSPDError
from .potentials import RegularizedPotential, SmoothPotential, yosida_suite
from .timestepper import LEDGER_COLUMNS, NumericalAbort, Stepper, simulate_batch

ENV_OUTPUT_DIR = "CHBSIM_OUTPUT_DIR"
ENV_THREADS = "CHBSIM_THREADS"

EXIT_PASS, EXIT_CERT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


@dataclass(frozen=True)
class Level:
    """Overrides of the base configuration for one rung of a ladder."""
    n_modes: int | None = None
    dt: float | None = None
    n_steps: int | None = None
    delta: float | None = None
    refine: int = 1
    noise: bool | None = None
    amplitude_scale: float = 1.0

    def label(self) -> str:
        parts = []
        if self.n_modes is not None:
            parts.append(f"n={self.n_modes}")
        if self.dt is not None:
            parts.append(f"dt={self.dt:g}")
        if self.delta is not None:
            parts.append(f"delta={self.delta:g}")
        return ",".join(parts) or "base"


@dataclass
class Setup:
    model: GalerkinModel
    scheme: object
    stepper: Stepper
    a0: np.ndarray
    b0: np.ndarray


_SETUP_CACHE: dict = {}


def build_setup(cfg: cf.RunConfig, level: Level = Level()) -> Setup:
    key = (cf.config_hash(cfg), level)
    if key in _SETUP_CACHE:
        return _SETUP_CACHE[key]
    basis = geo.build_basis(cf.make_geometry(cfg, level.n_modes))
    F, G = cf.make_potentials(cfg, level.delta)
    noise = cf.make_noise(cfg)
    if level.noise is not None:
        noise = replace(noise, enabled=level.noise)
    if level.amplitude_scale != 1.0:
        noise = replace(noise,
                        bulk=replace(noise.bulk, amplitude=noise.bulk.amplitude * level.amplitude_scale),
                        boundary=replace(noise.boundary,
                                         amplitude=noise.boundary.amplitude * level.amplitude_scale))
    model = GalerkinModel(basis, cf.make_params(cfg), F, G, noise)
    scheme = cf.make_scheme(cfg, level.dt, level.n_steps)
    a0, b0 = cf.initial_coefficients(cfg, basis)
    st = Setup(model, scheme, Stepper(model, scheme), a0, b0)
    if len(_SETUP_CACHE) > 16:
        _SETUP_CACHE.clear()
    _SETUP_CACHE[key] = st
    return st


def _init_worker():
    threadpool_limits(1)


def _run_chunk(task):
    cfg_text, level, paths = task
    cfg = cf.parse_config(cfg_text)
    with threadpool_limits(1):
        st = build_setup(cfg, level)
        return simulate_batch(st.model, st.scheme, st.a0, st.b0, paths, cfg.master_seed,
                              refine=level.refine, stepper=st.stepper)


class PathRunner:
    """Runs path collections with a fixed chunking, optionally in a process pool."""

    def __init__(self, cfg: cf.RunConfig, workers: int = 1):
        self.cfg = cfg
        self.text = cf.serialize_config(cfg)
        self.workers = int(workers)
        self.chunk = int(cfg.execution.chunk_size)
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(self.workers, mp_context=mp.get_context("spawn"),
                                             initializer=_init_worker)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
        return False

    def run(self, level: Level, n_paths: int):
        tasks = [(self.text, level, list(range(i, min(i + self.chunk, n_paths))))
                 for i in range(0, n_paths, self.chunk)]
        if self._pool is None:
            parts = [_run_chunk(t) for t in tasks]
        else:
            parts = list(self._pool.map(_run_chunk, tasks))
        out = [p for part in parts for p in part]
        out.sort(key=lambda p: p.path_index)
        return out


# -- output helpers ------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return x


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _fmt(v) -> str:
    return repr(float(v))


def columns_text(names, cols, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append("# " + "\t".join(names))
    n = len(cols[0]) if cols else 0
    for i in range(n):
        lines.append("\t".join(_fmt(c[i]) for c in cols))
    return "\n".join(lines) + "\n"


class OutputWriter:
    def __init__(self, directory: str, formats):
        self.dir = directory
        self.formats = set(formats)
        self.files: list[str] = []
        os.makedirs(directory, exist_ok=True)

    def write(self, rel: str, text: str):
        path = os.path.join(self.dir, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write output file {path}: {exc}") from exc
        self.files.append(rel)

    def json(self, rel: str, obj):
        if "json" in self.formats:
            self.write(rel, dumps_json(obj))

    def ledger(self, rel: str, path, decimate: int):
        if "tsv" not in self.formats:
            return
        led = path.ledger
        idx = np.arange(0, path.n_rows, decimate)
        if idx[-1] != path.n_rows - 1:
            idx = np.append(idx, path.n_rows - 1)
        cols = [led[k][idx] for k in LEDGER_COLUMNS]
        meta = [f"path {path.path_index} seed_key {list(path.seed_key)} dt {path.dt!r} "
                f"kappa {path.kappa!r} stopped_at {path.stopped_at}"]
        self.write(rel, columns_text(LEDGER_COLUMNS, cols, meta))

    def plot(self, rel: str, names, cols, comments=()):
        if "gnuplot" in self.formats:
            self.write(rel, columns_text(names, cols, comments))

    def manifest(self, config_hash: str):
        entries = []
        for rel in sorted(set(self.files)):
            with open(os.path.join(self.dir, rel), "rb") as fh:
                data = fh.read()
            entries.append({"file": rel, "bytes": len(data),
                            "sha256": hashlib.sha256(data).hexdigest()})
        text = dumps_json({"config_hash": config_hash, "files": entries})
        with open(os.path.join(self.dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return [e["file"] for e in entries] + ["manifest.json"]


def energy_stack(path):
    """Columns whose signed sum reproduces E_tot: E_tot(t) = E_tot(0) + sum of the
    cumulative columns + residual."""
    led, dt = path.ledger, path.dt

    def cum(x):
        c = np.zeros_like(x)
        c[1:] = np.cumsum(x[:-1])
        return c
    names = ["t", "E_tot", "E_tot0"]
    cols = [led["t"], led["E_tot"], np.full_like(led["t"], led["E_tot"][0])]
    for k in dg.DISSIPATION_COLUMNS:
        names.append("minus_cum_" + k)
        cols.append(-dt * cum(led[k]))
    names += ["cum_ito", "cum_mob_cross", "cum_stoch", "residual"]
    cols += [dt * cum(sum(led[k] for k in dg.ITO_COLUMNS)), dt * cum(led["mob_cross"]),
             cum(sum(led[k] for k in dg.STOCH_COLUMNS)), dg.ito_identity_residual(path)]
    return names, cols


# -- summary ------------------------------------------------------------------------------------

@dataclass
class RunSummary:
    config_hash: str
    experiment: str
    suites: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    aborted: str | None = None
    output_dir: str = ""

    @property
    def passed(self) -> bool:
        return self.aborted is None and all(s.get("pass", False) for s in self.suites.values())

    @property
    def exit_code(self) -> int:
        if self.aborted is not None:
            return EXIT_ABORT
        return EXIT_PASS if self.passed else EXIT_CERT_FAIL

    def deterministic_dict(self) -> dict:
        return {"config_hash": self.config_hash, "experiment": self.experiment,
                "suites": self.suites, "aborted": self.aborted, "pass": self.passed,
                "exit_code": self.exit_code}


# -- experiments ----------------------------------------------------------------------------------

class Context:
    def __init__(self, cfg: cf.RunConfig, runner: PathRunner, out: OutputWriter):
        self.cfg = cfg
        self.runner = runner
        self.out = out

    def paths(self, level: Level, n_paths: int):
        return self.runner.run(level, n_paths)

    def write_paths(self, prefix: str, paths):
        for p in paths[: self.cfg.output.max_path_files]:
            self.out.ledger(f"{prefix}/path_{p.path_index:05d}.tsv", p, self.cfg.output.decimate)


def _path_checks(paths, model) -> dict:
    acc = dg.correction_accounting(paths, model)
    ctl = dg.potential_control_check(paths, model)
    return {"guard_consistent": dg.guard_check(paths), "ito_accounting": acc,
            "potential_control": ctl, "n_stopped": sum(p.stopped_at is not None for p in paths),
            "negative_F_delta_points": dg.negative_potential_count(model, paths),
            "boundary_convection": dg.boundary_convection(paths)}


def _checks_pass(ch: dict) -> bool:
    return bool(ch["guard_consistent"] and ch["ito_accounting"]["pass"]
                and ch["potential_control"]["pass"])


def exp_single_path(ctx: Context) -> dict:
    st = build_setup(ctx.cfg)
    paths = ctx.paths(Level(), 1)
    p = paths[0]
    ctx.write_paths("paths", paths)
    names, cols = energy_stack(p)
    ctx.out.plot("plot_energy_stack.dat", names, cols,
                 ["E_tot = E_tot0 + sum of the minus_cum_*/cum_* columns + residual"])
    ch = _path_checks(paths, st.model)
    rep = {"checks": ch, "E_tot_final": p.ledger["E_tot"][-1],
           "residual_final": p.ledger["residual"][-1], "stopped_at": p.stopped_at}
    ok = _checks_pass(ch)
    if not st.model.noise.enabled:
        d = dg.energy_dissipation_defect(p)
        rep["energy"] = {k: v for k, v in d.items() if k != "defect"}
        ok = ok and d["max_dE"] <= 1e-8 and d["mass_drift"] <= 1e-12
    rep["pass"] = bool(ok)
    ctx.out.json("report_single_path.json", rep)
    return {"single_path": rep}


def _mc_report(paths, model, orders) -> dict:
    rep = {"checks": _path_checks(paths, model),
           "residual_rms": dg.residual_rms(paths),
           "energy_bound": dg.a_priori_inequality_check(paths, model),
           "moments": {str(r): dg.moment_certificate(paths, r, model) for r in orders}}
    if model.noise.enabled:
        rep["mass_martingale"] = dg.mass_martingale(paths, model)
    return rep


def exp_monte_carlo(ctx: Context) -> dict:
    st = build_setup(ctx.cfg)
    ex = ctx.cfg.experiment
    paths = ctx.paths(Level(), ex.n_paths)
    ctx.write_paths("paths", paths)
    rep = _mc_report(paths, st.model, ex.moment_orders)
    mm = rep.get("mass_martingale")
    ok = (_checks_pass(rep["checks"]) and rep["energy_bound"]["finite"]
          and rep["energy_bound"]["dissipation_nonnegative"]
          and all(m["finite"] for m in rep["moments"].values())
          and (mm is None or (mm["pass_mean"] and mm["pass_variance"])))
    rep["pass"] = bool(ok)
    ctx.out.json("report_monte_carlo.json", rep)
    _moment_plot(ctx, "plot_moments.dat", [("base", rep["moments"])])
    return {"monte_carlo": rep}


def _moment_plot(ctx, rel, labelled):
    names = ["level", "r"]
    for k in dg.MOMENT_STATISTICS:
        names += [k, k + "_se"]
    rows = []
    for i, (_, moms) in enumerate(labelled):
        for r, m in moms.items():
            row = [float(i), float(r)]
            for k in dg.MOMENT_STATISTICS:
                row += [m["statistics"][k]["estimate"], m["statistics"][k]["se"]]
            rows.append(row)
    cols = [np.array(c) for c in zip(*rows)] if rows else [np.array([])] * len(names)
    comments = [f"level {i}: {lab}" for i, (lab, _) in enumerate(labelled)]
    ctx.out.plot(rel, names, cols, comments)


def _dt_levels(cfg):
    ex, s = cfg.experiment, cfg.scheme
    T = s.dt * s.n_steps
    dts = sorted(ex.levels if ex.levels else [s.dt, s.dt / 2, s.dt / 4], reverse=True)
    fine = dts[-1]
    return [Level(dt=d, n_steps=int(round(T / d)), refine=int(round(d / fine))) for d in dts]


def _dt_ladder(ctx: Context, name: str) -> dict:
    cfg = ctx.cfg
    st0 = build_setup(cfg)
    noisy = st0.model.noise.enabled
    levels = _dt_levels(cfg)
    ladder, finals = {}, {}
    per_level = []
    for lv in levels:
        ps = ctx.paths(lv, cfg.experiment.n_paths)
        ctx.write_paths(f"ladder_{lv.label()}", ps)
        ladder[lv.dt] = ps
        finals[lv.dt] = np.array([np.concatenate([p.snap_a[-1], p.snap_b[-1]]) for p in ps])
        per_level.append({"dt": lv.dt, "n_steps": lv.n_steps, "refine": lv.refine,
                          "residual_rms": dg.residual_rms(ps),
                          "n_stopped": sum(p.stopped_at is not None for p in ps)})
    res = dg.residual_ladder(ladder)
    dts = [lv.dt for lv in levels]
    strong = [float(np.sqrt(np.mean(np.sum((finals[dts[i]] - finals[dts[i + 1]]) ** 2, axis=1))))
              for i in range(len(dts) - 1)]
    strong_slope = dg.fit_slope(dts[:-1], strong)
    threshold = 0.4 if noisy else 0.9
    ok = bool(res["monotone"] and res["slope"] >= threshold)
    if len(strong) >= 2:
        ok = ok and strong_slope >= 0.4
    rep = {"levels": per_level, "residual_ladder": res, "slope_threshold": threshold,
           "strong_error": {"dt": dts[:-1], "rms_difference": strong, "slope": strong_slope},
           "pass": ok}
    ctx.out.json(f"report_{name}.json", rep)
    fit = [math.exp(np.polyfit(np.log(dts), np.log(res["rms"]), 1)[1]) * d ** res["slope"]
           if np.isfinite(res["slope"]) else float("nan") for d in dts]
    ctx.out.plot("plot_residual_ladder.dat", ["dt", "rms_residual", "fit"],
                 [np.array(dts), np.array(res["rms"]), np.array(fit)],
                 [f"fitted slope {res['slope']!r}"])
    if len(strong) >= 1:
        sfit = ([math.exp(np.polyfit(np.log(dts[:-1]), np.log(strong), 1)[1]) * d ** strong_slope
                 for d in dts[:-1]] if np.isfinite(strong_slope) else [float("nan")] * len(strong))
        ctx.out.plot("plot_strong_error.dat", ["dt", "rms_difference", "fit"],
                     [np.array(dts[:-1]), np.array(strong), np.array(sfit)],
                     [f"fitted slope {strong_slope!r}"])
    return {name: rep}


def _n_levels(cfg):
    ex = cfg.experiment
    return [Level(n_modes=int(n)) for n in (ex.levels if ex.levels else [4, 8, 16])]


def _n_ladder(ctx: Context, name: str) -> dict:
    cfg = ctx.cfg
    ex = cfg.experiment
    labelled, per_level = [], []
    for lv in _n_levels(cfg):
        st = build_setup(cfg, lv)
        ps = ctx.paths(lv, ex.n_paths)
        ctx.write_paths(f"ladder_{lv.label()}", ps)
        moms = {str(r): dg.moment_certificate(ps, r, st.model) for r in ex.moment_orders}
        eb = dg.a_priori_inequality_check(ps, st.model)
        labelled.append((lv.label(), moms))
        per_level.append({"n_modes": lv.n_modes, "moments": moms, "energy_bound": eb,
                          "checks": _path_checks(ps, st.model)})
    stab = {}
    if len(labelled) >= 2:
        for r in labelled[-1][1]:
            stab[r] = dg.moment_stability(labelled[-2][1][r], labelled[-1][1][r])
    ok = (all(all(m["finite"] for m in lv["moments"].values()) for lv in per_level)
          and all(s["pass"] for s in stab.values())
          and all(_checks_pass(lv["checks"]) for lv in per_level))
    rep = {"levels": per_level, "stability_finest_two": stab, "pass": bool(ok)}
    ctx.out.json(f"report_{name}.json", rep)
    _moment_plot(ctx, "plot_moments.dat", labelled)
    return {name: rep}


def _delta_ladder(ctx: Context, name: str) -> dict:
    cfg = ctx.cfg
    ex = cfg.experiment
    deltas = sorted(ex.levels if ex.levels else [0.4, 0.2, 0.1], reverse=True)
    labelled, per_level, finals = [], [], []
    for d in deltas:
        lv = Level(delta=float(d))
        st = build_setup(cfg, lv)
        ps = ctx.paths(lv, ex.n_paths)
        moms = {str(r): dg.moment_certificate(ps, r, st.model) for r in ex.moment_orders}
        labelled.append((lv.label(), moms))
        finals.append(np.array([np.concatenate([p.snap_a[-1], p.snap_b[-1]]) for p in ps]))
        per_level.append({"delta": d, "moments": moms,
                          "mean_E_tot_T": float(np.mean([p.ledger["E_tot"][-1] for p in ps]))})
    cauchy = [float(np.sqrt(np.mean(np.sum((finals[i] - finals[i + 1]) ** 2, axis=1))))
              for i in range(len(finals) - 1)]
    ok = all(all(m["finite"] for m in lv["moments"].values()) for lv in per_level)
    rep = {"levels": per_level, "cauchy_rms_difference": cauchy, "pass": bool(ok)}
    ctx.out.json(f"report_{name}.json", rep)
    _moment_plot(ctx, "plot_moments.dat", labelled)
    return {name: rep}


def exp_ladder(ctx: Context) -> dict:
    axis = ctx.cfg.experiment.axis
    if axis == "dt":
        return _dt_ladder(ctx, "ladder_dt")
    if axis == "n":
        return _n_ladder(ctx, "ladder_n")
    return _delta_ladder(ctx, "ladder_delta")


def suite_yosida(ctx: Context) -> dict:
    cfg = ctx.cfg
    deltas = cfg.experiment.levels or [0.5, 0.1, 0.01]
    rep = {}
    for where, pb in (("bulk", cfg.potentials.bulk), ("boundary", cfg.potentials.boundary)):
        base = SmoothPotential(family=pb.family, alpha=pb.alpha, beta=pb.beta, shift=pb.shift)
        rep[where] = yosida_suite(base, deltas, seed=cfg.master_seed)
    # closed-form case: F = (s^2 - 1)^2 / 4, delta = 1, s = 2 -> J = 1, F_d' = -1
    pot = RegularizedPotential(SmoothPotential(alpha=1.0, beta=1.0), 1.0)
    J = float(pot.resolvent(2.0))
    dF = float(pot.derivative(2.0))
    rep["closed_form"] = {"J": J, "F_delta_prime": dF, "J_error": abs(J - 1.0),
                          "derivative_error": abs(dF + 1.0),
                          "pass": bool(abs(J - 1.0) <= 1e-12 and abs(dF + 1.0) <= 1e-12)}
    rep["pass"] = bool(all(all(rep[w]["pass"].values()) for w in ("bulk", "boundary"))
                       and rep["closed_form"]["pass"])
    ctx.out.json("report_yosida.json", rep)
    # plot data: F_d and F_d' on the grid for each delta
    s = np.round(np.arange(-400, 401) * 0.01, 12)
    base = SmoothPotential(family=cfg.potentials.bulk.family, alpha=cfg.potentials.bulk.alpha,
                           beta=cfg.potentials.bulk.beta, shift=cfg.potentials.bulk.shift)
    names, cols = ["s", "F", "dF"], [s, base.value(s), base.first_derivative(s)]
    for d in sorted(deltas, reverse=True):
        Fd, dFd, _ = RegularizedPotential(base, d).all_terms(s)
        names += [f"F_delta_{d:g}", f"dF_delta_{d:g}"]
        cols += [Fd, dFd]
    ctx.out.plot("plot_yosida.dat", names, cols)
    return {"yosida": rep}


def suite_korn(ctx: Context) -> dict:
    cfg = ctx.cfg
    st = build_setup(cfg)
    ex = cfg.experiment
    c1 = geo.korn_poincare_certificate(st.model.basis, ex.n_samples, cfg.master_seed).as_dict()
    c2 = geo.korn_poincare_certificate(st.model.basis, ex.n_samples, cfg.master_seed).as_dict()
    try:
        co = dg.brinkman_coercivity(st.model, ex.n_states, cfg.master_seed)
    except NonSPDError as exc:
        co = {"error": str(exc), "pass": False}
    finite = all(np.isfinite(c1[k]) for k in ("korn_ratio_max", "poincare_ratio_max",
                                              "poincare_circle_ratio_max"))
    circle_bound = cfg.geometry.period_length / (2 * math.pi)
    rep = {"certificate": c1, "reproducible": c1 == c2, "finite": bool(finite),
           "poincare_circle_bound": circle_bound,
           "poincare_circle_within_bound": bool(c1["poincare_circle_ratio_max"]
                                                <= circle_bound * (1 + 1e-12)),
           "coercivity": co}
    rep["pass"] = bool(finite and rep["reproducible"] and co["pass"]
                       and rep["poincare_circle_within_bound"])
    ctx.out.json("report_korn.json", rep)
    return {"korn": rep}


def suite_energy(ctx: Context) -> dict:
    cfg = ctx.cfg
    s = cfg.scheme
    reps = []
    for k, dt in enumerate((s.dt, s.dt / 2)):
        lv = Level(dt=dt, n_steps=s.n_steps * (k + 1), noise=False)
        p = ctx.paths(lv, 1)[0]
        ctx.write_paths(f"energy_dt={dt:g}", [p])
        d = dg.energy_dissipation_defect(p)
        d.pop("defect")
        d["dt"] = dt
        d["residual_final"] = float(p.ledger["residual"][-1])
        reps.append(d)
        if k == 0:
            names, cols = energy_stack(p)
            ctx.out.plot("plot_energy_stack.dat", names, cols,
                         ["E_tot = E_tot0 + sum of the minus_cum_*/cum_* columns + residual"])
    # C(dt/2) / C(dt): 1 for an O(dt^2) defect, 2 for an O(dt) one
    ratio = reps[1]["C_fit"] / reps[0]["C_fit"] if reps[0]["C_fit"] > 0 else float("inf")
    if reps[0]["C_fit"] == 0 and reps[1]["C_fit"] == 0:
        ratio = 1.0
    rep = {"runs": reps, "C_ratio": ratio,
           "second_order_defect": bool(ratio <= 1.5),
           "monotone": bool(all(r["max_dE"] <= 1e-8 for r in reps)),
           "mass_conserved": bool(all(r["mass_drift"] <= 1e-12 for r in reps))}
    rep["pass"] = bool(rep["second_order_defect"] and rep["monotone"] and rep["mass_conserved"])
    ctx.out.json("report_energy.json", rep)
    return {"energy": rep}


def suite_energy_bound(ctx: Context) -> dict:
    cfg = ctx.cfg
    s, g = cfg.scheme, cfg.geometry
    n0 = max(g.n_x_modes, g.n_y_modes)
    T = s.dt * s.n_steps
    # base and 2n levels sum increments from the dt/2 grid, so all three share one Brownian path
    levels = [("base", Level(n_modes=n0, dt=s.dt, n_steps=s.n_steps, refine=2)),
              ("dt/2", Level(n_modes=n0, dt=s.dt / 2, n_steps=2 * s.n_steps)),
              ("2n", Level(n_modes=2 * n0, dt=s.dt, n_steps=s.n_steps, refine=2))]
    per = {}
    for lab, lv in levels:
        st = build_setup(cfg, lv)
        ps = ctx.paths(lv, cfg.experiment.n_paths)
        per[lab] = dg.a_priori_inequality_check(ps, st.model)
    dt_stab = dg.constant_stability([per["base"]["C_fit"], per["dt/2"]["C_fit"]])
    n_stab = dg.constant_stability([per["base"]["C_fit"], per["2n"]["C_fit"]])
    rep = {"T": T, "levels": per, "dt_stability": dt_stab, "n_stability": n_stab}
    rep["pass"] = bool(all(v["finite"] and v["dissipation_nonnegative"] for v in per.values())
                       and dt_stab["pass"] and n_stab["pass"])
    ctx.out.json("report_energy_bound.json", rep)
    return {"energy_bound": rep}


def suite_mass(ctx: Context) -> dict:
    st = build_setup(ctx.cfg)
    ps = ctx.paths(Level(), ctx.cfg.experiment.n_paths)
    ctx.write_paths("paths", ps)
    mm = dg.mass_martingale(ps, st.model)
    mm["pass"] = bool(mm["pass_mean"] and mm["pass_variance"])
    ctx.out.json("report_mass.json", mm)
    return {"mass": mm}


SUITE_FUNCS = {
    "yosida": suite_yosida, "korn": suite_korn, "energy": suite_energy,
    "moments": lambda ctx: _n_ladder(ctx, "moments"),
    "energy_bound": suite_energy_bound, "ito": lambda ctx: _dt_ladder(ctx, "ito"),
    "mass": suite_mass,
}


def run(cfg: cf.RunConfig, workers: int | None = None, output_dir: str | None = None) -> RunSummary:
    """Execute the configured experiment and write all outputs."""
    if workers is None:
        workers = int(os.environ.get(ENV_THREADS, cfg.execution.workers))
    if output_dir is None:
        output_dir = os.environ.get(ENV_OUTPUT_DIR, cfg.output.directory)
    h = cf.config_hash(cfg)
    ex = cfg.experiment
    name = ex.kind if ex.kind != "certify" else f"certify:{ex.suite}"
    if ex.kind == "ladder":
        name = f"ladder:{ex.axis}"
    summary = RunSummary(config_hash=h, experiment=name, output_dir=output_dir)
    out = OutputWriter(output_dir, cfg.output.formats)
    out.write("config.json", cf.serialize_config(cfg))
    t0 = time.perf_counter()
    with threadpool_limits(1), PathRunner(cfg, workers) as runner:
        ctx = Context(cfg, runner, out)
        try:
            if ex.kind == "single-path":
                summary.suites = exp_single_path(ctx)
            elif ex.kind == "monte-carlo":
                summary.suites = exp_monte_carlo(ctx)
            elif ex.kind == "ladder":
                summary.suites = exp_ladder(ctx)
            else:
                summary.suites = SUITE_FUNCS[ex.suite](ctx)
        except (NumericalAbort, NonSPDError) as exc:
            summary.aborted = f"{type(exc).__name__}: {exc}"
    summary.timing = {"wall_seconds": time.perf_counter() - t0, "workers": workers}
    out.json("summary.json", summary.deterministic_dict())
    if "json" not in out.formats:
        out.write("summary.json", dumps_json(summary.deterministic_dict()))
    summary.files = out.manifest(h)
    return summary
