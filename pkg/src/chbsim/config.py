"""Run configuration: parsing, total validation, canonical serialization.

Documents are YAML or JSON (JSON is parsed by the YAML loader).  Every block
has defaults, so an empty document is a valid configuration.  Validation
collects every violation, each naming the dotted field path.
"""
from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
import math
import re
import typing
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import geometry as geo
from .galerkin import CoefficientFunction, GalerkinModel, PhysicalParams
from .noise import NoiseFamily, NoiseModel
from .potentials import RegularizedPotential, SmoothPotential
from .timestepper import SchemeConfig, guard_quantity


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class GeometryBlock:
    period_length: float = 2 * math.pi
    channel_height: float = 1.0
    n_x_modes: int = 8
    n_y_modes: int = 8
    n_quad_x: typing.Optional[int] = None
    n_quad_y: typing.Optional[int] = None


@dataclass
class CoefficientBlock:
    kind: str = "constant"
    value: float = 1.0
    lo: float = 1.0
    hi: float = 1.0


@dataclass
class ParamsBlock:
    eps: float = 0.5
    eps_gamma: float = 0.5
    robin_K: float = 1.0
    nu: CoefficientBlock = field(default_factory=CoefficientBlock)
    lam: CoefficientBlock = field(default_factory=CoefficientBlock)
    gamma: CoefficientBlock = field(default_factory=CoefficientBlock)
    mob_bulk: CoefficientBlock = field(default_factory=CoefficientBlock)
    mob_bnd: CoefficientBlock = field(default_factory=CoefficientBlock)


@dataclass
class PotentialBlock:
    family: str = "polynomial"
    alpha: float = 1.0
    beta: float = 1.0
    shift: typing.Optional[float] = None


@dataclass
class PotentialsBlock:
    bulk: PotentialBlock = field(default_factory=PotentialBlock)
    boundary: PotentialBlock = field(default_factory=PotentialBlock)
    delta: float = 0.1
    delta_gamma: typing.Optional[float] = None
    resolvent_tolerance: float = 1e-13


@dataclass
class NoiseFamilyBlock:
    c0: float = 1.0
    rho: float = 1.0
    amplitude: float = 0.1
    profile: str = "tanh"


@dataclass
class NoiseBlock:
    enabled: bool = True
    n_modes: int = 16
    coupling: str = "independent"
    bulk: NoiseFamilyBlock = field(default_factory=NoiseFamilyBlock)
    boundary: NoiseFamilyBlock = field(default_factory=NoiseFamilyBlock)


@dataclass
class SchemeBlock:
    dt: float = 1e-3
    n_steps: int = 200
    scheme: str = "imex"
    kappa_guard: typing.Optional[float] = None
    imex_mobility_freeze: bool = True
    stabilization: typing.Union[float, str] = "auto"
    decimate: int = 10


DEFAULT_PHI0 = "0.1 + 0.3*(cos(x) + 0.6*cos(pi*y/H) + 0.6*sin(x)*cos(pi*y/H))"


@dataclass
class InitialBlock:
    # closed-form expression in x, y (and L, H, pi) or a coefficient list
    phi: typing.Union[str, list] = DEFAULT_PHI0
    # "trace", an expression in x (y is 0 or H on the two walls), or coefficients
    phi_gamma: typing.Union[str, list] = "trace"


EXPERIMENT_KINDS = ("single-path", "monte-carlo", "ladder", "certify")
LADDER_AXES = ("dt", "n", "delta")
SUITES = ("yosida", "korn", "energy", "moments", "energy_bound", "ito", "mass")


@dataclass
class ExperimentBlock:
    kind: str = "single-path"
    axis: typing.Optional[str] = None
    suite: typing.Optional[str] = None
    n_paths: int = 64
    levels: typing.Optional[list] = None
    moment_orders: list = field(default_factory=lambda: [2, 4])
    n_samples: int = 100
    n_states: int = 50


@dataclass
class ExecutionBlock:
    workers: int = 1
    chunk_size: int = 16


OUTPUT_FORMATS = ("tsv", "json", "gnuplot")


@dataclass
class OutputBlock:
    directory: str = "chbsim_out"
    decimate: int = 1
    formats: list = field(default_factory=lambda: list(OUTPUT_FORMATS))
    max_path_files: int = 8


@dataclass
class RunConfig:
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    params: ParamsBlock = field(default_factory=ParamsBlock)
    potentials: PotentialsBlock = field(default_factory=PotentialsBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    scheme: SchemeBlock = field(default_factory=SchemeBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    execution: ExecutionBlock = field(default_factory=ExecutionBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    master_seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **blocks) -> "RunConfig":
        return dataclasses.replace(self, **blocks)


# -- generic structural loading ------------------------------------------------

def _type_ok(value, tp) -> bool:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        return any(_type_ok(value, t) for t in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if tp is list or origin is list:
        return isinstance(value, list)
    return False


def _type_name(tp) -> str:
    if typing.get_origin(tp) is typing.Union:
        return " or ".join(_type_name(t) for t in typing.get_args(tp))
    return "null" if tp is type(None) else getattr(tp, "__name__", str(tp))


def _load(cls, data, prefix: str, errors: list):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{prefix or 'document'}: expected a mapping (got {type(data).__name__})")
        return cls()
    hints = typing.get_type_hints(cls)
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            errors.append(f"{prefix}{key}: unknown field")
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        tp = hints[f.name]
        v = data[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _load(tp, v, f"{prefix}{f.name}.", errors)
        elif _type_ok(v, tp):
            # ints in float fields are stored as floats so serialization is canonical
            if tp is float or (typing.get_origin(tp) is typing.Union and float in typing.get_args(tp)
                               and int not in typing.get_args(tp) and isinstance(v, int)
                               and not isinstance(v, bool)):
                v = float(v)
            kwargs[f.name] = v
        else:
            errors.append(f"{prefix}{f.name} must be {_type_name(tp)} (got {v!r})")
    return cls(**kwargs)


# -- initial-data expressions -----------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "tanh": np.tanh,
          "cosh": np.cosh, "sinh": np.sinh, "sqrt": np.sqrt, "abs": np.abs, "log": np.log}
_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _check_expr(text: str, names: set) -> list[str]:
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        return [f"syntax error: {exc.msg}"]
    errs = []
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)) or isinstance(node, _OPS):
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp)):
            continue
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                errs.append(f"constant {node.value!r} not allowed")
            continue
        if isinstance(node, ast.Name):
            if node.id not in names and node.id not in _FUNCS:
                errs.append(f"unknown name {node.id!r}")
            continue
        if isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or node.keywords:
                errs.append("only calls to " + ", ".join(sorted(_FUNCS)) + " are allowed")
            continue
        errs.append(f"construct {type(node).__name__} not allowed")
    return errs


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _FUNCS[node.id]
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](*[_eval(a, env) for a in node.args])
    lhs, rhs = _eval(node.left, env), _eval(node.right, env)
    op = node.op
    if isinstance(op, ast.Add):
        return lhs + rhs
    if isinstance(op, ast.Sub):
        return lhs - rhs
    if isinstance(op, ast.Mult):
        return lhs * rhs
    if isinstance(op, ast.Div):
        return lhs / rhs
    return lhs**rhs


def evaluate_expression(text: str, **env):
    """Evaluate a whitelisted arithmetic expression on numpy arrays."""
    errs = _check_expr(text, set(env) | {"pi"})
    if errs:
        raise ValueError(f"bad expression {text!r}: " + "; ".join(errs))
    env = dict(env, pi=math.pi)
    shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape
    return np.broadcast_to(np.asarray(_eval(ast.parse(text, mode="eval"), env), float), shape).copy()


# -- building domain objects ---------------------------------------------------------

def make_geometry(cfg: RunConfig, n_modes: int | None = None) -> geo.ChannelGeometry:
    g = cfg.geometry
    nx = n_modes if n_modes is not None else g.n_x_modes
    ny = n_modes if n_modes is not None else g.n_y_modes
    # explicit quadrature sizes apply only at the configured resolution
    qx = g.n_quad_x if n_modes is None else None
    qy = g.n_quad_y if n_modes is None else None
    return geo.ChannelGeometry(period_length=g.period_length, channel_height=g.channel_height,
                               n_x_modes=nx, n_y_modes=ny, n_quad_x=qx, n_quad_y=qy)


def _coef(b: CoefficientBlock) -> CoefficientFunction:
    return CoefficientFunction(kind=b.kind, value=b.value, lo=b.lo, hi=b.hi)


def make_params(cfg: RunConfig) -> PhysicalParams:
    p = cfg.params
    return PhysicalParams(eps=p.eps, eps_gamma=p.eps_gamma, robin_K=p.robin_K,
                          nu=_coef(p.nu), lam=_coef(p.lam), gamma=_coef(p.gamma),
                          mob_bulk=_coef(p.mob_bulk), mob_bnd=_coef(p.mob_bnd))


def make_potentials(cfg: RunConfig, delta: float | None = None):
    pc = cfg.potentials
    d = pc.delta if delta is None else delta
    dg = (pc.delta_gamma if pc.delta_gamma is not None else pc.delta) if delta is None else delta
    F = SmoothPotential(family=pc.bulk.family, alpha=pc.bulk.alpha, beta=pc.bulk.beta,
                        shift=pc.bulk.shift)
    G = SmoothPotential(family=pc.boundary.family, alpha=pc.boundary.alpha,
                        beta=pc.boundary.beta, shift=pc.boundary.shift)
    return (RegularizedPotential(F, d, resolvent_tolerance=pc.resolvent_tolerance),
            RegularizedPotential(G, dg, resolvent_tolerance=pc.resolvent_tolerance))


def make_noise(cfg: RunConfig) -> NoiseModel:
    n = cfg.noise

    def fam(b: NoiseFamilyBlock):
        return NoiseFamily(n_modes=n.n_modes, c0=b.c0, rho=b.rho, amplitude=b.amplitude,
                           profile=b.profile)
    return NoiseModel(bulk=fam(n.bulk), boundary=fam(n.boundary), coupling=n.coupling,
                      enabled=n.enabled)


def make_scheme(cfg: RunConfig, dt: float | None = None, n_steps: int | None = None,
                kappa_guard=None) -> SchemeConfig:
    s = cfg.scheme
    return SchemeConfig(dt=s.dt if dt is None else dt,
                        n_steps=s.n_steps if n_steps is None else n_steps,
                        scheme=s.scheme,
                        kappa_guard=s.kappa_guard if kappa_guard is None else kappa_guard,
                        imex_mobility_freeze=s.imex_mobility_freeze,
                        stabilization=s.stabilization, decimate=s.decimate)


def initial_coefficients(cfg: RunConfig, basis: geo.SpectralBasis):
    """Project the configured initial data onto the basis; returns (a0, b0)."""
    g = basis.geom
    L, H = g.period_length, g.channel_height
    ini = cfg.initial
    if isinstance(ini.phi, str):
        X = basis.x[:, None] * np.ones((1, basis.y.size))
        Y = np.ones((basis.x.size, 1)) * basis.y[None, :]
        a0 = geo.from_grid(evaluate_expression(ini.phi, x=X, y=Y, L=L, H=H), basis)
    else:
        a0 = np.zeros(basis.n_bulk)
        c = np.asarray(ini.phi, float)[: basis.n_bulk]
        a0[: c.size] = c
    if isinstance(ini.phi_gamma, str) and ini.phi_gamma == "trace":
        b0 = geo.trace_coeffs(a0, basis)
    elif isinstance(ini.phi_gamma, str):
        X = np.vstack([basis.x, basis.x])
        Y = np.vstack([np.zeros_like(basis.x), np.full_like(basis.x, H)])
        vals = evaluate_expression(ini.phi_gamma, x=X, y=Y, L=L, H=H)
        b0 = geo.from_grid(vals, basis, "boundary")
    else:
        b0 = np.zeros(basis.n_bnd)
        c = np.asarray(ini.phi_gamma, float)[: basis.n_bnd]
        b0[: c.size] = c
    return a0, b0


# -- validation ------------------------------------------------------------------------

def _coefficient_errors(name: str, b: CoefficientBlock) -> list[str]:
    if b.kind not in ("constant", "tanh_ramp"):
        return [f"params.{name}.kind must be 'constant' or 'tanh_ramp' (got {b.kind!r})"]
    return []


def validate(cfg: RunConfig) -> list[str]:
    errs: list[str] = []
    errs += [f"geometry.{e}" for e in make_geometry(cfg).violations()]

    coef_errs = []
    for name in ("nu", "lam", "gamma", "mob_bulk", "mob_bnd"):
        coef_errs += _coefficient_errors(name, getattr(cfg.params, name))
    errs += coef_errs
    if not coef_errs:
        errs += [f"params.{e}" for e in make_params(cfg).violations()]

    pc = cfg.potentials
    pot_ok = True
    for where, pb in (("bulk", pc.bulk), ("boundary", pc.boundary)):
        pre = f"potentials.{where}"
        if pb.family not in ("polynomial", "quadratic"):
            errs.append(f"{pre}.family must be 'polynomial' or 'quadratic' (got {pb.family!r})")
            pot_ok = False
            continue
        if pb.family == "polynomial" and not pb.alpha > 0:
            errs.append(f"{pre}.alpha must be > 0 (got {pb.alpha})")
            pot_ok = False
        if pb.shift is not None and not pb.shift >= 0:
            errs.append(f"{pre}.shift must be >= 0 (got {pb.shift})")
            pot_ok = False
    for name in ("delta", "delta_gamma"):
        v = getattr(pc, name)
        if v is not None and not 0 < v < 1:
            errs.append(f"potentials.{name} must lie in (0, 1) (got {v})")
            pot_ok = False
    if not pc.resolvent_tolerance > 0:
        errs.append(f"potentials.resolvent_tolerance must be > 0 (got {pc.resolvent_tolerance})")
        pot_ok = False
    if pot_ok:
        F, G = make_potentials(cfg)
        s = np.linspace(-4, 4, 801)
        errs += [f"potentials.bulk: {e}" for e in F.base.check_assumptions(s)]
        errs += [f"potentials.boundary: {e}" for e in G.base.check_assumptions(s)]

    n = cfg.noise
    if not n.n_modes >= 1:
        errs.append(f"noise.n_modes must be >= 1 (got {n.n_modes})")
    if n.coupling not in ("independent", "shared"):
        errs.append(f"noise.coupling must be 'independent' or 'shared' (got {n.coupling!r})")
    for where, fb in (("bulk", n.bulk), ("boundary", n.boundary)):
        pre = f"noise.{where}"
        if not fb.rho > 0.5:
            errs.append(f"{pre}.rho must be > 1/2: the summability certificate "
                        f"(tail bound sum_k c_k^2 < inf) fails (got {fb.rho})")
        if not fb.c0 >= 0:
            errs.append(f"{pre}.c0 must be >= 0 (got {fb.c0})")
        if not fb.amplitude >= 0:
            errs.append(f"{pre}.amplitude must be >= 0 (got {fb.amplitude})")
        if fb.profile not in ("tanh", "sin", "constant"):
            errs.append(f"{pre}.profile must be 'tanh', 'sin' or 'constant' (got {fb.profile!r})")

    errs += make_scheme(cfg).violations()

    ini = cfg.initial
    names = {"x", "y", "L", "H", "pi"}
    for name, v in (("phi", ini.phi), ("phi_gamma", ini.phi_gamma)):
        if isinstance(v, str):
            if name == "phi_gamma" and v == "trace":
                continue
            errs += [f"initial.{name}: {e}" for e in _check_expr(v, names)]
        elif not all(_type_ok(c, float) for c in v):
            errs.append(f"initial.{name} coefficients must be numbers")

    ex = cfg.experiment
    if ex.kind not in EXPERIMENT_KINDS:
        errs.append(f"experiment.kind must be one of {', '.join(EXPERIMENT_KINDS)} (got {ex.kind!r})")
    if ex.kind == "ladder" and ex.axis not in LADDER_AXES:
        errs.append(f"experiment.axis must be one of {', '.join(LADDER_AXES)} for a ladder (got {ex.axis!r})")
    if ex.kind == "certify" and ex.suite not in SUITES:
        errs.append(f"experiment.suite must be one of {', '.join(SUITES)} (got {ex.suite!r})")
    if not ex.n_paths >= 1:
        errs.append(f"experiment.n_paths must be >= 1 (got {ex.n_paths})")
    if ex.kind == "certify" and ex.suite == "moments" and ex.n_paths < 64:
        errs.append(f"experiment.n_paths must be >= 64 for the moments suite (got {ex.n_paths})")
    if ex.kind in ("monte-carlo", "ladder") and ex.n_paths < 2:
        errs.append(f"experiment.n_paths must be >= 2 for Monte-Carlo statistics (got {ex.n_paths})")
    if not ex.n_samples >= 1:
        errs.append(f"experiment.n_samples must be >= 1 (got {ex.n_samples})")
    if not ex.n_states >= 1:
        errs.append(f"experiment.n_states must be >= 1 (got {ex.n_states})")
    if not ex.moment_orders or not all(_type_ok(r, float) and r > 0 for r in ex.moment_orders):
        errs.append(f"experiment.moment_orders must be positive numbers (got {ex.moment_orders!r})")
    errs += _level_errors(cfg)

    if not cfg.execution.workers >= 1:
        errs.append(f"execution.workers must be >= 1 (got {cfg.execution.workers})")
    if not cfg.execution.chunk_size >= 1:
        errs.append(f"execution.chunk_size must be >= 1 (got {cfg.execution.chunk_size})")
    o = cfg.output
    if not o.directory:
        errs.append("output.directory must be non-empty")
    if not o.decimate >= 1:
        errs.append(f"output.decimate must be >= 1 (got {o.decimate})")
    bad = [f for f in o.formats if f not in OUTPUT_FORMATS]
    if bad:
        errs.append(f"output.formats entries must be among {', '.join(OUTPUT_FORMATS)} (got {bad!r})")
    if not o.max_path_files >= 0:
        errs.append(f"output.max_path_files must be >= 0 (got {o.max_path_files})")
    if not cfg.master_seed >= 0:
        errs.append(f"master_seed must be >= 0 (got {cfg.master_seed})")

    if not errs and cfg.scheme.kappa_guard is not None:
        basis = geo.build_basis(make_geometry(cfg))
        a0, b0 = initial_coefficients(cfg, basis)
        F, G = make_potentials(cfg)
        model = GalerkinModel(basis, make_params(cfg), F, G)
        q0 = float(guard_quantity(model, a0[None], b0[None])[0])
        if not cfg.scheme.kappa_guard > q0:
            errs.append(f"scheme.kappa_guard must exceed the initial guard quantity {q0:.6g} "
                        f"(got {cfg.scheme.kappa_guard})")
    return errs


def _level_errors(cfg: RunConfig) -> list[str]:
    ex = cfg.experiment
    lv = ex.levels
    if lv is None:
        return []
    if not lv:
        return ["experiment.levels must be non-empty when given"]
    axis = ex.axis if ex.kind == "ladder" else {"moments": "n", "ito": "dt", "yosida": "delta"}.get(
        ex.suite or "", None)
    if axis == "n":
        if not all(_type_ok(v, int) and v >= 1 for v in lv):
            return [f"experiment.levels must be positive integers on the n axis (got {lv!r})"]
    elif axis == "delta":
        if not all(_type_ok(v, float) and 0 < v < 1 for v in lv):
            return [f"experiment.levels must lie in (0, 1) on the delta axis (got {lv!r})"]
    elif axis == "dt":
        if not all(_type_ok(v, float) and v > 0 for v in lv):
            return [f"experiment.levels must be positive on the dt axis (got {lv!r})"]
        T = cfg.scheme.dt * cfg.scheme.n_steps
        if not T > 0:
            return []
        fine = min(lv)
        errs = []
        for v in lv:
            ns, rf = T / v, v / fine
            if abs(ns - round(ns)) > 1e-9 * ns or abs(rf - round(rf)) > 1e-9 * rf:
                errs.append(f"experiment.levels: dt={v} must divide T={T:g} and be an integer "
                            f"multiple of the finest level {fine}")
        return errs
    return []


# -- text round trip ------------------------------------------------------------------

class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-13), as JSON does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises ConfigError listing every violation."""
    try:
        data = yaml.load(text, Loader=_Loader) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"document: not valid YAML/JSON ({exc})"]) from None
    errors: list[str] = []
    # ill-typed fields keep their defaults, so semantic validation can still run
    cfg = _load(RunConfig, data, "", errors)
    errors += validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2, separators=(",", ": ")) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()
