"""Command-line experiment runner.

    kdvq <mode> --config <path> [--dump-chain] [--seed N] [--out DIR]
    kdvq batch --config a.toml --config b.toml ...

Exit codes: 0 ok, 1 numeric failure (a violated invariant), 2 config error.
Randomness comes from one 64-bit seed fed to a counter-based generator
(Philox), so a run is reproducible from its config and seed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, KdvqError

MODES = ("reduce", "observability", "steer", "control", "ivp")
FORMATS = ("json", "csv", "binary")
TWO_PI = 2 * math.pi


# configuration ----------------------------------------------------------------------------

@dataclass
class SpectralConfig:
    n_max: int = 16
    n_time_steps: int = 128


@dataclass
class DataConfig:
    # each term is [mode, cos amplitude, sin amplitude]
    u_in: list = field(default_factory=list)
    u_end: list = field(default_factory=list)
    # forcing terms [mode, cos amplitude, sin amplitude, time frequency]
    forcing: list = field(default_factory=list)
    random_amplitude: float = 0.0
    coefficient_amplitude: float = 1e-2


@dataclass
class ProblemConfig:
    T: float = 1.0
    m: float = 1.0
    omega: list = field(default_factory=lambda: [[0.5, 0.5 + math.pi]])
    nonlinearity: str = "kdv"
    nonlinearity_params: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    m_values: list = field(default_factory=lambda: [0.5, 1.0, 2.0])


@dataclass
class SolverConfig:
    tol: float = 1e-10
    hum_rtol: float = 1e-10
    cg_max_iter: int = 500
    max_iter: int = 12
    sigma: float = 3.0
    scale: dict = field(default_factory=dict)
    geometric: bool = False
    a_list: list = field(default_factory=lambda: [0.0, 2.0])
    samples: int = 16
    test_functions: int = 4


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list = field(default_factory=lambda: list(FORMATS))


@dataclass
class ExperimentConfig:
    mode: str = "control"
    seed: int = 0
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, source: str = "<config>", text: str = "") -> "ExperimentConfig":
        cfg = _build(cls, d, (), source, text)
        cfg.validate(source, text)
        return cfg

    def validate(self, source="<config>", text=""):
        def fail(path, msg):
            raise ConfigError(_where(source, text, path) + msg, path=".".join(path))

        if self.mode not in MODES:
            fail(("mode",), f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            fail(("seed",), "seed must be a 64-bit unsigned integer")
        if self.spectral.n_max < 1:
            fail(("spectral", "n_max"), "n_max must be >= 1")
        if self.spectral.n_time_steps < 6:
            fail(("spectral", "n_time_steps"), "need at least 6 time steps")
        p = self.problem
        if not p.T > 0:
            fail(("problem", "T"), "T must be positive")
        if not p.m > 0:
            fail(("problem", "m"), "m must be positive")
        if not p.omega:
            fail(("problem", "omega"), "at least one arc is required")
        for i, arc in enumerate(p.omega):
            if len(arc) != 2:
                fail(("problem", "omega"), f"arc {i} must be [start, end]")
            a, b = float(arc[0]), float(arc[1])
            if not (0 <= a < TWO_PI and 0 < b <= TWO_PI):
                fail(("problem", "omega"), f"arc {i} = [{a}, {b}] is outside [0, 2 pi)")
            if not a < b:
                fail(("problem", "omega"), f"arc {i} = [{a}, {b}] has reversed endpoints")
        from .nonlinearity import get_spec
        try:
            get_spec(p.nonlinearity, **p.nonlinearity_params)
        except (KeyError, TypeError) as exc:
            fail(("problem", "nonlinearity"), str(exc))
        for name in ("u_in", "u_end", "forcing"):
            width = 4 if name == "forcing" else 3
            for i, term in enumerate(getattr(p.data, name)):
                if len(term) != width or int(term[0]) < 0 or int(term[0]) > self.spectral.n_max:
                    shape = "[mode, cos, sin, time frequency]" if width == 4 else "[mode, cos, sin]"
                    fail(("problem", "data", name), f"term {i} must be {shape} with 0 <= mode <= n_max")
        s = self.solver
        for name in ("tol", "hum_rtol"):
            if not getattr(s, name) > 0:
                fail(("solver", name), "tolerances must be positive")
        for name in ("cg_max_iter", "max_iter", "samples", "test_functions"):
            if getattr(s, name) < 1:
                fail(("solver", name), "must be >= 1")
        try:
            self.scale_params()
        except ConfigError as exc:
            fail(("solver", "scale"), str(exc))
        bad = [f for f in self.output.formats if f not in FORMATS]
        if bad:
            fail(("output", "formats"), f"unknown formats {bad}; expected a subset of {list(FORMATS)}")

    def scale_params(self):
        from .nash_moser import ScaleParams
        if self.solver.scale:
            return ScaleParams(**{k: float(v) for k, v in self.solver.scale.items()})
        return ScaleParams.from_sigma(float(self.solver.sigma))


_FLOATS = {"T", "m", "tol", "hum_rtol", "sigma", "random_amplitude", "coefficient_amplitude"}


def _build(cls, d, path, source, text):
    if not isinstance(d, dict):
        raise ConfigError(_where(source, text, path) + "expected a table", path=".".join(path))
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        p = path + (unknown[0],)
        raise ConfigError(_where(source, text, p) + f"unknown key {unknown[0]!r}", path=".".join(p))
    kw = {}
    for name, value in d.items():
        f = known[name]
        default = cls().__getattribute__(name)
        p = path + (name,)
        if hasattr(default, "__dataclass_fields__"):
            kw[name] = _build(type(default), value, p, source, text)
            continue
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
                kw[name] = value
            elif isinstance(default, int):
                if isinstance(value, bool) or float(value) != int(value):
                    raise TypeError
                kw[name] = int(value)
            elif isinstance(default, float) or name in _FLOATS:
                kw[name] = float(value)
            elif isinstance(default, (list, dict, str)):
                if not isinstance(value, type(default)):
                    raise TypeError
                kw[name] = json.loads(json.dumps(value))
            else:
                kw[name] = value
        except (TypeError, ValueError):
            raise ConfigError(_where(source, text, p) + f"bad value {value!r} for {f.name}",
                              path=".".join(p)) from None
    return cls(**kw)


def _where(source, text, path):
    """'path:line: key: ' prefix; the line is the first one naming the key."""
    line = 0
    if text and path:
        key = path[-1]
        for i, ln in enumerate(text.splitlines(), 1):
            stripped = ln.strip().strip('"')
            if stripped.startswith(key) or f'"{key}"' in ln:
                line = i
                break
    loc = f"{source}:{line}" if line else f"{source}"
    return f"{loc}: {'.'.join(path) or '<root>'}: "


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    if path.suffix == ".json":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            d = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(d, str(path), text)


# data ------------------------------------------------------------------------------------

def make_rng(seed: int):
    return np.random.Generator(np.random.Philox(int(seed)))


def _terms_field(terms, n_max):
    from .spectral import PeriodicField
    c = np.zeros(2 * n_max + 1, dtype=complex)
    for n, a, b, *_ in terms:
        n = int(n)
        if n == 0:
            c[n_max] += a
        else:
            c[n_max + n] += (a - 1j * b) / 2
            c[n_max - n] += (a + 1j * b) / 2
    return PeriodicField(c)


def _random_field(rng, n_max, amp):
    from .spectral import PeriodicField, sobolev_norm
    from .tame import random_field
    if amp == 0:
        return PeriodicField.zeros(n_max)
    r = random_field(rng, n_max, decay=3.0)
    return r * (amp / sobolev_norm(r, 0))


def _forcing(cfg, grid):
    from .spectral import SpaceTimeField
    terms = cfg.problem.data.forcing
    if not terms:
        return None
    N = cfg.spectral.n_max
    c = np.zeros((grid.n_steps + 1, 2 * N + 1), dtype=complex)
    for n, a, b, w in terms:
        prof = np.cos(float(w) * grid.nodes)
        c += prof[:, None] * _terms_field([[n, a, b]], N).coeffs[None, :]
    return SpaceTimeField(grid, c)


def _window(cfg):
    from .control import Window
    return Window(tuple((float(a), float(b)) for a, b in cfg.problem.omega))


def _spec(cfg):
    from .nonlinearity import get_spec
    return get_spec(cfg.problem.nonlinearity, **cfg.problem.nonlinearity_params)


def _data(cfg, rng):
    N = cfg.spectral.n_max
    amp = cfg.problem.data.random_amplitude
    u_in = _terms_field(cfg.problem.data.u_in, N) + _random_field(rng, N, amp)
    u_end = _terms_field(cfg.problem.data.u_end, N) + _random_field(rng, N, amp)
    return u_in, u_end


# pipelines -------------------------------------------------------------------------------

class Outcome:
    def __init__(self):
        self.results = {}
        self.traces = {}
        self.fields = {}
        self.chain = None
        self.failed = []

    def check(self, name, ok):
        if not ok:
            self.failed.append(name)


def run_reduce(cfg, rng, out: Outcome):
    from .reduction import build_chain, conjugation_residual, random_coefficients, random_trajectory
    from .spectral import TimeGrid, resize
    N, M = cfg.spectral.n_max, cfg.spectral.n_time_steps
    grid = TimeGrid(cfg.problem.T, M)
    chain = build_chain(random_coefficients(rng, grid, N, cfg.problem.data.coefficient_amplitude))
    rows = []
    for i in range(cfg.solver.test_functions):
        h = resize(random_trajectory(rng, grid, max(N // 4, 1), 1.0, n_modes=8), N)
        rows.append([i, conjugation_residual(chain, h)])
    zm = chain.zero_mean_defects()
    worst = max(r[1] for r in rows)
    out.results.update({"chain": chain.summary(), "zero_mean_defects": zm, "conjugation_residual": worst})
    out.traces["conjugation"] = (["test_function", "residual"], rows)
    out.chain = chain
    out.check("zero-mean-structure", max(zm.values()) < 1e-10)
    out.check("conjugation-residual", worst < 1e-6)


def run_observability(cfg, rng, out: Outcome):
    from .control import ingham_gram, observability_ratio
    from .reduction import build_chain, random_coefficients, trivial_chain
    from .spectral import TimeGrid, hermitian_part
    N, M = cfg.spectral.n_max, cfg.spectral.n_time_steps
    grid = TimeGrid(cfg.problem.T, M)
    w = _window(cfg)
    S = cfg.solver.samples
    V = hermitian_part((rng.standard_normal((S, 2 * N + 1)) + 1j * rng.standard_normal((S, 2 * N + 1))))
    V = V.T
    chain = build_chain(random_coefficients(rng, grid, N, cfg.problem.data.coefficient_amplitude))
    r0 = np.atleast_1d(observability_ratio("L0*", trivial_chain(grid, N), V, w))
    r1 = np.atleast_1d(observability_ratio("L0*", chain, V, w))
    ing = []
    for m in cfg.problem.m_values:
        _, lam = ingham_gram(range(-N, N + 1), float(m), cfg.problem.T)
        ing.append([float(m), float(lam)])
    out.results.update({"min_ratio_airy": float(r0.min()), "min_ratio_perturbed": float(r1.min()),
                        "max_ratio_change": float(np.max(np.abs(r1 - r0))),
                        "ingham_lambda_min": {f"{m:g}": lam for m, lam in ing}, "samples": S})
    out.traces["observability"] = (["sample", "ratio_airy", "ratio_perturbed"],
                                   [[i, float(a), float(b)] for i, (a, b) in enumerate(zip(r0, r1))])
    out.traces["ingham"] = (["m", "lambda_min"], ing)
    out.chain = chain
    out.check("observability-positive", r0.min() > 0 and r1.min() > 0)
    out.check("ingham-positive", all(lam > 0 for _, lam in ing))


def run_steer(cfg, rng, out: Outcome):
    from .control import ControlProblem, hum_solve
    from .reduction import build_chain, random_coefficients, trivial_chain
    from .spectral import TimeGrid, traj_norm
    N, M = cfg.spectral.n_max, cfg.spectral.n_time_steps
    grid = TimeGrid(cfg.problem.T, M)
    g2, g3 = _data(cfg, rng)
    amp = cfg.problem.data.coefficient_amplitude
    coeffs = random_coefficients(rng, grid, N, amp) if amp > 0 else None
    chain = build_chain(coeffs) if coeffs is not None else trivial_chain(grid, N)
    pb = ControlProblem(cfg.problem.T, _window(cfg), g2, g3, coeffs=coeffs, grid=grid)
    res = hum_solve(pb, chain=chain, rtol=cfg.solver.hum_rtol, max_iter=cfg.solver.cg_max_iter)
    out.results.update({"phi_norm": traj_norm(res.phi, 0), "final_defect": res.final_defect,
                        "cg_iterations": res.cg.iterations, "gramian_applications": res.gramian_applications,
                        "ritz_min": res.cg.ritz_min, "ritz_max": res.cg.ritz_max,
                        "control_outside_window": _outside(res.control_values(512), pb.window)})
    out.traces["cg"] = (["iteration", "residual"], [[i, float(r)] for i, r in enumerate(res.cg.residuals)])
    out.fields.update({"phi": res.phi, "h": res.h})
    out.chain = chain
    out.check("final-state", res.final_defect < 1e-6 * max(1.0, pb.data_norm()))
    out.check("control-support", out.results["control_outside_window"] == 0.0)


def _outside(values, window):
    from .spectral import grid_nodes
    x = grid_nodes(values.shape[-1])
    mask = ~window.indicator(x).astype(bool)
    return float(np.max(np.abs(values[:, mask]), initial=0.0))


def _trace_rows(trace, a_list):
    return [[r.j, r.theta] + [r.h_norms.get(float(a)) for a in a_list] + [r.defect, r.cg_iterations, r.wall_time]
            for r in trace]


def _monotone(trace):
    d = [r.defect for r in trace]
    return all(d[i + 1] < d[i] for i in range(1, len(d) - 1))


def run_control(cfg, rng, out: Outcome):
    from .control import chain_at
    from .nash_moser import solve_control, trace_columns
    from .spectral import traj_norm
    u_in, u_end = _data(cfg, rng)
    s = cfg.solver
    a_list = [float(a) for a in s.a_list]
    sol = solve_control(u_in, u_end, _spec(cfg), cfg.problem.T, _window(cfg), cfg.spectral.n_time_steps,
                        cfg.problem.m, cfg.scale_params(), s.max_iter, s.tol, a_list, s.hum_rtol, s.geometric)
    summ = sol.summary()
    summ.update({"u_norm": traj_norm(sol.u, 0), "f_norm": traj_norm(sol.f, 0),
                 "defect_trace": [r.defect for r in sol.result.trace]})
    out.results.update(summ)
    out.traces["nash_moser"] = (trace_columns(a_list), _trace_rows(sol.result.trace, a_list))
    out.fields.update({"u": sol.u, "f": sol.f})
    out.chain = chain_at(sol.u.coeffs, _spec(cfg), sol.u.grid)
    out.check("nash-moser-defect", sol.result.converged)
    out.check("monotone-defect", _monotone(sol.result.trace))
    out.check("control-support", sol.outside_max == 0.0)
    out.check("cauchy-resolve", sol.resolve_agreement < 1e-6)


def run_ivp(cfg, rng, out: Outcome):
    from .nash_moser import solve_ivp, trace_columns
    from .spectral import TimeGrid, traj_norm
    u_in, _ = _data(cfg, rng)
    s = cfg.solver
    grid = TimeGrid(cfg.problem.T, cfg.spectral.n_time_steps)
    a_list = [float(a) for a in s.a_list]
    sol = solve_ivp(u_in, _forcing(cfg, grid), _spec(cfg), cfg.problem.T, grid.n_steps, cfg.problem.m,
                    cfg.scale_params(), s.max_iter, s.tol, a_list, s.geometric, grid=grid)
    out.results.update({"iterations": sol.result.iterations, "converged": sol.result.converged,
                        "stop_reason": sol.result.reason, "defect": sol.result.defect,
                        "fixed_point_agreement": sol.fixed_point_agreement, "u_norm": traj_norm(sol.u, 0)})
    out.traces["nash_moser"] = (trace_columns(a_list), _trace_rows(sol.result.trace, a_list))
    out.fields["u"] = sol.u
    out.check("nash-moser-defect", sol.result.converged)
    out.check("fixed-point-agreement", sol.fixed_point_agreement < 1e-8)


PIPELINES = {"reduce": run_reduce, "observability": run_observability, "steer": run_steer,
             "control": run_control, "ivp": run_ivp}


# output ------------------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    """CSV with a fixed header; an empty row list gives the header only."""
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_csv_value(v) for v in r])


def emit_report(cfg: ExperimentConfig, out: Outcome, directory: Path, dump_chain=False, error=None):
    from .fieldio import save_binary
    directory.mkdir(parents=True, exist_ok=True)
    fmts = set(cfg.output.formats)
    summary = {"mode": cfg.mode, "seed": int(cfg.seed), "config": cfg.to_dict(),
               "status": "ok" if not out.failed and error is None else "failed",
               "failed_invariants": list(out.failed), "results": out.results}
    if error is not None:
        summary["error"] = {"invariant": error.invariant, "message": str(error)}
    written = []
    if "json" in fmts:
        p = directory / "summary.json"
        p.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        written.append(p)
    if "csv" in fmts:
        for name, (cols, rows) in out.traces.items():
            p = directory / f"{name}.csv"
            write_csv(p, cols, rows)
            written.append(p)
    if "binary" in fmts:
        for name, fld in out.fields.items():
            p = directory / f"{name}.kdvq"
            save_binary(fld, p)
            written.append(p)
    if dump_chain and out.chain is not None:
        p = directory / "chain.json"
        p.write_text(json.dumps(_jsonable(out.chain.summary()), indent=2, sort_keys=True) + "\n")
        written.append(p)
        cdir = directory / "chain"
        cdir.mkdir(exist_ok=True)
        for name, fld in out.chain.fields().items():
            save_binary(fld, cdir / f"{name}.kdvq")
    return summary, written


def run_experiment(cfg: ExperimentConfig, out_dir=None, dump_chain=False, stream=None) -> int:
    stream = stream or sys.stdout
    directory = Path(out_dir if out_dir is not None else cfg.output.directory)
    out = Outcome()
    rng = make_rng(cfg.seed)
    error = None
    try:
        PIPELINES[cfg.mode](cfg, rng, out)
    except KdvqError as exc:
        if isinstance(exc, ConfigError):
            raise
        error = exc
        out.failed.append(exc.invariant)
    summary, _ = emit_report(cfg, out, directory, dump_chain, error)
    if error is not None:
        print(f"numeric failure [{error.invariant}]: {error}", file=sys.stderr)
    elif out.failed:
        print("failed invariants: " + ", ".join(out.failed), file=sys.stderr)
    print(f"{cfg.mode}: {summary['status']} -> {directory}", file=stream)
    return 0 if summary["status"] == "ok" else 1


def _run_one(args):
    path, out_dir, seed, dump = args
    try:
        cfg = load_config(path)
        if seed is not None:
            cfg.seed = seed
        return run_experiment(cfg, out_dir, dump)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def thread_cap() -> int:
    v = os.environ.get("KDVQ_THREADS", "")
    try:
        return max(1, int(v))
    except ValueError:
        return 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="kdvq", description="KdV control and Cauchy experiments.")
    ap.add_argument("mode", choices=MODES + ("batch",))
    ap.add_argument("--config", action="append", required=True, help="TOML or JSON experiment config")
    ap.add_argument("--dump-chain", action="store_true", help="write the reduction chain fields")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default=None, help="output directory (overrides the config)")
    args = ap.parse_args(argv)
    if args.mode == "batch":
        base = Path(args.out) if args.out else None
        jobs = [(p, None if base is None else base / Path(p).stem, args.seed, args.dump_chain)
                for p in args.config]
        with ProcessPoolExecutor(max_workers=min(thread_cap(), len(jobs))) as ex:
            codes = list(ex.map(_run_one, jobs))
        return max(codes)
    if len(args.config) != 1:
        print("config error: exactly one --config is expected outside batch mode", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config[0])
        cfg.mode = args.mode if "mode" not in _raw_keys(args.config[0]) else cfg.mode
        if cfg.mode != args.mode:
            raise ConfigError(f"{args.config[0]}: mode: config mode {cfg.mode!r} differs from {args.mode!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be a 64-bit unsigned integer")
            cfg.seed = args.seed
        return run_experiment(cfg, args.out, args.dump_chain)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def _raw_keys(path):
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return set(json.loads(text))
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return set(tomllib.loads(text))


if __name__ == "__main__":
    sys.exit(main())
