"""Command line entry point ``hemato``.

    hemato equilibrium --config run.toml
    hemato simulate    --config run.toml --mode pdmp|ssa|tau
    hemato verify      --config run.toml --suite box|hormander|...

The config is a TOML file with a ``[model]`` table holding the 18 model
constants, an optional ``[run]`` table and an optional ``[verify]`` table
overriding verification settings. Every output file name carries the
config hash and the seed; JSON outputs also carry them in their content.

Exit codes: 0 success, 1 a verification suite failed, 2 invalid config or
arguments, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .equilibrium import solve_equilibrium
from .errors import AccuracyWarning, DomainError, ParameterError
from .model import HybridState, ModelParams, divergence_2d, invariant_box
from .parallel import default_threads, map_replicates, replicate_seeds
from .pdmp import simulate_pdmp
from .ssa import CLAMP_WARN_FRACTION, equilibrium_initial_state, simulate_ssa, simulate_tau_leap, state_from_scaled
from .verify import SUITES, VerifySettings, run_suite

log = logging.getLogger("hemato")

EXIT_SUITE_FAILED = 1
EXIT_INVALID = 2
EXIT_IO = 3

CSV_HEADER = "t,x1,x2,x3,i"
HYPDEP_WARNING = "c3 + q3 = 0: uniqueness and ergodicity results do not apply to this parameter set"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    K_list: tuple = (100,)
    T: float = 10.0
    grid_dt: float = 0.1
    n: int = 1
    seed: int = 0
    tol: float = 1e-9
    bins: tuple = (32, 32, 32)
    burn_in: float = 1000.0
    out: str = "hemato-out"
    leap_dt: float = 1e-3
    x0: tuple | None = None
    i0: int = 0
    verify: dict = dataclasses.field(default_factory=dict)
    config_hash: str = ""

    def __post_init__(self):
        if not self.K_list or any(int(k) < 1 for k in self.K_list):
            raise ConfigError("K must be a nonempty list of positive integers")
        for name in ("T", "grid_dt", "tol", "leap_dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be nonnegative")
        if len(self.bins) != 3 or any(int(b) < 1 for b in self.bins):
            raise ConfigError("bins must be three positive integers")
        if self.i0 not in (0, 1):
            raise ConfigError("i0 must be 0 or 1")
        if self.x0 is not None:
            HybridState.from_array(self.x0, self.i0)


_RUN_KEYS = {"K": "K_list", "T": "T", "grid_dt": "grid_dt", "n": "n", "seed": "seed", "tol": "tol",
             "bins": "bins", "burn_in": "burn_in", "out": "out", "leap_dt": "leap_dt",
             "x0": "x0", "i0": "i0"}


def git_blob_hash(data: bytes) -> str:
    """Content hash computed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_config(path) -> RunConfig:
    raw = Path(path).read_bytes()
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if "model" not in doc:
        raise ConfigError("config needs a [model] table")
    model = ModelParams.from_dict(doc["model"])
    run = dict(doc.get("run", {}))
    unknown = sorted(set(run) - set(_RUN_KEYS))
    if unknown:
        raise ConfigError("unknown [run] keys: " + ", ".join(unknown))
    kwargs = {_RUN_KEYS[k]: v for k, v in run.items()}
    if "K_list" in kwargs:
        K = kwargs["K_list"]
        kwargs["K_list"] = tuple(int(k) for k in (K if isinstance(K, list) else [K]))
    for key in ("bins", "x0"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    ver = dict(doc.get("verify", {}))
    allowed = {f.name for f in dataclasses.fields(VerifySettings)} - {"seed", "threads", "tol"}
    bad = sorted(set(ver) - allowed)
    if bad:
        raise ConfigError("unknown [verify] keys: " + ", ".join(bad))
    try:
        return RunConfig(model=model, verify=ver, config_hash=git_blob_hash(raw), **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, t, x, i):
    with path.open("w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for tt, xx, ii in zip(t, x, i):
            fh.write("%.17g,%.17g,%.17g,%.17g,%d\n" % (tt, xx[0], xx[1], xx[2], ii))


def _base_report(cfg: RunConfig, seed: int) -> dict:
    rep = {"config_hash": cfg.config_hash, "seed": seed, "parameters": cfg.model.as_dict(),
           "warnings": []}
    if not cfg.model.hypdep:
        rep["warnings"].append(HYPDEP_WARNING)
        log.warning(HYPDEP_WARNING)
    return rep


def cmd_equilibrium(cfg: RunConfig, args) -> int:
    p = cfg.model
    eq = solve_equilibrium(p)
    box = invariant_box(p)
    g1, g2 = np.meshgrid(np.linspace(box.lo1, box.hi1, 100), np.linspace(box.lo2, box.hi2, 100),
                         indexing="ij")
    div = divergence_2d(p, g1, g2)
    rep = _base_report(cfg, args.seed)
    rep.update({"equilibrium": [eq.p1, eq.p2, eq.p3], "case": eq.case_tag, "residual": eq.residual,
                "box": box.as_list(), "hypdep": p.hypdep,
                "divergence_scan": {"grid": [100, 100], "max": float(div.max()),
                                    "negative": bool(np.all(div < 0))}})
    out = args.out / f"equilibrium-{cfg.config_hash[:12]}-seed{args.seed}.json"
    _dump_json(rep, out)
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0


def _jump_inits(cfg: RunConfig, seed: int) -> list:
    K = cfg.K_list[0]
    if cfg.x0 is not None:
        return [state_from_scaled(cfg.model, K, cfg.x0, cfg.i0)] * cfg.n
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    return [equilibrium_initial_state(cfg.model, K, rng) for _ in range(cfg.n)]


def cmd_simulate(cfg: RunConfig, args) -> int:
    p = cfg.model
    mode = args.mode
    seeds = replicate_seeds(args.seed, cfg.n)
    tag = f"{mode}-{cfg.config_hash[:12]}-seed{args.seed}"
    rep = _base_report(cfg, args.seed)
    rep.update({"mode": mode, "T": cfg.T, "grid_dt": cfg.grid_dt, "n": cfg.n, "files": [],
                "replicate_seeds": seeds.tolist()})
    t0 = time.perf_counter()
    if mode == "pdmp":
        x0 = solve_equilibrium(p).x if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
        s0 = HybridState.from_array(x0, cfg.i0)
        rep.update({"x0": s0.x.tolist(), "i0": s0.i, "tol": cfg.tol})
    else:
        inits = _jump_inits(cfg, args.seed)
        rep.update({"K": cfg.K_list[0], "initial_counts": [s.counts.tolist() for s in inits]})
        if mode == "tau":
            rep["leap_dt"] = cfg.leap_dt
    def one(r):
        seed = int(seeds[r])
        if mode == "pdmp":
            tr = simulate_pdmp(p, s0, cfg.T, cfg.tol, seed, grid_dt=cfg.grid_dt, dense=False)
            return tr.times, tr.states, tr.regimes, None
        if mode == "ssa":
            tr = simulate_ssa(p, inits[r], cfg.T, cfg.grid_dt, seed)
            return tr.times, tr.x, tr.i, None
        tr = simulate_tau_leap(p, inits[r], cfg.T, cfg.leap_dt, seed, grid_dt=cfg.grid_dt)
        return tr.times, tr.x, tr.i, tr.clamp_fraction

    with warnings.catch_warnings():
        # clamp warnings are collected per replicate into the manifest below
        warnings.simplefilter("ignore", AccuracyWarning)
        results = map_replicates(one, range(cfg.n), args.threads)
    clamp = []
    for r, (t, x, i, cf) in enumerate(results):
        if cf is not None:
            clamp.append(cf)
            if cf > CLAMP_WARN_FRACTION:
                msg = (f"replicate {r}: tau-leap clamped counts in {cf:.2%} of steps "
                       f"(above {CLAMP_WARN_FRACTION:.0%}); reduce leap_dt")
                rep["warnings"].append(msg)
                log.warning(msg)
        name = f"{tag}-r{r:04d}.csv"
        _write_csv(args.out / name, t, x, i)
        rep["files"].append(name)
    if clamp:
        rep["clamp_fraction"] = clamp
    if not args.deterministic:
        rep["timing_s"] = time.perf_counter() - t0
    _dump_json(rep, args.out / f"manifest-{tag}.json")
    print(args.out / f"manifest-{tag}.json")
    return 0


def verify_settings(cfg: RunConfig, args) -> VerifySettings:
    over = dict(cfg.verify)
    for key in ("Ks", "bins", "control_shift", "tv_times", "tv_control_times"):
        if key in over:
            over[key] = tuple(over[key])
    return VerifySettings(seed=args.seed, tol=cfg.tol, threads=args.threads, **over)


def cmd_verify(cfg: RunConfig, args) -> int:
    settings = verify_settings(cfg, args)
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    rep = _base_report(cfg, args.seed)
    rep["suites"] = []
    failing = []
    for name in names:
        res = run_suite(name, cfg.model, settings)
        rep["suites"].append(res.as_dict(timings=not args.deterministic))
        failing += [f"{name}:{c}" for c in res.failing]
    rep["passed"] = not failing
    rep["failing"] = failing
    out = args.out / f"verify-{args.suite}-{cfg.config_hash[:12]}-seed{args.seed}.json"
    _dump_json(rep, out)
    for s in rep["suites"]:
        for c in s["criteria"]:
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] {s['suite']}/{c['name']}: {c['verdict']}")
    if failing:
        print("failing: " + ", ".join(failing), file=sys.stderr)
        return EXIT_SUITE_FAILED
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hemato", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=("equilibrium", "simulate", "verify"))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--mode", choices=("ssa", "pdmp", "tau"), default="pdmp")
    ap.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    ap.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: HEMATO_THREADS or all cores)")
    ap.add_argument("--deterministic", action="store_true",
                    help="omit wall-clock timings so repeated runs are byte-identical")
    ap.add_argument("--out", type=Path, default=None, help="output directory (overrides [run] out)")
    return ap


COMMANDS = {"equilibrium": cmd_equilibrium, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="hemato: %(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else 0
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        print(f"hemato: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ParameterError, DomainError) as exc:
        print(f"hemato: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is None:
        args.seed = int(cfg.seed)
    if args.threads is not None and args.threads < 1:
        print("hemato: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    args.threads = args.threads or default_threads()
    args.out = args.out or Path(cfg.out)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except OSError as exc:
        print(f"hemato: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ParameterError, DomainError) as exc:
        print(f"hemato: invalid settings: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
