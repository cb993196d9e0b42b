"""Command-line front door.

Every subcommand reads one INI config (``--config``), lets flags override it,
writes its artifacts plus a ``manifest.json`` into ``--out`` and prints the
main JSON result to stdout.

Exit codes: 0 success, 2 config error, 3 domain refusal, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .ce_harness import AgentSpec, CEConfig, run_game, write_summary_json, write_trials_csv
from .ergodic_transform import (NotErgodizableError, QuadratureError, TransformSpec, affine,
                                check_ergodizable, crra, derive_transform, identity, log_transform)
from .growth_rates import Budget, UndefinedRateError, ergodicity_diagnostic, simulate_budget
from .preference_engine import (PreconditionError, RepresentationFrame, Thresholds, fit_discount,
                                rank, representation_value, unique_alpha_star)
from .swp_core import (DiscreteDynamics, DomainError, Ensemble, SimulationError, build_ito,
                       deterministic_ensemble, gbm, gbm_log_growth, arithmetic_bm, contrived_power,
                       save_cache, write_csv)
from ._expr import ExpressionError, parse_expression

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    """A config problem, located by section, key and (when known) line."""

    def __init__(self, message: str, section: str | None = None, key: str | None = None,
                 line: int | None = None):
        where = ".".join(p for p in (section, key) if p)
        loc = f"{where}" + (f" (line {line})" if line else "")
        super().__init__(f"{loc}: {message}" if loc else message)
        self.section, self.key, self.line = section, key, line


class DomainRefusal(Exception):
    """The request is well formed but the dynamic does not admit it."""

    def __init__(self, message: str, payload: dict):
        super().__init__(message)
        self.payload = payload


# -- config access ----------------------------------------------------------------

@dataclass
class Config:
    parser: configparser.ConfigParser
    path: Path | None
    text: str = ""

    @classmethod
    def load(cls, path: str | None) -> "Config":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        if path is None:
            return cls(cp, None)
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path!r} not found")
        text = p.read_text()
        try:
            cp.read_string(text, source=str(p))
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " ")) from None
        return cls(cp, p, text)

    def line_of(self, section: str, key: str) -> int | None:
        current = None
        for i, raw in enumerate(self.text.splitlines(), 1):
            s = raw.strip()
            m = re.fullmatch(r"\[([^\]]+)\]", s)
            if m:
                current = m.group(1).strip()
            elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
                return i
        return None

    def error(self, section: str, key: str, message: str) -> ConfigError:
        return ConfigError(message, section, key, self.line_of(section, key))

    def has(self, section: str, key: str | None = None) -> bool:
        if not self.parser.has_section(section):
            return False
        return key is None or self.parser.has_option(section, key)

    def get(self, section: str, key: str, default=None, required: bool = False) -> str | None:
        if self.has(section, key):
            return self.parser.get(section, key).strip()
        if required:
            raise ConfigError("missing required key", section, key)
        return default

    def number(self, section: str, key: str, default=None, required: bool = False, cast=float):
        raw = self.get(section, key, None, required)
        if raw is None:
            return default
        try:
            v = cast(float(raw)) if cast is int else cast(raw)
        except ValueError:
            raise self.error(section, key, f"expected a number, got {raw!r}") from None
        if cast is int and float(raw) != v:
            raise self.error(section, key, f"expected an integer, got {raw!r}")
        return v

    def floats(self, section: str, key: str, default=None) -> tuple[float, ...] | None:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        except ValueError:
            raise self.error(section, key, f"expected a comma-separated list of numbers, got {raw!r}") from None


# -- building objects from config -----------------------------------------------------

def _dynamics(cfg: Config, section: str = "dynamics"):
    """Returns ``("ito" | "discrete", dyn)`` or ``("deterministic", rate)``."""
    if not cfg.has(section):
        raise ConfigError("missing section", section)
    kind = (cfg.get(section, "kind", "custom") or "custom").lower()
    num = lambda k, **kw: cfg.number(section, k, **kw)
    try:
        if kind == "gbm":
            return "ito", gbm(num("mu", required=True), _positive(cfg, section, "sigma"))
        if kind == "gbm_log_growth":
            return "ito", gbm_log_growth(num("g", required=True), _positive(cfg, section, "sigma"))
        if kind in ("additive", "arithmetic"):
            return "ito", arithmetic_bm(num("mu", required=True), _positive(cfg, section, "sigma"))
        if kind == "power":
            return "ito", contrived_power(num("gamma", required=True))
        if kind == "deterministic":
            return "deterministic", num("rate", required=True)
        if kind == "discrete":
            outcomes = cfg.floats(section, "outcomes")
            if not outcomes:
                raise ConfigError("missing required key", section, "outcomes")
            probs = cfg.floats(section, "probabilities")
            mode = cfg.get(section, "mode", "multiplicative")
            try:
                if probs is None:
                    return "discrete", DiscreteDynamics.equiprobable(mode, outcomes)
                return "discrete", DiscreteDynamics(mode, outcomes, probs)
            except ValueError as exc:
                raise cfg.error(section, "outcomes", str(exc)) from None
        if kind == "custom":
            domain = cfg.floats(section, "domain", (-math.inf, math.inf))
            if len(domain) != 2 or not domain[0] < domain[1]:
                raise cfg.error(section, "domain", f"expected 'lo, hi' with lo < hi, got {domain}")
            drift = cfg.get(section, "drift", required=True)
            diffusion = cfg.get(section, "diffusion", required=True)
            try:
                d_expr = parse_expression(drift)
            except ExpressionError as exc:
                raise cfg.error(section, "drift", str(exc)) from None
            try:
                b_expr = parse_expression(diffusion)
            except ExpressionError as exc:
                raise cfg.error(section, "diffusion", str(exc)) from None
            try:
                return "ito", build_ito(d_expr, b_expr, domain)
            except DomainError as exc:
                key = "drift" if str(exc).startswith("drift") else "diffusion"
                raise cfg.error(section, key, str(exc)) from None
    except DomainError as exc:
        raise cfg.error(section, "kind", str(exc)) from None
    raise cfg.error(section, "kind", f"unknown dynamics kind {kind!r}")


def _positive(cfg: Config, section: str, key: str) -> float:
    v = cfg.number(section, key, required=True)
    if not v > 0:
        raise cfg.error(section, key, f"must be strictly positive, got {v:g}")
    return v


def _transform(cfg: Config, dyn=None, default: str = "identity") -> TransformSpec:
    s = "transform"
    form = (cfg.get(s, "form", default) or default).lower()
    x_ref = cfg.number(s, "x_ref", None)
    if form == "identity":
        return identity()
    if form == "affine":
        c = cfg.number(s, "scale", 1.0)
        if not c > 0:
            raise cfg.error(s, "scale", "affine scale must be positive")
        return affine(c, cfg.number(s, "offset", 0.0))
    if form == "log":
        return log_transform(cfg.number(s, "scale", 1.0), x_ref)
    if form == "crra":
        return crra(cfg.number(s, "gamma", required=True), cfg.number(s, "scale", 1.0), x_ref)
    if form == "derive":
        if dyn is None:
            raise cfg.error(s, "form", "'derive' needs an Ito [dynamics] section")
        return _derive(dyn, 1.0 if x_ref is None else x_ref)
    raise cfg.error(s, "form", f"unknown transform form {form!r}")


def _derive(dyn, x_ref: float) -> TransformSpec:
    try:
        return derive_transform(dyn, x_ref=x_ref)
    except NotErgodizableError as exc:
        chk = check_ergodizable(dyn)
        raise DomainRefusal(str(exc), {"admits": False, "residual": chk.residual,
                                       "alpha_over_beta": chk.alpha_over_beta,
                                       "dynamics": {"drift": dyn.drift.text, "diffusion": dyn.diffusion.text}})


def _budget(cfg: Config, args) -> Budget:
    s = "budget"
    b = Budget(
        n_paths=cfg.number(s, "n_paths", Budget.n_paths, cast=int),
        dt=cfg.number(s, "dt", Budget.dt),
        t_max=cfg.number(s, "t_max", Budget.t_max),
        seed=_seed(cfg, args),
        x0=cfg.number("dynamics", "x0", Budget.x0) if cfg.has("dynamics") else Budget.x0,
    )
    if args.budget:
        parts = [p for p in re.split(r"[,\s]+", args.budget.strip("{} ")) if p]
        if len(parts) != 3:
            raise ConfigError(f"--budget expects N,dt,t_max, got {args.budget!r}")
        try:
            b = Budget(int(float(parts[0])), float(parts[1]), float(parts[2]), b.seed, b.x0)
        except ValueError:
            raise ConfigError(f"--budget expects numbers, got {args.budget!r}") from None
    if b.n_paths < 1 or not b.dt > 0 or not b.t_max > 0:
        raise ConfigError("budget needs n_paths >= 1, dt > 0 and t_max > 0", "budget")
    return b


def _seed(cfg: Config, args) -> int:
    if args.seed is not None:
        return int(args.seed)
    for section in ("budget", "ce", "run"):
        if cfg.has(section, "seed"):
            return cfg.number(section, "seed", cast=int)
    return 0


def _bool(cfg: Config, section: str, key: str, default: bool) -> bool:
    if not cfg.has(section, key):
        return default
    try:
        return cfg.parser.getboolean(section, key)
    except ValueError:
        raise cfg.error(section, key, "expected a boolean") from None


def _agents(cfg: Config) -> list[AgentSpec]:
    raw = cfg.get("ce", "agents", "ergodicity; static_exponential lam=1e-9; backward_induction horizon=1 utility=log")
    agents = []
    for item in (a.strip() for a in raw.split(";")):
        if not item:
            continue
        kind, *params = item.split()
        kw = {}
        for p in params:
            k, _, v = p.partition("=")
            if k == "lam":
                kw["lam"] = float(v)
            elif k == "horizon":
                kw["horizon"] = int(v)
            elif k in ("utility", "name"):
                kw[k] = v
            else:
                raise cfg.error("ce", "agents", f"unknown agent parameter {k!r} in {item!r}")
        try:
            agents.append(AgentSpec(kind, **kw))
        except ValueError as exc:
            raise cfg.error("ce", "agents", str(exc)) from None
    if not agents:
        raise cfg.error("ce", "agents", "no agents given")
    return agents


def _ce_config(cfg: Config, args) -> CEConfig:
    s = "ce"
    kw = dict(
        mode=cfg.get(s, "mode", "additive"),
        n_images=cfg.number(s, "n_images", 18, cast=int),
        images_per_game=cfg.number(s, "images_per_game", 9, cast=int),
        passive_repetitions=cfg.number(s, "passive_repetitions", 37, cast=int),
        n_trials=cfg.number(s, "n_trials", 312, cast=int),
        settlement_draws=cfg.number(s, "settlement_draws", 10, cast=int),
        image_effects=cfg.floats(s, "image_effects"),
        initial_endowment=cfg.number(s, "initial_endowment", 1000.0),
        seed=_seed(cfg, args),
        per_trial_update=_bool(cfg, s, "per_trial_update", False),
    )
    if kw["image_effects"] is not None and not cfg.has(s, "n_images"):
        kw["n_images"] = len(kw["image_effects"])
        kw["images_per_game"] = min(kw["images_per_game"], kw["n_images"])
    try:
        return CEConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), s) from None


# -- ensembles for rank / calibrate --------------------------------------------------

def _ensembles(cfg: Config, budget: Budget, sections: list[str]) -> dict[str, Ensemble]:
    """Simulate every stochastic section with the shared seed, then lay
    deterministic ones on the same grid and path count."""
    specs = {s: _dynamics(cfg, s) for s in sections}
    out: dict[str, Ensemble] = {}
    for s, (kind, dyn) in specs.items():
        if kind != "deterministic":
            x0 = cfg.number(s, "x0", budget.x0)
            out[s] = simulate_budget(dyn, Budget(budget.n_paths, budget.dt, budget.t_max, budget.seed, x0))
    ref = next(iter(out.values()), None)
    grids = {e.time_grid.tobytes() for e in out.values()}
    if len(grids) > 1:
        raise ConfigError("stochastic processes ended on different time grids; use one budget for all")
    if ref is not None:
        grid, n = ref.time_grid, ref.n_paths
    else:
        n_steps = int(round(budget.t_max / budget.dt))
        stride = max(1, -(-n_steps // 1000))
        while n_steps % stride:
            stride += 1
        grid, n = np.arange(0, n_steps + 1, stride) * budget.dt, 1
    for s, (kind, rate) in specs.items():
        if kind == "deterministic":
            out[s] = deterministic_ensemble(rate, grid, cfg.number(s, "x0", 1.0), n)
    return out


# -- subcommands --------------------------------------------------------------------

def _finite(obj):
    """Strict JSON: NaN becomes null, infinities become strings."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else (None if math.isnan(v) else repr(v))
    return obj


def _dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default, allow_nan=False)


def _write_json(path: Path, obj) -> Path:
    path.write_text(_dumps(obj) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cmd_simulate(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    kind, dyn = _dynamics(cfg)
    if kind == "deterministic":
        raise cfg.error("dynamics", "kind", "simulate needs a stochastic dynamic")
    budget = _budget(cfg, args)
    ens = simulate_budget(dyn, budget)
    csv_path = write_csv(ens, out / "ensemble.csv")
    cache = save_cache(ens, out)
    result = {"n_paths": ens.n_paths, "n_times": ens.n_times, "t_max": ens.t_max,
              "n_flagged": int(ens.flagged.sum()), "dynamics": ens.dynamics_fingerprint}
    return result, [csv_path, cache]


def cmd_diagnose(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    kind, dyn = _dynamics(cfg)
    if kind == "deterministic":
        raise cfg.error("dynamics", "kind", "diagnose needs a stochastic dynamic")
    f = _transform(cfg, dyn if kind == "ito" else None)
    diag = ergodicity_diagnostic(dyn, f, _budget(cfg, args))
    result = diag.to_dict()
    result["transform"] = f.describe()
    paths = [_write_json(out / "report.json", result)]
    trace = out / "trace.csv"
    with trace.open("w") as fh:
        fh.write("t,median_rate,se\n")
        if diag.time_average is not None:
            for t, m, s in diag.time_average.trace_rows():
                fh.write(f"{t!r},{m!r},{s!r}\n")
    paths.append(trace)
    return result, paths


def cmd_derive(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    kind, dyn = _dynamics(cfg)
    if kind != "ito":
        raise cfg.error("dynamics", "kind", "derive needs an Ito dynamic")
    x_ref = cfg.number("transform", "x_ref", 1.0)
    try:
        f = _derive(dyn, x_ref)
    except DomainRefusal as exc:
        _write_json(out / "refusal.json", exc.payload)
        raise
    chk = check_ergodizable(dyn)
    result = {"transform": f.to_dict(), "label": f.describe(),
              "check": {"admits": chk.admits, "residual": chk.residual, "alpha_over_beta": chk.alpha_over_beta}}
    return result, [_write_json(out / "transform.json", result)]


def cmd_rank(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    budget = _budget(cfg, args)
    ens = _ensembles(cfg, budget, ["left", "right"])
    f = _transform(cfg)
    res = rank(ens["left"], ens["right"], f, _thresholds(cfg))
    result = res.to_dict()
    result["transform"] = f.describe()
    return result, [_write_json(out / "ranking.json", result)]


def _thresholds(cfg: Config) -> Thresholds:
    d = Thresholds()
    return Thresholds(cfg.number("rank", "agree", d.agree), cfg.number("rank", "disagree", d.disagree),
                      cfg.number("rank", "rel_tol", d.rel_tol))


def cmd_calibrate(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    """Representation value of [query] against [high]/[low]; with a [middle]
    section instead, the unique weight for high >= middle >= low."""
    budget = _budget(cfg, args)
    f = _transform(cfg)
    thr = _thresholds(cfg)
    if cfg.has("middle"):
        ens = _ensembles(cfg, budget, ["high", "middle", "low"])
        try:
            cal = unique_alpha_star(ens["high"], ens["middle"], ens["low"], f, thr)
        except PreconditionError as exc:
            raise DomainRefusal(str(exc), {"error": str(exc)}) from None
    else:
        ens = _ensembles(cfg, budget, ["high", "low", "query"])
        try:
            cal = representation_value(ens["query"], RepresentationFrame(ens["high"], ens["low"], thr), f)
        except PreconditionError as exc:
            raise DomainRefusal(str(exc), {"error": str(exc)}) from None
    result = cal.to_dict()
    result["transform"] = f.describe()
    return result, [_write_json(out / "calibration.json", result)]


def cmd_ce(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    ce = _ce_config(cfg, args)
    game = run_game(ce, _agents(cfg))
    paths = [write_trials_csv(game, out / "trials.csv"), write_summary_json(game, out / "summary.json")]
    return game.summary(), paths


def cmd_discount_fit(cfg: Config, args, out: Path) -> tuple[dict, list[Path]]:
    src = args.input or cfg.get("discount", "input")
    if src is None:
        raise ConfigError("discount-fit needs --input CSV (or [discount] input)")
    p = Path(src)
    if not p.is_file():
        raise ConfigError(f"input file {src!r} not found")
    try:
        data = np.genfromtxt(p, delimiter=",", names=True, dtype=float)
        cols = data.dtype.names
        pairs = np.column_stack([data[cols[0]], data[cols[1]]]).reshape(-1, 2)
    except (ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"cannot read (dt, V) pairs from {src!r}: {exc}") from None
    if np.any(~np.isfinite(pairs)):
        raise ConfigError(f"non-numeric or missing values in {src!r}")
    fit = fit_discount(pairs)
    return fit.to_dict(), [_write_json(out / "discount.json", fit.to_dict())]


COMMANDS: dict[str, Callable] = {
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "derive": cmd_derive,
    "rank": cmd_rank,
    "calibrate": cmd_calibrate,
    "ce": cmd_ce,
    "discount-fit": cmd_discount_fit,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, args, seed: int, wall: float, inputs: list[Path], outputs: list[Path]) -> Path:
    manifest = {
        "subcommand": args.command,
        "config_path": args.config,
        "seed": seed,
        "output_dir": str(out),
        "tool_version": __version__,
        "wall_clock_s": wall,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    return _write_json(out / "manifest.json", manifest)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ergodic-econ", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--budget", help="N,dt,t_max overriding [budget]")
        if name == "discount-fit":
            p.add_argument("--input", help="CSV with a header row and (dt, V) columns")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    out = Path(args.out)
    try:
        cfg = Config.load(args.config)
        seed = _seed(cfg, args)
        out.mkdir(parents=True, exist_ok=True)
        result, outputs = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainRefusal, NotErgodizableError, PreconditionError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (SimulationError, QuadratureError, UndefinedRateError, ArithmeticError, DomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    inputs = [Path(p) for p in (args.config, getattr(args, "input", None)) if p]
    write_manifest(out, args, seed, time.perf_counter() - t0, inputs, outputs)
    sys.stdout.write(_dumps(result) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
