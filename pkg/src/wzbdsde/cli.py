"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed ``--check``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

from . import __version__
from .engine import RegressionBasis
from .errors import BdsdeError, ConfigurationError, NumericalError, RateUndefinedError
from .lab import ExperimentPlan, estimate_errors, fit_rate, identity_suite, moment_bounds
from .problem import REGISTRY
from .report import convergence_svg, errors_csv, identities_csv, moments_csv, to_json

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4
SUBCOMMANDS = ("simulate", "rate", "identities", "moments", "plot")
FORMATS = ("csv", "json", "svg")
CONST_G_WINDOW = (-1.25, -0.75)


@dataclass
class RunConfig:
    subcommand: str = "simulate"
    problem: str = "sine_g"
    wz_levels: tuple = (3, 4, 5, 6, 7)
    extra_levels: int = 2
    outer: int = 64
    inner: int = 2048
    basis_kind: str = "polynomial"
    basis_degree: int = 3
    ridge: float = 1e-8
    regression: str = "later"
    seed: int = 42
    delta_slack: float = 0.1
    picard_iters: int = 1
    horizon: float = 1.0
    grid: str = "shared"
    wz_order: int = 2
    p_list: tuple = (2, 4)
    problem_params: dict = field(default_factory=dict)
    workers: int = 1
    out: Optional[str] = None
    format: tuple = ("csv",)
    check: bool = False
    no_timestamp: bool = False

    def plan(self) -> ExperimentPlan:
        basis = RegressionBasis(self.basis_kind, self.basis_degree, self.ridge, self.regression)
        return ExperimentPlan(
            problem=self.problem,
            wz_levels=tuple(self.wz_levels),
            extra_levels=self.extra_levels,
            outer_count=self.outer,
            inner_count=self.inner,
            basis=basis,
            seed=self.seed,
            delta_slack=self.delta_slack,
            picard_iters=self.picard_iters,
            horizon=self.horizon,
            grid=self.grid,
            wz_order=self.wz_order,
            problem_params=dict(self.problem_params),
        )

    def meta_config(self) -> dict:
        # the worker count and output location do not affect results
        d = dataclasses.asdict(self)
        for key in ("workers", "out", "format", "check", "no_timestamp"):
            d.pop(key)
        return d


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"subcommand"}
ALIASES = {"levels": "wz_levels", "formats": "format"}


def parse_levels(value) -> tuple:
    """``"a..b"``, ``"a,b,c"``, a single integer or a list of integers."""
    if isinstance(value, bool):
        raise ConfigurationError(f"invalid levels {value!r}")
    if isinstance(value, int):
        return (value,)
    if isinstance(value, (list, tuple)):
        if not value or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigurationError(f"levels must be a nonempty list of integers, got {value!r}")
        return tuple(value)
    text = str(value).strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigurationError(f"empty level range {text!r}")
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"invalid levels {text!r}; use a..b or a,b,c") from None


def parse_formats(value) -> tuple:
    items = value.split(",") if isinstance(value, str) else list(value)
    items = tuple(s.strip() for s in items if s.strip())
    if not items:
        raise ConfigurationError("format list must not be empty")
    bad = [s for s in items if s not in FORMATS]
    if bad:
        raise ConfigurationError(f"unknown output format(s) {bad}; choose from {list(FORMATS)}")
    return items


def _key_line(text: str, key: str) -> int:
    needle = json.dumps(key)
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return 0


def load_config_file(path: str) -> dict:
    """Flat JSON object with the same keys as the long flags (dashes as underscores)."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    out = {}
    for key, value in data.items():
        name = ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if name not in CONFIG_KEYS:
            raise ConfigurationError(f"{path}:{_key_line(text, key)}: unknown key {key!r}")
        out[name] = value
    return out


def _coerce(values: dict) -> dict:
    out = dict(values)
    if "wz_levels" in out:
        out["wz_levels"] = parse_levels(out["wz_levels"])
    if "format" in out:
        out["format"] = parse_formats(out["format"])
    if "p_list" in out:
        p = out["p_list"]
        out["p_list"] = tuple(p) if isinstance(p, (list, tuple)) else parse_levels(p)
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    for key, value in out.items():
        kind = types[key]
        try:
            if kind == "int" and not isinstance(value, int):
                out[key] = int(value)
            elif kind == "float":
                out[key] = float(value)
            elif kind == "bool" and not isinstance(value, bool):
                raise ConfigurationError(f"{key} must be true or false")
        except (TypeError, ValueError):
            raise ConfigurationError(f"invalid value {value!r} for {key}") from None
        if kind == "int" and isinstance(value, bool):
            raise ConfigurationError(f"invalid value {value!r} for {key}")
    if "problem_params" in out and not isinstance(out["problem_params"], dict):
        raise ConfigurationError("problem_params must be an object")
    return out


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.subcommand not in SUBCOMMANDS:
        raise ConfigurationError(f"unknown subcommand {cfg.subcommand!r}")
    if cfg.problem not in REGISTRY:
        raise ConfigurationError(f"unknown problem {cfg.problem!r}; choose from {sorted(REGISTRY)}")
    for n in cfg.wz_levels:
        m = n + cfg.extra_levels
        if m < n:
            raise ConfigurationError(f"extra_levels={cfg.extra_levels} gives solver level m={m} < n={n}")
    if cfg.workers < 0:
        raise ConfigurationError("workers must be >= 0 (0 = one per CPU)")
    if cfg.out is not None:
        if os.path.exists(cfg.out) and not os.path.isdir(cfg.out):
            raise ConfigurationError(f"output path {cfg.out} is not a directory")
    elif "svg" in cfg.format or cfg.subcommand == "plot":
        raise ConfigurationError("svg output needs --out")
    cfg.plan().make_problem()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdsde", description="Wong-Zakai BDSDE convergence experiments")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="flat JSON config file")
    common.add_argument("--problem", default=S, help=f"one of {', '.join(sorted(REGISTRY))}")
    common.add_argument("--levels", dest="wz_levels", default=S, help="Wong-Zakai levels, a..b or a,b,c")
    common.add_argument("--extra-levels", type=int, default=S, help="solver level m = max n + k")
    common.add_argument("--outer", type=int, default=S, help="outer B paths")
    common.add_argument("--inner", type=int, default=S, help="inner W paths per outer path")
    common.add_argument("--basis-degree", type=int, default=S)
    common.add_argument("--ridge", type=float, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--delta-slack", type=float, default=S)
    common.add_argument("--workers", type=int, default=S, help="process count, 0 = one per CPU")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("--format", default=S, help="comma list of csv,json,svg")
    common.add_argument("--check", action="store_true", default=S, help="exit 4 if the acceptance check fails")
    common.add_argument("--no-timestamp", action="store_true", default=S)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "simulate": "per-level error estimates",
        "rate": "error estimates and fitted convergence slope",
        "identities": "zero-mean identity z-tests",
        "moments": "uniform moment bounds",
        "plot": "SVG of log2 error against n",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def parse_config(argv: Optional[Sequence[str]] = None, env: Optional[dict] = None) -> RunConfig:
    """Defaults, then the config file, then flags; returns a validated config."""
    env = os.environ if env is None else env
    ns = vars(build_parser().parse_args(argv))
    values: dict = {}
    if "BDSDE_WORKERS" in env and env["BDSDE_WORKERS"] != "":
        values["workers"] = env["BDSDE_WORKERS"]
    if "config" in ns:
        values.update(load_config_file(ns.pop("config")))
    values.update(ns)
    cfg = RunConfig(**_coerce(values))
    return validate(cfg)


def _meta(cfg: RunConfig) -> dict:
    meta = {"version": __version__, "subcommand": cfg.subcommand, "config": cfg.meta_config()}
    if not cfg.no_timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return meta


def _emit(cfg: RunConfig, report, csv_text: str, svg_text: Optional[str] = None) -> None:
    outputs = {"csv": csv_text, "json": to_json(report, _meta(cfg))}
    if svg_text is not None:
        outputs["svg"] = svg_text
    formats = ("svg",) if cfg.subcommand == "plot" and cfg.format == ("csv",) else cfg.format
    if cfg.out is None:
        for f in formats:
            sys.stdout.write(outputs[f])
        return
    os.makedirs(cfg.out, exist_ok=True)
    for f in formats:
        if f not in outputs:
            raise ConfigurationError(f"{cfg.subcommand} has no {f} output")
        with open(os.path.join(cfg.out, f"{cfg.subcommand}.{f}"), "w", encoding="utf-8", newline="") as fh:
            fh.write(outputs[f])


def _rate_check(cfg: RunConfig, report) -> bool:
    if report.slope is None:
        return all(lv.composite == 0 for lv in report.levels)
    ok = report.slope <= -(0.5 - cfg.delta_slack)
    if cfg.problem == "const_g":
        ok = ok and CONST_G_WINDOW[0] <= report.slope <= CONST_G_WINDOW[1]
    return ok


def run(cfg: RunConfig) -> int:
    plan = cfg.plan()
    passed = True
    if cfg.subcommand in ("simulate", "rate", "plot"):
        report = estimate_errors(plan, cfg.workers)
        if report.slope is None and cfg.subcommand == "rate":
            if not all(lv.composite == 0 for lv in report.levels):
                fit_rate(report)
        svg = convergence_svg(report, cfg.delta_slack) if ("svg" in cfg.format or cfg.subcommand == "plot") else None
        _emit(cfg, report, errors_csv(report), svg)
        slope = "undefined" if report.slope is None else f"{report.slope:.4f}"
        print(f"{cfg.problem}: fitted slope {slope}", file=sys.stderr)
        passed = _rate_check(cfg, report)
    elif cfg.subcommand == "identities":
        report = identity_suite(plan, cfg.workers)
        _emit(cfg, report, identities_csv(report))
        controls_ok = all(not e.passed or e.trivial for e in report.entries if e.control)
        passed = report.all_passed and controls_ok
        print(
            f"{cfg.problem}: identities {'pass' if report.all_passed else 'FAIL'}, "
            f"control {'detected' if controls_ok else 'NOT detected'}",
            file=sys.stderr,
        )
    elif cfg.subcommand == "moments":
        report = moment_bounds(plan, cfg.p_list, cfg.workers)
        _emit(cfg, report, moments_csv(report))
        passed = report.all_uniform
        print(f"{cfg.problem}: ratios {report.ratios}", file=sys.stderr)
    if cfg.check and not passed:
        print("check failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run(cfg)
    except (NumericalError, RateUndefinedError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BdsdeError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
