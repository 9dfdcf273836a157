"""Command-line front end.

Each subcommand builds an ``ExperimentConfig``, validates it, runs the
experiment and prints a one-line verdict. ``--config FILE`` loads a flat
``key = value`` file first; flags given on the command line override it.

Exit status: 0 verdict passed, 1 verdict failed, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from isomech.errors import IsomechError, SimulationError
from isomech.isotonic import Ranking, bregman_project, project_with_ranking
from isomech.mechanisms import (
    CoarseElement,
    CoarseRanking,
    IsotonicElement,
    OwnershipMatrix,
    all_coarse_rankings,
    coarse_isotonic_mechanism,
    owner_partition,
)
from isomech.simulation import (
    ExperimentReport,
    NoiseModel,
    candidate_rankings,
    consistency_experiment,
    counterexample_nonconvex,
    counterexample_pairwise,
    line_mechanism_experiment,
    make_truth,
    nested_cone_experiment,
    risk_curve,
    truthfulness_scan,
)
from isomech.utilities import UtilitySpec

SCHEMA_VERSION = 1

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

KINDS = (
    "project",
    "truthfulness",
    "coarse-truthfulness",
    "consistency",
    "risk-curve",
    "nested-cones",
    "counterexample-pairwise",
    "counterexample-nonconvex",
    "owner-partition",
    "line-mechanism",
)

# default size at which risk curves switch to N_large replications
LARGE_N = 4096


class ConfigError(IsomechError, ValueError):
    """A configuration field is missing or malformed."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt_float(x: float) -> str:
    return repr(float(x))


_PARSERS: dict[type, Callable[[str], Any]] = {int: int, float: float, str: str, bool: _parse_bool}
_FORMATTERS: dict[type, Callable[[Any], str]] = {
    int: str, float: _fmt_float, str: str, bool: lambda b: "true" if b else "false"
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one CLI run. ``None`` means "not set"."""

    kind: str
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    threads: int = 1
    out: str | None = None
    truth: str | None = None
    n: int | None = None
    input: str | None = None
    ranking: str | None = None
    coarse: str | None = None
    bregman: str | None = None
    noise: str | None = None
    sigma: float | None = None
    utility: str | None = None
    N: int | None = None
    N_large: int | None = None
    sizes: str | None = None
    partitions: str | None = None
    strict_against: str | None = None
    swap: str | None = None
    n_list: str | None = None
    sigma_list: str | None = None
    epsilon: float | None = None
    cap: float | None = None
    r1: float | None = None
    r2: float | None = None
    require_witness: bool | None = None
    directions: str | None = None
    ownership: str | None = None

    @classmethod
    def field_types(cls) -> dict[str, type]:
        out = {}
        for f in fields(cls):
            name = f.type if isinstance(f.type, str) else f.type.__name__
            base = name.split("|")[0].strip()
            out[f.name] = {"int": int, "float": float, "str": str, "bool": bool}[base]
        return out

    def to_text(self) -> str:
        types = self.field_types()
        lines = [f"schema_version = {self.schema_version}", f"kind = {self.kind}"]
        for f in fields(self):
            if f.name in ("schema_version", "kind"):
                continue
            value = getattr(self, f.name)
            if value is not None:
                lines.append(f"{f.name} = {_FORMATTERS[types[f.name]](value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = parse_config_text(text)
        if "kind" not in values:
            raise ConfigError("kind", "missing")
        return cls(**values).validate()

    def merged(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {self.schema_version}")
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown experiment kind {self.kind!r}")
        types = self.field_types()
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            expected = types[f.name]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                continue
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigError(f.name, f"expected {expected.__name__}, got {value!r}")
        for name in ("threads",):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("N", "N_large", "n"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(name, "must be >= 1")
        for name in REQUIRED.get(self.kind, ()):
            if getattr(self, name) is None:
                raise ConfigError(name, f"required for {self.kind}")
        return self


REQUIRED: dict[str, tuple[str, ...]] = {
    "project": ("input",),
    "truthfulness": ("truth",),
    "coarse-truthfulness": ("truth", "sizes"),
    "consistency": ("truth", "ranking", "swap"),
    "nested-cones": ("truth", "coarse"),
    "counterexample-nonconvex": ("cap", "r1", "r2", "n"),
    "owner-partition": ("ownership",),
    "line-mechanism": ("truth",),
}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    types = ExperimentConfig.field_types()
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        if key not in types:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "given twice")
        try:
            values[key] = _PARSERS[types[key]](value)
        except ValueError:
            raise ConfigError(key, f"cannot parse {value!r} as {types[key].__name__}") from None
    return values


# -- parsing helpers -----------------------------------------------------------


def _vector(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split(",")], dtype=np.float64)


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",")]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",")]


def format_vector(values: Sequence[float]) -> str:
    return ",".join(format(float(v), ".12g") for v in values)


def _noise(config: ExperimentConfig) -> NoiseModel:
    if config.noise is not None:
        return NoiseModel.parse(config.noise, seed=config.seed)
    return NoiseModel.gaussian(1.0 if config.sigma is None else config.sigma, seed=config.seed)


def _utility(config: ExperimentConfig) -> UtilitySpec:
    return UtilitySpec.parse(config.utility or "square")


def _truth(config: ExperimentConfig) -> np.ndarray:
    return make_truth(config.truth, config.n)


def _field(name: str, parse: Callable[[str], Any], text: str) -> Any:
    try:
        return parse(text)
    except (ValueError, IsomechError) as exc:
        raise ConfigError(name, str(exc)) from None


# -- experiment runners ----------------------------------------------------------


def _run_project(cfg: ExperimentConfig) -> tuple[ExperimentReport, str]:
    y = _field("input", _vector, cfg.input)
    if cfg.coarse is not None:
        coarse = _field("coarse", CoarseRanking.parse, cfg.coarse)
        fitted = coarse_isotonic_mechanism(y, coarse)
    else:
        ranking = _field("ranking", lambda t: Ranking.parse(t, y.size), cfg.ranking or "identity")
        if cfg.bregman is not None:
            fitted = bregman_project(y, cfg.bregman, ranking)
        else:
            fitted = project_with_ranking(y, ranking)
    report = ExperimentReport("project", {"input": cfg.input, "ranking": cfg.ranking,
                                          "coarse": cfg.coarse, "bregman": cfg.bregman})
    for i, v in enumerate(fitted, start=1):
        report.add(f"item[{i}]", v, 0.0, 1)
    return report, format_vector(fitted)


def _reports_for(cfg: ExperimentConfig, truth: np.ndarray, default: str) -> list:
    elements = []
    for part in (cfg.partitions or default).split(";"):
        kind, _, arg = part.strip().partition(":")
        if kind == "full":
            elements.extend(IsotonicElement(r) for r in candidate_rankings(truth, cfg.seed))
        elif kind == "coarse":
            sizes = _field("partitions", _int_list, arg)
            if sum(sizes) != truth.size:
                raise ConfigError("partitions", f"sizes {sizes} do not sum to n={truth.size}")
            elements.extend(CoarseElement(c) for c in all_coarse_rankings(sizes))
        else:
            raise ConfigError("partitions", f"unknown partition family {kind!r}")
    return elements


def _strict_labels(cfg: ExperimentConfig, n: int) -> list[str]:
    if cfg.strict_against is None:
        return []
    out = []
    for token in cfg.strict_against.split(";"):
        ranking = _field("strict_against", lambda t: Ranking.parse(t, n), token)
        out.append(IsotonicElement(ranking).label)
    return out


def _scan_line(report: ExperimentReport) -> str:
    verdict = "TRUTHFUL" if report.passed else "NOT-TRUTHFUL"
    truthful = ",".join(report.notes["truthful_reports"].values())
    return f"{report.experiment_id}: verdict={verdict} best={report.notes['best_report']} truthful={truthful}"


def _run_truthfulness(cfg: ExperimentConfig) -> tuple[ExperimentReport, str]:
    truth = _field("truth", lambda t: make_truth(t, cfg.n), cfg.truth)
    default = "full" if cfg.kind == "truthfulness" else f"coarse:{cfg.sizes}"
    reports = _reports_for(cfg, truth, default)
    report = truthfulness_scan(truth, reports, _utility(cfg), _noise(cfg), cfg.N or 200_000,
                               cfg.threads, _strict_labels(cfg, truth.size), experiment_id=cfg.kind)
    return report, _scan_line(report)


def _run_consistency(cfg):
    truth = _field("truth", lambda t: make_truth(t, cfg.n), cfg.truth)
    worse = _field("ranking", lambda t: Ranking.parse(t, truth.size), cfg.ranking)
    swap = _field("swap", _int_list, cfg.swap)
    if len(swap) != 2:
        raise ConfigError("swap", "expected two 1-based positions")
    report = consistency_experiment(truth, worse, (swap[0] - 1, swap[1] - 1), _utility(cfg),
                                    _noise(cfg), cfg.N or 50_000, cfg.threads)
    diff = report.rows[-1]
    verdict = "PASS" if report.passed else "FAIL"
    return report, f"consistency: diff={diff.mean:.6g} se={diff.std_error:.3g} verdict={verdict}"


def _run_risk_curve(cfg):
    n_list = _field("n_list", _int_list, cfg.n_list or "64,512,4096")
    sigma = 1.0 if cfg.sigma is None else cfg.sigma
    base = cfg.N or 10_000
    large = cfg.N_large or 1_000
    reps = {n: (large if n >= LARGE_N else base) for n in n_list}
    report = risk_curve(cfg.truth or "linear-tv:1", n_list, sigma, reps, cfg.seed, cfg.threads)
    norms = [f"{r.report_id}={r.mean:.4g}" for r in report.rows if r.report_id.startswith("normalized")]
    verdict = "PASS" if report.passed else "FAIL"
    return report, f"risk-curve: {' '.join(norms)} verdict={verdict}"


def _run_nested(cfg):
    truth = _field("truth", lambda t: make_truth(t, cfg.n), cfg.truth)
    coarse = _field("coarse", CoarseRanking.parse, cfg.coarse)
    sigmas = _field("sigma_list", _float_list, cfg.sigma_list or "0.001,1000")
    report = nested_cone_experiment(truth, coarse, sigmas, cfg.N or 50_000, cfg.seed, cfg.threads)
    ratios = [f"{r.report_id}={r.mean:.6g}" for r in report.rows if r.report_id.startswith("ratio")]
    verdict = "PASS" if report.passed else "FAIL"
    return report, f"nested-cones: {' '.join(ratios)} verdict={verdict}"


def _run_pairwise(cfg):
    report = counterexample_pairwise(
        cfg.n or 3, 0.1 if cfg.epsilon is None else cfg.epsilon, 1.0 if cfg.sigma is None else cfg.sigma,
        _utility(cfg), cfg.N or 500_000, cfg.seed, cfg.threads,
    )
    diff = report.row("diff[S2 - S1]")
    verdict = "REPRODUCED" if report.passed else "NOT-REPRODUCED"
    return report, f"counterexample-pairwise: diff={diff.mean:.6g} se={diff.std_error:.3g} verdict={verdict}"


def _run_nonconvex(cfg):
    require = True if cfg.require_witness is None else cfg.require_witness
    report = counterexample_nonconvex(cfg.cap, cfg.r1, cfg.r2, cfg.n, require_witness=require)
    verdict = "REPRODUCED" if report.passed else "NOT-REPRODUCED"
    t, s = report.notes["truthful"], report.notes["swapped"]
    return report, f"truthful={format(t, '.12g')} swapped={format(s, '.12g')} verdict={verdict}"


def _run_owner_partition(cfg):
    matrix = OwnershipMatrix.read_csv(cfg.ownership)
    groups = owner_partition(matrix, cfg.seed)
    report = ExperimentReport("owner-partition", {"ownership": cfg.ownership, "seed": cfg.seed})
    for k, (owner, items) in enumerate(groups, start=1):
        report.add(f"group[{k}:{owner}]", len(items), 0.0, 1)
    report.notes["groups"] = {owner: [i + 1 for i in items] for owner, items in groups}
    report.notes["singletons"] = list(groups.singletons)
    text = " ".join(f"{owner}:{','.join(str(i + 1) for i in items)}" for owner, items in groups)
    if groups.singletons:
        text += " singletons=" + ",".join(groups.singletons)
    return report, text


def _run_line(cfg):
    truth = _field("truth", lambda t: make_truth(t, cfg.n), cfg.truth)
    dirs = [] if cfg.directions is None else [
        _field("directions", _vector, d) for d in cfg.directions.split(";")
    ]
    report = line_mechanism_experiment(truth, dirs, _noise(cfg), cfg.N or 100_000, cfg.threads)
    return report, _scan_line(report)


RUNNERS = {
    "project": _run_project,
    "truthfulness": _run_truthfulness,
    "coarse-truthfulness": _run_truthfulness,
    "consistency": _run_consistency,
    "risk-curve": _run_risk_curve,
    "nested-cones": _run_nested,
    "counterexample-pairwise": _run_pairwise,
    "counterexample-nonconvex": _run_nonconvex,
    "owner-partition": _run_owner_partition,
    "line-mechanism": _run_line,
}


def run(config: ExperimentConfig, stdout=None, stderr=None) -> int:
    """Run a validated config, write ``<out>.csv`` / ``<out>.summary.json`` if requested."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        config = config.validate()
        report, line = RUNNERS[config.kind](config)
    except SimulationError as exc:
        print(f"error: {config.kind}: runtime failure at draw {exc.draw}: {exc}", file=stderr)
        return EXIT_RUNTIME
    except ConfigError as exc:
        print(f"error: invalid field {exc.field}: {exc}", file=stderr)
        return EXIT_CONFIG
    except (IsomechError, OSError) as exc:
        print(f"error: {config.kind}: {exc}", file=stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {config.kind}: runtime failure: {exc!r}", file=stderr)
        return EXIT_RUNTIME
    report.config = {"cli": config.to_text(), **report.config}
    if config.out:
        try:
            report.write(config.out)
        except OSError as exc:
            print(f"error: {config.kind}: cannot write output: {exc}", file=stderr)
            return EXIT_RUNTIME
    print(line, file=stdout)
    if report.wall_clock > 0:
        print(f"{config.kind}: {report.wall_clock:.2f}s", file=stderr)
    return EXIT_PASS if report.passed else EXIT_FAIL


# -- argument parsing ------------------------------------------------------------


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--out", help="output prefix; writes PREFIX.csv and PREFIX.summary.json")
    g.add_argument("--config", help="flat key = value config file; flags override it")
    g.add_argument("--threads", type=int, help="worker threads for Monte Carlo blocks")
    return p


def _add(sub, name: str, help_text: str, *args: tuple[str, dict]):
    p = sub.add_parser(name, help=help_text, parents=[_global_flags()])
    for flag, kwargs in args:
        p.add_argument(flag, **kwargs)
    return p


def _opt(dest: str, type_=str, help_text: str = "") -> dict:
    return {"dest": dest, "type": type_, "help": help_text, "default": None}


TRUTH = ("--R", _opt("truth", help_text="ground truth: '3,2,1', 'linear-tv:V' or 'constant:c'"))
N_ITEMS = ("--n", _opt("n", int, "number of items"))
NOISE = ("--noise", _opt("noise", help_text="gaussian:S | uniform:A:B | laplace:B | latent:S:BASE"))
SIGMA = ("--sigma", _opt("sigma", float, "gaussian noise level (when --noise is absent)"))
UTILITY = ("--utility", _opt("utility", help_text="utility spec, e.g. square, exponential, max, schur:2:square"))
REPS = ("--N", _opt("N", int, "Monte Carlo replications"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isomech", description="Run Isotonic Mechanism projections and verification experiments."
    )
    sub = parser.add_subparsers(dest="kind", required=True, metavar="command")
    _add(sub, "project", "project a grade vector onto a ranking's isotonic cone",
         ("--input", _opt("input", help_text="grades, e.g. '1,3,2'")),
         ("--ranking", _opt("ranking", help_text="'identity' or 1-based order, e.g. '3,1,2'")),
         ("--coarse", _opt("coarse", help_text="coarse ranking, e.g. '1,3|2,4'")),
         ("--bregman", _opt("bregman", help_text="Bregman generator: squared or kl")))
    _add(sub, "truthfulness", "scan rankings for the owner's best report",
         TRUTH, N_ITEMS, NOISE, SIGMA, UTILITY, REPS,
         ("--partitions", _opt("partitions", help_text="';'-separated: full, coarse:2,2")),
         ("--strict-against", _opt("strict_against", help_text="rankings the truth must beat by 3 SE")))
    _add(sub, "coarse-truthfulness", "scan coarse rankings of given block sizes",
         TRUTH, N_ITEMS, NOISE, SIGMA, UTILITY, REPS,
         ("--sizes", _opt("sizes", help_text="block sizes, e.g. '2,2'")))
    _add(sub, "consistency", "compare a ranking with its upward swap",
         TRUTH, N_ITEMS, NOISE, SIGMA, UTILITY, REPS,
         ("--ranking", _opt("ranking", help_text="the less consistent ranking (1-based)")),
         ("--swap", _opt("swap", help_text="two 1-based positions to swap")))
    _add(sub, "risk-curve", "risk of the truthful mechanism as n grows",
         ("--truth", _opt("truth", help_text="linear-tv:V or constant:c (default linear-tv:1)")),
         SIGMA, REPS,
         ("--N-large", _opt("N_large", int, f"replications for n >= {LARGE_N}")),
         ("--n-list", _opt("n_list", help_text="e.g. '64,512,4096'")))
    _add(sub, "nested-cones", "risk ratio of the full cone to a coarse cone",
         TRUTH, N_ITEMS, REPS,
         ("--coarse", _opt("coarse", help_text="coarse ranking containing R, e.g. '1,2|3,4'")),
         ("--sigma-list", _opt("sigma_list", help_text="noise levels, e.g. '0.001,1000'")))
    _add(sub, "counterexample-pairwise", "cone vs complement partition is not truthful",
         N_ITEMS, SIGMA, UTILITY, REPS,
         ("--epsilon", _opt("epsilon", float, "spacing of the ground truth")))
    _add(sub, "counterexample-nonconvex", "noiseless counterexample for a capped utility",
         N_ITEMS,
         ("--cap", _opt("cap", float, "cap c of U(x) = min(x, c); 'inf' allowed")),
         ("--r1", _opt("r1", float, "top true grade")),
         ("--r2", _opt("r2", float, "second true grade")),
         ("--no-witness-check", {"dest": "require_witness", "action": "store_const", "const": False,
                                 "default": None, "help": "allow inputs that violate the witness inequality"}))
    _add(sub, "owner-partition", "greedy partition of items among owners",
         ("--ownership", _opt("ownership", help_text="CSV: owner ids header, one 0/1 row per item")))
    _add(sub, "line-mechanism", "squared-norm utility under line reports",
         TRUTH, N_ITEMS, NOISE, SIGMA, REPS,
         ("--u", _opt("directions", help_text="';'-separated unit directions, e.g. '1,0'")))
    return parser


def config_from_args(argv: Sequence[str] | None = None) -> ExperimentConfig:
    args = vars(build_parser().parse_args(argv))
    kind = args.pop("kind")
    config_path = args.pop("config")
    if config_path is not None:
        try:
            base = ExperimentConfig.from_text(Path(config_path).read_text())
        except OSError as exc:
            raise ConfigError("config", str(exc)) from None
        if base.kind != kind:
            raise ConfigError("kind", f"config file is for {base.kind!r}, not {kind!r}")
    else:
        base = ExperimentConfig(kind=kind)
    return base.merged(args).validate()


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = config_from_args(argv)
    except ConfigError as exc:
        print(f"error: invalid field {exc.field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
