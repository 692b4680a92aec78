"""Command-line interface: ``build``, ``verify`` and ``export``.

Artifacts
---------
``build`` writes into the output directory

``stages.json``
    ``{"config": RunConfig, "stages": [StageRecord, ...]}``; floats are
    hexadecimal strings, keys are sorted, no timestamps.
``reports.json``
    Verification reports per stage, the Cauchy table and the wandering
    evidence of the final stage.
``orbit.csv``
    ``j, k, left_hex, right_hex, length_hex, left, right, length, bound``
    for ``f_N^j(J_0)``, ``0 <= j < r_N``; ``k`` is the staircase regime.
``samples.csv``
    ``stage, j, x_hex, F_hex, dF_hex, x, F, dF`` on ``x = j / resolution``.

Exit status: 0 success, 1 certification failure, 2 usage, configuration
or parse error, 3 numeric failure.

Configuration precedence is defaults, then ``--config`` (JSON with the
:class:`RunConfig` fields), then ``DENJOY_<FIELD>`` environment variables,
then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .builder import SEED_RULES, BuildError, BuildParams, StageRecord, run
from .lift import RIGHT, GridSpec
from .rotation import BudgetExceeded, ContinuedFraction, Undecidable
from .verify import (
    CONDITION_NAMES,
    VerifyParams,
    cauchy_table,
    check_conditions,
    orbit_table,
    wandering_evidence,
)

EXIT_OK = 0
EXIT_CERT = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

STAGES_FILE = "stages.json"
REPORTS_FILE = "reports.json"
EXPORTS = ("samples", "orbit", "cauchy")
DEFAULT_RESOLUTION = 1024
ENV_PREFIX = "DENJOY_"

log = logging.getLogger("denjoy")


class UsageError(ValueError):
    """Invalid configuration, arguments or artifacts."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a build.

    Parameters
    ----------
    rho : str
        Target continued fraction, a name (``golden``) or ``a1,a2;p1,...``.
    stages : int
        Number of advances ``N`` (at least 1).
    depth : int, optional
        Convergent depth ``K``; ``None`` means ``N + 2``.
    precision : int
        Bits for the verifier's orbit tables (53 is binary64).
    grid : int
        Initial builder grid size; verification uses four times as many.
    margin : float
        Relative margin of compact containment.
    max_iter : int
        Iteration cap of first-return searches.
    seed_rule : str
        Key of :data:`denjoy.builder.SEED_RULES`.
    max_backtracks : int
        Backtracking budget of the search.
    time_limit : float
        Seconds after which the search stops backtracking.
    out : str
        Output directory.
    """

    rho: str = "golden"
    stages: int = 4
    depth: Optional[int] = None
    precision: int = 53
    grid: int = GridSpec().points
    margin: float = 1e-3
    max_iter: int = 10 ** 6
    seed_rule: str = "upper"
    max_backtracks: int = 200
    time_limit: float = 600.0
    out: str = "run"

    def __post_init__(self):
        for name in ("stages", "precision", "grid", "max_iter", "max_backtracks"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.depth is not None and self.depth < 1:
            raise UsageError("depth must be >= 1")
        if not 0.0 < self.margin < 0.1:
            raise UsageError("margin must lie in (0, 0.1)")
        if self.time_limit <= 0:
            raise UsageError("time_limit must be positive")
        if self.seed_rule not in SEED_RULES:
            raise UsageError(f"seed_rule must be one of {sorted(SEED_RULES)}")
        try:
            target = ContinuedFraction.parse(self.rho)
        except ValueError as exc:
            raise UsageError(f"cannot parse rho {self.rho!r}: {exc}") from None
        if not target.is_irrational:
            raise UsageError("target must be irrational (give a periodic tail, e.g. 1,2;1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        vals = {}
        for f in fields(cls):
            if f.name in d:
                vals[f.name] = _coerce(f.name, d[f.name])
        return cls(**vals)

    def build_params(self) -> BuildParams:
        seed, space = SEED_RULES[self.seed_rule]
        return BuildParams(target=ContinuedFraction.parse(self.rho), stages=self.stages,
                           depth=self.depth, grid=GridSpec(points=self.grid),
                           precision=self.precision, margin=self.margin,
                           max_iter=self.max_iter, seed=seed, seed_space=space,
                           max_backtracks=self.max_backtracks, time_limit=self.time_limit)

    def verify_params(self) -> VerifyParams:
        return VerifyParams.from_build(self.build_params())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    """Convert a config, environment or flag value to the field's type."""
    kind = _TYPES[name]
    if value is None:
        if name == "depth":
            return None
        raise UsageError(f"{name} may not be null")
    try:
        if "int" in kind:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            if isinstance(value, str) and name == "depth" and value.lower() in ("", "none"):
                return None
            return int(value)
        if "float" in kind:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value for {name}: {value!r}") from None


def resolve_config(flags: dict, config_path: Optional[str] = None,
                   environ: Optional[dict] = None) -> RunConfig:
    """Merge defaults, config file, environment and flags (later wins)."""
    merged: dict = {}
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        merged.update(loaded)
    env = os.environ if environ is None else environ
    for name in _TYPES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            merged[name] = _coerce(name, env[key])
    merged.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig.from_dict(merged)


# -- serialization ----------------------------------------------------------

def dump_json(obj) -> str:
    """Deterministic JSON text."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def stages_document(config: RunConfig, stages: Sequence[StageRecord]) -> dict:
    """The ``stages.json`` content; the output directory is left out so that
    the same configuration gives the same bytes wherever it is written."""
    cfg = config.to_dict()
    del cfg["out"]
    return {"config": cfg, "stages": [s.to_dict() for s in stages]}


def load_run(path) -> tuple:
    """Read ``(RunConfig, stages)`` from a run directory or a ``stages.json``."""
    p = Path(path)
    if p.is_dir():
        p = p / STAGES_FILE
    try:
        doc = json.loads(p.read_text())
        config = RunConfig.from_dict(doc["config"])
        stages = [StageRecord.from_dict(d) for d in doc["stages"]]
    except UsageError:
        raise
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot parse {p}: {exc}") from None
    if not stages:
        raise UsageError(f"{p} holds no stages")
    return config, stages


def _hex(v: float) -> str:
    return float(v).hex()


def _regime(j: int, returns: Sequence[int]) -> int:
    """``k`` with ``r_{k-1} <= j < r_k``."""
    for k in range(1, len(returns)):
        if returns[k - 1] <= j < returns[k]:
            return k
    return 0


def orbit_rows(final: StageRecord, bits: int = 53) -> list:
    r = final.return_times[-1]
    table = orbit_table(final.lift, final.seed, r - 1, bits)
    rows = []
    for j, (lo, hi) in enumerate(table):
        k = _regime(j, final.return_times)
        length = hi - lo
        bound = 2.0 ** -(k - 1) if k >= 1 else 1.0
        rows.append([j, k, _hex(lo), _hex(hi), _hex(length), repr(float(lo)),
                     repr(float(hi)), repr(float(length)), repr(bound)])
    return rows


def sample_rows(stages: Sequence[StageRecord], resolution: int) -> list:
    x = np.arange(resolution) / resolution
    rows = []
    for s in stages:
        F = s.lift(x)
        dF = s.lift.derivatives(x, 1, RIGHT)
        for j in range(resolution):
            rows.append([s.index, j, _hex(x[j]), _hex(F[j]), _hex(dF[j]),
                         repr(float(x[j])), repr(float(F[j])), repr(float(dF[j]))])
    return rows


def cauchy_rows(table: Sequence[dict]) -> list:
    return [[r["p"], r["q"], r["n"], _hex(r["norm"]), _hex(r["bound"]), repr(float(r["norm"])),
             repr(float(r["bound"])), int(r["passed"])] for r in table]


HEADERS = {
    "orbit": ["j", "k", "left_hex", "right_hex", "length_hex", "left", "right", "length",
              "bound"],
    "samples": ["stage", "j", "x_hex", "F_hex", "dF_hex", "x", "F", "dF"],
    "cauchy": ["p", "q", "n", "norm_hex", "bound_hex", "norm", "bound", "passed"],
}


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def reports_document(reports, evidence) -> dict:
    return {"passed": all(r.passed for r in reports) and evidence.passed,
            "stages": [r.to_dict() for r in reports],
            "evidence": evidence.to_dict()}


def _strip_timing(doc: dict) -> dict:
    for st in doc["stages"]:
        st.pop("wall_time", None)
    return doc


# -- commands ---------------------------------------------------------------

def format_table(reports) -> str:
    lines = ["stage  cond  pass  measured      bound         name"]
    for rep in reports:
        for c in rep.conditions:
            lines.append(f"{rep.stage:>5}  {c.condition:>4}  {'yes' if c.passed else 'NO':>4}  "
                         f"{c.measured:<12.5g}  {c.bound:<12.5g}  {CONDITION_NAMES[c.condition]}")
    return "\n".join(lines)


def _first_failure(reports) -> Optional[tuple]:
    for rep in reports:
        for c in rep.conditions:
            if not c.passed:
                return rep.stage, c.condition
    return None


def _failure_message(reports) -> str:
    stage, cond = _first_failure(reports)
    return f"stage {stage} fails condition ({cond}) {CONDITION_NAMES[cond]}"


def cmd_build(config: RunConfig, out=sys.stdout, resolution: int = DEFAULT_RESOLUTION) -> int:
    """Build, verify and write all artifacts into ``config.out``."""
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    params = config.build_params()
    stages = run(params, log=log.info)
    (outdir / STAGES_FILE).write_text(dump_json(stages_document(config, stages)))
    reports = check_conditions(stages, config.verify_params())
    final = stages[-1]
    evidence = wandering_evidence(final, final.return_times[-1])
    (outdir / REPORTS_FILE).write_text(dump_json(_strip_timing(reports_document(reports,
                                                                                evidence))))
    write_csv(outdir / "orbit.csv", HEADERS["orbit"], orbit_rows(final, config.precision))
    write_csv(outdir / "samples.csv", HEADERS["samples"], sample_rows(stages, resolution))
    print(format_table(reports), file=out)
    print(f"return times {list(final.return_times)}, |I_N| = {final.flat.length:.6g}", file=out)
    if _first_failure(reports) is not None:
        print(_failure_message(reports), file=out)
        return EXIT_CERT
    if not evidence.passed:
        print("wandering evidence fails (orbit overlap or staircase)", file=out)
        return EXIT_CERT
    print(f"certified {len(stages)} stages in {outdir}", file=out)
    return EXIT_OK


def cmd_verify(path, out=sys.stdout) -> int:
    """Re-certify a run from disk; exit 0 iff every condition passes."""
    config, stages = load_run(path)
    reports = check_conditions(stages, config.verify_params(), cauchy=False)
    print(format_table(reports), file=out)
    if _first_failure(reports) is not None:
        print(_failure_message(reports), file=out)
        return EXIT_CERT
    print("all conditions pass", file=out)
    return EXIT_OK


def cmd_export(path, what: str, resolution: int = DEFAULT_RESOLUTION,
               dest: Optional[str] = None, out=sys.stdout) -> int:
    """Write ``<what>.csv`` next to ``stages.json`` (or to ``dest``)."""
    if what not in EXPORTS:
        raise UsageError(f"unknown export {what!r}; choose from {EXPORTS}")
    if resolution < 1:
        raise UsageError("resolution must be >= 1")
    config, stages = load_run(path)
    base = Path(path) if Path(path).is_dir() else Path(path).parent
    target = Path(dest) if dest else base / f"{what}.csv"
    if what == "samples":
        rows = sample_rows(stages, resolution)
    elif what == "orbit":
        rows = orbit_rows(stages[-1], config.precision)
    else:
        vp = config.verify_params()
        rows = cauchy_rows(cauchy_table(stages, vp.cauchy_orders, vp.grid))
    write_csv(target, HEADERS[what], rows)
    print(f"wrote {len(rows)} rows to {target}", file=out)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", help="target: name (golden, sqrt2m1, sqrt3m1) or a1,a2;p1,...")
    p.add_argument("--stages", type=int, help="number of advances N (>= 1)")
    p.add_argument("--depth", type=int, help="convergent depth K (default N + 2)")
    p.add_argument("--precision", type=int, help="bits for verifier orbits (default 53)")
    p.add_argument("--grid", type=int, help="initial builder grid size")
    p.add_argument("--margin", type=float, help="relative containment margin")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="first-return iteration cap")
    p.add_argument("--seed-rule", dest="seed_rule", choices=sorted(SEED_RULES),
                   help="choice of the seed interval J_0")
    p.add_argument("--max-backtracks", dest="max_backtracks", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION,
                   help="samples per stage in samples.csv")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="denjoy", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    quiet = argparse.ArgumentParser(add_help=False)
    quiet.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                       help="log progress (repeat for debug output)")
    b = sub.add_parser("build", help="build, certify and write a run", parents=[quiet])
    _add_run_flags(b)
    v = sub.add_parser("verify", help="re-certify a run from disk", parents=[quiet])
    v.add_argument("path", help="run directory or stages.json")
    e = sub.add_parser("export", help="write CSV tables from a run", parents=[quiet])
    e.add_argument("path", help="run directory or stages.json")
    e.add_argument("what", help="samples, orbit or cauchy")
    e.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    e.add_argument("--out", dest="dest", help="CSV path (default <run>/<what>.csv)")
    return parser


_RUN_FLAGS = [f.name for f in fields(RunConfig)]


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "build":
            flags = {k: getattr(args, k) for k in _RUN_FLAGS}
            return cmd_build(resolve_config(flags, args.config), resolution=args.resolution)
        if args.command == "verify":
            return cmd_verify(args.path)
        return cmd_export(args.path, args.what, args.resolution, args.dest)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BuildError, Undecidable, BudgetExceeded) as exc:
        stage = getattr(exc, "stage", None)
        where = f" at stage {stage}" if stage is not None and stage >= 0 else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
