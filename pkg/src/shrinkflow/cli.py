"""Batch driver: ``python3 -m shrinkflow {spectrum,evolve,audit,sweep}``.

Exit codes: 0 ok, 1 usage or configuration error, 2 an audited implication
failed, 3 numerical failure.  All outputs are written atomically and are
byte-identical for identical configuration and seed.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import doubling, flow, linear
from .errors import (
    DegenerateGraphError,
    DimensionError,
    ShrinkflowError,
    SpectralRangeError,
    StiffnessError,
)
from .geometry import RadialGraph, Shrinker, make_grid
from .report import jsonable
from .spectral import build_spectrum

EXIT_OK, EXIT_USAGE, EXIT_COUNTEREXAMPLE, EXIT_NUMERICAL = 0, 1, 2, 3
SCHEMA_VERSION = 1
AUDITS = ("monotonicity", "lemma25", "prop31", "theorem11", "corollary12",
          "three-annulus", "prop24", "duhamel")
FORMATS = ("csv", "json")

DEFAULTS = {
    "shrinker": {"n": 1},
    "spectrum": {"cutoff": None},
    "flow": {"grid_size": None, "dtau": 1e-3, "tau_end": 3.0, "sample_dtau": 0.01,
             "c0": None, "epsilon": 0.1},
    "analysis": {"L0": 0.25, "C0": 2.0, "A": None, "gamma0": 0.5, "trials": 1000,
                 "seed": 0, "K": 8},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}


class ConfigError(ShrinkflowError, ValueError):
    pass


@dataclass
class ExperimentConfig:
    shrinker: dict = field(default_factory=dict)
    spectrum: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        merged = copy.deepcopy(DEFAULTS)
        for section, values in data.items():
            if section not in merged:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be a mapping")
            for key, v in values.items():
                if key not in merged[section]:
                    raise ConfigError(f"unknown config field {section}.{key}")
                merged[section][key] = v
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        """Everything that affects computed numbers (the output location does not)."""
        return {"shrinker": self.shrinker, "spectrum": self.spectrum, "flow": self.flow,
                "analysis": self.analysis}

    def validate(self) -> None:
        def positive(section, key, allow_none=False):
            v = getattr(self, section)[key]
            if v is None and allow_none:
                return
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ConfigError(f"{section}.{key} must be a positive number, got {v!r}")

        n = self.shrinker["n"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"shrinker.n must be a positive integer, got {n!r}")
        cutoff = self.spectrum["cutoff"]
        if cutoff is not None and (isinstance(cutoff, bool) or not isinstance(cutoff, int) or cutoff < 4):
            raise ConfigError(f"spectrum.cutoff must be an integer >= 4, got {cutoff!r}")
        for key in ("dtau", "tau_end", "sample_dtau", "epsilon"):
            positive("flow", key)
        positive("flow", "c0", allow_none=True)
        gs = self.flow["grid_size"]
        if gs is not None and (isinstance(gs, bool) or not isinstance(gs, int) or gs < 8):
            raise ConfigError(f"flow.grid_size must be an integer >= 8, got {gs!r}")
        if not 0 < self.analysis["L0"] < 0.5:
            raise ConfigError(f"analysis.L0 must lie in (0, 1/2), got {self.analysis['L0']!r}")
        positive("analysis", "C0")
        if self.analysis["C0"] < 1:
            raise ConfigError("analysis.C0 must be at least 1")
        positive("analysis", "gamma0")
        positive("analysis", "A", allow_none=True)
        for key in ("trials", "K"):
            v = self.analysis[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"analysis.{key} must be a positive integer, got {v!r}")
        seed = self.analysis["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"analysis.seed must be a non-negative integer, got {seed!r}")
        fmts = self.output["formats"]
        if isinstance(fmts, str):
            fmts = [f.strip() for f in fmts.split(",") if f.strip()]
        if not fmts or any(f not in FORMATS for f in fmts):
            raise ConfigError(f"output.formats must be a subset of {FORMATS}, got {fmts!r}")
        self.output["formats"] = sorted(set(fmts))


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str) -> dict:
    """JSON, or ``section.key = value`` lines with ``#`` comments."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        return data
    data: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'section.key = value'")
        _set(data, *line.split("=", 1), where=f"config line {lineno}")
    return data


def _set(data: dict, dotted: str, value: str, where: str) -> None:
    parts = dotted.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"{where}: key {dotted.strip()!r} must look like section.key")
    data.setdefault(parts[0], {})[parts[1]] = _coerce(value.strip())


# ---------------------------------------------------------------------------
# output


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _dump_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


class Output:
    def __init__(self, cfg: ExperimentConfig):
        self.dir = Path(cfg.output["directory"])
        self.formats = cfg.output["formats"]
        self.written: list[str] = []

    def json(self, name: str, obj) -> None:
        if "json" in self.formats:
            doc = {"schema_version": SCHEMA_VERSION, **obj} if isinstance(obj, dict) else obj
            self._write(name, _dump_json(doc))

    def csv(self, name: str, rows) -> None:
        if "csv" in self.formats:
            self._write(name, _dump_csv(rows))

    def _write(self, name, text):
        _atomic_write(self.dir / name, text)
        self.written.append(str(self.dir / name))


# ---------------------------------------------------------------------------
# helpers


def _shrinker(cfg):
    return Shrinker.round(cfg.shrinker["n"])


def _grid(cfg, shrinker):
    gs = cfg.flow["grid_size"]
    if shrinker.n == 1:
        return make_grid(shrinker, size=gs)
    return make_grid(shrinker, lmax=gs)


def _spectrum(cfg, shrinker, grid=None):
    return build_spectrum(shrinker, cfg.spectrum["cutoff"], grid)


def _settings(cfg) -> flow.FlowSettings:
    return flow.FlowSettings(dtau=cfg.flow["dtau"], c0=cfg.flow["c0"])


_MODE = re.compile(r"^mode((?:\s+\w+=\S+)+)\s*$")


def initial_graph(spec: str, shrinker, grid) -> RadialGraph:
    """``zero``, ``mode k=2 amp=1e-3 [m=0] [parity=cos|sin]``, or a samples file.

    Mode recipes have sup norm ``amp``; a samples file is a radial-graph JSON
    document or one height per line.
    """
    spec = spec.strip()
    if spec == "zero":
        return RadialGraph.zero(shrinker, grid)
    match = _MODE.match(spec)
    if match:
        fields = dict(tok.split("=", 1) for tok in match.group(1).split())
        unknown = set(fields) - {"k", "l", "m", "amp", "parity"}
        if unknown:
            raise ConfigError(f"unknown mode field(s) {sorted(unknown)} in {spec!r}")
        try:
            k = int(fields.get("k", fields.get("l", "0")))
            m = int(fields.get("m", k if shrinker.n == 1 else 0))
            amp = float(fields.get("amp", "1e-3"))
        except ValueError as exc:
            raise ConfigError(f"malformed mode recipe {spec!r}: {exc}") from None
        parity = fields.get("parity", "cos")
        if parity not in ("cos", "sin") or k < 0 or not 0 <= m <= k or (shrinker.n == 1 and m != k):
            raise ConfigError(f"mode recipe {spec!r} does not name a harmonic")
        if shrinker.n == 1:
            col = np.cos(k * grid.theta) if parity == "cos" else np.sin(k * grid.theta)
        else:
            if k > grid.lmax:
                raise ConfigError(f"degree {k} exceeds grid degree {grid.lmax}")
            lat = np.repeat(np.arange(grid.n_lat), grid.n_lon)
            trig = np.cos(m * grid.phi) if parity == "cos" else np.sin(m * grid.phi)
            col = grid.P[m, k][lat] * trig
        peak = np.max(np.abs(col))
        if peak == 0:
            raise ConfigError(f"mode recipe {spec!r} vanishes identically")
        return RadialGraph(shrinker, grid, amp * col / peak)
    path = Path(spec.removeprefix("file ").strip())
    if not path.exists():
        raise ConfigError(f"initial data {spec!r} is neither a recipe nor an existing file")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        g = RadialGraph.from_dict(doc)
        if g.grid.describe() != grid.describe():
            raise DimensionError(f"{path}: grid {g.grid.describe()} does not match configured grid {grid.describe()}")
        return g
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            try:
                values.append(float(line))
            except ValueError:
                raise ConfigError(f"{path}: line {lineno}: cannot parse {line.strip()!r}") from None
    return RadialGraph(shrinker, grid, np.array(values))


def load_trajectory(path: str) -> flow.Trajectory:
    p = Path(path)
    if p.is_dir():
        p = p / "trajectory.csv"
    if not p.exists():
        raise ConfigError(f"trajectory file {p} not found")
    manifest = None
    mpath = p.with_name("manifest.json")
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{mpath}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return flow.Trajectory.from_csv(p.read_text(), manifest)


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg: ExperimentConfig, args) -> int:
    sp = _spectrum(cfg, _shrinker(cfg))
    out = Output(cfg)
    out.json("spectrum.json", sp.to_dict())
    out.csv("eigenvalues.csv", [("index", "eigenvalue")] +
            [(i, repr(float(mu))) for i, mu in enumerate(sp.eigenvalues)])
    return EXIT_OK


def _evolve(cfg, spec):
    shrinker = _shrinker(cfg)
    grid = _grid(cfg, shrinker)
    g0 = initial_graph(spec, shrinker, grid)
    traj = flow.run(g0, cfg.flow["tau_end"], cfg.flow["sample_dtau"], _settings(cfg))
    return g0, traj


def cmd_evolve(cfg: ExperimentConfig, args) -> int:
    g0, traj = _evolve(cfg, args.initial)
    out = Output(cfg)
    manifest = traj.manifest()
    manifest["initial"] = args.initial
    manifest["config"] = cfg.to_dict()
    manifest["flagged"] = None
    if not math.isfinite(traj.distances[0]):
        manifest["flagged"] = "initial data outside the small-graph regime; distance is infinite"
    elif "stopped" in traj.step_log:
        manifest["flagged"] = traj.step_log["stopped"]
    out.csv("trajectory.csv", traj.csv_rows())
    out.json("manifest.json", manifest)
    if manifest["flagged"]:
        print(f"warning: {manifest['flagged']}", file=sys.stderr)
    return EXIT_OK


def _choice(cfg, shrinker):
    sp = _spectrum(cfg, shrinker)
    choice = linear.choose_gap_L(sp, cfg.analysis["L0"], cfg.analysis["C0"])
    A = cfg.analysis["A"]
    if A is None:
        A = doubling.default_A(choice.B, cfg.analysis["gamma0"])
    return sp, choice, A


def _trajectory_audit(cfg, which, traj) -> tuple[dict, bool]:
    a = cfg.analysis
    if which == "monotonicity":
        rep = flow.monotonicity_audit(traj)
        return rep.to_dict(), rep.violated
    if which == "lemma25":
        rep = flow.semicontinuity_audit(traj, cfg.flow["epsilon"])
        return rep.to_dict(), rep.violated
    if which == "corollary12":
        return doubling.infinite_order_classifier(traj, a["K"]), False
    n = traj.settings.get("n", cfg.shrinker["n"])
    _, choice, A = _choice(cfg, Shrinker.round(int(n)))
    if which == "prop31":
        lo, hi = traj.span
        taus = traj.taus[traj.taus + 2 * choice.L0 <= hi + 1e-12]
        res = doubling.prop31_scan(traj, choice, A, taus, epsilon=cfg.flow["epsilon"])
        res.update({"choice": choice.to_dict(), "A": A})
        return res, res["violations"] > 0
    audit = doubling.theorem11_certificate(traj, a["L0"], A, a["C0"], B=choice.B, choice=choice,
                                           epsilon=cfg.flow["epsilon"])
    return audit.to_dict(), audit.verdict == "violated"


def _battery_audit(cfg, which) -> tuple[dict, bool]:
    a = cfg.analysis
    sp = _spectrum(cfg, _shrinker(cfg))
    if which == "three-annulus":
        res = {"log_convexity": linear.log_convexity_battery(sp, a["trials"], a["seed"]),
               "dichotomy": linear.dichotomy_battery(sp, a["trials"], a["seed"]),
               "three_annulus": linear.three_annulus_battery(sp, a["trials"], a["seed"])}
        return res, any(v["violations"] for v in res.values())
    if which == "prop24":
        res = linear.prop24_battery(sp, [a["C0"]], [a["L0"]], a["trials"], a["seed"])
        return res, res["violations"] > 0
    res = linear.duhamel_battery(sp, a["trials"], a["seed"], dt=cfg.flow["dtau"])
    return res, False


def cmd_audit(cfg: ExperimentConfig, args) -> int:
    which = args.which
    if which in ("three-annulus", "prop24", "duhamel"):
        result, bad = _battery_audit(cfg, which)
    else:
        if not args.trajectory:
            raise ConfigError(f"audit {which} needs --trajectory")
        result, bad = _trajectory_audit(cfg, which, load_trajectory(args.trajectory))
    doc = {"audit": which, "counterexample": bad, "config": cfg.to_dict(), "result": result}
    Output(cfg).json(f"audit_{which}.json", doc)
    return EXIT_COUNTEREXAMPLE if bad else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    """Decay order at ``tau = 1`` and doubling constant across mode amplitudes."""
    try:
        amps = [float(v) for v in args.amplitudes.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--amplitudes must be comma-separated numbers, got {args.amplitudes!r}") from None
    if not amps:
        raise ConfigError("--amplitudes is empty")
    rows = [("amplitude", "decay_order", "doubling_constant", "max_excess_increase")]
    records = []
    for amp in amps:
        _, traj = _evolve(cfg, f"mode k={args.k} amp={amp!r}")
        try:
            order = flow.decay_order(traj, 1.0)
        except (ShrinkflowError, ValueError):
            order = math.nan
        try:
            dc = doubling.doubling_constant(traj)
        except (ShrinkflowError, ValueError):
            dc = math.nan
        inc = float(np.max(np.diff(traj.excess))) if len(traj) > 1 else math.nan
        rows.append(tuple(flow._fmt(v) for v in (amp, order, dc, inc)))
        records.append({"amplitude": amp, "decay_order": order, "doubling_constant": dc,
                        "max_excess_increase": inc})
    out = Output(cfg)
    out.csv("sweep.csv", rows)
    out.json("sweep.json", {"k": args.k, "config": cfg.to_dict(), "runs": records})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON or 'section.key = value' config file")
    common.add_argument("--seed", type=int, help="seed for randomized batteries")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--format", metavar="FMTS", help="comma-separated subset of csv,json")
    common.add_argument("--n", type=int, help="shrinker dimension (1 or 2)")
    common.add_argument("--cutoff", type=int, help="number of eigenvalue levels retained")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config field (repeatable)")
    p = _Parser(prog="shrinkflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("spectrum", parents=[common], help="eigenvalues of -L")
    ev = sub.add_parser("evolve", parents=[common], help="run the rescaled flow")
    ev.add_argument("initial", help="'zero', 'mode k=2 amp=1e-3', or a samples file")
    au = sub.add_parser("audit", parents=[common], help="check an implication on data")
    au.add_argument("which", choices=AUDITS)
    au.add_argument("--trajectory", metavar="PATH", help="trajectory.csv written by evolve (or its directory)")
    sw = sub.add_parser("sweep", parents=[common], help="evolve over several amplitudes")
    sw.add_argument("--amplitudes", default="1e-3,5e-4", help="comma-separated amplitudes")
    sw.add_argument("--k", type=int, default=2, help="mode degree")
    return p


def load_config(args) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        data = parse_config_text(text)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        _set(data, *item.split("=", 1), where="--set")
    for flag, section, key in (("seed", "analysis", "seed"), ("out", "output", "directory"),
                               ("format", "output", "formats"), ("n", "shrinker", "n"),
                               ("cutoff", "spectrum", "cutoff")):
        v = getattr(args, flag)
        if v is not None:
            data.setdefault(section, {})[key] = v
    return ExperimentConfig.from_mapping(data)


COMMANDS = {"spectrum": cmd_spectrum, "evolve": cmd_evolve, "audit": cmd_audit, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (StiffnessError, DegenerateGraphError, SpectralRangeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ShrinkflowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
