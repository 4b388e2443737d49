"""Command-line entry point: ``fourthnls <command> <config> [--output DIR] [--seed N]``.

Configs are INI files.  Every command reads a ``[grid]`` section (except
``osc-integral`` and ``kernel-l1``) and its own section; see the bundled
files under ``fourthnls/configs``.  A config argument that is not an
existing path is looked up among the bundled configs by name.

Exit status: 0 when every asserted band passes, 1 when one fails, 2 for
configuration errors, 3 for numerical failures (a ``diagnostic.json`` is
written in that case).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy
import sklearn

from . import __version__
from .lab import (
    LabReport,
    QuadratureBudgetError,
    RandomEnsembleSpec,
    maximal_l1_constant,
    verify_commutator_identities,
    verify_homogeneous_smoothing,
    verify_inhomogeneous_smoothing,
    verify_interpolated_smoothing,
    verify_kernel_growth,
    verify_maximal_l2,
    verify_oscillatory_integral,
    Band,
)
from .nonlinearity import NonlinearityError
from .norms import NormSpec, compute_norm, linear_trace
from .serialization import load_field, save_trace
from .solver import SolverConfig, SolverError, solve_picard, solve_splitstep
from .spectral import Field, Grid, NonFiniteSymbolError, SupportGuardError, gaussian

__all__ = ["main", "run", "COMMANDS", "ConfigError"]

logger = logging.getLogger("fourthnls")

COMMANDS = ("solve", "identities", "smoothing", "interp-smoothing", "inhom-smoothing", "maximal",
            "osc-integral", "kernel-l1")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class _Section:
    """Typed accessors over one config section, tracking unknown keys."""

    def __init__(self, parser: configparser.ConfigParser, name: str, required: bool = True):
        if not parser.has_section(name):
            if required:
                raise ConfigError(f"missing section [{name}]")
            self._items = {}
        else:
            self._items = dict(parser.items(name))
        self.name = name
        self._used: set[str] = set()

    def __contains__(self, key):
        return key in self._items

    def _raw(self, key, default):
        self._used.add(key)
        if key not in self._items:
            if default is _REQUIRED:
                raise ConfigError(f"[{self.name}] missing key '{key}'")
            return None if default is None else str(default)
        return self._items[key].strip()

    def get(self, key, default=None) -> Optional[str]:
        return self._raw(key, _REQUIRED if default is _REQUIRED else default)

    def _cast(self, key, default, cast, label):
        raw = self._raw(key, default)
        if raw is None:
            return None
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] '{key}' must be {label}, got {raw!r}") from None

    def float(self, key, default=None):
        return self._cast(key, default, float, "a number")

    def int(self, key, default=None):
        return self._cast(key, default, int, "an integer")

    def bool(self, key, default=None):
        def cast(v):
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)

        return self._cast(key, default, cast, "a boolean")

    def floats(self, key, default=None):
        return self._cast(key, default, lambda v: [float(x) for x in v.replace(",", " ").split()], "a number list")

    def ints(self, key, default=None):
        return self._cast(key, default, lambda v: [int(x) for x in v.replace(",", " ").split()], "an integer list")

    def check_unknown(self):
        extra = sorted(set(self._items) - self._used)
        if extra:
            raise ConfigError(f"[{self.name}] unknown keys: {', '.join(extra)}")


_REQUIRED = object()


def _grid(cfg) -> Grid:
    sec = _Section(cfg, "grid")
    dim = sec.int("dim", 1)
    points = sec.ints("points", _REQUIRED)
    half = sec.floats("half_length", _REQUIRED)
    sec.check_unknown()
    if len(points) == 1:
        points = points * dim
    if len(half) == 1:
        half = half * dim
    try:
        return Grid(dim, tuple(points), tuple(half))
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None


def _override(configured, override):
    return configured if override is None else override


def _ensemble(cfg, seed: Optional[int]) -> RandomEnsembleSpec:
    sec = _Section(cfg, "ensemble")
    kw = dict(
        count=sec.int("count", 16),
        seed=_override(sec.int("seed", 0), seed),
        spectral_decay=sec.float("spectral_decay", 0.0),
        band_limit=sec.int("band_limit", _REQUIRED),
        envelope_width=sec.float("envelope_width", None),
        center=sec.float("center", 0.0),
        mean_zero=sec.bool("mean_zero", False),
        compensator_width=sec.float("compensator_width", None),
    )
    sec.check_unknown()
    try:
        return RandomEnsembleSpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"[ensemble] {exc}") from None


def _data(cfg, grid: Grid, base: Path) -> Field:
    sec = _Section(cfg, "data", required=False)
    kind = sec.get("kind", "gaussian")
    if kind == "gaussian":
        f = gaussian(grid, sec.float("width", 1.0), sec.float("center", 0.0), sec.float("amplitude", 1.0))
    elif kind == "file":
        path = Path(sec.get("path", _REQUIRED))
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"[data] file {path} does not exist")
        f, _ = load_field(path)
        if f.grid != grid:
            raise ConfigError("[data] field file grid does not match [grid]")
    else:
        raise ConfigError(f"[data] unknown kind {kind!r}; expected gaussian or file")
    sec.check_unknown()
    return f


@dataclass
class Outcome:
    reports: list[LabReport]
    artifacts: dict[str, Callable[[Path], None]]


def _cmd_solve(cfg, seed, base) -> Outcome:
    grid = _grid(cfg)
    u0 = _data(cfg, grid, base)
    sec = _Section(cfg, "solve")
    method = sec.get("method", "both")
    if method not in ("picard", "splitstep", "both"):
        raise ConfigError(f"[solve] method must be picard, splitstep or both, got {method!r}")
    agreement_tol = sec.float("agreement_tol", 1e-4)
    try:
        scfg = SolverConfig(
            eps=sec.int("eps", 0),
            P=sec.get("nonlinearity", _REQUIRED),
            T=sec.float("T", _REQUIRED),
            substeps=sec.int("substeps", 64),
            max_iter=sec.int("max_iter", 50),
            delta=sec.float("delta", 0.25),
            E=sec.float("E", None),
            contraction_target=sec.float("contraction_target", 0.5),
            s0=sec.float("s0", None),
            tol=sec.float("tol", 1e-9),
            cube_side=sec.float("cube_side", 1.0),
            max_halvings=sec.int("max_halvings", 20),
        )
    except NonlinearityError as exc:
        raise ConfigError(f"[solve] nonlinearity: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[solve] {exc}") from None
    sec.check_unknown()

    report = LabReport("solve")
    artifacts: dict[str, Callable[[Path], None]] = {}
    picard = splitstep = None
    if method in ("picard", "both"):
        picard = solve_picard(u0, scfg)
        rep = picard.report
        prev = None
        for i, (d, lam) in enumerate(zip(rep.differences, rep.lambda_components[1:])):
            ratio = (d / prev if prev else 0.0) if prev is not None else ""
            report.rows.append({
                "method": "picard", "iteration": i + 1, "difference": d, "ratio": ratio,
                "sup_sobolev": lam["sup_sobolev"], "smoothing": lam["smoothing"], "maximal_d2": lam["maximal_d2"],
            })
            prev = d
        last_ratio = rep.ratios[-1] if rep.ratios else 0.0
        report.checks.append(Band("contraction_ratio", last_ratio, upper=scfg.contraction_target))
        report.checks.append(Band("halvings", float(rep.halvings), upper=3.0))
        report.meta["picard"] = rep.to_json()
        artifacts["solution_picard.fnls"] = lambda p, tr=picard.trace: save_trace(p, tr, {"method": "picard"})
    T_final = picard.report.accepted_T if picard is not None else scfg.T
    if method in ("splitstep", "both"):
        splitstep = solve_splitstep(u0, scfg, T=T_final)
        artifacts["solution_splitstep.fnls"] = lambda p, tr=splitstep.trace: save_trace(p, tr, {"method": "splitstep"})
    if picard is not None and splitstep is not None:
        a, b = picard.final, splitstep.final
        rel = (a - b).norm() / max(a.norm(), np.finfo(float).tiny)
        report.checks.append(Band("picard_vs_splitstep", rel, upper=agreement_tol))
    if scfg.P.is_zero:
        ref = linear_trace(u0, np.linspace(0.0, T_final, scfg.substeps + 1), scfg.eps)
        for sol in (picard, splitstep):
            if sol is not None:
                dev = sol.trace.sup_l2_distance(ref) / max(u0.norm(), np.finfo(float).tiny)
                report.checks.append(Band(f"linear_reference_{sol.report.method}", dev, upper=1e-12))
    final = (picard or splitstep).final
    if grid.dim == 1:
        report.series["final_abs"] = np.column_stack([grid.axes[0], np.abs(final.samples)])
    norms = LabReport("norms")
    for label, f in (("initial", u0), ("final", final)):
        for spec in _report_norms(scfg.monitor_index(grid.dim)):
            try:
                value = compute_norm(f, spec)
            except SupportGuardError:
                continue
            norms.rows.append({"field": label, "norm_kind": spec.kind, "params": spec.params(), "value": value})
    report.meta.update({"accepted_T": T_final, "nonlinearity": scfg.P.canonical(), "eps": scfg.eps})
    return Outcome([report, norms], artifacts)


def _report_norms(s0: float) -> list[NormSpec]:
    return [NormSpec("sobolev_s", s=0.0), NormSpec("sobolev_s", s=s0), NormSpec("homogeneous_s", s=2.0),
            NormSpec("weighted_l_2_j", l=1, j=2)]


def _cmd_identities(cfg, seed, base) -> Outcome:
    grid = _grid(cfg)
    f = _data(cfg, grid, base)
    sec = _Section(cfg, "identities")
    ts = sec.floats("ts", "0 0.3 0.5 1 -1")
    eps_values = sec.ints("eps", "-1 0 1")
    kw = dict(first_tol=sec.float("first_tol", 1e-7), second_tol=sec.float("second_tol", 1e-6))
    sec.check_unknown()
    if any(abs(t) > 1 for t in ts):
        raise ConfigError("[identities] |t| must not exceed 1")
    return Outcome([verify_commutator_identities(f, ts, eps_values, **kw)], {})


def _cmd_smoothing(cfg, seed, base) -> Outcome:
    grid = _grid(cfg)
    ens = _ensemble(cfg, seed)
    sec = _Section(cfg, "smoothing")
    Rs = sec.floats("Rs", "1 2 4 8")
    T = sec.float("T", 1.0)
    eps = sec.int("eps", 0)
    per_unit = sec.int("per_unit", 2000)
    variants = sec.get("variants", "primary dual").replace(",", " ").split()
    sec.check_unknown()
    bad = set(variants) - {"primary", "dual"}
    if bad:
        raise ConfigError(f"[smoothing] unknown variants: {', '.join(sorted(bad))}")
    reports = [verify_homogeneous_smoothing(grid, ens, Rs, T, eps, dual=(v == "dual"), per_unit=per_unit)
               for v in variants]
    return Outcome(reports, {})


def _cmd_interp(cfg, seed, base) -> Outcome:
    grid = _grid(cfg)
    ens = _ensemble(cfg, seed)
    sec = _Section(cfg, "interp-smoothing")
    kw = dict(
        Rs=sec.floats("Rs", "1 2 4 8"),
        Ts=sec.floats("Ts", "0.25 0.5 1 2"),
        eps=sec.int("eps", 0),
        fixed_T=sec.float("fixed_T", 1.0),
        fixed_R=sec.float("fixed_R", 1.0),
        per_unit=sec.int("per_unit", 2000),
    )
    sec.check_unknown()
    return Outcome([verify_interpolated_smoothing(grid, ens, **kw)], {})


def _cmd_inhom(cfg, seed, base) -> Outcome:
    grid = _grid(cfg)
    ens = _ensemble(cfg, seed)
    sec = _Section(cfg, "inhom-smoothing")
    kw = dict(
        Ts=sec.floats("Ts", "0.125 0.25 0.5 1"),
        eps=sec.int("eps", 0),
        cube_side=sec.float("cube_side", 1.0),
        per_unit=sec.int("per_unit", 2000),
    )
    sec.check_unknown()
    return Outcome([verify_inhomogeneous_smoothing(grid, ens, **kw)], {})


def _cmd_maximal(cfg, seed, base) -> Outcome:
    grid = _grid(cfg)
    ens = _ensemble(cfg, seed)
    sec = _Section(cfg, "maximal")
    T = sec.float("T", 1.0)
    eps = sec.int("eps", 0)
    time_samples = sec.int("time_samples", 64)
    cube_side = sec.float("cube_side", 1.0)
    svals = sec.floats("svals", "0.5 1 2")
    asserted = sec.float("asserted_s", None)
    widths = sec.floats("l1_widths", None)
    width_range = sec.floats("l1_width_range", None)
    sec.check_unknown()
    if time_samples < 8:
        raise ConfigError("[maximal] time_samples must be >= 8")
    if width_range is not None:
        if widths is not None or len(width_range) != 3 or width_range[2] < 3:
            raise ConfigError("[maximal] l1_width_range is 'start stop count' (count >= 3) and excludes l1_widths")
        widths = list(np.linspace(width_range[0], width_range[1], int(width_range[2])))
    reports = [verify_maximal_l2(grid, ens, svals, T, eps, time_samples, cube_side, asserted)]
    if widths:
        reports.append(maximal_l1_constant(grid, widths, T, eps, time_samples, cube_side))
    return Outcome(reports, {})


def _cmd_osc(cfg, seed, base) -> Outcome:
    sec = _Section(cfg, "osc-integral")
    kw = dict(
        k=sec.int("k", 3),
        t=sec.float("t", 1.0),
        eps=sec.int("eps", 0),
        per_decade=sec.int("per_decade", 32),
    )
    sec.check_unknown()
    if kw["k"] < 1 or not 0 < kw["t"] <= 2:
        raise ConfigError("[osc-integral] need k >= 1 and 0 < t <= 2")
    return Outcome([verify_oscillatory_integral(**kw)], {})


def _cmd_kernel(cfg, seed, base) -> Outcome:
    sec = _Section(cfg, "kernel-l1")
    kw = dict(
        ks=sec.ints("ks", "1 2 3 4"),
        t=sec.float("t", 1.0),
        eps=sec.int("eps", 0),
        n=sec.int("n", 1),
    )
    sec.check_unknown()
    if kw["n"] not in (1, 2):
        raise ConfigError("[kernel-l1] n must be 1 or 2")
    return Outcome([verify_kernel_growth(**kw)], {})


_HANDLERS = {
    "solve": _cmd_solve,
    "identities": _cmd_identities,
    "smoothing": _cmd_smoothing,
    "interp-smoothing": _cmd_interp,
    "inhom-smoothing": _cmd_inhom,
    "maximal": _cmd_maximal,
    "osc-integral": _cmd_osc,
    "kernel-l1": _cmd_kernel,
}


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return f"{float(v.real)!r}{float(v.imag):+.17g}j"
    return str(v)


def measurements_csv(reports: list[LabReport]) -> str:
    columns: list[str] = ["experiment"]
    for rep in reports:
        for row in rep.rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rep in reports:
        for row in rep.rows:
            full = {"experiment": rep.name, **row}
            writer.writerow([_format_cell(full.get(c, "")) for c in columns])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean_json(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _clean_json(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean_json(v) for v in o]
    return o


def _dump_json(path: Path, obj) -> None:
    text = json.dumps(_clean_json(json.loads(json.dumps(obj, default=_json_default))), indent=2, sort_keys=True)
    path.write_text(text + "\n")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def resolve_config(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("fourthnls") / "configs" / (name if name.endswith(".ini") else name + ".ini")
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config {name!r} not found (neither a file nor a bundled config)")


def run(command: str, config: str, output: Optional[str] = None, seed: Optional[int] = None) -> int:
    """Execute one command; returns the process exit status."""
    out = Path(output) if output else Path("out") / command
    try:
        if command not in _HANDLERS:
            raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
        path = resolve_config(config)
        raw = path.read_bytes()
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(raw.decode("utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        effective_seed = seed
        if effective_seed is None and parser.has_option("ensemble", "seed"):
            effective_seed = _Section(parser, "ensemble").int("seed")
        out.mkdir(parents=True, exist_ok=True)
        outcome = _HANDLERS[command](parser, seed, path.parent)
    except (ConfigError, SupportGuardError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, QuadratureBudgetError, NonFiniteSymbolError, FloatingPointError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        diag = {"command": command, "config": str(config), "error": type(exc).__name__, "message": str(exc)}
        for attr in ("t", "level"):
            if hasattr(exc, attr):
                diag[attr] = getattr(exc, attr)
        _dump_json(out / "diagnostic.json", diag)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    csv_text = measurements_csv(outcome.reports)
    (out / "measurements.csv").write_text(csv_text)
    files = {"measurements.csv": _sha256(csv_text.encode())}
    for rep in outcome.reports:
        for key, arr in rep.series.items():
            name = f"{rep.name}_{key}.dat" if len(outcome.reports) > 1 else f"{key}.dat"
            buf = io.StringIO()
            np.savetxt(buf, np.asarray(arr, dtype=float), fmt="%.17g")
            (out / name).write_text(buf.getvalue())
            files[name] = _sha256(buf.getvalue().encode())
    for name, writer in outcome.artifacts.items():
        writer(out / name)
        files[name] = _sha256((out / name).read_bytes())
    passed = all(rep.passed for rep in outcome.reports)
    verdict = {"command": command, "passed": passed, "experiments": [rep.verdict() for rep in outcome.reports]}
    _dump_json(out / "verdict.json", verdict)
    manifest = {
        "command": command,
        "config": str(path),
        "config_sha256": _sha256(raw),
        "seed": seed,
        "effective_seed": effective_seed,
        "outputs": files,
        "versions": {
            "fourthnls": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
    }
    _dump_json(out / "manifest.json", manifest)
    for rep in outcome.reports:
        for c in rep.checks:
            flag = "PASS" if c.passed else ("FAIL" if c.asserted else "info")
            logger.info("%s %-28s %s value=%.6g", rep.name, c.name, flag, c.value)
    return EXIT_OK if passed else EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fourthnls", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="INI config path or bundled config name")
    ap.add_argument("--output", "-o", default=None, help="output directory (default: out/<command>)")
    ap.add_argument("--seed", type=int, default=None, help="override the ensemble seed")
    ap.add_argument("--verbose", "-v", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return run(args.command, args.config, args.output, args.seed)


if __name__ == "__main__":
    sys.exit(main())
