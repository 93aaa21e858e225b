"""Command-line entry point.

Verbs::

    tdrasscf run      --config FILE [--out DIR] [--quiet]
    tdrasscf sweep    --config FILE [--tuples "nmax:M1:M2; ..."] [--out DIR]
    tdrasscf count    --config FILE
    tdrasscf validate --config FILE

Configuration files hold one ``key = value`` per line with dotted section
names; ``#`` starts a comment. Any key can be overridden by an environment
variable ``TDRASSCF_<SECTION>__<KEY>`` (double underscore for each dot), e.g.
``TDRASSCF_GRID__N=51`` or ``TDRASSCF_RAS__1__NMAX=3``. Unknown keys are
rejected.

Exit codes: 0 success, 2 invalid configuration, 3 divergence,
4 numerical abort, 5 step limit reached without convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .eom import Mode, WaveFunction
from .fockspace import (
    ConfigSpace,
    InvalidSpecError,
    RasSpec,
    Scheme,
    count_species_configs,
)
from .grid import build_sine_dvr
from .model import HimModel, UnboundSystemError, build_him_terms, exact_him_energy
from .propagator import (
    DivergenceError,
    NumericalAbortError,
    PropagationSettings,
    initial_guess,
    propagate_real,
    read_checkpoint,
    relax,
    write_checkpoint,
)

log = logging.getLogger("tdrasscf")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_ABORT = 4
EXIT_NOT_CONVERGED = 5

ENV_PREFIX = "TDRASSCF_"


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


# key -> (type, default); ras.<k>.* keys are handled separately
_SCALAR_KEYS: dict[str, tuple[str, Any]] = {
    "grid.n": ("int", 101),
    "grid.xmin": ("float", -5.0),
    "grid.xmax": ("float", 5.0),
    "model.omega": ("float", 1.0),
    "model.particles": ("intlist", None),
    "model.masses": ("floatlist", None),
    "model.lambda_intra": ("floatlist", None),
    "model.lambda_inter": ("floatmatrix", None),
    "propagation.mode": ("str", "imaginary"),
    "propagation.dt": ("float", 1e-3),
    "propagation.max_steps": ("int", 200_000),
    "propagation.energy_tol": ("float", 1e-13),
    "propagation.ortho_tol": ("float", 1e-10),
    "propagation.order": ("int", 4),
    "propagation.regularization": ("float", 1e-8),
    "propagation.t_final": ("float", None),
    "propagation.min_steps": ("int", 1),
    "propagation.divergence_patience": ("int", 50),
    "propagation.divergence_tol": ("float", 1e-10),
    "output.directory": ("str", "out"),
    "output.trace_every": ("int", 1),
    "output.checkpoint": ("bool", True),
    "initial.checkpoint": ("str", None),
    "sweep.tuples": ("str", ""),
}
_RAS_FIELDS = {"m1": "int", "m2": "int", "scheme": "str", "nmax": "int"}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Split ``key = value`` lines; values stay raw strings."""
    raw: dict[str, str] = {}
    prefix = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            prefix = stripped[1:-1].strip()
            prefix = prefix + "." if prefix else ""
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        raw[(prefix + key).lower()] = value
    return raw


def _env_overrides(environ) -> dict[str, str]:
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = value
    return out


def _convert(key: str, kind: str, value: str) -> Any:
    try:
        if kind == "int":
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind == "float":
            return float(value)
        if kind == "str":
            return value.strip().strip('"').strip("'")
        if kind == "bool":
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind in ("intlist", "floatlist", "floatmatrix"):
            v = value.strip()
            parsed = json.loads(v) if v.startswith("[") else [float(x) for x in v.replace(",", " ").split()]
            arr = np.array(parsed, dtype=float)
            if kind == "intlist":
                if np.any(arr != np.round(arr)):
                    raise ValueError
                return [int(x) for x in arr.ravel()]
            if kind == "floatlist":
                return [float(x) for x in arr.ravel()]
            return arr
    except (ValueError, json.JSONDecodeError):
        pass
    raise ConfigError(f"invalid value for {key}: {value!r} (expected {kind})")


@dataclass
class RunConfig:
    grid: dict
    model: HimModel
    ras: list
    propagation: PropagationSettings
    output: dict
    initial_checkpoint: str | None = None
    sweep_tuples: str = ""
    raw: dict = field(default_factory=dict)

    def space(self) -> ConfigSpace:
        return ConfigSpace.build(self.ras, self.model.particles)


def load_config(path: str | Path | None, environ=None, text: str | None = None) -> RunConfig:
    """Read, override from the environment, and validate a run configuration."""
    environ = os.environ if environ is None else environ
    if text is None:
        if path is None:
            raise ConfigError("no configuration file given")
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    raw = parse_config_text(text, str(path))
    raw.update(_env_overrides(environ))
    values: dict[str, Any] = {k: d for k, (_, d) in _SCALAR_KEYS.items()}
    ras_raw: dict[int, dict[str, Any]] = {}
    for key, value in raw.items():
        if key in _SCALAR_KEYS:
            values[key] = _convert(key, _SCALAR_KEYS[key][0], value)
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "ras" and parts[1].isdigit() and parts[2] in _RAS_FIELDS:
            ras_raw.setdefault(int(parts[1]), {})[parts[2]] = _convert(key, _RAS_FIELDS[parts[2]], value)
            continue
        raise ConfigError(f"unknown configuration key: {key}")

    particles = values["model.particles"]
    if not particles:
        raise ConfigError("model.particles is required")
    if any(n < 1 for n in particles):
        raise ConfigError("model.particles entries must be positive")
    k = len(particles)
    masses = values["model.masses"] or [1.0] * k
    lam = values["model.lambda_intra"] or [0.0] * k
    inter = values["model.lambda_inter"]
    if inter is None:
        inter = np.zeros((k, k))
    elif inter.size == 1 and k == 2:
        inter = np.array([[0.0, float(inter.ravel()[0])], [float(inter.ravel()[0]), 0.0]])
    elif inter.size == k * k:
        inter = inter.reshape(k, k)
    else:
        raise ConfigError(f"model.lambda_inter must hold 1 (two species) or {k * k} values")
    try:
        model = HimModel(tuple(particles), values["model.omega"], tuple(masses), tuple(lam), inter)
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}") from exc

    unknown_species = sorted(set(ras_raw) - set(range(1, k + 1)))
    if unknown_species:
        raise ConfigError(f"unknown configuration key: ras.{unknown_species[0]} (species are numbered 1..{k})")
    ras = []
    for s in range(1, k + 1):
        entry = ras_raw.get(s, {})
        try:
            spec = RasSpec(entry.get("m1", 1), entry.get("m2", 0), entry.get("scheme", "general"), entry.get("nmax", 0))
            spec.validate(particles[s - 1])
        except InvalidSpecError as exc:
            raise ConfigError(f"ras.{s}: {exc}") from exc
        ras.append(spec)

    grid = {"n": values["grid.n"], "xmin": values["grid.xmin"], "xmax": values["grid.xmax"]}
    if grid["n"] < 2 or not grid["xmax"] > grid["xmin"]:
        raise ConfigError("grid needs n >= 2 and xmax > xmin")
    try:
        settings = PropagationSettings(
            mode=values["propagation.mode"],
            dt=values["propagation.dt"],
            max_steps=values["propagation.max_steps"],
            energy_tol=values["propagation.energy_tol"],
            ortho_tol=values["propagation.ortho_tol"],
            order=values["propagation.order"],
            eps=values["propagation.regularization"],
            t_final=values["propagation.t_final"],
            min_steps=values["propagation.min_steps"],
            divergence_patience=values["propagation.divergence_patience"],
            divergence_tol=values["propagation.divergence_tol"],
            trace_every=values["output.trace_every"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid propagation settings: {exc}") from exc
    if settings.eps < 0:
        raise ConfigError("propagation.regularization must be >= 0")
    output = {"directory": values["output.directory"], "trace_every": values["output.trace_every"], "checkpoint": values["output.checkpoint"]}
    return RunConfig(
        grid=grid,
        model=model,
        ras=ras,
        propagation=settings,
        output=output,
        initial_checkpoint=values["initial.checkpoint"],
        sweep_tuples=values["sweep.tuples"],
        raw=raw,
    )


def _exact_energy(model: HimModel) -> float | None:
    if model.n_species != 2:
        return None
    try:
        return exact_him_energy(model)
    except UnboundSystemError:
        return None


def write_trace(path: Path, trace) -> None:
    lines = ["step,tau_or_t,energy,norm,ortho_dev"]
    for r in trace:
        lines.append(f"{r.step},{r.time:.17g},{r.energy:.17g},{r.norm:.17g},{r.ortho_dev:.17g}")
    path.write_text("\n".join(lines) + "\n")


def _summary_lines(summary: dict) -> str:
    out = []
    for key, value in summary.items():
        if isinstance(value, float):
            out.append(f"{key} = {value:.17g}")
        else:
            out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


def execute(cfg: RunConfig, out_dir: Path, quiet: bool = False, ras=None, tag: str = "") -> dict:
    """Run one relaxation or propagation and write its artifacts."""
    ras = cfg.ras if ras is None else ras
    grid = build_sine_dvr(cfg.grid["n"], cfg.grid["xmin"], cfg.grid["xmax"])
    terms = build_him_terms(cfg.model, grid)
    space = ConfigSpace.build(ras, cfg.model.particles)
    if cfg.initial_checkpoint:
        wf, header = read_checkpoint(cfg.initial_checkpoint)
        if wf.amps.size != space.product_size or [o.shape for o in wf.orbitals] != [
            (s.n_orbitals, grid.n) for s in ras
        ]:
            raise ConfigError("initial checkpoint does not match the configured space and grid")
    else:
        wf = initial_guess(terms, space)
    settings = cfg.propagation
    t0 = time.time()

    def progress(step, t, energy, _wf):
        if not quiet and step % 1000 == 0:
            log.info("%s step %d  t=%.6g  E=%.15f", tag, step, t, energy)

    if settings.mode is Mode.IMAGINARY:
        result = relax(wf, space, terms, settings, progress)
    else:
        result = propagate_real(wf, space, terms, settings, progress)
    wall = time.time() - t0
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / f"trace{tag}.csv", result.trace)
    summary: dict[str, Any] = {
        "mode": settings.mode.value,
        "energy": result.energy,
        "config_count": space.product_size,
        "steps": result.steps,
        "converged": result.converged,
        "wall_time_s": wall,
    }
    exact = _exact_energy(cfg.model)
    if exact is not None:
        summary["exact_energy"] = exact
        summary["delta_e"] = result.energy - exact
    (out_dir / f"summary{tag}.txt").write_text(_summary_lines(summary))
    if cfg.output["checkpoint"]:
        write_checkpoint(out_dir / f"checkpoint{tag}.dat", result.wavefunction, space, cfg.model, grid, result.steps, result.steps * settings.dt)
    return summary


def parse_tuples(text: str) -> list[tuple[int, int, int]]:
    """``"nmax:M1:M2; ..."`` (commas also accepted inside a tuple)."""
    tuples = []
    for chunk in text.replace("\n", ";").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p for p in chunk.replace(",", ":").replace(" ", ":").split(":") if p]
        if len(parts) != 3:
            raise ConfigError(f"sweep tuple must be nmax:M1:M2, got {chunk!r}")
        try:
            tuples.append(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise ConfigError(f"sweep tuple must hold integers, got {chunk!r}") from exc
    return tuples


def sweep_specs(cfg: RunConfig, nmax: int, m_first: int, m_rest: int) -> list[RasSpec]:
    """Species 1 keeps its ``m1`` and scheme with ``m2 = M1 - m1``; the others are unrestricted with ``M2`` orbitals."""
    base = cfg.ras[0]
    if m_first < base.m1:
        raise ConfigError(f"M1={m_first} is smaller than ras.1.m1={base.m1}")
    first = RasSpec(base.m1, m_first - base.m1, base.scheme, nmax if m_first > base.m1 else 0)
    first.validate(cfg.model.particles[0])
    return [first] + [RasSpec.fci(m_rest) for _ in cfg.model.particles[1:]]


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out or cfg.output["directory"])
    try:
        summary = execute(cfg, out_dir, args.quiet)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except NumericalAbortError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(_summary_lines(summary), end="")
    return EXIT_OK if summary["converged"] else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    tuples = parse_tuples(args.tuples if args.tuples is not None else cfg.sweep_tuples)
    out_dir = Path(args.out or cfg.output["directory"])
    exact = _exact_energy(cfg.model)
    header = "nmax,M1,M2,configs,energy,delta_e,status"
    rows = [header]
    if not args.quiet:
        print(header)
    for nmax, m1, m2 in tuples:
        tag = f"_n{nmax}_m{m1}_m{m2}"
        try:
            specs = sweep_specs(cfg, nmax, m1, m2)
            summary = execute(cfg, out_dir, args.quiet, ras=specs, tag=tag)
            e = summary["energy"]
            de = f"{e - exact:.6e}" if exact is not None else ""
            status = "converged" if summary["converged"] else "step-limit"
            row = f"{nmax},{m1},{m2},{summary['config_count']},{e:.10f},{de},{status}"
        except (ConfigError, InvalidSpecError) as exc:
            row = f"{nmax},{m1},{m2},,,,invalid: {exc}"
        except (DivergenceError, NumericalAbortError) as exc:
            row = f"{nmax},{m1},{m2},,,,failed: {exc}"
        rows.append(row)
        if not args.quiet:
            print(row, flush=True)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


def cmd_count(args) -> int:
    cfg = load_config(args.config)
    total = 1
    for s, (spec, n) in enumerate(zip(cfg.ras, cfg.model.particles), 1):
        c = count_species_configs(spec, n)
        total *= c
        print(f"species {s}: N={n} m1={spec.m1} m2={spec.m2} scheme={spec.scheme.value} nmax={spec.nmax} -> {c}")
    print(f"product: {total}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"grid: n={cfg.grid['n']} [{cfg.grid['xmin']}, {cfg.grid['xmax']}]")
    print(f"model: particles={cfg.model.particles} omega={cfg.model.omega} masses={cfg.model.masses}")
    print(f"       lambda_intra={cfg.model.lambda_intra} lambda_inter={cfg.model.lambda_inter.tolist()}")
    for s, spec in enumerate(cfg.ras, 1):
        print(f"ras.{s}: m1={spec.m1} m2={spec.m2} scheme={spec.scheme.value} nmax={spec.nmax}")
    p = cfg.propagation
    print(f"propagation: mode={p.mode.value} dt={p.dt} max_steps={p.max_steps} energy_tol={p.energy_tol} order={p.order}")
    print("valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdrasscf", description="Multispecies TD-RASSCF solver for bosonic mixtures.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="configuration file (key = value lines)")
        p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    common(sub.add_parser("run", help="relax or propagate one configuration"))
    p_sweep = sub.add_parser("sweep", help="relax a list of (nmax, M1, M2) tuples")
    common(p_sweep)
    p_sweep.add_argument("--tuples", default=None, help='e.g. "2:2:2; 3:3:3" (default: sweep.tuples key)')
    common(sub.add_parser("count", help="closed-form configuration counts"))
    common(sub.add_parser("validate", help="check a configuration file"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "count": cmd_count, "validate": cmd_validate}
    try:
        return handlers[args.verb](args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
