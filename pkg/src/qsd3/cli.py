"""Experiment runner: presets, config parsing, CSV emission, summaries.

Configuration is a flat key-value text format (one ``section.key = value``
per line, ``#`` comments).  Presets fig1/fig2/fig3 pin the three published
parameter regimes (strong and moderate memory); ``custom`` requires every
physics field explicitly.  Command-line flags override file keys, which
override preset defaults.

Outputs per run: one CSV per method (full double precision, populations in
physical-level labels with rho00 the ground state), a manifest that can be
fed back through ``--config`` to reproduce the run bitwise, and a comparison
summary (max population deviations between methods, first-negativity times).

Exit codes: 0 success, 2 configuration error, 3 numerical failure of a
requested method.  A flagged divergence of the non-positivity-preserving
equation is a result, not a failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coeff import integrate_coefficients
from .core import (BathSpec, DensityPath, NonFiniteError, TimeGrid, basis_state,
                   projector, three_level_system)
from .meq import (DEFAULT_NEGATIVITY_THRESHOLD, integrate_npp_me, integrate_pp_me,
                  positivity_report, write_density_csv)
from .pseudomode import PseudomodeConfig, check_truncation, integrate_reference
from .qsd import run_ensemble

METHODS = ("qsd", "pp_me", "npp_me", "reference")

DEFAULT_SEED = 424242
DEFAULT_NEGATIVITY_ACCEPTANCE = 1e-2


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every field-level problem."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    omega: float
    a: float
    gamma: float
    Omega: float
    initial_level: int
    dt: float
    t_end: float
    n_trajectories: int
    seed: int
    methods: tuple[str, ...]
    workers: int
    fock_dim: int
    negativity_threshold: float
    negativity_acceptance: float
    out_dir: str

    def config_items(self) -> list[tuple[str, str]]:
        """All keys in manifest order, formatted for the config grammar."""
        return [
            ("run.preset", self.preset),
            ("run.seed", str(self.seed)),
            ("run.methods", ",".join(self.methods)),
            ("run.workers", str(self.workers)),
            ("run.out", self.out_dir),
            ("system.omega", repr(self.omega)),
            ("bath.a", repr(self.a)),
            ("bath.gamma", repr(self.gamma)),
            ("bath.Omega", repr(self.Omega)),
            ("state.initial", str(self.initial_level)),
            ("grid.dt", repr(self.dt)),
            ("grid.t_end", repr(self.t_end)),
            ("qsd.trajectories", str(self.n_trajectories)),
            ("reference.fock_dim", str(self.fock_dim)),
            ("report.negativity_threshold", repr(self.negativity_threshold)),
            ("report.negativity_acceptance", repr(self.negativity_acceptance)),
        ]


_COMMON_DEFAULTS = {
    "run.seed": str(DEFAULT_SEED),
    "run.workers": "1",
    "run.out": "qsd3-out",
    "system.omega": "1.0",
    "bath.Omega": "0.0",
    "state.initial": "2",
    "grid.dt": "0.005",
    "grid.t_end": "25.0",
    "qsd.trajectories": "5000",
    "reference.fock_dim": "8",
    "report.negativity_threshold": repr(DEFAULT_NEGATIVITY_THRESHOLD),
    "report.negativity_acceptance": repr(DEFAULT_NEGATIVITY_ACCEPTANCE),
}

PRESETS: dict[str, dict[str, str]] = {
    "fig1": {**_COMMON_DEFAULTS, "bath.a": "0.8", "bath.gamma": "0.05",
             "run.methods": "qsd,pp_me"},
    "fig2": {**_COMMON_DEFAULTS, "bath.a": "0.8", "bath.gamma": "0.05",
             "run.methods": "pp_me,npp_me,reference"},
    "fig3": {**_COMMON_DEFAULTS, "bath.a": "0.2", "bath.gamma": "0.2",
             "run.methods": "pp_me,npp_me,reference"},
    # custom: every physics key must be given explicitly
    "custom": dict(_COMMON_DEFAULTS),
}

_CUSTOM_REQUIRED = ("system.omega", "bath.a", "bath.gamma", "bath.Omega",
                    "state.initial", "grid.dt", "grid.t_end", "run.methods")
for _k in _CUSTOM_REQUIRED:
    PRESETS["custom"].pop(_k, None)

_KNOWN_KEYS = {
    "run.preset", "run.seed", "run.methods", "run.workers", "run.out",
    "system.omega", "bath.a", "bath.gamma", "bath.Omega", "state.initial",
    "grid.dt", "grid.t_end", "qsd.trajectories", "reference.fock_dim",
    "report.negativity_threshold", "report.negativity_acceptance",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse the ``section.key = value`` grammar; strict about form."""
    errors: list[str] = []
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'section.key = value', got {raw!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or "." not in key:
            errors.append(f"line {lineno}: key must have the form section.key, got {key!r}")
            continue
        if key in out:
            errors.append(f"line {lineno}: duplicate key {key}")
            continue
        out[key] = value
    if errors:
        raise ConfigError(errors)
    return out


def _parse_float(key, value, errors, *, minimum=None, strict_min=None, units=""):
    try:
        x = float(value)
    except ValueError:
        errors.append(f"{key}: expected a number, got {value!r}{units}")
        return None
    if minimum is not None and x < minimum:
        errors.append(f"{key}: must be >= {minimum}, got {value}{units}")
        return None
    if strict_min is not None and not (x > strict_min):
        errors.append(f"{key}: must be > {strict_min}, got {value}{units}")
        return None
    return x


def _parse_int(key, value, errors, *, minimum=None, units=""):
    try:
        x = int(value)
    except ValueError:
        errors.append(f"{key}: expected an integer, got {value!r}{units}")
        return None
    if minimum is not None and x < minimum:
        errors.append(f"{key}: must be >= {minimum}, got {value}{units}")
        return None
    return x


def resolve_config(raw: dict[str, str], overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Apply preset defaults and overrides, then validate every field."""
    errors: list[str] = []
    merged = dict(raw)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})

    unknown = sorted(set(merged) - _KNOWN_KEYS)
    for key in unknown:
        errors.append(f"unknown config key: {key}")

    preset = merged.get("run.preset", "custom")
    if preset not in PRESETS:
        raise ConfigError(errors + [
            f"run.preset: unknown preset {preset!r} (choose from {', '.join(PRESETS)})"])

    values = dict(PRESETS[preset])
    values.update({k: v for k, v in merged.items() if k != "run.preset"})

    if preset == "custom":
        for key in _CUSTOM_REQUIRED:
            if key not in values:
                errors.append(f"{key}: required for preset 'custom'")
    missing = [k for k in _KNOWN_KEYS - {"run.preset"} if k not in values]
    for key in sorted(missing):
        if f"{key}: required" not in " ".join(errors):
            errors.append(f"{key}: missing value")
    if errors and missing:
        raise ConfigError(errors)

    omega = _parse_float("system.omega", values.get("system.omega", ""), errors,
                         units=" (angular frequency, 1/time)")
    a = _parse_float("bath.a", values.get("bath.a", ""), errors, minimum=0.0,
                     units=" (dimensionless coupling amplitude)")
    gamma = _parse_float("bath.gamma", values.get("bath.gamma", ""), errors, strict_min=0.0,
                         units=" (inverse memory time, 1/time)")
    cap_omega = _parse_float("bath.Omega", values.get("bath.Omega", ""), errors,
                             units=" (bath central frequency, 1/time)")
    dt = _parse_float("grid.dt", values.get("grid.dt", ""), errors, strict_min=0.0,
                      units=" (time step)")
    t_end = _parse_float("grid.t_end", values.get("grid.t_end", ""), errors, strict_min=0.0,
                         units=" (time horizon)")
    initial = _parse_int("state.initial", values.get("state.initial", ""), errors,
                         units=" (physical level, 0 = ground .. 2 = top)")
    if initial is not None and initial not in (0, 1, 2):
        errors.append(f"state.initial: must be 0, 1 or 2, got {initial}")
        initial = None
    n_traj = _parse_int("qsd.trajectories", values.get("qsd.trajectories", ""), errors, minimum=1)
    seed = _parse_int("run.seed", values.get("run.seed", ""), errors, minimum=0)
    workers = _parse_int("run.workers", values.get("run.workers", ""), errors, minimum=1)
    fock = _parse_int("reference.fock_dim", values.get("reference.fock_dim", ""), errors, minimum=2)
    thr = _parse_float("report.negativity_threshold", values.get("report.negativity_threshold", ""),
                       errors, strict_min=0.0)
    acc = _parse_float("report.negativity_acceptance", values.get("report.negativity_acceptance", ""),
                       errors, strict_min=0.0)

    methods_raw = values.get("run.methods", "")
    methods: list[str] = []
    if not methods_raw.strip():
        errors.append("run.methods: must list at least one method "
                      f"(subset of {', '.join(METHODS)})")
    else:
        for m in (part.strip() for part in methods_raw.split(",")):
            if not m:
                continue
            if m not in METHODS:
                errors.append(f"run.methods: unknown method {m!r} "
                              f"(subset of {', '.join(METHODS)})")
            elif m not in methods:
                methods.append(m)
        if not methods and not any("run.methods" in e for e in errors):
            errors.append("run.methods: must list at least one method")

    if dt is not None and t_end is not None:
        try:
            TimeGrid.from_duration(t_end, dt)
        except ValueError as exc:
            errors.append(f"grid.t_end: {exc}")

    if errors:
        raise ConfigError(errors)

    methods = [m for m in METHODS if m in methods]  # canonical execution order
    return ExperimentConfig(
        preset=preset, omega=omega, a=a, gamma=gamma, Omega=cap_omega,
        initial_level=initial, dt=dt, t_end=t_end, n_trajectories=n_traj,
        seed=seed, methods=tuple(methods), workers=workers, fock_dim=fock,
        negativity_threshold=thr, negativity_acceptance=acc,
        out_dir=values.get("run.out", "qsd3-out"),
    )


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate raw config text (presets applied, strict keys)."""
    return resolve_config(parse_config_text(text))


@dataclass
class MethodOutcome:
    status: str                      # "ok" | "truncated" | "failed"
    wall_time_s: float = 0.0
    path: DensityPath | None = None
    pop_stderr: np.ndarray | None = None
    trace_stderr: np.ndarray | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class RunResult:
    config: ExperimentConfig
    outcomes: dict[str, MethodOutcome]
    summary: dict
    out_dir: Path

    @property
    def failed_methods(self) -> list[str]:
        return [m for m, o in self.outcomes.items() if o.status == "failed"]


def _run_qsd(cfg, system, bath, grid, psi0) -> MethodOutcome:
    coeffs = integrate_coefficients(system, bath, grid)
    ens = run_ensemble(system, bath, coeffs, psi0, grid, cfg.n_trajectories,
                       cfg.seed, workers=cfg.workers)
    return MethodOutcome(status="ok", path=ens.density, pop_stderr=ens.pop_stderr,
                         trace_stderr=ens.trace_stderr)


def _run_me(cfg, system, bath, grid, rho0, positivity_preserving: bool) -> MethodOutcome:
    coeffs = integrate_coefficients(system, bath, grid.half())
    if positivity_preserving:
        path = integrate_pp_me(system, coeffs, rho0, grid)
    else:
        path = integrate_npp_me(system, coeffs, rho0, grid)
    status = "truncated" if path.truncated_at_index is not None else "ok"
    return MethodOutcome(status=status, path=path)


def _run_reference(cfg, system, bath, grid, rho0) -> MethodOutcome:
    lo = integrate_reference(system, bath, rho0,
                             PseudomodeConfig.from_bath(bath, max(2, cfg.fock_dim - 2)), grid)
    hi = integrate_reference(system, bath, rho0,
                             PseudomodeConfig.from_bath(bath, cfg.fock_dim), grid)
    report = check_truncation([lo, hi])
    return MethodOutcome(status="ok", path=hi, extra={
        "fock_dims": [max(2, cfg.fock_dim - 2), cfg.fock_dim],
        "truncation_error": report.differences[-1],
        "truncation_converged": report.converged,
    })


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Execute every requested method, write CSVs, manifest and summary.

    A numerical failure of one method is recorded and does not abort the
    others.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid.from_duration(config.t_end, config.dt)
    system = three_level_system(config.omega)
    bath = BathSpec(a=config.a, gamma=config.gamma, Omega=config.Omega)
    psi0 = basis_state(config.initial_level)
    rho0 = projector(psi0)

    runners = {
        "qsd": lambda: _run_qsd(config, system, bath, grid, psi0),
        "pp_me": lambda: _run_me(config, system, bath, grid, rho0, True),
        "npp_me": lambda: _run_me(config, system, bath, grid, rho0, False),
        "reference": lambda: _run_reference(config, system, bath, grid, rho0),
    }

    outcomes: dict[str, MethodOutcome] = {}
    for name in config.methods:
        start = time.perf_counter()
        try:
            outcome = runners[name]()
        except NonFiniteError as exc:
            outcome = MethodOutcome(status="failed", error=str(exc))
        outcome.wall_time_s = time.perf_counter() - start
        outcomes[name] = outcome
        if outcome.path is not None:
            write_density_csv(out_dir / f"{name}.csv", outcome.path,
                              pop_stderr=outcome.pop_stderr)

    summary = _build_summary(config, outcomes)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir / "manifest.txt", config, outcomes)
    return RunResult(config=config, outcomes=outcomes, summary=summary, out_dir=out_dir)


def _build_summary(config: ExperimentConfig, outcomes: dict[str, MethodOutcome]) -> dict:
    methods_summary = {}
    for name, o in outcomes.items():
        entry: dict = {"status": o.status, "wall_time_s": round(o.wall_time_s, 3)}
        if o.error:
            entry["error"] = o.error
        if o.path is not None:
            rep = positivity_report(o.path, config.negativity_threshold)
            entry.update({
                "first_negativity_time": rep.first_negativity_time,
                "min_eigenvalue": float(np.nanmin(o.path.min_eigs)),
                "max_trace_drift": float(np.nanmax(np.abs(o.path.traces[:o.path.n_valid] - 1.0))),
                "max_hermiticity_residual": float(np.nanmax(o.path.herm_residuals[:o.path.n_valid])),
                "truncated_at_time": rep.truncated_at_time,
                "attains_negativity_acceptance": bool(
                    np.nanmin(o.path.min_eigs) <= -config.negativity_acceptance)
                    or o.path.truncated_at_index is not None,
            })
        if o.extra:
            entry.update(o.extra)
        methods_summary[name] = entry

    comparisons = {}
    names = [n for n, o in outcomes.items() if o.path is not None]
    for i, m1 in enumerate(names):
        for m2 in names[i + 1:]:
            p1, p2 = outcomes[m1].path, outcomes[m2].path
            n_common = min(p1.n_valid, p2.n_valid)
            pops1 = p1.populations()[:n_common]
            pops2 = p2.populations()[:n_common]
            dev = np.abs(pops1 - pops2)
            entry = {
                "n_common_points": int(n_common),
                "max_population_deviation": float(dev.max()),
                "max_population_deviation_per_level": [float(x) for x in dev.max(axis=0)],
            }
            for m, other in ((m1, m2), (m2, m1)):
                se = outcomes[m].pop_stderr
                if se is not None:
                    se_max = float(se[:n_common].max())
                    entry["stderr_max"] = se_max
                    entry["within_4_stderr"] = bool(dev.max() <= 4.0 * se_max)
            comparisons[f"{m1}_vs_{m2}"] = entry

    return {
        "package_version": __version__,
        "preset": config.preset,
        "seed": config.seed,
        "methods": methods_summary,
        "comparisons": comparisons,
    }


def _write_manifest(path: Path, config: ExperimentConfig,
                    outcomes: dict[str, MethodOutcome]) -> None:
    lines = [
        "# qsd3 run manifest; feed back via --config to reproduce the run",
        f"# package version: {__version__}",
    ]
    for name, o in outcomes.items():
        lines.append(f"# wall_time_s {name}: {o.wall_time_s:.3f} ({o.status})")
    for key, value in config.config_items():
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n")


def _build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qsd3",
        description="Ladder-system trajectory and master-equation experiments")
    p.add_argument("--config", metavar="PATH", help="config file (section.key = value lines)")
    p.add_argument("--preset", metavar="NAME", help=f"one of {', '.join(PRESETS)}")
    p.add_argument("--seed", metavar="U64", help="master seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--trajectories", metavar="N", help="trajectory count for the qsd method")
    p.add_argument("--dt", metavar="F", help="time step")
    p.add_argument("--t-end", metavar="F", help="time horizon")
    p.add_argument("--methods", metavar="LIST",
                   help=f"comma-separated subset of {{{','.join(METHODS)}}}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_arg_parser().parse_args(argv)
    try:
        raw = parse_config_text(Path(args.config).read_text()) if args.config else {}
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2

    overrides = {
        "run.preset": args.preset,
        "run.seed": args.seed,
        "run.out": args.out,
        "qsd.trajectories": args.trajectories,
        "grid.dt": args.dt,
        "grid.t_end": args.t_end,
        "run.methods": args.methods,
    }
    try:
        config = resolve_config(raw, overrides)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2

    result = run_experiment(config)
    for name, o in result.outcomes.items():
        detail = o.error if o.error else ""
        print(f"{name}: {o.status} ({o.wall_time_s:.2f} s) {detail}".rstrip())
    print(f"outputs written to {result.out_dir}")
    if result.failed_methods:
        print(f"numerical failure in: {', '.join(result.failed_methods)}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
