"""Command-line entry point: ``rampc synthesize | run | report``.

Exit codes: 0 ok, 1 usage or configuration error, 2 artifact validation failure,
3 runtime guarantee event (infeasible step, falsified model, constraint violation
or lost parameter containment).
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click

from .config import ConfigError, FailureConfig, ScenarioConfig, bundled_scenarios, load, load_artifacts, synthesize_for
from .geometry import ContractionError
from .sim import RunLog, run_closed_loop
from .synthesis import ArtifactValidationError, SynthesisError

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
OUT_DIR_ENV = "RAMPC_OUT_DIR"


def _out_dir(out_dir: str | None) -> Path:
    path = Path(out_dir or os.environ.get(OUT_DIR_ENV) or "rampc-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_config(spec: str) -> tuple[ScenarioConfig, Path]:
    """A file path, or the name of a bundled scenario."""
    path = Path(spec)
    if not path.exists():
        bundled = bundled_scenarios()
        if spec in bundled:
            path = bundled[spec]
        else:
            raise ConfigError("", f"no such config file or bundled scenario: {spec}")
    return load(path), path


def _is_bundled(path: Path) -> bool:
    return path.resolve() in {p.resolve() for p in bundled_scenarios().values()}


def _cache_path(cfg: ScenarioConfig, config_path: Path, out_dir: Path) -> Path:
    """Artifacts live next to the config when that directory is writable.

    Bundled scenarios always cache in the output directory.
    """
    name = f"{config_path.stem}.artifacts.json"
    if not _is_bundled(config_path) and os.access(config_path.parent, os.W_OK):
        return config_path.parent / name
    return out_dir / name


def _artifacts(cfg: ScenarioConfig, config_path: Path, out_dir: Path, echo=True):
    cache = _cache_path(cfg, config_path, out_dir)
    fallback = out_dir / cache.name
    for candidate in dict.fromkeys([cache, fallback]):
        art = load_artifacts(candidate, cfg)
        if art is not None:
            if echo:
                click.echo(f"artifacts: cache hit {candidate}")
            return art, candidate, True
    art = synthesize_for(cfg)
    text = art.dumps()
    try:
        cache.write_text(text, encoding="utf-8")
    except OSError:
        cache = fallback
        cache.write_text(text, encoding="utf-8")
    if echo:
        click.echo(f"artifacts: synthesized {cache} ({art.n_x} tube rows)")
    return art, cache, False


@click.group()
def cli():
    """Robust adaptive tube MPC for a quadrotor with unknown mass."""


@cli.command()
@click.option("--config", "config", required=True, help="Scenario YAML file or bundled scenario name.")
@click.option("--out-dir", default=None, help=f"Output directory (default ${OUT_DIR_ENV} or ./rampc-out).")
def synthesize(config, out_dir):
    """Offline design: feedback gain, contractive tube set, tube constants."""
    cfg, path = _resolve_config(config)
    out = _out_dir(out_dir)
    try:
        art, cache, _ = _artifacts(cfg, path, out)
    except ArtifactValidationError as exc:
        report_path = out / f"{path.stem}.validation.json"
        report_path.write_text(json.dumps(exc.report.to_json(), indent=1), encoding="utf-8")
        click.echo(f"validation failed: {', '.join(exc.report.failed)} (report in {report_path})", err=True)
        return EXIT_VALIDATION
    except (SynthesisError, ContractionError) as exc:
        click.echo(f"synthesis failed: {exc}", err=True)
        return EXIT_VALIDATION
    from .config import build_sets
    from .synthesis import validate_artifacts

    model, W, _ = build_sets(cfg)
    report = validate_artifacts(art, model.system, W, raise_on_failure=False)
    report_path = out / f"{path.stem}.validation.json"
    report_path.write_text(json.dumps(report.to_json(), indent=1), encoding="utf-8")
    for name, ok in report.checks.items():
        click.echo(f"  {name:<22} {'pass' if ok else 'FAIL'}")
    return EXIT_OK if not report.failed else EXIT_VALIDATION


def _apply_overrides(cfg: ScenarioConfig, seed, mode, no_noise, fail_at) -> ScenarioConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if mode is not None:
        changes["mode"] = mode
        if mode == "robust-baseline":
            changes["ss_update"] = False
            changes["failure_dilation"] = None
    if no_noise:
        changes["noise"] = dataclasses.replace(cfg.noise, enabled=False)
    if fail_at is not None:
        base = cfg.failure or FailureConfig()
        changes["failure"] = dataclasses.replace(base, t_fail=fail_at)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _print_summary(s: dict) -> None:
    keys = ("steps", "max_violation", "final_theta_lower", "final_theta_upper", "theta_true_final",
            "containment_ok", "final_tracking_error", "mean_solve_ms", "max_solve_ms",
            "infeasible_count", "falsified_count", "aborted")
    for k in keys:
        v = s[k]
        if isinstance(v, float):
            v = f"{v:.6g}"
        elif isinstance(v, list):
            v = "[" + ", ".join(f"{x:.6g}" for x in v) + "]"
        click.echo(f"  {k:<22} {v}")


def _guarantee_events(s: dict) -> bool:
    return bool(s["max_violation"] > 0 or s["infeasible_count"] or s["falsified_count"]
                or not s["containment_ok"] or s["aborted"])


@cli.command()
@click.option("--config", "config", required=True, help="Scenario YAML file or bundled scenario name.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out-dir", default=None, help=f"Output directory (default ${OUT_DIR_ENV} or ./rampc-out).")
@click.option("--mode", type=click.Choice(["adaptive", "robust-baseline"]), default=None)
@click.option("--no-noise", is_flag=True, help="Disable measurement noise.")
@click.option("--fail-at", type=int, default=None, help="Step at which rotor efficiency drops.")
def run(config, seed, out_dir, mode, no_noise, fail_at):
    """Closed-loop simulation; writes <name>.csv, <name>.json and prints a summary."""
    cfg, path = _resolve_config(config)
    cfg = _apply_overrides(cfg, seed, mode, no_noise, fail_at)
    out = _out_dir(out_dir)
    try:
        art, _, _ = _artifacts(cfg, path, out)
    except (ArtifactValidationError, SynthesisError, ContractionError) as exc:
        click.echo(f"synthesis/validation failed: {exc}", err=True)
        return EXIT_VALIDATION
    log = run_closed_loop(cfg, artifacts=art)
    stem = f"{cfg.name}_{cfg.mode}_seed{cfg.seed}"
    log.to_csv(out / f"{stem}.csv")
    log.write_json(out / f"{stem}.json")
    s = log.summary()
    click.echo(f"run {stem}: wrote {out / (stem + '.csv')}")
    _print_summary(s)
    for ev in log.events:
        click.echo(f"  event at k={ev['k']}: {ev['event']}: {ev['detail']}", err=True)
    return EXIT_RUNTIME if _guarantee_events(s) else EXIT_OK


@cli.command()
@click.argument("logs", nargs=-1)
def report(logs):
    """Tabulate metrics of one or more JSON run logs."""
    if not logs:
        raise click.UsageError("at least one log file is required")
    header = f"{'run':<40} {'steps':>5} {'viol':>8} {'contain':>7} {'infeas':>6} {'err':>9} {'solve_ms':>8}  flags"
    click.echo(header)
    status = EXIT_OK
    for p in logs:
        try:
            log = RunLog.from_json(json.loads(Path(p).read_text(encoding="utf-8")))
            s = log.summary()
        except (OSError, ValueError, KeyError, TypeError) as exc:
            click.echo(f"{Path(p).name:<40} ERROR unreadable log: {type(exc).__name__}: {exc}")
            status = EXIT_USAGE
            continue
        flags = []
        if s["max_violation"] > 0:
            flags.append("VIOLATION")
        if not s["containment_ok"]:
            flags.append("CONTAINMENT")
        if s["infeasible_count"]:
            flags.append("INFEASIBLE")
        if s["falsified_count"]:
            flags.append("FALSIFIED")
        if flags and status == EXIT_OK:
            status = EXIT_RUNTIME
        name = f"{log.metadata.get('scenario')}/{log.metadata.get('mode')}/seed{log.seed}"
        click.echo(f"{name:<40} {s['steps']:>5} {s['max_violation']:>8.2g} "
                   f"{'yes' if s['containment_ok'] else 'NO':>7} {s['infeasible_count']:>6} "
                   f"{s['final_tracking_error']:>9.3g} {s['mean_solve_ms']:>8.2f}  {' '.join(flags)}")
    return status


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="rampc", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_USAGE
    return rv if isinstance(rv, int) else EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
