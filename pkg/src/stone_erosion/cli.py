"""Command-line interface: ``stone-erosion {run,study,validate-config,print-defaults}``.

Exit codes: 0 success, 2 configuration or usage error, 3 solver failure,
4 I/O error. ``STONE_EROSION_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import FrontLog, front_positions, convergence_study, format_table, manufactured_study
from .config import ConfigError, RunConfig, default_config, dump_config, load_config
from .domain import FullyErodedError
from .io import FrontLogWriter, write_manifest, write_snapshot
from .physics import SCENARIO_KINDS
from .solver import Simulation, SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
ENV_OUTPUT = "STONE_EROSION_OUTPUT_DIR"


class UsageError(ValueError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _output_dir(cfg: RunConfig, flag: str | None) -> Path:
    env = os.environ.get(ENV_OUTPUT)
    return Path(env or flag or cfg.output.dir)


def _manifest(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "config_sha256": cfg.digest,
        "scenario": cfg.kind,
        "law": cfg.scenario.params.law,
        "code_version": __version__,
        "start": _now(),
        "end": None,
        "status": "running",
        "exit_code": None,
        "message": "",
        "files": [],
    }


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    sc = cfg.scenario
    if getattr(args, "law", None):
        sc = sc.replace(params=sc.params.replace(law=args.law))
    out = cfg.output
    if getattr(args, "snapshot_every", None) is not None:
        if args.snapshot_every <= 0:
            raise UsageError("--snapshot-every must be positive")
        k = int(np.floor(sc.duration / args.snapshot_every + 1e-9))
        out = dataclasses.replace(out, snapshots=tuple(args.snapshot_every * i for i in range(1, k + 1)))
    if getattr(args, "front_every", None) is not None:
        if args.front_every < 0:
            raise UsageError("--front-every must be non-negative")
        out = dataclasses.replace(out, front_every=args.front_every)
    return dataclasses.replace(cfg, scenario=sc, output=out)


def _events(duration: float, dt: float, front_every: float, snapshots):
    """Yield (time, is_front_sample, is_snapshot) in time order up to ``duration``."""
    step = front_every if front_every > 0 else dt
    k_end = int(np.floor(duration / step + 1e-9))
    snaps = sorted(s for s in snapshots if 0.0 < s <= duration + 1e-9)
    tol = 1e-9 * max(step, 1.0)
    i, j = 1, 0
    while i <= k_end or j < len(snaps):
        tf = i * step if i <= k_end else np.inf
        ts = snaps[j] if j < len(snaps) else np.inf
        if abs(tf - ts) <= tol:
            yield tf, True, True
            i, j = i + 1, j + 1
        elif tf < ts:
            yield tf, True, False
            i += 1
        else:
            yield ts, False, True
            j += 1
    if k_end * step < duration - tol and not (snaps and abs(snaps[-1] - duration) <= tol):
        yield duration, True, False


def run(cfg: RunConfig, outdir: Path, backend: str | None = None, config_text: str | None = None):
    """Run a scenario, writing snapshots, the front log and a manifest. Returns (exit code, manifest)."""
    manifest = _manifest(cfg, "run")
    files = manifest["files"]
    code = EXIT_OK
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        manifest.update(status="io-error", exit_code=EXIT_IO, message=str(exc), end=_now())
        return EXIT_IO, manifest
    mpath = outdir / "manifest.json"
    writer = None
    try:
        (outdir / "config.toml").write_text(config_text if config_text is not None else dump_config(cfg))
        files.append("config.toml")
        sc = cfg.scenario
        p = sc.params
        backend = backend or (None if cfg.solver.backend == "auto" else cfg.solver.backend)
        sim = Simulation(sc, backend=backend, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
        manifest["backend"] = sim.core.IMPLEMENTATION
        log = FrontLog.for_sample(sim.grid, sc.sample)
        writer = FrontLogWriter(outdir / "fronts.csv", log.sides, log.nominal)
        files.append("fronts.csv")

        def sample(s):
            writer.append(s.t, front_positions(s.state, s.cls, sc.sample, p.n_max))

        def snapshot(s):
            name = f"snapshot_t{int(round(s.t)):010d}.csv"
            extra = {"co2_eq": s.state.c_a / p.K_c} if cfg.output.co2_diagnostic and p.K_c > 0 else None
            write_snapshot(outdir / name, s.state, s.grid, extra)
            if name not in files:
                files.append(name)

        snapshot(sim)
        sample(sim)
        try:
            for t, is_front, is_snap in _events(sc.duration, sc.dt, cfg.output.front_every, cfg.output.snapshots):
                sim.advance_to(t, on_conversion=sample)
                if is_front:
                    sample(sim)
                if is_snap:
                    snapshot(sim)
            snapshot(sim)
            manifest.update(status="completed")
        except FullyErodedError:
            snapshot(sim)
            manifest.update(status="completed", message=f"specimen fully eroded at t={sim.t!r} s")
        manifest["final_time"] = sim.t
        manifest["steps"] = sim.stats.steps
        manifest["dt_halvings"] = sim.stats.halvings
        manifest["conversions"] = sum(len(c) for _, c in sim.stats.conversions)
    except SolverError as exc:
        code = EXIT_SOLVER
        manifest.update(status="solver-failure", message=str(exc))
    except OSError as exc:
        code = EXIT_IO
        manifest.update(status="io-error", message=str(exc))
    finally:
        if writer is not None:
            writer.close()
        manifest.update(exit_code=code, end=_now())
        files.append("manifest.json")
        try:
            write_manifest(mpath, manifest)
        except OSError as exc:
            code = EXIT_IO
            manifest.update(status="io-error", message=str(exc), exit_code=code)
    return code, manifest


def study(cfg: RunConfig, outdir: Path, refinements: int | None = None, manufactured: bool | None = None,
          workers: int = 1, backend: str | None = None, progress=None):
    """Convergence study; writes ``convergence.tsv`` and a manifest. Returns (exit code, manifest, rows)."""
    from .analysis import StudyError

    manifest = _manifest(cfg, "study")
    refinements = cfg.study.refinements if refinements is None else refinements
    manufactured = cfg.study.manufactured if manufactured is None else manufactured
    if refinements < 3:
        raise UsageError(f"a convergence study needs at least 3 refinement levels, got {refinements}")
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        manifest.update(status="io-error", exit_code=EXIT_IO, message=str(exc), end=_now())
        return EXIT_IO, manifest, []
    backend = backend or (None if cfg.solver.backend == "auto" else cfg.solver.backend)
    code, rows = EXIT_OK, []
    manifest["manufactured"] = manufactured
    manifest["refinements"] = refinements
    try:
        if manufactured:
            rows = manufactured_study(refinements=refinements, backend=backend)
        else:
            rows = convergence_study(cfg.scenario, refinements=refinements, horizon=cfg.study.horizon,
                                     backend=backend, workers=workers, progress=progress)
        manifest["status"] = "completed"
    except (StudyError, SolverError, RuntimeError) as exc:
        code = EXIT_SOLVER
        rows = getattr(exc, "rows", [])
        manifest.update(status="solver-failure", message=str(exc))
    try:
        (outdir / "convergence.tsv").write_text(format_table(rows))
        manifest["files"] = ["convergence.tsv", "manifest.json"]
        manifest.update(exit_code=code, end=_now())
        write_manifest(outdir / "manifest.json", manifest)
    except OSError as exc:
        code = EXIT_IO
        manifest.update(status="io-error", message=str(exc), exit_code=code)
    return code, manifest, rows


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stone-erosion", description="Carbonate stone erosion simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario from a TOML config")
    r.add_argument("config")
    r.add_argument("-o", "--output-dir", help=f"output directory (overridden by ${ENV_OUTPUT})")
    r.add_argument("--law", choices=("symmetric", "asymmetric", "linear"), help="absorption law override")
    r.add_argument("--snapshot-every", type=float, metavar="SECONDS", help="snapshot cadence override")
    r.add_argument("--front-every", type=float, metavar="SECONDS", help="front-log cadence (0: every step)")
    r.add_argument("--backend", choices=("compiled", "python"), help="stepping core")

    s = sub.add_parser("study", help="convergence-order study")
    s.add_argument("config")
    s.add_argument("-o", "--output-dir", help=f"output directory (overridden by ${ENV_OUTPUT})")
    s.add_argument("--refinements", type=int, help="number of grid levels (at least 3)")
    s.add_argument("--manufactured", action="store_true", default=None, help="manufactured-solution study")
    s.add_argument("--backend", choices=("compiled", "python"), help="stepping core")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes for the levels")

    v = sub.add_parser("validate-config", help="check a config file and exit")
    v.add_argument("config")

    d = sub.add_parser("print-defaults", help="print the default config of a scenario")
    d.add_argument("--kind", choices=SCENARIO_KINDS, default="standard_1d")
    return ap


def _load(path: str):
    cfg = load_config(path)
    return cfg, Path(path).read_text()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "print-defaults":
            sys.stdout.write(dump_config(default_config(args.kind)))
            return EXIT_OK
        cfg, text = _load(args.config)
        if args.command == "validate-config":
            sc = cfg.scenario
            print(f"{args.config}: ok ({cfg.kind}, dim={sc.dim}, N={sc.N}, dt={sc.dt!r} s, "
                  f"duration={sc.duration!r} s, law={sc.params.law})")
            return EXIT_OK
        cfg = _apply_overrides(cfg, args)
        outdir = _output_dir(cfg, args.output_dir)
        if args.command == "run":
            code, manifest = run(cfg, outdir, backend=args.backend, config_text=text)
        else:
            code, manifest, rows = study(cfg, outdir, args.refinements, args.manufactured,
                                         workers=max(1, args.workers), backend=args.backend)
            if rows:
                sys.stdout.write(format_table(rows))
        if code != EXIT_OK:
            print(f"error: {manifest['message']}", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
